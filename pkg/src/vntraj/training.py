"""Training loops for the multimodal model, encoder pretraining and the SNGP head."""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from vntraj.core import tensor as T
from vntraj.core.checkpoint import load as load_checkpoint, save as save_checkpoint
from vntraj.core.params import LrSchedule, ParamStore, adam_step, backward, lr_at
from vntraj.core.tensor import NumericalError
from vntraj.decoder import (DecoderConfig, PredictionSet, ShallowMultimodalHead, TransformerDecoder,
                            mixture_nll_loss, to_prediction_sets)
from vntraj.encoder import Encoder, EncoderConfig, build_batch
from vntraj.scene import Scene
from vntraj.sngp import SngpConfig, SngpHead, gaussian_nll, precision_update, reset_covariance
from vntraj.vectorize import VectorizedScene, vectorize_scene


class Regime(enum.Enum):
    MULTIMODAL = "multimodal"
    PRETRAIN_ENCODER = "pretrain"
    SNGP_HEAD = "sngp"


PRESETS = {
    Regime.MULTIMODAL: (20, (6, 12), 0.3),
    Regime.PRETRAIN_ENCODER: (19, (5, 10, 15), 0.3),
    Regime.SNGP_HEAD: (5, (), 0.3),
}
_REGIME_CODE = {Regime.MULTIMODAL: 0.0, Regime.PRETRAIN_ENCODER: 1.0, Regime.SNGP_HEAD: 2.0}


class TrainingAbort(NumericalError):
    def __init__(self, epoch: int, batch: int, cause: str):
        super().__init__(f"non-finite values at epoch {epoch}, batch {batch}: {cause}")
        self.epoch, self.batch = epoch, batch


class PretrainedMissing(FileNotFoundError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    regime: Regime
    epochs: int
    batch_size: int = 32
    lr: float = 1e-3
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    data_fraction: float = 1.0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    sngp: SngpConfig = field(default_factory=SngpConfig)
    finetune_encoder: bool = False  # SNGP regime only

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ValueError(f"data_fraction must lie in (0, 1], got {self.data_fraction}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.schedule.initial != self.lr:
            object.__setattr__(self, "schedule", replace(self.schedule, initial=self.lr))

    @classmethod
    def preset(cls, regime: Regime, **overrides) -> "TrainConfig":
        epochs, milestones, gamma = PRESETS[regime]
        lr = overrides.pop("lr", 1e-3)
        schedule = overrides.pop("schedule", LrSchedule(lr, milestones, gamma))
        return cls(regime=regime, epochs=overrides.pop("epochs", epochs), lr=lr, schedule=schedule, **overrides)


@dataclass
class TrainReport:
    regime: Regime
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    checkpoint_path: Path | None = None
    precision_stream: list[np.ndarray] = field(default_factory=list)

    def log_lines(self) -> list[str]:
        return [json.dumps({"epoch": e + 1, "mean_loss": l, "lr": r, "seconds": round(s, 3)})
                for e, (l, r, s) in enumerate(zip(self.losses, self.lrs, self.seconds))]


# ---------------------------------------------------------------- models


def _meta(regime: Regime, cfg: TrainConfig) -> dict[str, np.ndarray]:
    e, d, s = cfg.encoder, cfg.decoder, cfg.sngp
    return {
        "meta.regime": np.array([_REGIME_CODE[regime]]),
        "meta.encoder": np.array([e.mp_layers, e.mp_hidden, e.attn_heads, e.attn_head_dim], dtype=float),
        "meta.decoder": np.array([d.num_modes, d.blocks, d.heads, d.hidden, d.ffn_dim, d.horizon], dtype=float),
        "meta.sngp": np.array([s.rff_dim, s.discount, s.ridge, s.inv_lengthscale, s.sn_iters, s.sn_bound,
                               s.output_dim]),
    }


def configs_from_meta(entries: dict[str, np.ndarray]) -> tuple[Regime, EncoderConfig, DecoderConfig, SngpConfig]:
    try:
        code = float(entries["meta.regime"][0])
        e = [int(v) for v in entries["meta.encoder"]]
        d = [int(v) for v in entries["meta.decoder"]]
        s = entries["meta.sngp"]
    except (KeyError, IndexError) as exc:
        raise ValueError(f"checkpoint lacks model metadata: {exc}") from None
    regime = next(r for r, c in _REGIME_CODE.items() if c == code)
    sngp = SngpConfig(int(s[0]), float(s[1]), float(s[2]), float(s[3]), int(s[4]), float(s[5]), int(s[6]))
    return regime, EncoderConfig(*e), DecoderConfig(*d), sngp


class MultimodalModel:
    """Encoder + transformer decoder (``shallow=False``) or encoder + shallow head."""

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, seed: int, shallow: bool = False):
        rng = np.random.default_rng(seed)
        self.store = ParamStore()
        self.encoder = Encoder(self.store, enc_cfg, rng)
        self.shallow = shallow
        if shallow:
            self.head = ShallowMultimodalHead(self.store, enc_cfg.embed_dim, dec_cfg.num_modes, dec_cfg.horizon, rng)
        else:
            self.head = TransformerDecoder(self.store, dec_cfg, enc_cfg.embed_dim, rng)

    def forward(self, vs: Sequence[VectorizedScene]):
        batch = build_batch(vs)
        emb = self.encoder(batch)
        target = self.encoder.target_rows(emb, batch)
        if self.shallow:
            return self.head(target)
        return self.head(emb, batch.poly_mask, target)

    def predict(self, vs: Sequence[VectorizedScene], batch_size: int = 32) -> list[PredictionSet]:
        out = []
        for lo in range(0, len(vs), batch_size):
            traj, logits = self.forward(vs[lo:lo + batch_size])
            out.extend(to_prediction_sets(traj.data, logits.data))
        return out


class SngpModel:
    """Frozen pretrained encoder feeding an SNGP head on the target embedding."""

    def __init__(self, enc_cfg: EncoderConfig, sngp_cfg: SngpConfig, seed: int):
        rng = np.random.default_rng(seed)
        self.store = ParamStore()
        self.encoder = Encoder(self.store, enc_cfg, rng)
        self.head = SngpHead(self.store, sngp_cfg, enc_cfg.embed_dim, rng)

    def load_encoder(self, entries: dict[str, np.ndarray]) -> None:
        enc = {k: v for k, v in entries.items() if k.startswith("encoder.")}
        for name in self.store.names("encoder."):
            if name not in enc:
                raise ValueError(f"pretrained checkpoint lacks {name!r}")
            if enc[name].shape != self.store[name].shape:
                raise ValueError(f"pretrained {name!r} has shape {enc[name].shape}")
            self.store[name].data = enc[name].copy()
        self.store.set_trainable("encoder.", False)

    def embeddings(self, vs: Sequence[VectorizedScene], batch_size: int = 32) -> np.ndarray:
        rows = []
        for lo in range(0, len(vs), batch_size):
            batch = build_batch(vs[lo:lo + batch_size])
            rows.append(self.encoder.target_rows(self.encoder(batch), batch).data)
        return np.vstack(rows)

    def uncertainty(self, vs: Sequence[VectorizedScene], batch_size: int = 32) -> np.ndarray:
        return self.head.uncertainty(self.embeddings(vs, batch_size))


def model_entries(model, regime: Regime, cfg: TrainConfig) -> dict[str, np.ndarray]:
    entries = dict(_meta(regime, cfg))
    entries.update(model.store.state_dict())
    if isinstance(model, SngpModel):
        entries.update(model.head.buffers())
    return entries


def load_model(path: str | Path):
    entries = load_checkpoint(path)
    regime, enc, dec, sngp = configs_from_meta(entries)
    if regime is Regime.SNGP_HEAD:
        model = SngpModel(enc, sngp, 0)
        model.store.load_state_dict(entries)
        model.head.load_buffers(entries)
    else:
        model = MultimodalModel(enc, dec, 0, shallow=regime is Regime.PRETRAIN_ENCODER)
        model.store.load_state_dict(entries)
    return regime, model


# ---------------------------------------------------------------- data


def prepare(scenes: Sequence[Scene]) -> tuple[list[VectorizedScene], np.ndarray]:
    """Vectorized scenes and agent-frame futures (N, T, 2)."""
    vs = [vectorize_scene(s) for s in scenes]
    ys = np.stack([v.frame.to_local(s.future_array()) for v, s in zip(vs, scenes)])
    return vs, ys


def _subset(n: int, fraction: float, seed: int) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n)
    keep = max(1, int(math.ceil(fraction * n)))
    return np.sort(np.random.default_rng([seed, 7]).permutation(n)[:keep])


def _batches(order: np.ndarray, size: int):
    for b, lo in enumerate(range(0, len(order), size)):
        yield b, order[lo:lo + size]


# ---------------------------------------------------------------- train


def train(scenes: Sequence[Scene], cfg: TrainConfig, out_path: str | Path | None = None,
          log_path: str | Path | None = None, pretrained: str | Path | None = None,
          model=None) -> tuple[TrainReport, object]:
    """Run one regime; returns the report and the trained model."""
    if any(s.ground_truth_future is None for s in scenes):
        raise ValueError("training scenes need ground-truth futures")
    if cfg.regime is Regime.SNGP_HEAD and model is None:
        if pretrained is None or not Path(pretrained).is_file():
            raise PretrainedMissing(f"SNGP head training needs a pretrained encoder checkpoint, got {pretrained}")
    vs, ys = prepare(scenes)
    idx = _subset(len(vs), cfg.data_fraction, cfg.seed)
    vs, ys = [vs[i] for i in idx], ys[idx]
    report = TrainReport(cfg.regime)
    if cfg.regime is Regime.SNGP_HEAD:
        model = model or SngpModel(cfg.encoder, cfg.sngp, cfg.seed)
        if pretrained is not None:
            model.load_encoder(load_checkpoint(pretrained))
        _train_sngp(model, vs, ys, cfg, report)
    else:
        model = model or MultimodalModel(cfg.encoder, cfg.decoder, cfg.seed,
                                         shallow=cfg.regime is Regime.PRETRAIN_ENCODER)
        _train_multimodal(model, vs, ys, cfg, report)
    if out_path is not None:
        save_checkpoint(out_path, model_entries(model, cfg.regime, cfg))
        report.checkpoint_path = Path(out_path)
    if log_path is not None:
        Path(log_path).write_text("".join(line + "\n" for line in report.log_lines()))
    return report, model


def _epoch_orders(n: int, cfg: TrainConfig):
    rng = np.random.default_rng([cfg.seed, 1])
    for epoch in range(cfg.epochs):
        yield epoch, rng.permutation(n)


def _train_multimodal(model: MultimodalModel, vs, ys, cfg: TrainConfig, report: TrainReport) -> None:
    for epoch, order in _epoch_orders(len(vs), cfg):
        t0 = time.perf_counter()
        lr = lr_at(cfg.schedule, epoch)
        total = 0.0
        for b, sel in _batches(order, cfg.batch_size):
            try:
                traj, logits = model.forward([vs[i] for i in sel])
                loss = mixture_nll_loss(traj, logits, ys[sel])
                backward(loss, model.store)
            except FloatingPointError as exc:
                raise TrainingAbort(epoch + 1, b + 1, str(exc)) from exc
            adam_step(model.store, lr)
            total += loss.item() * len(sel)
        _record(report, epoch, total / len(vs), lr, time.perf_counter() - t0)


def _train_sngp(model: SngpModel, vs, ys, cfg: TrainConfig, report: TrainReport) -> None:
    flat = ys.reshape(len(ys), -1)
    head, n = model.head, len(vs)
    if cfg.finetune_encoder:
        model.store.set_trainable("encoder.", True)

        def inputs(sel):
            batch = build_batch([vs[i] for i in sel])
            return model.encoder.target_rows(model.encoder(batch), batch)
    else:
        # a frozen encoder gives fixed target embeddings; compute them once
        emb = model.embeddings(vs, cfg.batch_size)

        def inputs(sel):
            return T.Tensor(emb[sel])

    for epoch, order in _epoch_orders(n, cfg):
        t0 = time.perf_counter()
        lr = lr_at(cfg.schedule, epoch)
        total = 0.0
        for b, sel in _batches(order, cfg.batch_size):
            try:
                pred, phi = head(inputs(sel), update=True)
                loss = gaussian_nll(pred, flat[sel], head.beta, cfg.sngp.ridge, n)
                backward(loss, model.store)
                head.state = precision_update(head.state, phi.data, cfg.sngp)
            except FloatingPointError as exc:
                raise TrainingAbort(epoch + 1, b + 1, str(exc)) from exc
            adam_step(model.store, lr)
            total += loss.item() * len(sel)
        head.state = reset_covariance(head.state, cfg.sngp)
        _record(report, epoch, total / n, lr, time.perf_counter() - t0)
    # rebuild the precision from the final features in dataset order
    if cfg.finetune_encoder:
        emb = model.embeddings(vs, cfg.batch_size)
    for _, sel in _batches(np.arange(n), cfg.batch_size):
        phi = head.features(emb[sel]).data
        report.precision_stream.append(phi)
        head.state = precision_update(head.state, phi, cfg.sngp)


def _record(report: TrainReport, epoch: int, mean_loss: float, lr: float, seconds: float) -> None:
    if not math.isfinite(mean_loss):
        raise TrainingAbort(epoch + 1, 0, "epoch loss is not finite")
    report.losses.append(mean_loss)
    report.lrs.append(lr)
    report.seconds.append(seconds)
