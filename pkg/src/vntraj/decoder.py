"""Multimodal trajectory decoding and the corrected Gaussian-mixture NLL.

The transformer decoder turns ``k`` mode queries (target embedding projected,
plus one learnable vector per mode) into ``k`` trajectories and confidence
logits by alternating self-attention over modes, cross-attention over the
scene's polyline embeddings, and a feed-forward block (pre-norm residuals).
Trajectory heads emit per-step offsets that are prefix-summed into positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vntraj.core import tensor as T
from vntraj.core.layers import LayerNorm, Linear
from vntraj.core.params import ParamStore
from vntraj.vectorize import Frame

MAX_MODES = 5


@dataclass(frozen=True)
class DecoderConfig:
    num_modes: int = 5
    blocks: int = 2
    heads: int = 4
    hidden: int = 128
    ffn_dim: int = 256
    horizon: int = 25

    def __post_init__(self):
        if not 1 <= self.num_modes <= MAX_MODES:
            raise ValueError(f"num_modes must be in [1, {MAX_MODES}], got {self.num_modes}")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")


@dataclass(frozen=True)
class PredictionSet:
    trajectories: np.ndarray  # (k, T, 2)
    confidences: np.ndarray  # (k,)

    def __post_init__(self):
        w = np.asarray(self.confidences)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"confidences must be positive and sum to 1, got {w}")
        if not np.isfinite(self.trajectories).all():
            raise ValueError("trajectories must be finite")

    @property
    def num_modes(self) -> int:
        return len(self.confidences)


# ---------------------------------------------------------------- loss


def mixture_nll(trajectories: np.ndarray, confidences: np.ndarray, y: np.ndarray) -> float:
    """Corrected NLL of a unit-covariance Gaussian mixture over the whole horizon.

    ``-log sum_k w_k prod_t N(y_t | traj_kt, I) - T log(2 pi)``; the correction
    cancels the density normalizer, leaving ``-LSE_k(log w_k - 0.5 sum_t |r|^2)``.
    """
    traj = np.asarray(trajectories, dtype=np.float64)
    w = np.asarray(confidences, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if traj.ndim != 3 or traj.shape[1:] != y.shape or w.shape != traj.shape[:1]:
        raise ValueError(f"shape mismatch: traj {traj.shape}, w {w.shape}, y {y.shape}")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("confidences must be positive and normalized")
    a = np.log(w) - 0.5 * ((traj - y) ** 2).sum(axis=(1, 2))
    m = a.max()
    out = -(m + math.log(np.exp(a - m).sum()))
    if not math.isfinite(out):
        raise FloatingPointError("mixture NLL is not finite")
    return float(out)


def mixture_nll_loss(trajectories, logits, y: np.ndarray) -> T.Tensor:
    """Batch-mean differentiable mixture NLL.

    ``trajectories``: (B, k, T, 2); ``logits``: (B, k) unnormalized confidences;
    ``y``: (B, T, 2).
    """
    diff = trajectories - np.asarray(y, dtype=np.float64)[:, None]
    sq = T.scale(T.sum(diff * diff, axis=(2, 3)), 0.5)
    per_scene = T.scale(T.logsumexp(T.log_softmax_rows(logits) - sq, axis=-1), -1.0)
    return T.mean(per_scene)


# ---------------------------------------------------------------- attention


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, q_dim: int, kv_dim: int, hidden: int, heads: int,
                 rng: np.random.Generator):
        self.heads, self.head_dim = heads, hidden // heads
        self.q = Linear(store, f"{name}.q", q_dim, hidden, rng)
        self.k = Linear(store, f"{name}.k", kv_dim, hidden, rng)
        self.v = Linear(store, f"{name}.v", kv_dim, hidden, rng)
        self.out = Linear(store, f"{name}.out", hidden, hidden, rng)

    def _split(self, x):
        B, L, _ = x.shape
        return T.transpose(T.reshape(x, (B, L, self.heads, self.head_dim)), (0, 2, 1, 3))

    def weights(self, q_in, k_in, mask: np.ndarray | None = None) -> T.Tensor:
        q, k = self._split(self.q(q_in)), self._split(self.k(k_in))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        return T.softmax_rows(scores, None if mask is None else mask[:, None, None, :])

    def __call__(self, q_in, k_in, v_in, mask: np.ndarray | None = None) -> T.Tensor:
        """``mask``: (B, Lk) with True for real keys."""
        alpha = self.weights(q_in, k_in, mask)
        ctx = T.matmul(alpha, self._split(self.v(v_in)))
        B, _, Lq, _ = ctx.shape
        return self.out(T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, Lq, self.heads * self.head_dim)))


class DecoderBlock:
    def __init__(self, store: ParamStore, name: str, cfg: DecoderConfig, mem_dim: int, rng: np.random.Generator):
        H = cfg.hidden
        self.norm_self = LayerNorm(store, f"{name}.norm_self", H)
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", H, H, H, cfg.heads, rng)
        self.norm_cross = LayerNorm(store, f"{name}.norm_cross", H)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", H, mem_dim, H, cfg.heads, rng)
        self.norm_ffn = LayerNorm(store, f"{name}.norm_ffn", H)
        self.ffn1 = Linear(store, f"{name}.ffn1", H, cfg.ffn_dim, rng)
        self.ffn2 = Linear(store, f"{name}.ffn2", cfg.ffn_dim, H, rng)

    def __call__(self, x, pos, memory, mask):
        n = self.norm_self(x)
        x = x + self.self_attn(n + pos, n + pos, n)
        n = self.norm_cross(x)
        x = x + self.cross_attn(n + pos, memory, memory, mask)
        n = self.norm_ffn(x)
        return x + self.ffn2(T.relu(self.ffn1(n)))


class TransformerDecoder:
    def __init__(self, store: ParamStore, cfg: DecoderConfig, emb_dim: int, rng: np.random.Generator,
                 name: str = "decoder"):
        self.cfg = cfg
        H, k = cfg.hidden, cfg.num_modes
        self.query_proj = Linear(store, f"{name}.query_proj", emb_dim, H, rng)
        self.mode_embed = store.glorot(f"{name}.mode_embed", (k, H), rng)
        self.pos_embed = store.glorot(f"{name}.pos_embed", (k, H), rng)
        self.blocks = [DecoderBlock(store, f"{name}.block{i}", cfg, emb_dim, rng) for i in range(cfg.blocks)]
        self.final_norm = LayerNorm(store, f"{name}.final_norm", H)
        self.traj_head = Linear(store, f"{name}.traj_head", H, cfg.horizon * 2, rng)
        self.conf_head = Linear(store, f"{name}.conf_head", H, 1, rng)

    def build_queries(self, target_embedding) -> T.Tensor:
        """(B, D) target embeddings -> (B, k, hidden) mode queries."""
        proj = self.query_proj(target_embedding)
        B, H = proj.shape
        return T.reshape(proj, (B, 1, H)) + self.mode_embed

    def __call__(self, memory, mask: np.ndarray, target_embedding) -> tuple[T.Tensor, T.Tensor]:
        """Returns trajectories (B, k, T, 2) and confidence logits (B, k)."""
        x = self.build_queries(target_embedding)
        for block in self.blocks:
            x = block(x, self.pos_embed, memory, mask)
        x = self.final_norm(x)
        B, k, _ = x.shape
        offsets = T.reshape(self.traj_head(x), (B, k, self.cfg.horizon, 2))
        logits = T.reshape(self.conf_head(x), (B, k))
        return T.cumsum(offsets, axis=2), logits


class ShallowMultimodalHead:
    """One-hidden-layer MLP from the target embedding to k trajectories + logits."""

    def __init__(self, store: ParamStore, emb_dim: int, num_modes: int, horizon: int, rng: np.random.Generator,
                 hidden: int = 128, name: str = "head"):
        self.k, self.horizon = num_modes, horizon
        self.fc1 = Linear(store, f"{name}.fc1", emb_dim, hidden, rng)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, num_modes * (horizon * 2 + 1), rng)

    def __call__(self, target_embedding) -> tuple[T.Tensor, T.Tensor]:
        out = self.fc2(T.relu(self.fc1(target_embedding)))
        B = out.shape[0]
        n_traj = self.k * self.horizon * 2
        offsets = T.reshape(T.index(out, (slice(None), slice(0, n_traj))), (B, self.k, self.horizon, 2))
        logits = T.index(out, (slice(None), slice(n_traj, None)))
        return T.cumsum(offsets, axis=2), logits


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def to_prediction_sets(trajectories: np.ndarray, logits: np.ndarray) -> list[PredictionSet]:
    w = softmax_np(np.asarray(logits))
    return [PredictionSet(trajectories[b].copy(), w[b]) for b in range(len(w))]


def predict_world(pred: PredictionSet, frame: Frame) -> PredictionSet:
    """Map agent-frame trajectories to world coordinates; confidences unchanged."""
    k, horizon, _ = pred.trajectories.shape
    world = frame.to_world(pred.trajectories.reshape(-1, 2)).reshape(k, horizon, 2)
    return PredictionSet(world, pred.confidences.copy())
