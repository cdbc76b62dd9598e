"""Trajectory metrics, retention curves and the uncertainty/error diagnostic."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.stats

from vntraj.decoder import PredictionSet, mixture_nll
from vntraj.scene import DT, Scene

SUMMARY_HEADER = ("model", "r_auc_cnll", "cnll", "min_ade", "min_fde", "w_ade", "w_fde")


class EvalError(ValueError):
    """Predictions and scenes do not line up."""


@dataclass(frozen=True)
class EvalRecord:
    scene_id: str
    cnll: float
    min_ade: float
    min_fde: float
    w_ade: float
    w_fde: float
    uncertainty: float = 0.0


@dataclass(frozen=True)
class RetentionCurve:
    points: tuple[tuple[float, float], ...]
    auc: float


def ade_fde(pred: PredictionSet, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    if pred.trajectories.shape[1:] != y.shape:
        raise ValueError(f"shape mismatch: {pred.trajectories.shape} vs {y.shape}")
    dist = np.linalg.norm(pred.trajectories - y, axis=-1)
    return dist.mean(axis=1), dist[:, -1]


def aggregate(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """(min over modes, confidence-weighted mean)."""
    values = np.asarray(values, dtype=np.float64)
    return float(values.min()), float(np.dot(weights, values))


def cnll(pred: PredictionSet, y: np.ndarray) -> float:
    return mixture_nll(pred.trajectories, pred.confidences, y)


def score(scene_id: str, pred: PredictionSet, y: np.ndarray, uncertainty: float = 0.0) -> EvalRecord:
    ade, fde = ade_fde(pred, y)
    min_ade, w_ade = aggregate(ade, pred.confidences)
    min_fde, w_fde = aggregate(fde, pred.confidences)
    return EvalRecord(scene_id, cnll(pred, y), min_ade, min_fde, w_ade, w_fde, float(uncertainty))


def retention_curve(records: Sequence[EvalRecord],
                    metric: Callable[[EvalRecord], float] = lambda r: r.cnll) -> RetentionCurve:
    """Mean metric over the ``j`` least-uncertain records, ``j = 1..N``."""
    if not records:
        raise ValueError("retention curve of an empty record set")
    ordered = sorted(records, key=lambda r: (r.uncertainty, r.scene_id))
    vals = np.array([metric(r) for r in ordered], dtype=np.float64)
    n = len(vals)
    means = np.cumsum(vals) / np.arange(1, n + 1)
    points = tuple((j / n, float(m)) for j, m in zip(range(1, n + 1), means))
    return RetentionCurve(points, float(means.mean()))


def r_auc(records: Sequence[EvalRecord], uncertainties: Iterable[float] | None = None) -> float:
    """R-AUC of CNLL, optionally under substitute uncertainty scores."""
    if uncertainties is not None:
        records = [EvalRecord(r.scene_id, r.cnll, r.min_ade, r.min_fde, r.w_ade, r.w_fde, float(u))
                   for r, u in zip(records, uncertainties, strict=True)]
    return retention_curve(records).auc


def rank_correlation(records: Sequence[EvalRecord]) -> float:
    """Spearman correlation between uncertainty and CNLL (average ranks on ties)."""
    if len(records) < 3:
        raise ValueError("rank correlation needs at least 3 records")
    u = np.array([r.uncertainty for r in records])
    c = np.array([r.cnll for r in records])
    if np.ptp(u) == 0 or np.ptp(c) == 0:
        raise ValueError("rank correlation is undefined for a constant series")
    ru, rc = scipy.stats.rankdata(u), scipy.stats.rankdata(c)
    return float(np.corrcoef(ru, rc)[0, 1])


# ---------------------------------------------------------------- predictions file


def prediction_row(scene_id: str, pred: PredictionSet, uncertainty: float | None) -> dict:
    row = {"scene_id": scene_id,
           "modes": [{"w": float(w), "traj": traj.tolist()} for w, traj in zip(pred.confidences, pred.trajectories)]}
    if uncertainty is not None:
        row["uncertainty"] = float(uncertainty)
    return row


def dumps_predictions(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in rows)


def loads_predictions(text: str) -> list[tuple[str, PredictionSet, float | None]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            traj = np.array([m["traj"] for m in row["modes"]], dtype=np.float64)
            w = np.array([m["w"] for m in row["modes"]], dtype=np.float64)
            out.append((str(row["scene_id"]), PredictionSet(traj, w), row.get("uncertainty")))
        except (KeyError, TypeError, ValueError) as exc:
            raise EvalError(f"prediction line {lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalResult:
    records: tuple[EvalRecord, ...]
    summary: dict[str, float]
    curve: RetentionCurve


def evaluate(predictions: Sequence[tuple[str, PredictionSet, float | None]], scenes: Sequence[Scene]) -> EvalResult:
    truth = {}
    for s in scenes:
        if s.ground_truth_future is None:
            raise EvalError(f"scene {s.scene_id} has no ground truth")
        truth[s.scene_id] = s.future_array()
    seen = set()
    records = []
    for sid, pred, u in predictions:
        if sid in seen:
            raise EvalError(f"duplicate scene_id {sid}")
        seen.add(sid)
        if sid not in truth:
            raise EvalError(f"missing scene {sid}")
        records.append(score(sid, pred, truth[sid], 0.0 if u is None else u))
    if not records:
        raise EvalError("no predictions to evaluate")
    records.sort(key=lambda r: r.scene_id)
    curve = retention_curve(records)
    summary = {"r_auc_cnll": curve.auc}
    for col in SUMMARY_HEADER[2:]:
        summary[col] = float(np.mean([getattr(r, col) for r in records]))
    return EvalResult(tuple(records), summary, curve)


def _fmt(x: float) -> str:
    return repr(float(x))


def summary_csv(model: str, summary: dict[str, float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerow([model] + [_fmt(summary[c]) for c in SUMMARY_HEADER[1:]])
    return buf.getvalue()


def retention_csv(curve: RetentionCurve) -> str:
    lines = ["fraction,mean_cnll"]
    lines += [f"{_fmt(f)},{_fmt(m)}" for f, m in curve.points]
    return "\n".join(lines) + "\n"


def scatter_csv(records: Sequence[EvalRecord]) -> str:
    """Log-log pairs; non-positive values map to ``nan``."""
    def safe_log(v: float) -> float:
        return math.log(v) if v > 0 else float("nan")

    lines = ["scene_id,log_u,log_cnll"]
    lines += [f"{r.scene_id},{_fmt(safe_log(r.uncertainty))},{_fmt(safe_log(r.cnll))}" for r in records]
    return "\n".join(lines) + "\n"


def retention_svg(curve: RetentionCurve, width: int = 480, height: int = 320, pad: int = 40) -> str:
    xs = np.array([p[0] for p in curve.points])
    ys = np.array([p[1] for p in curve.points])
    lo, hi = float(min(ys.min(), 0.0)), float(ys.max())
    span = hi - lo if hi > lo else 1.0
    px = pad + xs * (width - 2 * pad)
    py = height - pad - (ys - lo) / span * (height - 2 * pad)
    path = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{path}"/>\n'
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">retained fraction</text>\n'
        f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})" '
        f'text-anchor="middle">mean CNLL</text>\n'
        f'<text x="{width - pad}" y="{pad - 10}" text-anchor="end" font-size="12">R-AUC {curve.auc:.4f}</text>\n'
        f'<text x="{pad - 4}" y="{height - pad + 4}" text-anchor="end" font-size="10">{lo:.3g}</text>\n'
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="10">{hi:.3g}</text>\n'
        "</svg>\n"
    )


def write_reports(result: EvalResult, out_dir: Path, model: str = "model") -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "summary": (out_dir / "summary.csv", summary_csv(model, result.summary)),
        "retention": (out_dir / "retention.csv", retention_csv(result.curve)),
        "scatter": (out_dir / "scatter.csv", scatter_csv(result.records)),
        "plot": (out_dir / "retention.svg", retention_svg(result.curve)),
    }
    for path, text in files.values():
        path.write_text(text)
    return {k: p for k, (p, _) in files.items()}


# ---------------------------------------------------------------- baseline


def constant_velocity(scene: Scene, horizon: int | None = None) -> np.ndarray:
    """Extrapolate the target's last observed velocity (world frame)."""
    last = scene.target.states[-1]
    n = horizon or scene.future_len
    t = DT * np.arange(1, n + 1)[:, None]
    return np.array([last.x, last.y]) + t * np.array([last.vx, last.vy])


def constant_velocity_prediction(scene: Scene) -> PredictionSet:
    return PredictionSet(constant_velocity(scene)[None], np.ones(1))
