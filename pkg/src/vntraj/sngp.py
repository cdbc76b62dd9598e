"""Distance-aware uncertainty head on top of a pretrained encoder.

embedding -> spectral-normalized linear -> random Fourier features ``phi``
-> linear output ``phi^T beta`` (the flattened future in the agent frame).
A Laplace precision matrix over ``phi`` is tracked with a discounted
recursion; the scene uncertainty is the posterior variance ``phi^T S phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from vntraj.core import tensor as T
from vntraj.core.params import ParamStore

PREFIX = "sngp."


@dataclass(frozen=True)
class SngpConfig:
    rff_dim: int = 256
    discount: float = 0.9999
    ridge: float = 0.1
    inv_lengthscale: float = 0.05
    sn_iters: int = 1
    sn_bound: float = 1.0
    output_dim: int = 50

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must be in (0, 1), got {self.discount}")
        if self.ridge <= 0:
            raise ValueError(f"ridge must be positive, got {self.ridge}")
        if self.rff_dim < 2:
            raise ValueError(f"rff_dim must be >= 2, got {self.rff_dim}")
        if self.sn_iters < 1 or self.sn_bound <= 0:
            raise ValueError("sn_iters must be >= 1 and sn_bound positive")


@dataclass
class SngpState:
    """Frozen random features plus the running precision matrix."""

    W_L: np.ndarray  # (rff_dim, in_dim)
    b_L: np.ndarray  # (rff_dim,)
    precision: np.ndarray  # (rff_dim, rff_dim)
    _cov: np.ndarray | None = field(default=None, repr=False)

    @property
    def rff_dim(self) -> int:
        return len(self.b_L)

    def covariance(self) -> np.ndarray:
        if self._cov is None:
            self._cov = scipy.linalg.inv(self.precision)
            self._cov = 0.5 * (self._cov + self._cov.T)
        return self._cov


def init_state(cfg: SngpConfig, in_dim: int, rng: np.random.Generator) -> SngpState:
    W = rng.normal(0.0, cfg.inv_lengthscale, size=(cfg.rff_dim, in_dim))
    b = rng.uniform(0.0, 2.0 * math.pi, size=cfg.rff_dim)
    return SngpState(W, b, cfg.ridge * np.eye(cfg.rff_dim))


# ---------------------------------------------------------------- spectral norm


def power_iteration(W: np.ndarray, u: np.ndarray, iters: int) -> tuple[float, np.ndarray]:
    """Estimate the top singular value of ``W`` (out x in) from left vector ``u``."""
    if not np.any(W):
        raise ValueError("spectral normalization of a zero matrix")
    for _ in range(iters):
        v = W.T @ u
        v /= np.linalg.norm(v)
        u = W @ v
        u /= np.linalg.norm(u)
    return float(u @ W @ v), u


def spectral_normalize(W: np.ndarray, u: np.ndarray, iters: int = 1, bound: float = 1.0
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``W * min(1, bound / sigma)`` and the updated singular vector."""
    sigma, u = power_iteration(np.asarray(W, dtype=np.float64), u, iters)
    return W * min(1.0, bound / sigma), u


# ---------------------------------------------------------------- features / posterior


def rff(d: np.ndarray, state: SngpState) -> np.ndarray:
    """``sqrt(2/D_L) cos(-W_L d + b_L)`` for one vector or a row batch."""
    d = np.asarray(d, dtype=np.float64)
    return math.sqrt(2.0 / state.rff_dim) * np.cos(-(d @ state.W_L.T) + state.b_L)


def rff_tensor(d, state: SngpState) -> T.Tensor:
    z = T.scale(T.matmul(d, state.W_L.T), -1.0) + state.b_L
    return T.scale(T.cosine(z), math.sqrt(2.0 / state.rff_dim))


def precision_update(state: SngpState, phi: np.ndarray, cfg: SngpConfig) -> SngpState:
    phi = np.asarray(phi, dtype=np.float64).reshape(-1, state.rff_dim)
    if not np.isfinite(phi).all():
        raise FloatingPointError("non-finite random features in precision update")
    P = cfg.discount * state.precision + (1.0 - cfg.discount) * (phi.T @ phi)
    return replace(state, precision=0.5 * (P + P.T), _cov=None)


def reset_covariance(state: SngpState, cfg: SngpConfig) -> SngpState:
    return replace(state, precision=cfg.ridge * np.eye(state.rff_dim), _cov=None)


def uncertainty(state: SngpState, phi: np.ndarray) -> np.ndarray | float:
    """``phi^T precision^{-1} phi`` via a Cholesky solve; rows give one value each."""
    phi = np.asarray(phi, dtype=np.float64)
    try:
        factor = scipy.linalg.cho_factor(state.precision, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError("precision matrix is not positive definite") from exc
    rows = np.atleast_2d(phi)
    z = scipy.linalg.cho_solve(factor, rows.T)
    u = np.maximum(np.einsum("ij,ji->i", rows, z), 0.0)
    return float(u[0]) if phi.ndim == 1 else u


def sngp_forward(phi, beta) -> T.Tensor:
    """``phi^T beta``: (B, D_L) x (D_L, out) -> (B, out)."""
    return T.matmul(phi, beta)


def gaussian_nll(pred, y: np.ndarray, beta, ridge: float, n_train: int) -> T.Tensor:
    """Unit-variance Gaussian NLL (constants dropped), batch mean, plus the beta prior.

    The prior ``N(0, I/ridge)`` contributes ``ridge/2 |beta|^2`` to the
    full-data objective, i.e. ``ridge / (2 n_train)`` per sample.
    """
    diff = pred - np.asarray(y, dtype=np.float64)
    data = T.scale(T.mean(T.sum(diff * diff, axis=-1)), 0.5)
    prior = T.scale(T.sum(beta * beta), 0.5 * ridge / n_train)
    return data + prior


class SngpHead:
    """Trainable spectral layer and ``beta`` in ``store``; random features and precision in ``state``."""

    def __init__(self, store: ParamStore, cfg: SngpConfig, in_dim: int, rng: np.random.Generator):
        self.cfg = cfg
        self.weight = store.glorot(f"{PREFIX}sn.weight", (in_dim, in_dim), rng)
        self.bias = store.zeros(f"{PREFIX}sn.bias", (in_dim,))
        self.beta = store.zeros(f"{PREFIX}beta", (cfg.rff_dim, cfg.output_dim))
        u = rng.normal(size=in_dim)
        self.u = u / np.linalg.norm(u)
        self.state = init_state(cfg, in_dim, rng)

    def normalized_weight(self, update: bool) -> T.Tensor:
        """Spectrally normalized weight; the scale factor is treated as a constant."""
        # stored as (in, out); power iteration runs on the (out, in) matrix
        W = self.weight.data.T
        sigma, u = power_iteration(W, self.u, self.cfg.sn_iters)
        if update:
            self.u = u
        return T.scale(self.weight, min(1.0, self.cfg.sn_bound / sigma))

    def features(self, d, update: bool = False) -> T.Tensor:
        h = T.matmul(d, self.normalized_weight(update)) + self.bias
        return rff_tensor(h, self.state)

    def __call__(self, d, update: bool = False) -> tuple[T.Tensor, T.Tensor]:
        phi = self.features(d, update)
        return sngp_forward(phi, self.beta), phi

    def uncertainty(self, d: np.ndarray) -> np.ndarray:
        return uncertainty(self.state, self.features(np.asarray(d)).data)

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{PREFIX}W_L": self.state.W_L, f"{PREFIX}b_L": self.state.b_L,
                f"{PREFIX}precision": self.state.precision, f"{PREFIX}sn_u": self.u}

    def load_buffers(self, entries: dict[str, np.ndarray]) -> None:
        try:
            W, b, P, u = (entries[f"{PREFIX}{k}"] for k in ("W_L", "b_L", "precision", "sn_u"))
        except KeyError as exc:
            raise KeyError(f"missing SNGP buffer {exc.args[0]!r}") from None
        if W.shape != self.state.W_L.shape or P.shape != self.state.precision.shape:
            raise ValueError("SNGP buffer shapes do not match the configuration")
        self.state = SngpState(W.copy(), b.copy(), P.copy())
        self.u = u.copy()
