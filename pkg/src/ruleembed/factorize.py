"""Joint factorization of forward and backward affinities.

Minimizes ``||F - X_f Y^T||^2 + ||B - X_b Y^T||^2`` with full-batch Adam.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DivergenceError

log = logging.getLogger(__name__)


@dataclass
class FactorizeConfig:
    k: int = 128
    epochs: int = 200
    learning_rate: float = 0.05
    init_scale: float | None = None
    seed: int = 0
    convergence_tol: float = 1e-6
    init: str = "gaussian"
    beta1: float = 0.9
    beta2: float = 0.999

    def validate(self):
        if self.k < 2 or self.k % 2:
            raise ConfigError(f"factorize.k must be even and >= 2, got {self.k}")
        if self.epochs < 1:
            raise ConfigError("factorize.epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("factorize.learning_rate must be > 0")
        if self.init not in ("gaussian", "svd"):
            raise ConfigError("factorize.init must be 'gaussian' or 'svd'")
        return self

    @property
    def half(self) -> int:
        return self.k // 2

    def scale(self) -> float:
        return self.init_scale if self.init_scale is not None else 0.1 / np.sqrt(self.half)


@dataclass
class EmbeddingSet:
    X_f: np.ndarray
    X_b: np.ndarray
    Y: np.ndarray
    k: int
    curve: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        h = self.k // 2
        if self.k % 2 or self.k < 2:
            raise ValueError(f"k must be even and >= 2, got {self.k}")
        if self.X_f.shape[1] != h or self.X_b.shape != self.X_f.shape or self.Y.shape[1] != h:
            raise ValueError("embedding widths disagree with k/2")

    @property
    def n(self):
        return self.X_f.shape[0]

    @property
    def d(self):
        return self.Y.shape[0]


def _check(F, B, e: EmbeddingSet | None = None):
    if F.shape != B.shape:
        raise ValueError(f"F {F.shape} and B {B.shape} differ in shape")
    if e is not None and (e.X_f.shape[0] != F.shape[0] or e.Y.shape[0] != F.shape[1]):
        raise ValueError("embedding shapes do not match the affinity matrices")


def reconstruction_error(F: np.ndarray, B: np.ndarray, e: EmbeddingSet) -> float:
    _check(F, B, e)
    rf = F - e.X_f @ e.Y.T
    rb = B - e.X_b @ e.Y.T
    return float(np.sum(rf * rf) + np.sum(rb * rb))


def objective_and_grad(F, B, X_f, X_b, Y):
    rf = X_f @ Y.T - F
    rb = X_b @ Y.T - B
    loss = float(np.sum(rf * rf) + np.sum(rb * rb))
    return loss, 2.0 * rf @ Y, 2.0 * rb @ Y, 2.0 * (rf.T @ X_f + rb.T @ X_b)


def svd_init(F, B, half: int):
    """Best rank-``half`` factors of the stacked [F; B] matrix."""
    n = F.shape[0]
    U, s, Vt = np.linalg.svd(np.vstack([F, B]), full_matrices=False)
    r = min(half, len(s))
    root = np.sqrt(s[:r])
    left = np.zeros((2 * n, half))
    Y = np.zeros((F.shape[1], half))
    left[:, :r] = U[:, :r] * root
    Y[:, :r] = Vt[:r].T * root
    return left[:n], left[n:], Y


def factorize(F: np.ndarray, B: np.ndarray, cfg: FactorizeConfig | None = None) -> EmbeddingSet:
    cfg = (cfg or FactorizeConfig()).validate()
    F = np.asarray(F, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    _check(F, B)
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(B))):
        raise DataError("affinity matrices contain non-finite entries")
    n, d = F.shape
    h = cfg.half
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "svd":
        X_f, X_b, Y = svd_init(F, B, h)
    else:
        s = cfg.scale()
        X_f, X_b, Y = (rng.normal(0.0, s, size=shape) for shape in ((n, h), (n, h), (d, h)))

    params = [X_f, X_b, Y]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = cfg.beta1, cfg.beta2, 1e-12
    lr = cfg.learning_rate
    curve = []
    increases = []
    for epoch in range(1, cfg.epochs + 1):
        loss, *grads = objective_and_grad(F, B, *params)
        if not np.isfinite(loss):
            raise DivergenceError(f"factorization loss became non-finite at epoch {epoch}")
        curve.append(loss)
        if epoch > 3 and loss > curve[-2] * (1 + 1e-6) + 1e-12:
            increases.append(epoch)
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mhat = m[i] / (1 - b1 ** epoch)
            vhat = v[i] / (1 - b2 ** epoch)
            params[i] -= lr * mhat / (np.sqrt(vhat) + eps)
        if epoch > 3 and abs(curve[-2] - loss) <= cfg.convergence_tol * max(curve[-2], 1e-300):
            break
    final = reconstruction_error(F, B, EmbeddingSet(*params, k=cfg.k))
    if not np.isfinite(final):
        raise DivergenceError("factorization produced non-finite embeddings")
    curve.append(final)
    if increases:
        log.info("factorization loss rose at %d epochs (first: %s)", len(increases), increases[:5])
    return EmbeddingSet(*params, k=cfg.k, curve=curve,
                        diagnostics={"loss_increases": increases, "epochs_run": len(curve) - 1})


_EMB_MAGIC = b"RWEMB001"


def write_embeddings(e: EmbeddingSet, path) -> None:
    """magic, n, d, k (uint64 LE) followed by X_f, X_b, Y as row-major f8."""
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC + struct.pack("<QQQ", e.n, e.d, e.k))
        for M in (e.X_f, e.X_b, e.Y):
            fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def read_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _EMB_MAGIC:
        raise DataError(f"{path}: not an embedding file")
    n, d, k = struct.unpack("<QQQ", raw[8:32])
    h = k // 2
    body = np.frombuffer(raw, dtype="<f8", offset=32)
    if body.size != (2 * n + d) * h:
        raise DataError(f"{path}: truncated embedding file")
    X_f = body[: n * h].reshape(n, h).copy()
    X_b = body[n * h: 2 * n * h].reshape(n, h).copy()
    Y = body[2 * n * h:].reshape(d, h).copy()
    return EmbeddingSet(X_f, X_b, Y, k=int(k))
