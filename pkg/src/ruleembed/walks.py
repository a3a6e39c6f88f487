"""Random walks with restart on the extended graph and SPMI affinities."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .graph import ExtendedGraph
from .rules import RuleIndex

log = logging.getLogger(__name__)

WALK, RULE_JUMP = "walk", "rule_jump"


@dataclass
class WalkConfig:
    alpha: float = 0.15
    n_r: int = 300
    max_steps: int = 100
    seed: int = 0

    def validate(self):
        if not (0 < self.alpha < 1):
            raise ConfigError(f"walk.alpha must lie in (0, 1), got {self.alpha}")
        if self.n_r < 1:
            raise ConfigError("walk.n_r must be >= 1")
        if self.max_steps < 1:
            raise ConfigError("walk.max_steps must be >= 1")
        return self


@dataclass
class PairSample:
    """Forward pairs (node, attr, is_jump) and backward pairs (attr, node)."""

    f_node: np.ndarray
    f_attr: np.ndarray
    f_jump: np.ndarray
    b_attr: np.ndarray
    b_node: np.ndarray
    n: int
    d: int
    n_r: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def delta(self) -> int:
        return int(self.f_jump.sum())

    @property
    def forward_pairs(self) -> list[tuple[int, int, str]]:
        return [(int(v), int(a), RULE_JUMP if j else WALK)
                for v, a, j in zip(self.f_node, self.f_attr, self.f_jump)]

    @property
    def backward_pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.b_attr.tolist(), self.b_node.tolist()))

    def summary(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "n_r": self.n_r,
            "forward_pairs": int(len(self.f_node)),
            "backward_pairs": int(len(self.b_node)),
            "delta": self.delta,
            "diagnostics": {k: int(v) for k, v in self.diagnostics.items()},
        }


@dataclass
class AffinityMatrices:
    F: np.ndarray
    B: np.ndarray
    p_f_hat: np.ndarray
    p_b_hat: np.ndarray


def _stop_nodes(eg: ExtendedGraph, starts: np.ndarray, alpha: float, max_steps: int,
                rng: np.random.Generator) -> np.ndarray:
    """Terminal vertex of one RWR per entry of ``starts``.

    A walker halts w.p. ``alpha`` per step, at a sink, or after ``max_steps``
    moves; otherwise it follows a uniform out-edge.
    """
    pos = starts.astype(np.int64).copy()
    active = np.arange(len(pos))
    for _ in range(max_steps):
        if not len(active):
            break
        here = pos[active]
        stop = (rng.random(len(active)) < alpha) | eg.sinks[here]
        active = active[~stop]
        here = here[~stop]
        j = (rng.random(len(active)) * eg.out_degree[here]).astype(np.int64)
        pos[active] = eg.indices[eg.indptr[here] + j]
    return pos


def _draw_rows(M: sp.csr_matrix, keys: np.ndarray, rows: np.ndarray, rng) -> np.ndarray:
    """Column drawn from each given row's distribution (all rows nonempty)."""
    u = rng.random(len(rows))
    hit = np.searchsorted(keys, rows + u, side="right")
    return M.indices[hit].astype(np.int64)


def _forward(eg: ExtendedGraph, starts: np.ndarray, index: RuleIndex | None, cfg: WalkConfig, rng):
    stops = _stop_nodes(eg, starts, cfg.alpha, cfg.max_steps, rng)
    has = eg.n_assoc[stops] > 0
    empty = int((~has).sum())
    src, stops = starts[has], stops[has]
    attrs = _draw_rows(eg.Rr, eg.Rr_keys, stops, rng)
    j_src = np.zeros(0, dtype=np.int64)
    j_attr = np.zeros(0, dtype=np.int64)
    if index is not None and len(index):
        keys, inverse = np.unique(stops * eg.d + attrs, return_inverse=True)
        uniq = np.array([index.jump_target(int(k % eg.d), int(k // eg.d)) for k in keys], dtype=np.int64)
        targets = uniq[inverse.reshape(-1)] if len(keys) else np.zeros(0, dtype=np.int64)
        fired = targets >= 0
        j_src, j_attr = src[fired], targets[fired]
    return src, attrs, j_src, j_attr, empty


def forward_walk(eg: ExtendedGraph, start: int, rules: RuleIndex | None, cfg: WalkConfig,
                 rng: np.random.Generator) -> list[tuple[int, int, str]]:
    """One forward walk from ``start``; at most one rule jump."""
    src, attrs, j_src, j_attr, _ = _forward(eg, np.array([start]), rules, cfg, rng)
    out = [(int(v), int(a), WALK) for v, a in zip(src, attrs)]
    out += [(int(v), int(a), RULE_JUMP) for v, a in zip(j_src, j_attr)]
    return out


def backward_walk(eg: ExtendedGraph, attr: int, cfg: WalkConfig, rng: np.random.Generator) -> tuple[int, int]:
    entry = _draw_rows(eg.RcT, eg.RcT_keys, np.array([attr]), rng)
    stop = _stop_nodes(eg, entry, cfg.alpha, cfg.max_steps, rng)
    return int(attr), int(stop[0])


def sample_pairs(eg: ExtendedGraph, rules: RuleIndex | None, cfg: WalkConfig,
                 chunk: int = 200_000) -> PairSample:
    """``n_r`` forward walks per node and ``n_r`` backward walks per attribute.

    Chunk ``c`` draws from its own generator seeded by ``(seed, stream, c)``
    so the result only depends on the configuration.
    """
    cfg.validate()
    n, d = eg.n, eg.d
    f_node, f_attr, f_jump = [], [], []
    empty = 0
    starts_all = np.repeat(np.arange(n, dtype=np.int64), cfg.n_r)
    for c, lo in enumerate(range(0, len(starts_all), chunk)):
        rng = np.random.default_rng([cfg.seed, 0, c])
        src, attrs, j_src, j_attr, e = _forward(eg, starts_all[lo:lo + chunk], rules, cfg, rng)
        empty += e
        f_node += [src, j_src]
        f_attr += [attrs, j_attr]
        f_jump += [np.zeros(len(src), bool), np.ones(len(j_src), bool)]

    b_attr, b_node = [], []
    attrs_all = np.repeat(np.arange(d, dtype=np.int64), cfg.n_r)
    for c, lo in enumerate(range(0, len(attrs_all), chunk)):
        rng = np.random.default_rng([cfg.seed, 1, c])
        a = attrs_all[lo:lo + chunk]
        entry = _draw_rows(eg.RcT, eg.RcT_keys, a, rng)
        b_attr.append(a)
        b_node.append(_stop_nodes(eg, entry, cfg.alpha, cfg.max_steps, rng))

    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
    diag = {"empty_forward_trials": empty}
    if rules is not None:
        diag.update(rules.diagnostics)
    if empty:
        log.info("%d forward trials stopped at attribute-less nodes", empty)
    s = PairSample(cat(f_node, np.int64), cat(f_attr, np.int64), cat(f_jump, bool),
                   cat(b_attr, np.int64), cat(b_node, np.int64), n, d, cfg.n_r, diag)
    return s


def spmi_affinities(p_f: np.ndarray, p_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward/backward shifted-PMI affinities from n x d probability matrices.

    F normalizes each attribute column over nodes, B normalizes each node row
    over attributes; zero denominators give zero affinity.
    """
    n, d = p_f.shape
    col = p_f.sum(axis=0, keepdims=True)
    ratio_f = np.divide(n * p_f, col, out=np.zeros_like(p_f, dtype=np.float64), where=col > 0)
    row = p_b.sum(axis=1, keepdims=True)
    ratio_b = np.divide(d * p_b, row, out=np.zeros_like(p_b, dtype=np.float64), where=row > 0)
    return np.log(ratio_f + 1.0), np.log(ratio_b + 1.0)


def estimate_affinities(s: PairSample, n: int | None = None, d: int | None = None,
                        delta: int | None = None) -> AffinityMatrices:
    """Empirical p'_f, p_b and the SPMI affinities ``F`` and ``B``.

    p'_f divides pair counts by every pair emitted from the same start node
    (its walks plus its rule jumps); p_b divides by the ``n_r`` walks per
    attribute.
    """
    n = s.n if n is None else n
    d = s.d if d is None else d
    if delta is not None and delta != s.delta:
        raise ValueError(f"delta {delta} disagrees with the sample ({s.delta})")
    if not len(s.f_node) and not len(s.b_node):
        raise ValueError("pair sample is empty")
    cf = np.bincount(s.f_node * d + s.f_attr, minlength=n * d).reshape(n, d).astype(np.float64)
    per_node = cf.sum(axis=1, keepdims=True)
    p_f = np.divide(cf, per_node, out=np.zeros_like(cf), where=per_node > 0)
    cb = np.bincount(s.b_node * d + s.b_attr, minlength=n * d).reshape(n, d).astype(np.float64)
    per_attr = np.bincount(s.b_attr, minlength=d).astype(np.float64)
    p_b = np.divide(cb, per_attr[None, :], out=np.zeros_like(cb), where=per_attr[None, :] > 0)
    F, B = spmi_affinities(p_f, p_b)
    return AffinityMatrices(F, B, p_f, p_b)


@dataclass
class ExactRWR:
    stop: np.ndarray
    p_f: np.ndarray
    p_b: np.ndarray
    iterations: int


def exact_rwr(eg: ExtendedGraph, alpha: float, tol: float = 1e-12, max_iter: int = 100_000,
              max_size: int = 2000) -> ExactRWR:
    """Exact stop distributions by power iteration (no rule jumps).

    ``stop[i, l]`` is the probability that a walk from ``i`` halts at ``l``;
    sinks absorb with probability one. ``p_f = stop @ R_r`` and
    ``p_b = stop.T @ R_c``.
    """
    if eg.n + eg.d > max_size:
        raise ValueError(f"graph too large for dense power iteration: n + d = {eg.n + eg.d} > {max_size}")
    P = eg.matrices.P.toarray()
    halt = np.where(eg.sinks, 1.0, alpha)
    Q = (1.0 - alpha) * P
    Q[eg.sinks] = 0.0
    term = np.diag(halt)
    stop = term.copy()
    it = 0
    for it in range(1, max_iter + 1):
        term = Q @ term
        stop += term
        if np.abs(term).max() < tol:
            break
    Rr = eg.matrices.R_r.toarray()
    Rc = eg.matrices.R_c.toarray()
    return ExactRWR(stop, stop @ Rr, stop.T @ Rc, it)


_AFF_MAGIC = b"RWAFF001"


def write_affinities(aff: AffinityMatrices, path) -> None:
    """Binary layout: magic, n, d (uint64 LE), then F and B as row-major f8."""
    n, d = aff.F.shape
    with open(path, "wb") as fh:
        fh.write(_AFF_MAGIC + struct.pack("<QQ", n, d))
        fh.write(np.ascontiguousarray(aff.F, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(aff.B, dtype="<f8").tobytes())


def read_affinities(path) -> AffinityMatrices:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _AFF_MAGIC:
        raise DataError(f"{path}: not an affinity file")
    n, d = struct.unpack("<QQ", raw[8:24])
    body = np.frombuffer(raw, dtype="<f8", offset=24)
    if body.size != 2 * n * d:
        raise DataError(f"{path}: truncated affinity file")
    F = body[: n * d].reshape(n, d).copy()
    B = body[n * d:].reshape(n, d).copy()
    return AffinityMatrices(F, B, np.zeros((0, 0)), np.zeros((0, 0)))


def write_affinities_tsv(aff: AffinityMatrices, path, node_ids=None, attr_ids=None) -> None:
    n, d = aff.F.shape
    node_ids = node_ids or [str(i) for i in range(n)]
    attr_ids = attr_ids or [str(j) for j in range(d)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node\tattr\tF\tB\n")
        for i, j in zip(*np.nonzero((aff.F > 0) | (aff.B > 0))):
            fh.write(f"{node_ids[i]}\t{attr_ids[j]}\t{aff.F[i, j]:.10g}\t{aff.B[i, j]:.10g}\n")
