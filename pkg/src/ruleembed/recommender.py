"""Embedding fusion and a light graph-convolution recommender trained with BPR.

Propagation has no feature transforms or nonlinearities, so the final
embeddings are a fixed linear map of the input table ``E0``. Gradients are
therefore pushed back through the same (symmetric) propagation operator.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, DivergenceError
from .factorize import EmbeddingSet

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- data


class InteractionData:
    """Positive user-item pairs with contiguous ids ``0..M-1`` and ``0..N-1``."""

    def __init__(self, users: np.ndarray, items: np.ndarray, user_ids: Sequence[str], item_ids: Sequence[str]):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        M, N = len(self.user_ids), len(self.item_ids)
        if len(users) and (users.min() < 0 or users.max() >= M or items.min() < 0 or items.max() >= N):
            raise DataError("interaction references an unknown user or item")
        keys = np.unique(users * N + items)
        self.users = keys // N if N else keys
        self.items = keys % N if N else keys
        self.keys = keys
        self._positives = None
        self._adj = None

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple], user_ids=None, item_ids=None) -> "InteractionData":
        pairs = [(str(u), str(i)) for u, i in pairs]
        if user_ids is None:
            user_ids = sorted({u for u, _ in pairs}, key=_natural)
        if item_ids is None:
            item_ids = sorted({i for _, i in pairs}, key=_natural)
        uidx = {u: k for k, u in enumerate(user_ids)}
        iidx = {i: k for k, i in enumerate(item_ids)}
        try:
            us = np.array([uidx[u] for u, _ in pairs], dtype=np.int64)
            its = np.array([iidx[i] for _, i in pairs], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"interaction references unknown id {exc.args[0]!r}") from None
        return cls(us, its, user_ids, item_ids)

    @property
    def M(self) -> int:
        return len(self.user_ids)

    @property
    def N(self) -> int:
        return len(self.item_ids)

    def __len__(self):
        return len(self.keys)

    def subset(self, mask: np.ndarray) -> "InteractionData":
        return InteractionData(self.users[mask], self.items[mask], self.user_ids, self.item_ids)

    def pairs(self) -> list[tuple[str, str]]:
        return [(self.user_ids[u], self.item_ids[i]) for u, i in zip(self.users, self.items)]

    @property
    def positives(self) -> list[np.ndarray]:
        """N_u for every user, as sorted item arrays."""
        if self._positives is None:
            bounds = np.searchsorted(self.users, np.arange(self.M + 1))
            self._positives = [self.items[bounds[u]:bounds[u + 1]] for u in range(self.M)]
        return self._positives

    def counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.M)

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        q = users * self.N + items
        if not len(self.keys):
            return np.zeros(len(q), bool)
        pos = np.minimum(np.searchsorted(self.keys, q), len(self.keys) - 1)
        return self.keys[pos] == q

    def norm_adjacency(self) -> sp.csr_matrix:
        """Symmetrically normalized (M+N) x (M+N) bipartite adjacency."""
        if self._adj is None:
            M, N = self.M, self.N
            R = sp.csr_matrix((np.ones(len(self.users)), (self.users, self.items)), shape=(M, N))
            A = sp.bmat([[None, R], [R.T, None]], format="csr")
            deg = np.asarray(A.sum(axis=1)).ravel()
            inv = np.zeros_like(deg)
            inv[deg > 0] = deg[deg > 0] ** -0.5
            D = sp.diags(inv)
            self._adj = sp.csr_matrix(D @ A @ D)
        return self._adj


def _natural(s: str):
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def read_interactions(path) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise DataError(f"{path}:{lineno}: expected user<TAB>item")
            out.append((cols[0], cols[1]))
    return out


def write_interactions(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")


# -------------------------------------------------------------- fusion


@dataclass
class FusionConfig:
    weight_f: float = 0.5
    weight_b: float = 0.5
    d_in: int | None = None
    d_out: int | None = None

    def validate(self):
        if self.weight_f < 0 or self.weight_b < 0 or self.weight_f + self.weight_b <= 0:
            raise ConfigError("fusion weights must be nonnegative with a positive sum")
        for name in ("d_in", "d_out"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ConfigError(f"fusion.{name} must be >= 1")
        return self

    def scaling(self, width: int) -> float:
        d_in = self.d_in or width
        d_out = self.d_out or width
        return float(np.sqrt(2.0 / (d_in + d_out)))


def attribute_context(Y: np.ndarray, R_r) -> np.ndarray:
    """R_r @ Y, with attribute-less rows replaced by the mean attribute vector."""
    R_r = sp.csr_matrix(R_r)
    if R_r.shape[1] != Y.shape[0]:
        raise ValueError(f"R_r has {R_r.shape[1]} columns but Y has {Y.shape[0]} rows")
    ctx = np.asarray(R_r @ Y)
    empty = np.diff(R_r.indptr) == 0
    if empty.any():
        ctx[empty] = Y.mean(axis=0)
    return ctx


def fuse(e: EmbeddingSet, R_r, cfg: FusionConfig | None = None) -> np.ndarray:
    cfg = (cfg or FusionConfig()).validate()
    if R_r.shape[0] != e.n:
        raise ValueError("R_r rows do not match the embedding rows")
    ctx = attribute_context(e.Y, R_r)
    S = cfg.weight_f * (e.X_f * ctx) + cfg.weight_b * (e.X_b * ctx)
    mu, sigma = float(S.mean()), float(S.std())
    if sigma < 1e-12:
        raise DataError("fused embeddings are constant (std < 1e-12); increase k or check the affinities")
    return (S - mu) / sigma * cfg.scaling(S.shape[1])


# --------------------------------------------------------------- model


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 2048
    reg: float = 1e-4
    epochs: int = 300
    n_layers: int = 3
    eval_every: int = 5
    patience: int = 10
    val_ratio: float = 0.1
    k_eval: int = 20
    seed: int = 0

    def validate(self):
        if self.learning_rate < 0:
            raise ConfigError("training.learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1 or self.patience < 1:
            raise ConfigError("training batch_size, epochs, eval_every and patience must be >= 1")
        if self.reg < 0:
            raise ConfigError("training.reg must be >= 0")
        if self.n_layers < 0:
            raise ConfigError("training.n_layers must be >= 0")
        if not (0 <= self.val_ratio < 1):
            raise ConfigError("training.val_ratio must lie in [0, 1)")
        return self


class RecModel:
    """Input table E0 (users first, then items) and the layer count."""

    def __init__(self, E0: np.ndarray, n_users: int, n_items: int, n_layers: int = 3):
        E0 = np.asarray(E0, dtype=np.float64)
        if E0.shape[0] != n_users + n_items:
            raise ValueError(f"E0 has {E0.shape[0]} rows, expected {n_users + n_items}")
        self.E0 = E0.copy()
        self.n_users = n_users
        self.n_items = n_items
        self.n_layers = n_layers
        self.final: np.ndarray | None = None
        self.history: list[dict] = []
        self.diagnostics: dict = {}

    @property
    def width(self):
        return self.E0.shape[1]

    def refresh(self, data: InteractionData) -> np.ndarray:
        self.final = propagate(self, data, self.n_layers)
        return self.final

    def user_item(self):
        if self.final is None:
            raise RuntimeError("model has no propagated embeddings; call refresh() first")
        return self.final[: self.n_users], self.final[self.n_users:]

    def scores(self, users=None) -> np.ndarray:
        U, I = self.user_item()
        return (U if users is None else U[users]) @ I.T


def _mean_propagation(adj: sp.csr_matrix, X: np.ndarray, L: int) -> np.ndarray:
    acc = X.copy()
    cur = X
    for _ in range(L):
        cur = adj @ cur
        acc += cur
    return acc / (L + 1)


def propagate(model: RecModel, g: InteractionData, L: int | None = None) -> np.ndarray:
    """Mean of ``E^0 .. E^L`` with ``E^(l+1) = Â E^l``."""
    L = model.n_layers if L is None else L
    if g.M != model.n_users or g.N != model.n_items:
        raise ValueError("interaction data does not match the model's user/item counts")
    out = _mean_propagation(g.norm_adjacency(), model.E0, L)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("propagated embeddings are non-finite")
    return out


def isolated(g: InteractionData) -> np.ndarray:
    deg = np.asarray(abs(g.norm_adjacency()).sum(axis=1)).ravel()
    return np.flatnonzero(deg == 0)


def init_embeddings(n_users: int, n_items: int, width: int, rng: np.random.Generator, scale: float,
                    X_final: np.ndarray | None = None, user_rows=None, item_rows=None) -> np.ndarray:
    """E0 from fused node embeddings where a mapping exists, Gaussian elsewhere.

    ``user_rows``/``item_rows`` give the graph row of each user/item or -1.
    """
    E0 = rng.normal(0.0, scale, size=(n_users + n_items, width))
    if X_final is not None:
        rows = np.concatenate([np.asarray(user_rows), np.asarray(item_rows)])
        hit = rows >= 0
        E0[hit] = X_final[rows[hit]]
    return E0


# ----------------------------------------------------------------- BPR


class Adam:
    def __init__(self, shape, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self, param: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def bpr_loss_and_grad(E0: np.ndarray, g: InteractionData, n_layers: int, users, pos, neg, reg: float):
    """Mean BPR loss over the triples plus ``reg * ||E0[touched]||^2 / batch``.

    Touched rows are the distinct users and items appearing in the batch.
    Returns (total loss, rank loss, gradient w.r.t. E0).
    """
    M = g.M
    adj = g.norm_adjacency()
    final = _mean_propagation(adj, E0, n_layers)
    fu, fi, fj = final[users], final[M + pos], final[M + neg]
    x = np.sum(fu * (fi - fj), axis=1)
    b = len(users)
    rank = float(-np.mean(log_sigmoid(x)))
    coef = -1.0 / (1.0 + np.exp(x)) / b  # d rank / d x

    G = np.zeros_like(final)
    np.add.at(G, users, coef[:, None] * (fi - fj))
    np.add.at(G, M + pos, coef[:, None] * fu)
    np.add.at(G, M + neg, -coef[:, None] * fu)
    grad = _mean_propagation(adj, G, n_layers)  # Â is symmetric

    touched = np.unique(np.concatenate([users, M + pos, M + neg]))
    reg_loss = reg * float(np.sum(E0[touched] ** 2)) / b
    grad[touched] += 2.0 * reg / b * E0[touched]
    return rank + reg_loss, rank, grad


def bpr_step(model: RecModel, g: InteractionData, batch, reg: float, opt: Adam) -> float:
    users, pos, neg = (np.asarray(a, dtype=np.int64) for a in batch)
    loss, _, grad = bpr_loss_and_grad(model.E0, g, model.n_layers, users, pos, neg, reg)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise DivergenceError("BPR loss became non-finite")
    opt.step(model.E0, grad)
    return loss


def sample_negative(u: int, g: InteractionData, rng: np.random.Generator) -> int | None:
    """Uniform draw from items ``u`` has not interacted with, or None."""
    pos = g.positives[u]
    free = g.N - len(pos)
    if free <= 0:
        log.info("user %s interacts with every item; skipped", g.user_ids[u])
        return None
    k = int(rng.integers(free))
    # k-th item not in the sorted positive list
    lo, hi = 0, g.N - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if mid - np.searchsorted(pos, mid, side="right") + 1 > k:
            hi = mid
        else:
            lo = mid + 1
    return int(lo)


def sample_negatives(users: np.ndarray, g: InteractionData, rng: np.random.Generator) -> np.ndarray:
    """Vectorized rejection sampling; -1 for users with no free item."""
    out = rng.integers(g.N, size=len(users))
    full = g.counts()[users] >= g.N
    bad = g.contains(users, out) & ~full
    while bad.any():
        out[bad] = rng.integers(g.N, size=int(bad.sum()))
        bad = g.contains(users, out) & ~full
    out[full] = -1
    return out


# ------------------------------------------------------------- ranking


class TopK(NamedTuple):
    items: list
    short: bool


def rank_items(scores: np.ndarray, exclude: Iterable[int] = (), K: int | None = None) -> TopK:
    """Items by descending score; ties go to the lower item id."""
    scores = np.asarray(scores, dtype=np.float64).copy()
    ex = np.fromiter((int(i) for i in exclude), dtype=np.int64)
    avail = len(scores) - len(np.unique(ex))
    if len(ex):
        scores[ex] = -np.inf
    order = np.argsort(-scores, kind="stable")
    K = len(scores) if K is None else K
    take = min(K, avail)
    return TopK(order[:take].tolist(), K > avail)


def recommend_topk(model: RecModel, u: int, K: int, exclude: Iterable[int] = ()) -> TopK:
    return rank_items(model.scores([u])[0], exclude, K)


def topk_matrix(scores: np.ndarray, train: InteractionData | None, K: int) -> np.ndarray:
    """Top-K item ids per row of a user x item score matrix, training positives masked."""
    scores = np.array(scores, dtype=np.float64)
    if train is not None and len(train):
        scores[train.users, train.items] = -np.inf
    K = min(K, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :K]


# ------------------------------------------------------------- training


def _recall_users(model: RecModel, fit: InteractionData, target: InteractionData, K: int) -> float:
    users = np.unique(target.users)
    if not len(users):
        return 0.0
    scores = model.scores(users)
    mask_rows = np.searchsorted(users, fit.users)
    in_users = (mask_rows < len(users)) & (users[np.minimum(mask_rows, len(users) - 1)] == fit.users)
    scores[mask_rows[in_users], fit.items[in_users]] = -np.inf
    top = np.argsort(-scores, axis=1, kind="stable")[:, :K]
    tpos = target.positives
    rec = [np.isin(tpos[u], top[r]).sum() / len(tpos[u]) for r, u in enumerate(users)]
    return float(np.mean(rec))


def train(model: RecModel, g: InteractionData, cfg: TrainConfig | None = None,
          val: InteractionData | None = None) -> RecModel:
    """Shuffled mini-batch BPR with Adam and early stopping on validation recall.

    Without ``val`` there is no early stopping and all epochs run.
    """
    cfg = (cfg or TrainConfig()).validate()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.E0.shape, cfg.learning_rate)
    iso = isolated(g)
    if len(iso):
        model.diagnostics["isolated_rows"] = int(len(iso))
    counts = g.counts()
    live = counts[g.users] < g.N
    if (~live).any():
        model.diagnostics["skipped_full_users"] = int(len(np.unique(g.users[~live])))
    users_all, items_all = g.users[live], g.items[live]
    best, best_E0, bad_evals = -1.0, model.E0.copy(), 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(users_all))
        neg = sample_negatives(users_all[perm], g, rng)
        losses = []
        for lo in range(0, len(perm), cfg.batch_size):
            sl = slice(lo, lo + cfg.batch_size)
            batch = (users_all[perm][sl], items_all[perm][sl], neg[sl])
            losses.append(bpr_step(model, g, batch, cfg.reg, opt))
        entry = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else 0.0}
        if val is not None and len(val) and epoch % cfg.eval_every == 0:
            model.refresh(g)
            r = _recall_users(model, g, val, cfg.k_eval)
            entry["val_recall"] = r
            if r > best:
                best, best_E0, bad_evals = r, model.E0.copy(), 0
            else:
                bad_evals += 1
            if bad_evals >= cfg.patience:
                history.append(entry)
                break
        history.append(entry)
    if val is not None and len(val) and best >= 0:
        model.E0 = best_E0
        model.diagnostics["best_val_recall"] = best
    model.history = history
    model.refresh(g)
    return model


# ----------------------------------------------------------- checkpoint

_CKPT_MAGIC = b"RWGCN001"


def write_checkpoint(model: RecModel, path, config: dict | None = None) -> None:
    echo = json.dumps(config or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<QQQQ", model.n_users, model.n_items, model.width, model.n_layers))
        fh.write(np.ascontiguousarray(model.E0, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", len(echo)))
        fh.write(echo)


def read_checkpoint(path) -> tuple[RecModel, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _CKPT_MAGIC:
        raise DataError(f"{path}: not a model checkpoint")
    M, N, w, L = struct.unpack("<QQQQ", raw[8:40])
    size = (M + N) * w * 8
    E0 = np.frombuffer(raw[40:40 + size], dtype="<f8").reshape(M + N, w).copy()
    (n_echo,) = struct.unpack("<Q", raw[40 + size:48 + size])
    echo = json.loads(raw[48 + size:48 + size + n_echo].decode() or "{}")
    return RecModel(E0, int(M), int(N), int(L)), echo
