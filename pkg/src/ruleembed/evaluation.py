"""Splits, ranking metrics, cohort and attribute-drop analysis, ablation variants."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .factorize import EmbeddingSet, FactorizeConfig, factorize
from .graph import PropertyGraph, compute_matrices, extend, with_associations, with_edges
from .recommender import (FusionConfig, InteractionData, RecModel, TrainConfig, fuse, init_embeddings,
                          topk_matrix, train)
from .rules import MiningConfig, Rule, RuleIndex, mine_rules
from .walks import AffinityMatrices, PairSample, WalkConfig, estimate_affinities, sample_pairs

log = logging.getLogger(__name__)

VARIANTS = ("GCN_b", "RAE_h", "RAE_n", "RAE_u", "RAE")
INTERACTION_LABEL = "interacts"


# --------------------------------------------------------------- splits


@dataclass
class Split:
    train: InteractionData
    test: InteractionData
    ratio: float
    seed: int


def split(data: InteractionData, ratio: float = 0.8, seed: int = 0) -> Split:
    """Per-user random split; each user keeps ``n - round((1-ratio) n)`` >= 1 in train."""
    if not (0 < ratio < 1):
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng([seed, 17])
    test_mask = np.zeros(len(data), bool)
    bounds = np.searchsorted(data.users, np.arange(data.M + 1))
    for u in range(data.M):
        lo, hi = bounds[u], bounds[u + 1]
        n = hi - lo
        n_test = min(int(round((1 - ratio) * n)), n - 1)
        if n_test > 0:
            test_mask[lo + rng.choice(n, size=n_test, replace=False)] = True
    return Split(data.subset(~test_mask), data.subset(test_mask), ratio, seed)


# -------------------------------------------------------------- metrics


def recall_at_k(ranked: Sequence[int], relevant, K: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall is undefined for an empty relevant set")
    hits = sum(1 for i in list(ranked)[:K] if i in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked: Sequence[int], relevant, K: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("ndcg is undefined for an empty relevant set")
    dcg = sum(1.0 / math.log2(r + 2) for r, i in enumerate(list(ranked)[:K]) if i in relevant)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(K, len(relevant))))
    return dcg / idcg


def user_metrics(top: np.ndarray, users: np.ndarray, test: InteractionData, K: int):
    """Per-user recall and ndcg for rows of a top-K matrix (vectorized)."""
    K = min(K, top.shape[1])
    disc = 1.0 / np.log2(np.arange(2, K + 2))
    idcg_cum = np.cumsum(disc)
    rec = np.empty(len(users))
    ndcg = np.empty(len(users))
    for r, u in enumerate(users):
        rel = test.positives[u]
        hit = np.isin(top[r, :K], rel)
        rec[r] = hit.sum() / len(rel)
        ndcg[r] = (disc * hit).sum() / idcg_cum[min(K, len(rel)) - 1]
    return rec, ndcg


# -------------------------------------------------------------- cohorts

DEFAULT_THRESHOLDS = {"flickr": (100, 200, 900), "citeseer": (10, 20, 30)}


def sparsity_cohorts(g: InteractionData, thresholds=(10, 20, 30)) -> np.ndarray:
    """Cohort 1..4 per user from interaction counts: <t1, [t1,t2), [t2,t3), >=t3."""
    t = list(thresholds)
    if len(t) != 3 or not (t[0] < t[1] < t[2]):
        raise ConfigError(f"cohort thresholds must be three strictly increasing values, got {t}")
    return np.searchsorted(np.asarray(t), g.counts(), side="right") + 1


@dataclass
class MetricsReport:
    variant: str
    K: int
    recall_at_k: float
    ndcg_at_k: float
    n_users: int
    cohorts: list = field(default_factory=list)
    seed: int = 0
    drop_ratio: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def evaluate(model: RecModel, train_data: InteractionData, test: InteractionData, K: int = 20,
             thresholds=(10, 20, 30), variant: str = "", seed: int = 0) -> MetricsReport:
    users = np.unique(test.users)
    if not len(users):
        raise ValueError("test split has no evaluable users")
    scores = model.scores(users)
    sub = InteractionData(*_rows_for(train_data, users), [""] * len(users), train_data.item_ids)
    top = topk_matrix(scores, sub, K)
    rec, nd = user_metrics(top, users, test, K)
    cohort = sparsity_cohorts(train_data, thresholds)[users]
    rows = []
    for c in range(1, 5):
        m = cohort == c
        rows.append({
            "cohort": c,
            "n_users": int(m.sum()),
            "recall": float(rec[m].mean()) if m.any() else None,
            "ndcg": float(nd[m].mean()) if m.any() else None,
        })
    return MetricsReport(variant, K, float(rec.mean()), float(nd.mean()), int(len(users)), rows, seed)


def _rows_for(data: InteractionData, users: np.ndarray):
    """Training pairs restricted to ``users`` with user ids renumbered to row positions."""
    pos = np.searchsorted(users, data.users)
    ok = (pos < len(users)) & (users[np.minimum(pos, len(users) - 1)] == data.users)
    return pos[ok], data.items[ok]


# ------------------------------------------------------ attribute drop


def drop_attributes(g: PropertyGraph, ratio: float, seed: int = 0) -> PropertyGraph:
    """Remove ``floor(ratio * |E_R|)`` associations chosen uniformly at random."""
    if not (0 <= ratio < 1):
        raise ConfigError(f"drop ratio must lie in [0, 1), got {ratio}")
    n_drop = int(math.floor(ratio * g.n_assoc))
    if n_drop == 0:
        return g
    rng = np.random.default_rng([seed, 29])
    keep = np.ones(g.n_assoc, bool)
    keep[rng.choice(g.n_assoc, size=n_drop, replace=False)] = False
    return with_associations(g, keep)


# ------------------------------------------------------------- variants


@dataclass
class Dataset:
    """Property graph plus user-item interactions keyed by graph node ids."""

    graph: PropertyGraph
    interactions: InteractionData
    name: str = "dataset"
    thresholds: tuple = (10, 20, 30)

    def node_rows(self, ids: Sequence[str]) -> np.ndarray:
        idx = self.graph.node_index()
        return np.array([idx.get(str(v), -1) for v in ids], dtype=np.int64)


@dataclass
class ExperimentConfig:
    mining: MiningConfig = field(default_factory=MiningConfig)
    walk: WalkConfig = field(default_factory=WalkConfig)
    factorize: FactorizeConfig = field(default_factory=FactorizeConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    split_ratio: float = 0.8
    k_eval: int = 20
    drop_ratio: float = 0.0
    interaction_edges: bool = True

    def validate(self):
        self.mining.validate()
        self.walk.validate()
        self.factorize.validate()
        self.fusion.validate()
        self.training.validate()
        if not (0 < self.split_ratio < 1):
            raise ConfigError("eval.split_ratio must lie in (0, 1)")
        if self.k_eval < 1:
            raise ConfigError("eval.k must be >= 1")
        if not (0 <= self.drop_ratio < 1):
            raise ConfigError("eval.drop_ratio must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def select_rules(rules: Sequence[Rule], variant: str) -> list[Rule]:
    ordered = sorted(rules, key=Rule.sort_key)
    if variant == "RAE_n":
        return []
    if variant == "RAE_h":
        return ordered[: math.ceil(len(ordered) / 2)]
    return ordered


@dataclass
class Prepared:
    """Everything a variant needs that does not depend on the variant itself."""

    split: Split
    fit: InteractionData
    val: InteractionData | None
    graph: PropertyGraph
    rules: list


def prepare(data: Dataset, cfg: ExperimentConfig, seed: int, mine: bool = True) -> Prepared:
    sp_ = split(data.interactions, cfg.split_ratio, seed)
    fit, val = sp_.train, None
    if cfg.training.val_ratio > 0:
        inner = split(sp_.train, 1 - cfg.training.val_ratio, seed + 1_000_003)
        fit, val = inner.train, inner.test
    g = drop_attributes(data.graph, cfg.drop_ratio, seed)
    if cfg.interaction_edges:
        known = g.node_index()
        extra = [(fit.user_ids[u], fit.item_ids[i], INTERACTION_LABEL) for u, i in zip(fit.users, fit.items)
                 if fit.user_ids[u] in known and fit.item_ids[i] in known]
        g = with_edges(g, extra, directed=False)
    rules = mine_rules(g, cfg.mining) if mine else []
    return Prepared(sp_, fit, val, g, rules)


@dataclass
class Stages:
    """Intermediate artifacts from one variant run."""

    rules: list = field(default_factory=list)
    pairs: PairSample | None = None
    affinity: AffinityMatrices | None = None
    embeddings: EmbeddingSet | None = None
    node_table: np.ndarray | None = None
    model: RecModel | None = None
    timings: dict = field(default_factory=dict)


def embed_graph(g: PropertyGraph, rules: Sequence[Rule], cfg: ExperimentConfig, seed: int, st: Stages):
    t = time.perf_counter()
    mats = compute_matrices(g)
    eg = extend(g, mats)
    index = RuleIndex(rules, g) if rules else None
    wcfg = _reseed(cfg.walk, seed)
    st.pairs = sample_pairs(eg, index, wcfg)
    st.affinity = estimate_affinities(st.pairs)
    st.timings["sample"] = time.perf_counter() - t
    t = time.perf_counter()
    st.embeddings = factorize(st.affinity.F, st.affinity.B, _reseed(cfg.factorize, seed))
    st.timings["factorize"] = time.perf_counter() - t
    return mats


def _reseed(c, seed: int):
    out = type(c)(**asdict(c))
    out.seed = int(c.seed) + int(seed)
    return out


def run_variant(v: str, data: Dataset, cfg: ExperimentConfig | None = None, seed: int = 0,
                prepared: Prepared | None = None, stages: Stages | None = None) -> MetricsReport:
    """Train and evaluate one ablation variant.

    ``prepared`` lets several variants share the split, graph and mined rules.
    """
    cfg = (cfg or ExperimentConfig()).validate()
    if v not in VARIANTS:
        raise ConfigError(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}")
    st = stages if stages is not None else Stages()
    t0 = time.perf_counter()
    if prepared is None:
        prepared = prepare(data, cfg, seed, mine=v in ("RAE", "RAE_h", "RAE_u"))
    fit = prepared.fit
    width = cfg.factorize.half
    rng = np.random.default_rng([seed, 7])
    scale = cfg.fusion.scaling(width)
    X = None
    diag: dict = {}
    if v != "GCN_b":
        st.rules = select_rules(prepared.rules, v)
        mats = embed_graph(prepared.graph, st.rules, cfg, seed, st)
        if v == "RAE_u":
            X = st.embeddings.X_f
        else:
            X = fuse(st.embeddings, mats.R_r, cfg.fusion)
        st.node_table = X
        diag["delta"] = st.pairs.delta
        diag["n_rules"] = len(st.rules)
        diag.update({k: v_ for k, v_ in st.pairs.diagnostics.items()})
    idx = prepared.graph.node_index()
    urows = np.array([idx.get(u, -1) for u in fit.user_ids], dtype=np.int64)
    irows = np.array([idx.get(i, -1) for i in fit.item_ids], dtype=np.int64)
    E0 = init_embeddings(fit.M, fit.N, width, rng, scale, X, urows, irows)
    if X is not None:
        diag["random_rows"] = int((urows < 0).sum() + (irows < 0).sum())
    model = RecModel(E0, fit.M, fit.N, cfg.training.n_layers)
    t = time.perf_counter()
    train(model, fit, _reseed(cfg.training, seed), prepared.val)
    st.timings["train"] = time.perf_counter() - t
    st.model = model
    rep = evaluate(model, prepared.split.train, prepared.split.test, cfg.k_eval, data.thresholds, v, seed)
    rep.drop_ratio = cfg.drop_ratio
    diag.update(model.diagnostics)
    diag["epochs"] = len(model.history)
    diag["seconds"] = time.perf_counter() - t0
    rep.diagnostics = diag
    rep.config = cfg.to_dict()
    return rep


def run_ablation(data: Dataset, cfg: ExperimentConfig | None = None, seeds=(0,),
                 variants: Sequence[str] = VARIANTS) -> list[MetricsReport]:
    cfg = (cfg or ExperimentConfig()).validate()
    out = []
    for s in seeds:
        need_rules = any(v in ("RAE", "RAE_h", "RAE_u") for v in variants)
        prep = prepare(data, cfg, s, mine=need_rules)
        for v in variants:
            out.append(run_variant(v, data, cfg, s, prepared=prep))
            log.info("seed %d %s recall=%.4f ndcg=%.4f", s, v, out[-1].recall_at_k, out[-1].ndcg_at_k)
    return out


def missingness_curve(data: Dataset, cfg: ExperimentConfig, ratios=(0.0, 0.2, 0.4, 0.8), seeds=(0,),
                      variants=("RAE", "RAE_n")) -> list[MetricsReport]:
    out = []
    for r in ratios:
        c = ExperimentConfig(**{**cfg.__dict__, "drop_ratio": r})
        out += run_ablation(data, c, seeds, variants)
    return out


def summarize(reports: Sequence[MetricsReport]) -> dict:
    """Mean and std of the metrics per (variant, drop ratio)."""
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.variant, r.drop_ratio), []).append(r)
    out = {}
    for (v, dr), rs in groups.items():
        rec = np.array([r.recall_at_k for r in rs])
        nd = np.array([r.ndcg_at_k for r in rs])
        out[(v, dr)] = {"recall": rec.mean(), "recall_std": rec.std(), "ndcg": nd.mean(),
                        "ndcg_std": nd.std(), "n": len(rs)}
    return out
