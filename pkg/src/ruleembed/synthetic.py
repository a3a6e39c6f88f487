"""Synthetic property graphs with a planted attribute dependency.

Users carry a MAJOR value and items a GENRE value; a user of major ``m``
mostly interacts with items of genre ``m``. TAG attributes are noise.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import Dataset
from .graph import build_graph, write_graph
from .recommender import InteractionData, write_interactions


@dataclass
class PlantedConfig:
    n_users: int = 500
    n_items: int = 200
    n_groups: int = 5
    n_tags: int = 40
    tags_per_node: int = 2
    mean_interactions: float = 8.0
    min_interactions: int = 2
    dependency: float = 0.85
    popularity: float = 1.0
    seed: int = 0


def planted_dataset(cfg: PlantedConfig | None = None) -> Dataset:
    cfg = cfg or PlantedConfig()
    rng = np.random.default_rng(cfg.seed)
    G = cfg.n_groups
    users = [f"u{k}" for k in range(cfg.n_users)]
    items = [f"i{k}" for k in range(cfg.n_items)]
    major = rng.integers(G, size=cfg.n_users)
    genre = np.arange(cfg.n_items) % G
    rng.shuffle(genre)

    assoc = [(u, f"MAJOR=m{major[k]}") for k, u in enumerate(users)]
    assoc += [(i, f"GENRE=g{genre[k]}") for k, i in enumerate(items)]
    for v in users + items:
        for t in rng.choice(cfg.n_tags, size=cfg.tags_per_node, replace=False):
            assoc.append((v, f"TAG=t{t}"))

    # Zipf-like popularity within each genre
    pop = 1.0 / (1.0 + rng.permutation(cfg.n_items)) ** cfg.popularity
    counts = np.maximum(cfg.min_interactions, rng.geometric(1.0 / cfg.mean_interactions, size=cfg.n_users))
    counts = np.minimum(counts, cfg.n_items // 2)
    us, its = [], []
    for k in range(cfg.n_users):
        own = genre == major[k]
        w = np.where(own, cfg.dependency / own.sum(), (1 - cfg.dependency) / (~own).sum()) * pop
        w /= w.sum()
        chosen = rng.choice(cfg.n_items, size=counts[k], replace=False, p=w)
        us += [k] * len(chosen)
        its += chosen.tolist()

    labels = {u: "user" for u in users}
    labels.update({i: "item" for i in items})
    g = build_graph([], assoc, labels, directed=False, nodes=users + items)
    inter = InteractionData(np.array(us), np.array(its), users, items)
    return Dataset(g, inter, name="planted", thresholds=(4, 8, 16))


def tiny_dataset(seed: int = 0) -> Dataset:
    """50-node instance of the planted generator."""
    return planted_dataset(PlantedConfig(n_users=30, n_items=20, n_groups=2, n_tags=6, tags_per_node=1,
                                         mean_interactions=4.0, seed=seed))


def write_dataset(ds: Dataset, out_dir, config: str | None = None) -> Path:
    """Write ``ds`` in the canonical TSV layout, plus an optional config file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(ds.graph, out / "edges.tsv", out / "associations.tsv", out / "labels.tsv")
    write_interactions(ds.interactions.pairs(), out / "interactions.tsv")
    if config is not None:
        (out / "config.ini").write_text(config, encoding="utf-8")
    return out


TINY_CONFIG = """\
data.edges = edges.tsv
data.associations = associations.tsv
data.labels = labels.tsv
data.interactions = interactions.tsv
data.name = tiny
output_dir = runs
seeds = 0

[mining]
min_support = 3
max_pattern_nodes = 2
literal_kinds = constant

[walk]
n_r = 50

[factorize]
k = 16
epochs = 100

[training]
epochs = 30
eval_every = 5
learning_rate = 0.01

[eval]
thresholds = 2, 4, 8
k = 5
"""


def planted_experiment(**overrides):
    """Experiment settings used for the planted benchmark.

    Constant-only literals keep the miner from emitting tautologies such as
    ``x.TAG => y.TAG`` that fire on every walk.
    """
    from .evaluation import ExperimentConfig
    from .factorize import FactorizeConfig
    from .rules import MiningConfig

    cfg = ExperimentConfig(
        mining=MiningConfig(min_support=40, max_pattern_nodes=2, literal_kinds=("constant",)),
        factorize=FactorizeConfig(k=64),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()
