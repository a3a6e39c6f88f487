"""Staged pipeline with on-disk artifacts and a content-hash manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import STAGES, DataPaths, RunConfig
from .errors import ConfigError, PreconditionError, RuleEmbedError
from .evaluation import (Dataset, MetricsReport, evaluate, prepare, run_ablation, select_rules,
                         summarize)
from .factorize import factorize, read_embeddings, write_embeddings
from .graph import compute_matrices, extend, load_graph
from .recommender import (InteractionData, RecModel, fuse, init_embeddings, read_checkpoint, read_interactions,
                          train, write_checkpoint)
from .rules import RuleIndex, mine_rules, read_rules, write_rules
from .walks import estimate_affinities, read_affinities, sample_pairs, write_affinities

log = logging.getLogger(__name__)

ARTIFACTS = {
    "mine": ("rules.txt",),
    "sample": ("pairs.json", "affinity.bin"),
    "factorize": ("embeddings.bin",),
    "train": ("checkpoint.bin",),
    "evaluate": ("report.json",),
}
NEEDS = {
    "sample": ("rules.txt",),
    "factorize": ("affinity.bin",),
    "train": ("embeddings.bin",),
    "evaluate": ("checkpoint.bin",),
}
EMBEDDING_STAGES = ("mine", "sample", "factorize")


def load_dataset(paths: DataPaths, thresholds=(10, 20, 30)) -> Dataset:
    pairs = read_interactions(paths.interactions)
    inter = InteractionData.from_pairs(pairs)
    g = load_graph(paths.edges, paths.associations, paths.labels, directed=paths.directed,
                   extra_nodes=inter.user_ids + inter.item_ids)
    return Dataset(g, inter, name=paths.name, thresholds=tuple(thresholds))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class PipelineResult:
    status: int
    out_dir: Path
    manifest: dict
    report: MetricsReport | None = None
    timings: dict = field(default_factory=dict)


class _Run:
    def __init__(self, cfg: RunConfig, data: Dataset | None, out: Path):
        self.cfg = cfg
        self.exp = cfg.experiment().validate()
        self.seed = int(cfg.seeds[0])
        self.out = out
        self._data = data
        self._prep = None

    @property
    def data(self) -> Dataset:
        if self._data is None:
            self._data = load_dataset(self.cfg.data, self.cfg.eval.thresholds)
        return self._data

    def prepared(self):
        if self._prep is None:
            self._prep = prepare(self.data, self.exp, self.seed, mine=False)
        return self._prep

    def path(self, name: str) -> Path:
        return self.out / name

    # stages -----------------------------------------------------------

    def mine(self):
        p = self.prepared()
        rules = [] if self.cfg.variant == "RAE_n" else mine_rules(p.graph, self.exp.mining)
        write_rules(rules, self.path("rules.txt"))

    def sample(self):
        p = self.prepared()
        rules = select_rules(read_rules(self.path("rules.txt")), self.cfg.variant)
        index = RuleIndex(rules, p.graph) if rules else None
        eg = extend(p.graph)
        wcfg = type(self.exp.walk)(**{**self.exp.walk.__dict__, "seed": self.exp.walk.seed + self.seed})
        s = sample_pairs(eg, index, wcfg)
        summary = s.summary()
        summary["rules_used"] = len(rules)
        summary["node_ids"] = list(p.graph.node_ids)
        summary["attr_ids"] = list(p.graph.attr_ids)
        _dump_json(summary, self.path("pairs.json"))
        write_affinities(estimate_affinities(s), self.path("affinity.bin"))

    def factorize(self):
        aff = read_affinities(self.path("affinity.bin"))
        fcfg = type(self.exp.factorize)(**{**self.exp.factorize.__dict__,
                                           "seed": self.exp.factorize.seed + self.seed})
        write_embeddings(factorize(aff.F, aff.B, fcfg), self.path("embeddings.bin"))

    def train(self):
        p = self.prepared()
        fit = p.fit
        width = self.exp.factorize.half
        X = None
        if self.cfg.variant != "GCN_b":
            e = read_embeddings(self.path("embeddings.bin"))
            if e.n != p.graph.n:
                raise PreconditionError("embeddings.bin does not match the graph; rerun the embed stages")
            X = e.X_f if self.cfg.variant == "RAE_u" else fuse(e, compute_matrices(p.graph).R_r, self.exp.fusion)
        idx = p.graph.node_index()
        urows = np.array([idx.get(u, -1) for u in fit.user_ids], dtype=np.int64)
        irows = np.array([idx.get(i, -1) for i in fit.item_ids], dtype=np.int64)
        rng = np.random.default_rng([self.seed, 7])
        E0 = init_embeddings(fit.M, fit.N, width, rng, self.exp.fusion.scaling(width), X, urows, irows)
        model = RecModel(E0, fit.M, fit.N, self.exp.training.n_layers)
        tcfg = type(self.exp.training)(**{**self.exp.training.__dict__,
                                          "seed": self.exp.training.seed + self.seed})
        train(model, fit, tcfg, p.val)
        write_checkpoint(model, self.path("checkpoint.bin"), self.echo())

    def evaluate(self):
        p = self.prepared()
        model, _ = read_checkpoint(self.path("checkpoint.bin"))
        if model.n_users != p.fit.M or model.n_items != p.fit.N:
            raise PreconditionError("checkpoint does not match the interaction data")
        model.refresh(p.fit)
        rep = evaluate(model, p.split.train, p.split.test, self.exp.k_eval, self.data.thresholds,
                       self.cfg.variant, self.seed)
        rep.drop_ratio = self.exp.drop_ratio
        rep.config = self.echo()
        rep.diagnostics = {"n_rules_file": _count_rules(self.path("rules.txt")),
                           "test_pairs": len(p.split.test), "train_pairs": len(p.split.train)}
        _dump_json(report_document(rep), self.path("report.json"))
        return rep

    def echo(self) -> dict:
        d = self.cfg.to_dict()
        d["output_dir"] = None  # keeps artifacts relocatable
        return d


def _count_rules(path: Path):
    if not path.exists():
        return None
    return sum(1 for line in path.read_text(encoding="utf-8").splitlines() if line and not line.startswith("#"))


def run_pipeline(cfg: RunConfig, resume_from: str | None = None, stages: Sequence[str] | None = None,
                 data: Dataset | None = None, out_dir=None) -> PipelineResult:
    """Run the enabled stages in order, persisting one artifact set per stage.

    ``resume_from`` skips every stage before it; their artifacts must already
    be in the output directory. Stages turned off in the config are skipped.
    """
    if resume_from is not None and resume_from not in STAGES:
        raise ConfigError(f"--resume-from must be one of {', '.join(STAGES)}")
    out = Path(out_dir or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    run = _Run(cfg, data, out)
    selected = [s for s in STAGES if cfg.stages.get(s, True) and (stages is None or s in stages)]
    if resume_from is not None:
        selected = [s for s in selected if STAGES.index(s) >= STAGES.index(resume_from)]
    manifest_path = out / "manifest.json"
    manifest = {"variant": cfg.variant, "seed": run.seed, "stages": {}}
    if manifest_path.exists():
        try:
            old = json.loads(manifest_path.read_text(encoding="utf-8"))
            if old.get("variant") == cfg.variant and old.get("seed") == run.seed:
                manifest["stages"] = old.get("stages", {})
        except (OSError, ValueError):
            pass
    manifest["config_sha256"] = hashlib.sha256(json.dumps(run.echo(), sort_keys=True).encode()).hexdigest()
    timings, report = {}, None
    for stage in STAGES:
        if stage not in selected:
            continue
        if cfg.variant == "GCN_b" and stage in EMBEDDING_STAGES:
            manifest["stages"][stage] = {"status": "skipped", "artifacts": {}}
            continue
        needs = NEEDS.get(stage, ())
        if stage == "train" and cfg.variant == "GCN_b":
            needs = ()
        t = time.perf_counter()
        try:
            missing = [n for n in needs if not run.path(n).exists()]
            if missing:
                raise PreconditionError(f"stage {stage!r} needs {', '.join(missing)} in {out}; "
                                        f"run the earlier stages first")
            result = getattr(run, stage)()
            if stage == "evaluate":
                report = result
        except RuleEmbedError as exc:
            manifest["stages"][stage] = {"status": "failed", "error": str(exc), "artifacts": {}}
            _dump_json(manifest, manifest_path)
            raise
        except Exception as exc:
            manifest["stages"][stage] = {"status": "failed", "error": repr(exc), "artifacts": {}}
            _dump_json(manifest, manifest_path)
            raise
        timings[stage] = time.perf_counter() - t
        manifest["stages"][stage] = {
            "status": "ok",
            "artifacts": {n: sha256(run.path(n)) for n in ARTIFACTS[stage]},
        }
        log.info("stage %s done in %.2fs", stage, timings[stage])
    _dump_json(manifest, manifest_path)
    _dump_json({k: round(v, 6) for k, v in timings.items()}, out / "timings.json")
    return PipelineResult(0, out, manifest, report, timings)


def manifest_artifacts(manifest: dict) -> dict:
    out = {}
    for st in manifest.get("stages", {}).values():
        out.update(st.get("artifacts", {}))
    return out


# -------------------------------------------------------------- reports


def report_document(rep: MetricsReport) -> dict:
    d = rep.to_dict()
    d["missingness"] = [{"drop_ratio": rep.drop_ratio, "recall": rep.recall_at_k, "ndcg": rep.ndcg_at_k}]
    return d


def read_report(path) -> MetricsReport:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    d.pop("missingness", None)
    return MetricsReport.from_dict(d)


CSV_FIELDS = ("variant", "seed", "drop_ratio", "K", "recall_at_k", "ndcg_at_k", "n_users")


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Variants as rows, Recall@K / NDCG@K (mean and std over seeds) per drop ratio."""
    summ = summarize(reports)
    K = reports[0].K
    ratios = sorted({dr for _, dr in summ})
    order = [v for v in ("GCN_b", "RAE_h", "RAE_n", "RAE_u", "RAE") if any(k[0] == v for k in summ)]
    order += sorted({v for v, _ in summ} - set(order))
    head = ["variant"]
    for dr in ratios:
        suffix = f" drop={dr:g}" if len(ratios) > 1 else ""
        head += [f"Recall@{K}{suffix}", f"NDCG@{K}{suffix}"]
    rows = [head]
    for v in order:
        row = [v]
        for dr in ratios:
            s = summ.get((v, dr))
            if s is None:
                row += ["-", "-"]
            else:
                row += [f"{s['recall']:.4f}±{s['recall_std']:.4f}", f"{s['ndcg']:.4f}±{s['ndcg_std']:.4f}"]
        rows.append(row)
    widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def emit_report(reports: Sequence[MetricsReport], out_dir) -> list[Path]:
    """One JSON per run, an aggregate CSV and a text table."""
    reports = list(reports)
    if not reports:
        raise ValueError("emit_report needs at least one report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for r in reports:
            p = out / f"report_{r.variant}_seed{r.seed}_drop{r.drop_ratio:g}.json"
            _dump_json(report_document(r), p)
            paths.append(p)
        csv_path = out / "results.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in reports:
                w.writerow([getattr(r, f) for f in CSV_FIELDS])
        table = out / "table.txt"
        table.write_text(format_table(reports), encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write reports to {out}: {exc.strerror}") from None
    return paths + [csv_path, table]


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def ablate(cfg: RunConfig, data: Dataset | None = None, out_dir=None, missingness: bool = False):
    data = data or load_dataset(cfg.data, cfg.eval.thresholds)
    reports = []
    ratios = cfg.eval.drop_ratios if missingness else (cfg.eval.drop_ratio,)
    for r in ratios:
        e = cfg.experiment()
        e.drop_ratio = float(r)
        seeds = [int(s) for s in cfg.seeds]
        reports += run_ablation(data, e.validate(), seeds)
    for rep in reports:
        rep.config = cfg.to_dict()
    out = Path(out_dir or cfg.output_dir) / "ablation"
    paths = emit_report(reports, out)
    return reports, paths
