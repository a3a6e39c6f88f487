import json
import shutil
from pathlib import Path

import pytest

import ruleembed
from ruleembed import cli
from ruleembed.config import RunConfig, load_config, parse_config
from ruleembed.datasets import convert_linqs
from ruleembed.datasets import main as datasets_main
from ruleembed.errors import ConfigError, PreconditionError
from ruleembed.evaluation import MetricsReport
from ruleembed.pipeline import (emit_report, load_dataset, manifest_artifacts, read_csv, read_report,
                                run_pipeline)
from ruleembed.synthetic import TINY_CONFIG, tiny_dataset, write_dataset

FIXTURE = Path(ruleembed.__file__).parent / "fixtures" / "tiny"


@pytest.fixture
def tiny_dir(tmp_path):
    d = tmp_path / "tiny"
    shutil.copytree(FIXTURE, d)
    return d


# ------------------------------------------------------------------ config

MINIMAL = "data.associations = associations.tsv\ndata.interactions = interactions.tsv\n"


def test_minimal_config_defaults(tiny_dir):
    cfg = parse_config(MINIMAL, tiny_dir)
    d = RunConfig()
    assert cfg.walk == d.walk and cfg.mining == d.mining and cfg.factorize == d.factorize
    assert cfg.training == d.training and cfg.fusion == d.fusion and cfg.eval == d.eval
    assert cfg.data.associations == str((tiny_dir / "associations.tsv").resolve())
    assert cfg.seeds == (0,) and cfg.variant == "RAE"


def test_alpha_range_error(tiny_dir):
    with pytest.raises(ConfigError, match="alpha"):
        parse_config(MINIMAL + "walk.alpha = 1.5\n", tiny_dir)


def test_unknown_key_named(tiny_dir):
    with pytest.raises(ConfigError, match="walk.alhpa"):
        parse_config(MINIMAL + "walk.alhpa = 0.2\n", tiny_dir)
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(MINIMAL + "[bogus]\nx = 1\n", tiny_dir)


def test_missing_required_path(tiny_dir):
    with pytest.raises(ConfigError, match="interactions"):
        parse_config("data.associations = associations.tsv\n", tiny_dir)
    with pytest.raises(ConfigError, match="not found"):
        parse_config("data.associations = nope.tsv\ndata.interactions = interactions.tsv\n", tiny_dir)


def test_sections_and_dotted_keys_agree(tiny_dir):
    a = parse_config(MINIMAL + "walk.n_r = 7\nmining.literal_kinds = constant, attribute\n", tiny_dir)
    b = parse_config(MINIMAL + "[walk]\nn_r = 7\n[mining]\nliteral_kinds = constant, attribute\n", tiny_dir)
    assert a.walk.n_r == b.walk.n_r == 7
    assert a.mining.literal_kinds == ("constant", "attribute")
    assert a.to_dict() == b.to_dict()


def test_bad_value_type(tiny_dir):
    with pytest.raises(ConfigError, match="n_r"):
        parse_config(MINIMAL + "walk.n_r = many\n", tiny_dir)


def test_fixture_config_loads(tiny_dir):
    cfg = load_config(tiny_dir / "config.ini")
    assert cfg.walk.n_r == 50 and cfg.eval.k == 5


def test_fixture_matches_generator(tmp_path):
    out = write_dataset(tiny_dataset(), tmp_path / "gen", TINY_CONFIG)
    for name in ("associations.tsv", "interactions.tsv", "labels.tsv", "edges.tsv", "config.ini"):
        assert (out / name).read_bytes() == (FIXTURE / name).read_bytes()
    ds = load_dataset(load_config(out / "config.ini").data)
    assert ds.graph.n == 50 and ds.graph.d == 10


# ---------------------------------------------------------------- pipeline

def _echo_complete(echo, cfg):
    for section in ("mining", "walk", "factorize", "fusion", "training", "eval"):
        for k in getattr(cfg, section).__dict__:
            assert k in echo[section], f"{section}.{k} missing from the report echo"


def test_full_run_manifest(tiny_dir):
    cfg = load_config(tiny_dir / "config.ini")
    res = run_pipeline(cfg, out_dir=tiny_dir / "out")
    arts = manifest_artifacts(res.manifest)
    assert sorted(arts) == sorted(["rules.txt", "pairs.json", "affinity.bin", "embeddings.bin",
                                   "checkpoint.bin", "report.json"])
    assert all(s["status"] == "ok" for s in res.manifest["stages"].values())
    rep = read_report(tiny_dir / "out" / "report.json")
    assert 0 <= rep.recall_at_k <= 1
    _echo_complete(rep.config, cfg)


def test_rerun_identical_hashes(tiny_dir):
    cfg = load_config(tiny_dir / "config.ini")
    a = run_pipeline(cfg, out_dir=tiny_dir / "a").manifest
    b = run_pipeline(cfg, out_dir=tiny_dir / "b").manifest
    assert manifest_artifacts(a) == manifest_artifacts(b)
    assert a["config_sha256"] == b["config_sha256"]


def test_resume_needs_affinity(tiny_dir):
    cfg = load_config(tiny_dir / "config.ini")
    out = tiny_dir / "r"
    run_pipeline(cfg, out_dir=out)
    (out / "affinity.bin").unlink()
    with pytest.raises(PreconditionError, match="affinity.bin"):
        run_pipeline(cfg, resume_from="factorize", out_dir=out)
    m = json.loads((out / "manifest.json").read_text())
    assert m["stages"]["factorize"]["status"] == "failed"
    assert (out / "embeddings.bin").exists()


def test_resume_matches_full_run(tiny_dir):
    cfg = load_config(tiny_dir / "config.ini")
    full = run_pipeline(cfg, out_dir=tiny_dir / "f").manifest
    part = tiny_dir / "p"
    run_pipeline(cfg, stages=("mine", "sample"), out_dir=part)
    res = run_pipeline(cfg, resume_from="factorize", out_dir=part).manifest
    assert manifest_artifacts(res) == manifest_artifacts(full)


def test_stage_toggle(tiny_dir):
    cfg = parse_config((tiny_dir / "config.ini").read_text() + "\n[stages]\nevaluate = false\n", tiny_dir)
    res = run_pipeline(cfg, out_dir=tiny_dir / "t")
    assert "evaluate" not in res.manifest["stages"] and res.report is None


def test_baseline_variant_skips_embedding(tiny_dir):
    cfg = load_config(tiny_dir / "config.ini")
    cfg.variant = "GCN_b"
    res = run_pipeline(cfg, out_dir=tiny_dir / "g")
    assert res.manifest["stages"]["sample"]["status"] == "skipped"
    assert res.report.variant == "GCN_b"


# ----------------------------------------------------------------- reports

def _report(v, seed=0, r=0.5):
    return MetricsReport(v, 20, r, r / 2, 10, [], seed, 0.0, {}, {"x": 1})


def test_emit_five_reports(tmp_path):
    reps = [_report(v, r=0.1 * k) for k, v in enumerate(("GCN_b", "RAE_h", "RAE_n", "RAE_u", "RAE"))]
    paths = emit_report(reps, tmp_path)
    rows = read_csv(tmp_path / "results.csv")
    assert len(rows) == 5
    assert "RAE_u" in (tmp_path / "table.txt").read_text()
    back = [read_report(p) for p in paths if p.suffix == ".json"]
    assert back == reps


def test_emit_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_emit_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError):
        emit_report([_report("RAE")], blocker / "sub")


# --------------------------------------------------------------------- CLI

def test_cli_run_all_and_ablate(tiny_dir, capsys):
    assert cli.main(["run-all", str(tiny_dir / "config.ini"), "--out", str(tiny_dir / "c")]) == 0
    assert "Recall@5" in capsys.readouterr().out
    assert cli.main(["ablate", str(tiny_dir / "config.ini"), "--out", str(tiny_dir / "c")]) == 0
    out = capsys.readouterr().out
    for v in ("GCN_b", "RAE_h", "RAE_n", "RAE_u", "RAE"):
        assert v in out
    assert len(read_csv(tiny_dir / "c" / "ablation" / "results.csv")) == 5


def test_cli_exit_codes(tiny_dir, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(MINIMAL.replace("associations.tsv", str(tiny_dir / "associations.tsv"))
                   .replace("interactions.tsv", str(tiny_dir / "interactions.tsv")) + "walk.alhpa = 1\n")
    assert cli.main(["mine", str(bad)]) == 1
    broken = tiny_dir / "associations.tsv"
    broken.write_text("0\tA=1\n0\tA=1\n")
    assert cli.main(["mine", str(tiny_dir / "config.ini"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["run-all", str(tmp_path / "missing.ini")]) == 1


def test_cli_resume_precondition(tiny_dir):
    out = tiny_dir / "c"
    assert cli.main(["mine", str(tiny_dir / "config.ini"), "--out", str(out)]) == 0
    assert cli.main(["run-all", str(tiny_dir / "config.ini"), "--out", str(out), "--resume-from", "factorize"]) == 2


# ---------------------------------------------------------------- datasets

def _linqs(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    (src / "mini.content").write_text("p1\t1\t0\t1\tAI\np2\t0\t1\t0\tML\np3\t1\t1\t0\tAI\n")
    (src / "mini.cites").write_text("p1\tp2\np3\tp1\nghost\tp1\np2\tp2\n")
    return src


def test_linqs_converter(tmp_path):
    stats = convert_linqs(_linqs(tmp_path), tmp_path / "out", name="mini")
    assert stats == {"nodes": 3, "links": 2, "dropped_links": 2, "associations": 3 + 5}
    edges = (tmp_path / "out" / "edges.tsv").read_text().splitlines()
    assert edges == ["p1\tp3\tcites", "p2\tp1\tcites"]
    cfg = load_config(tmp_path / "out" / "config.ini")
    ds = load_dataset(cfg.data)
    assert ds.graph.n == 3 and ds.interactions.M == 2
    assert "CLASS=AI" in ds.graph.attr_ids and "WORD=w0" in ds.graph.attr_ids


def test_linqs_cli_missing(tmp_path):
    assert datasets_main(["linqs", str(tmp_path), str(tmp_path / "o")]) == 2
