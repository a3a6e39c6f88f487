"""Converters from public dataset distributions to the canonical TSV files.

Canonical layout of a converted dataset directory::

    edges.tsv          src<TAB>dst[<TAB>label]
    associations.tsv   node<TAB>LABEL=value[<TAB>weight]
    labels.tsv         node<TAB>node-label
    interactions.tsv   user<TAB>item

Usage: ``python -m ruleembed.datasets linqs <src-dir> <out-dir> [--name citeseer]``
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import DataError

log = logging.getLogger(__name__)

CONFIG_TEMPLATE = """\
data.edges = edges.tsv
data.associations = associations.tsv
data.labels = labels.tsv
data.interactions = interactions.tsv
data.name = {name}
eval.thresholds = {thresholds}
training.batch_size = {batch}
output_dir = runs
"""


def _clean(token: str) -> str:
    return token.strip().replace("\t", " ")


def read_linqs(src_dir, name: str = "citeseer"):
    """Parse ``<name>.content`` and ``<name>.cites``.

    Content rows are ``paper word_1 .. word_W class``; cites rows are
    ``cited citing``. Citations touching papers without content are dropped.
    """
    src = Path(src_dir)
    content = src / f"{name}.content"
    cites = src / f"{name}.cites"
    for p in (content, cites):
        if not p.is_file():
            raise DataError(f"missing {p}")
    papers, words, classes = [], {}, {}
    with open(content, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            cols = line.split()
            if not cols:
                continue
            if len(cols) < 3:
                raise DataError(f"{content}:{lineno}: too few columns")
            pid = _clean(cols[0])
            if pid in classes:
                log.info("duplicate content row for %s skipped", pid)
                continue
            papers.append(pid)
            classes[pid] = _clean(cols[-1])
            words[pid] = [j for j, x in enumerate(cols[1:-1]) if x not in ("0", "0.0")]
    known = set(papers)
    links, dropped = [], 0
    with open(cites, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            cols = line.split()
            if len(cols) != 2:
                continue
            cited, citing = _clean(cols[0]), _clean(cols[1])
            if cited not in known or citing not in known or cited == citing:
                dropped += 1
                continue
            links.append((citing, cited))
    links = sorted(set(links))
    return papers, words, classes, links, dropped


def convert_linqs(src_dir, out_dir, name: str = "citeseer") -> dict:
    papers, words, classes, links, dropped = read_linqs(src_dir, name)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w", encoding="utf-8") as fh:
        for citing, cited in links:
            fh.write(f"{citing}\t{cited}\tcites\n")
    n_assoc = 0
    with open(out / "associations.tsv", "w", encoding="utf-8") as fh:
        for p in papers:
            fh.write(f"{p}\tCLASS={classes[p]}\n")
            for j in words[p]:
                fh.write(f"{p}\tWORD=w{j}\n")
            n_assoc += 1 + len(words[p])
    with open(out / "labels.tsv", "w", encoding="utf-8") as fh:
        for p in papers:
            fh.write(f"{p}\tpaper\n")
    with open(out / "interactions.tsv", "w", encoding="utf-8") as fh:
        for citing, cited in links:
            fh.write(f"{citing}\t{cited}\n")
    (out / "config.ini").write_text(
        CONFIG_TEMPLATE.format(name=name, thresholds="10, 20, 30", batch=1024), encoding="utf-8")
    stats = {"nodes": len(papers), "links": len(links), "dropped_links": dropped, "associations": n_assoc}
    log.info("converted %s: %s", name, stats)
    return stats


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m ruleembed.datasets")
    ap.add_argument("format", choices=["linqs"])
    ap.add_argument("src")
    ap.add_argument("out")
    ap.add_argument("--name", default="citeseer")
    args = ap.parse_args(argv)
    try:
        stats = convert_linqs(args.src, args.out, args.name)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(" ".join(f"{k}={v}" for k, v in stats.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
