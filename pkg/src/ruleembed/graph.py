"""Property graph model, normalized matrices and the attribute-extended graph."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError

log = logging.getLogger(__name__)

DEFAULT_LABEL = "attr"


def split_attribute(attr: str, label: str | None = None) -> tuple[str, str]:
    """Split an attribute id into (association label, value).

    ``MAJOR=Science`` -> ("MAJOR", "Science"); a bare ``w17`` falls under the
    default label. An explicit label wins over the embedded one.
    """
    if label:
        value = attr.split("=", 1)[1] if attr.startswith(label + "=") else attr
        return label, value
    if "=" in attr:
        lab, value = attr.split("=", 1)
        return lab, value
    return DEFAULT_LABEL, attr


def _sort_ids(ids: Iterable[str]) -> list[str]:
    ids = list(dict.fromkeys(ids))
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


@dataclass(frozen=True, eq=False)
class PropertyGraph:
    """Immutable property graph with contiguous integer ids.

    ``edges`` holds the stored (already symmetrized when undirected) directed
    edges. Every association carries the label of its attribute.
    """

    node_ids: list[str]
    attr_ids: list[str]
    attr_labels: list[str]
    attr_values: list[str]
    edges: np.ndarray
    edge_labels: np.ndarray
    assoc_node: np.ndarray
    assoc_attr: np.ndarray
    assoc_weight: np.ndarray
    node_labels: list[str | None]
    directed: bool
    n_input_edges: int
    notes: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def d(self) -> int:
        return len(self.attr_ids)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def n_assoc(self) -> int:
        return len(self.assoc_node)

    @property
    def assoc_labels(self) -> list[str]:
        return [self.attr_labels[a] for a in self.assoc_attr]

    def node_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.node_ids)}

    def attr_index(self) -> dict[str, int]:
        return {a: j for j, a in enumerate(self.attr_ids)}

    def labels(self) -> list[str]:
        """Association labels in first-seen attribute order."""
        return list(dict.fromkeys(self.attr_labels))

    def node_label_set(self) -> list[str]:
        return sorted({lab for lab in self.node_labels if lab is not None})

    def has_edge_labels(self) -> bool:
        return bool(np.any(self.edge_labels != ""))


def build_graph(
    edge_list: Iterable[Sequence],
    assoc_list: Iterable[Sequence],
    node_labels: dict | None = None,
    directed: bool = True,
    nodes: Sequence | None = None,
) -> PropertyGraph:
    """Validate raw records and build a :class:`PropertyGraph`.

    ``edge_list`` items are ``(src, dst)`` or ``(src, dst, edge_label)``;
    ``assoc_list`` items are ``(node, attr)``, ``(node, attr, weight)`` or
    ``(node, attr, weight, label)``. When ``nodes`` is given it is the
    authoritative node set and anything referencing another id is rejected.
    """
    node_labels = {str(k): (None if v is None else str(v)) for k, v in (node_labels or {}).items()}
    edges_raw = []
    for rec in edge_list:
        if len(rec) not in (2, 3):
            raise DataError(f"malformed edge record {tuple(rec)!r}")
        lab = str(rec[2]) if len(rec) == 3 and rec[2] is not None else ""
        edges_raw.append((str(rec[0]), str(rec[1]), lab))

    assoc_raw = []
    for rec in assoc_list:
        if len(rec) < 2 or len(rec) > 4:
            raise DataError(f"malformed association record {tuple(rec)!r}")
        w = 1.0 if len(rec) < 3 or rec[2] is None else float(rec[2])
        lab = str(rec[3]) if len(rec) == 4 and rec[3] is not None else None
        assoc_raw.append((str(rec[0]), str(rec[1]), w, lab))
    if not assoc_raw:
        raise DataError("association set is empty")

    if nodes is not None:
        node_ids = [str(v) for v in nodes]
        if len(set(node_ids)) != len(node_ids):
            raise DataError("duplicate node ids in node list")
    else:
        pool = [v for s, t, _ in edges_raw for v in (s, t)]
        pool += list(node_labels)
        pool += [a[0] for a in assoc_raw]
        node_ids = _sort_ids(pool)
    nidx = {v: i for i, v in enumerate(node_ids)}

    for s, t, _ in edges_raw:
        for v in (s, t):
            if v not in nidx:
                raise DataError(f"edge ({s}, {t}) references unknown node {v!r}")
    for v in node_labels:
        if v not in nidx:
            raise DataError(f"label record references unknown node {v!r}")

    attr_meta: dict[str, tuple[str, str]] = {}
    seen_pairs = set()
    for v, a, w, lab in assoc_raw:
        if v not in nidx:
            raise DataError(f"association ({v}, {a}) references unknown node {v!r}")
        if w < 0 or not np.isfinite(w):
            raise DataError(f"association ({v}, {a}) has invalid weight {w}")
        if (v, a) in seen_pairs:
            raise DataError(f"duplicate association for node {v!r} and attribute {a!r}")
        seen_pairs.add((v, a))
        meta = split_attribute(a, lab)
        if attr_meta.setdefault(a, meta) != meta:
            raise DataError(f"attribute {a!r} used under two labels {attr_meta[a][0]!r} and {meta[0]!r}")

    attr_ids = _sort_ids(attr_meta)
    aidx = {a: j for j, a in enumerate(attr_ids)}

    pairs: dict[tuple[int, int], str] = {}
    for s, t, lab in edges_raw:
        pairs.setdefault((nidx[s], nidx[t]), lab)
        if not directed:
            pairs.setdefault((nidx[t], nidx[s]), lab)
    keys = sorted(pairs)
    edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
    edge_labels = np.array([pairs[k] for k in keys], dtype=object).astype(str) if keys else np.zeros(0, dtype=str)

    order = sorted(range(len(assoc_raw)), key=lambda t: (nidx[assoc_raw[t][0]], aidx[assoc_raw[t][1]]))
    assoc_node = np.array([nidx[assoc_raw[t][0]] for t in order], dtype=np.int64)
    assoc_attr = np.array([aidx[assoc_raw[t][1]] for t in order], dtype=np.int64)
    assoc_weight = np.array([assoc_raw[t][2] for t in order], dtype=np.float64)

    return PropertyGraph(
        node_ids=node_ids,
        attr_ids=attr_ids,
        attr_labels=[attr_meta[a][0] for a in attr_ids],
        attr_values=[attr_meta[a][1] for a in attr_ids],
        edges=edges,
        edge_labels=edge_labels,
        assoc_node=assoc_node,
        assoc_attr=assoc_attr,
        assoc_weight=assoc_weight,
        node_labels=[node_labels.get(v) for v in node_ids],
        directed=directed,
        n_input_edges=len(edges_raw),
    )


def graph_records(g: PropertyGraph):
    """Raw records that rebuild ``g`` through :func:`build_graph`."""
    edges = [(g.node_ids[s], g.node_ids[t], lab or None) for (s, t), lab in zip(g.edges, g.edge_labels)]
    assoc = [
        (g.node_ids[v], g.attr_ids[a], w, g.attr_labels[a])
        for v, a, w in zip(g.assoc_node, g.assoc_attr, g.assoc_weight)
    ]
    labels = {v: lab for v, lab in zip(g.node_ids, g.node_labels) if lab is not None}
    return edges, assoc, labels


def with_edges(g: PropertyGraph, extra: Iterable[tuple], directed: bool | None = None) -> PropertyGraph:
    """Copy of ``g`` with additional edges given by node id strings."""
    edges, assoc, labels = graph_records(g)
    extra = list(extra)
    if directed is False or (directed is None and not g.directed):
        extra = extra + [(t, s, *rest) for s, t, *rest in extra]
    out = build_graph(edges + extra, assoc, labels, directed=True, nodes=g.node_ids)
    return replace(out, directed=g.directed, n_input_edges=g.n_input_edges + len(extra), notes=dict(g.notes))


def with_associations(g: PropertyGraph, keep: np.ndarray) -> PropertyGraph:
    """Copy of ``g`` keeping only associations where ``keep`` is true.

    Attributes left without any association are retired; their ids are
    listed under ``notes["retired_attributes"]``.
    """
    keep = np.asarray(keep, dtype=bool)
    used = np.unique(g.assoc_attr[keep])
    remap = -np.ones(g.d, dtype=np.int64)
    remap[used] = np.arange(len(used))
    retired = [g.attr_ids[a] for a in range(g.d) if remap[a] < 0]
    notes = dict(g.notes)
    notes["retired_attributes"] = list(notes.get("retired_attributes", [])) + retired
    return PropertyGraph(
        node_ids=g.node_ids,
        attr_ids=[g.attr_ids[a] for a in used],
        attr_labels=[g.attr_labels[a] for a in used],
        attr_values=[g.attr_values[a] for a in used],
        edges=g.edges,
        edge_labels=g.edge_labels,
        assoc_node=g.assoc_node[keep],
        assoc_attr=remap[g.assoc_attr[keep]],
        assoc_weight=g.assoc_weight[keep],
        node_labels=g.node_labels,
        directed=g.directed,
        n_input_edges=g.n_input_edges,
        notes=notes,
    )


@dataclass(frozen=True, eq=False)
class GraphMatrices:
    A: sp.csr_matrix
    out_degree: np.ndarray
    P: sp.csr_matrix
    sinks: np.ndarray
    R: sp.csr_matrix
    R_r: sp.csr_matrix
    R_c: sp.csr_matrix

    @property
    def D(self) -> sp.dia_matrix:
        return sp.diags(self.out_degree.astype(np.float64))


def compute_matrices(g: PropertyGraph) -> GraphMatrices:
    n, d = g.n, g.d
    if g.m:
        A = sp.csr_matrix((np.ones(g.m), (g.edges[:, 0], g.edges[:, 1])), shape=(n, n))
    else:
        A = sp.csr_matrix((n, n))
    A.sum_duplicates()
    A.data[:] = 1.0
    A.sort_indices()
    deg = np.asarray(A.sum(axis=1)).ravel()
    sinks = deg == 0
    inv = np.zeros(n)
    inv[~sinks] = 1.0 / deg[~sinks]
    P = sp.csr_matrix(sp.diags(inv) @ A)
    P.sort_indices()

    R = sp.csr_matrix((g.assoc_weight, (g.assoc_node, g.assoc_attr)), shape=(n, d))
    R.sort_indices()
    row_tot = np.asarray(R.sum(axis=1)).ravel()
    col_tot = np.asarray(R.sum(axis=0)).ravel()
    has_assoc = np.diff(R.indptr) > 0
    bad_rows = np.flatnonzero(has_assoc & (row_tot <= 0))
    if len(bad_rows):
        raise DataError(f"node {g.node_ids[bad_rows[0]]!r} has associations with zero total weight")
    bad_cols = np.flatnonzero(col_tot <= 0)
    if len(bad_cols):
        raise DataError(f"attribute {g.attr_ids[bad_cols[0]]!r} has zero total weight")
    rinv = np.zeros(n)
    rinv[row_tot > 0] = 1.0 / row_tot[row_tot > 0]
    R_r = sp.csr_matrix(sp.diags(rinv) @ R)
    R_c = sp.csr_matrix(R @ sp.diags(1.0 / col_tot))
    R_r.sort_indices()
    R_c.sort_indices()
    return GraphMatrices(A=A, out_degree=deg.astype(np.int64), P=P, sinks=sinks, R=R, R_r=R_r, R_c=R_c)


def _cumulative_keys(M: sp.csr_matrix) -> np.ndarray:
    """Row-offset cumulative weights for vectorized categorical draws.

    Entry t in row v becomes ``v + cumsum(row)[t]``, with each row's final
    entry pinned to exactly ``v + 1``.
    """
    keys = np.empty(M.nnz)
    for v in range(M.shape[0]):
        lo, hi = M.indptr[v], M.indptr[v + 1]
        if lo == hi:
            continue
        c = np.cumsum(M.data[lo:hi])
        c /= c[-1]
        c[-1] = 1.0
        keys[lo:hi] = v + c
    return keys


class ExtendedGraph:
    """Base graph plus one synthetic node per attribute.

    Node-to-attribute cross edges carry ``R_r`` weights and attribute-to-node
    cross edges carry ``R_c`` weights. Node ``i`` of the base graph keeps
    index ``i``; attribute ``j`` becomes extended node ``n + j``.
    """

    def __init__(self, base: PropertyGraph, matrices: GraphMatrices):
        self.base = base
        self.matrices = matrices
        self.n = base.n
        self.d = base.d
        self.attribute_nodes = np.arange(self.n, self.n + self.d)
        fwd = matrices.R_r.tocoo()
        self.node_to_attr = (fwd.row.astype(np.int64), fwd.col.astype(np.int64), fwd.data)
        bwd = matrices.R_c.T.tocsr().tocoo()
        self.attr_to_node = (bwd.row.astype(np.int64), bwd.col.astype(np.int64), bwd.data)

        P = matrices.P
        self.indptr = P.indptr.astype(np.int64)
        self.indices = P.indices.astype(np.int64)
        self.out_degree = matrices.out_degree
        self.sinks = matrices.sinks
        self.Rr = matrices.R_r
        self.Rr_keys = _cumulative_keys(matrices.R_r)
        self.RcT = matrices.R_c.T.tocsr()
        self.RcT.sort_indices()
        self.RcT_keys = _cumulative_keys(self.RcT)
        self.n_assoc = np.diff(matrices.R_r.indptr)

    @property
    def cross_edge_count(self) -> int:
        return len(self.node_to_attr[0])

    def adjacency(self) -> sp.csr_matrix:
        """(n+d) x (n+d) weighted adjacency of the extended graph."""
        d = self.d
        Rr, RcT = self.matrices.R_r, self.RcT
        return sp.bmat([[self.matrices.A, Rr], [RcT, sp.csr_matrix((d, d))]], format="csr")


def extend(g: PropertyGraph, m: GraphMatrices | None = None) -> ExtendedGraph:
    return ExtendedGraph(g, m if m is not None else compute_matrices(g))


def _read_tsv(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def read_edges(path) -> list[tuple]:
    out = []
    for lineno, cols in _read_tsv(Path(path)):
        if len(cols) not in (2, 3):
            raise DataError(f"{path}:{lineno}: expected src<TAB>dst[<TAB>label]")
        out.append(tuple(cols))
    return out


def read_associations(path) -> list[tuple]:
    out = []
    for lineno, cols in _read_tsv(Path(path)):
        if len(cols) not in (2, 3, 4):
            raise DataError(f"{path}:{lineno}: expected node<TAB>attr[<TAB>weight[<TAB>label]]")
        try:
            w = float(cols[2]) if len(cols) >= 3 and cols[2] != "" else 1.0
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad weight {cols[2]!r}") from None
        out.append((cols[0], cols[1], w, cols[3] if len(cols) == 4 else None))
    return out


def read_labels(path) -> dict[str, str]:
    out = {}
    for lineno, cols in _read_tsv(Path(path)):
        if len(cols) != 2:
            raise DataError(f"{path}:{lineno}: expected node<TAB>label")
        out[cols[0]] = cols[1]
    return out


def load_graph(edges_path, assoc_path, labels_path=None, directed: bool = True,
               extra_nodes: Sequence[str] = ()) -> PropertyGraph:
    """Load the canonical TSV files.

    With a label file, its node column together with edge endpoints and
    ``extra_nodes`` forms the node set, so associations pointing elsewhere are
    reported as dangling.
    """
    edges = read_edges(edges_path) if edges_path else []
    assoc = read_associations(assoc_path)
    labels = read_labels(labels_path) if labels_path else {}
    nodes = None
    if labels:
        nodes = _sort_ids([v for e in edges for v in e[:2]] + list(labels) + list(extra_nodes))
    try:
        return build_graph(edges, assoc, labels, directed=directed, nodes=nodes)
    except DataError as exc:
        raise DataError(f"{assoc_path}: {exc}") from None


def write_graph(g: PropertyGraph, edges_path, assoc_path, labels_path=None):
    edges, assoc, labels = graph_records(g)
    seen = set()
    with open(edges_path, "w", encoding="utf-8") as fh:
        for s, t, lab in edges:
            if not g.directed:
                if (t, s) in seen:
                    continue
                seen.add((s, t))
            fh.write(f"{s}\t{t}" + (f"\t{lab}" if lab else "") + "\n")
    with open(assoc_path, "w", encoding="utf-8") as fh:
        for v, a, w, _ in assoc:
            fh.write(f"{v}\t{a}\t{w:g}\n")
    if labels_path is not None:
        with open(labels_path, "w", encoding="utf-8") as fh:
            for v, lab in labels.items():
                fh.write(f"{v}\t{lab}\n")
