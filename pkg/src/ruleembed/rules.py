"""Graph patterns, literals and dependency rules over a property graph.

Matching uses homomorphism semantics: distinct pattern variables may bind to
the same graph node. Attribute "values" are the attribute ids a node reaches
under an association label, so ``x.MAJOR = "Science"`` holds when ``x`` has an
association with attribute ``MAJOR=Science``. Multi-valued labels satisfy an
equality when any value matches.
"""
from __future__ import annotations

import itertools
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BudgetError, DataError
from .graph import PropertyGraph

log = logging.getLogger(__name__)

WILDCARD = "_"
VAR_NAMES = ("x", "y", "z", "w")
LITERAL_KINDS = ("attribute", "variable", "constant")


# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class GraphPattern:
    """Pattern Q[x̄]: variable i is bound to pattern node i.

    ``labels[i]`` is a node label or ``"_"``; ``edges`` are (src, dst, label)
    over variable positions, with ``label=None`` matching any edge label.
    """

    variables: tuple[str, ...]
    labels: tuple[str, ...]
    edges: tuple[tuple[int, int, str | None], ...] = ()

    def __post_init__(self):
        if len(set(self.variables)) != len(self.variables):
            raise ValueError(f"pattern variables must be distinct: {self.variables}")
        if len(self.labels) != len(self.variables):
            raise ValueError("one label per pattern variable is required")
        for s, t, _ in self.edges:
            if not (0 <= s < len(self.variables) and 0 <= t < len(self.variables)):
                raise ValueError(f"pattern edge ({s}, {t}) has an endpoint outside the pattern")

    @property
    def size(self) -> int:
        return len(self.variables)

    def binding(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.variables)}

    def text(self) -> str:
        nodes = ",".join(f"{v}:{lab}" for v, lab in zip(self.variables, self.labels))
        edges = []
        for s, t, lab in self.edges:
            a, b = self.variables[s], self.variables[t]
            edges.append(f"{a}-[{lab}]->{b}" if lab else f"{a}->{b}")
        return "PATTERN{" + nodes + ";" + ",".join(edges) + "}"

    @classmethod
    def parse(cls, text: str) -> "GraphPattern":
        m = re.fullmatch(r"PATTERN\{([^;]*);([^}]*)\}", text.strip())
        if not m:
            raise DataError(f"bad pattern text {text!r}")
        variables, labels = [], []
        for part in m.group(1).split(","):
            v, lab = part.split(":", 1)
            variables.append(v)
            labels.append(lab)
        pos = {v: i for i, v in enumerate(variables)}
        edges = []
        for part in filter(None, m.group(2).split(",")):
            em = re.fullmatch(r"(\w+)(?:-\[([^\]]+)\])?->(\w+)", part)
            if not em:
                raise DataError(f"bad pattern edge {part!r}")
            edges.append((pos[em.group(1)], pos[em.group(3)], em.group(2)))
        return cls(tuple(variables), tuple(labels), tuple(edges))


@dataclass(frozen=True)
class Literal:
    """``attribute``: x.A; ``variable``: x.A = y.B; ``constant``: x.A = c."""

    kind: str
    var: str
    label: str
    value: str | None = None
    other_var: str | None = None
    other_label: str | None = None

    def __post_init__(self):
        if self.kind not in ("attribute", "variable", "constant"):
            raise ValueError(f"unsupported literal kind {self.kind!r}")
        if self.kind == "constant" and self.value is None:
            raise ValueError("constant literal needs a value")
        if self.kind == "variable" and (self.other_var is None or self.other_label is None):
            raise ValueError("variable literal needs a second operand")

    @classmethod
    def attribute(cls, var, label):
        return cls("attribute", var, label)

    @classmethod
    def constant(cls, var, label, value):
        return cls("constant", var, label, value=str(value))

    @classmethod
    def variable(cls, var, label, other_var, other_label):
        if (other_var, other_label) < (var, label):
            var, label, other_var, other_label = other_var, other_label, var, label
        return cls("variable", var, label, other_var=other_var, other_label=other_label)

    def variables(self) -> tuple[str, ...]:
        return (self.var, self.other_var) if self.kind == "variable" else (self.var,)

    def operands(self) -> list[tuple[str, str]]:
        """(variable, label) operand pairs."""
        if self.kind == "variable":
            return [(self.var, self.label), (self.other_var, self.other_label)]
        return [(self.var, self.label)]

    def text(self) -> str:
        if self.kind == "attribute":
            return f"{self.var}.{self.label}"
        if self.kind == "constant":
            return f"{self.var}.{self.label}={json.dumps(self.value, ensure_ascii=False)}"
        return f"{self.var}.{self.label}={self.other_var}.{self.other_label}"

    def __str__(self):
        return self.text()


_LIT = re.compile(
    r'\s*(\w+)\.([^\s=&.]+)(?:=(?:("(?:[^"\\]|\\.)*")|(\w+)\.([^\s=&.]+)))?\s*(&|$)'
)


def parse_literals(text: str) -> tuple[Literal, ...]:
    out, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _LIT.match(text, pos)
        if not m or m.end() == pos:
            raise DataError(f"bad literal list {text!r} at offset {pos}")
        var, label, const, ovar, olabel = m.group(1, 2, 3, 4, 5)
        if const is not None:
            out.append(Literal.constant(var, label, json.loads(const)))
        elif ovar is not None:
            out.append(Literal.variable(var, label, ovar, olabel))
        else:
            out.append(Literal.attribute(var, label))
        pos = m.end()
    return tuple(out)


def _lit_key(lit: Literal) -> str:
    return lit.text()


@dataclass(frozen=True)
class Rule:
    pattern: GraphPattern
    lhs: tuple[Literal, ...]
    rhs: tuple[Literal, ...]
    support: int = 0
    confidence: float = 0.0

    def __post_init__(self):
        if not self.lhs or not self.rhs:
            raise ValueError("rule needs nonempty LHS and RHS")
        names = set(self.pattern.variables)
        for lit in self.lhs + self.rhs:
            for v in lit.variables():
                if v not in names:
                    raise ValueError(f"literal {lit} uses variable {v!r} outside the pattern")
        object.__setattr__(self, "lhs", tuple(sorted(self.lhs, key=_lit_key)))
        object.__setattr__(self, "rhs", tuple(sorted(self.rhs, key=_lit_key)))

    def canonical(self) -> str:
        lhs = " & ".join(map(str, self.lhs))
        rhs = " & ".join(map(str, self.rhs))
        return f"{self.pattern.text()} :: {lhs} => {rhs}"

    def text(self) -> str:
        return f"{self.canonical()} :: support={self.support} confidence={self.confidence!r}"

    @classmethod
    def parse(cls, line: str) -> "Rule":
        parts = line.strip().split(" :: ")
        if len(parts) != 3:
            raise DataError(f"bad rule line {line!r}")
        pattern = GraphPattern.parse(parts[0])
        if " => " not in parts[1]:
            raise DataError(f"rule line without '=>': {line!r}")
        lhs_text, rhs_text = parts[1].split(" => ", 1)
        sm = re.fullmatch(r"support=(\d+) confidence=(\S+)", parts[2].strip())
        if not sm:
            raise DataError(f"bad rule statistics {parts[2]!r}")
        return cls(pattern, parse_literals(lhs_text), parse_literals(rhs_text),
                   int(sm.group(1)), float(sm.group(2)))

    def sort_key(self):
        return (-self.confidence, -self.support, self.canonical())


def write_rules(rules: Iterable[Rule], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rules:
            fh.write(r.text() + "\n")


def read_rules(path) -> list[Rule]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                out.append(Rule.parse(line))
    return out


# ---------------------------------------------------------- graph-side index


class GraphIndex:
    """Lookup structures shared by matching and literal evaluation."""

    def __init__(self, g: PropertyGraph):
        self.g = g
        n, d = g.n, g.d
        self.n, self.d = n, d
        src, dst = (g.edges[:, 0], g.edges[:, 1]) if g.m else (np.zeros(0, int), np.zeros(0, int))
        self._src, self._dst = src, dst
        self.edge_keys = np.sort(src * n + dst)
        self._adj_cache: dict = {}
        self.value_freq = None
        self._labeled_keys: dict = {}

        labs = g.node_labels
        self.node_label = np.array([lab if lab is not None else "" for lab in labs], dtype=object)

        self.assoc_keys = g.assoc_node * max(d, 1) + g.assoc_attr
        self.attr_lookup = {(g.attr_labels[j], g.attr_values[j]): j for j in range(d)}
        self.label_names = g.labels()
        label_of_attr = np.array([self.label_names.index(lab) for lab in g.attr_labels], dtype=np.int64)
        self.label_of_attr = label_of_attr

        values = sorted(set(g.attr_values))
        self.value_index = {v: i for i, v in enumerate(values)}
        value_of_attr = np.array([self.value_index[v] for v in g.attr_values], dtype=np.int64)
        self.holds: dict[str, sp.csr_matrix] = {}
        self.label_count: dict[str, np.ndarray] = {}
        self.first_value: dict[str, np.ndarray] = {}
        for li, lab in enumerate(self.label_names):
            sel = label_of_attr[g.assoc_attr] == li
            nodes, attrs = g.assoc_node[sel], g.assoc_attr[sel]
            self.holds[lab] = sp.csr_matrix(
                (np.ones(len(nodes)), (nodes, value_of_attr[attrs])), shape=(n, len(values))
            )
            self.label_count[lab] = np.bincount(nodes, minlength=n)
            first = np.full(n, -1, dtype=np.int64)
            # assoc arrays are sorted by (node, attr) so reversed assignment keeps the lowest id
            first[nodes[::-1]] = attrs[::-1]
            self.first_value[lab] = first

    def neighbors(self, label: str | None, reverse: bool):
        key = (label, reverse)
        if key not in self._adj_cache:
            sel = np.ones(len(self._src), bool) if label is None else (self.g.edge_labels == label)
            a, b = (self._dst[sel], self._src[sel]) if reverse else (self._src[sel], self._dst[sel])
            order = np.lexsort((b, a))
            a, b = a[order], b[order]
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(indptr, a + 1, 1)
            self._adj_cache[key] = (np.cumsum(indptr), b)
        return self._adj_cache[key]

    def has_edge(self, s: np.ndarray, t: np.ndarray, label: str | None) -> np.ndarray:
        if label is None:
            keys = self.edge_keys
        else:
            if label not in self._labeled_keys:
                sel = self.g.edge_labels == label
                self._labeled_keys[label] = np.sort(self._src[sel] * self.n + self._dst[sel])
            keys = self._labeled_keys[label]
        q = s * self.n + t
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(len(keys) - 1, 0))
        return (keys[pos] == q) if len(keys) else np.zeros(len(q), bool)

    def label_mask(self, label: str) -> np.ndarray:
        if label == WILDCARD:
            return np.ones(self.n, bool)
        return self.node_label == label

    def has_attr(self, nodes: np.ndarray, attr: int) -> np.ndarray:
        q = nodes * max(self.d, 1) + attr
        keys = self.assoc_keys
        pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
        return keys[pos] == q

    def eval_literal(self, lit: Literal, binding: dict[str, np.ndarray]) -> np.ndarray:
        """Vectorized literal truth over parallel arrays of bound node ids."""
        nodes = binding[lit.var]
        if lit.kind == "attribute":
            cnt = self.label_count.get(lit.label)
            return np.zeros(len(nodes), bool) if cnt is None else cnt[nodes] > 0
        if lit.kind == "constant":
            j = self.attr_lookup.get((lit.label, lit.value))
            return np.zeros(len(nodes), bool) if j is None else self.has_attr(nodes, j)
        ha, hb = self.holds.get(lit.label), self.holds.get(lit.other_label)
        if ha is None or hb is None:
            return np.zeros(len(nodes), bool)
        other = binding[lit.other_var]
        prod = ha[nodes].multiply(hb[other])
        return np.asarray(prod.sum(axis=1)).ravel() > 0


_INDEX_CACHE: dict[int, tuple[PropertyGraph, GraphIndex]] = {}


def graph_index(g: PropertyGraph) -> GraphIndex:
    hit = _INDEX_CACHE.get(id(g))
    if hit is not None and hit[0] is g:
        return hit[1]
    idx = GraphIndex(g)
    if len(_INDEX_CACHE) > 16:
        _INDEX_CACHE.clear()
    _INDEX_CACHE[id(g)] = (g, idx)
    return idx


# ------------------------------------------------------------------ matching


@dataclass(frozen=True)
class Match:
    assignment: dict[str, int]

    def __getitem__(self, var):
        return self.assignment[var]


@dataclass
class MatchSet:
    """Matches as an int array (one column per pattern variable)."""

    variables: tuple[str, ...]
    rows: np.ndarray
    truncated: bool = False

    def __len__(self):
        return len(self.rows)

    def __iter__(self) -> Iterator[Match]:
        for r in self.rows:
            yield Match(dict(zip(self.variables, map(int, r))))

    def __getitem__(self, i) -> Match:
        return Match(dict(zip(self.variables, map(int, self.rows[i]))))

    def column(self, var: str) -> np.ndarray:
        return self.rows[:, self.variables.index(var)]

    def binding(self, mask=None) -> dict[str, np.ndarray]:
        rows = self.rows if mask is None else self.rows[mask]
        return {v: rows[:, i] for i, v in enumerate(self.variables)}


def _expansion_plan(q: GraphPattern, first: int):
    """Variable order (BFS from ``first``) and, per step, the extending edge."""
    order, plan = [first], []
    placed = {first}
    while len(order) < q.size:
        step = None
        for ei, (s, t, lab) in enumerate(q.edges):
            if s in placed and t not in placed:
                step = (t, s, lab, False, ei)
                break
            if t in placed and s not in placed:
                step = (s, t, lab, True, ei)
                break
        if step is None:
            nxt = next(i for i in range(q.size) if i not in placed)
            plan.append((nxt, None, None, False, None))
            order.append(nxt)
            placed.add(nxt)
            continue
        plan.append(step)
        order.append(step[0])
        placed.add(step[0])
    return plan


def _expand_chunk(dom0, plan, masks, fixed, extra_edges, idx, nv) -> np.ndarray:
    cols = {0: dom0}
    size = len(dom0)
    for var, anchor, lab, reverse, _ in plan:
        if anchor is None:
            dom = np.flatnonzero(masks[var])
            if var in fixed:
                dom = dom[dom == fixed[var]]
            rep = np.repeat(np.arange(size), len(dom))
            new = np.tile(dom, size)
        else:
            indptr, nbr = idx.neighbors(lab, reverse)
            src = cols[anchor]
            counts = indptr[src + 1] - indptr[src]
            rep = np.repeat(np.arange(size), counts)
            starts = np.repeat(indptr[src], counts)
            offs = np.arange(len(rep)) - np.repeat(np.cumsum(counts) - counts, counts)
            new = nbr[starts + offs]
            keep = masks[var][new]
            if var in fixed:
                keep &= new == fixed[var]
            rep, new = rep[keep], new[keep]
        cols = {k: v[rep] for k, v in cols.items()}
        cols[var] = new
        size = len(new)
        if size == 0:
            return np.zeros((0, nv), dtype=np.int64)
    keep = np.ones(size, bool)
    for s, t, lab in extra_edges:
        keep &= idx.has_edge(cols[s], cols[t], lab)
    rows = np.stack([cols[i][keep] for i in range(nv)], axis=1)
    if len(rows) > 1:
        rows = rows[np.lexsort(rows.T[::-1])]
    return rows


def match_pattern(q: GraphPattern, g: PropertyGraph, limit: int | None = None,
                  *, fixed: dict[str, int] | None = None, max_pattern_nodes: int = 3,
                  chunk: int = 512) -> MatchSet:
    """Enumerate homomorphic matches of ``q`` in ``g``.

    Results are in lexicographic order of the pattern's variable tuple and are
    cut at ``limit`` with ``truncated`` set. ``fixed`` pins variables to nodes.
    """
    if q.size > max_pattern_nodes:
        raise BudgetError(f"pattern has {q.size} nodes, budget is {max_pattern_nodes}")
    idx = graph_index(g)
    fixed = {q.variables.index(v): int(node) for v, node in (fixed or {}).items()}
    nv = q.size
    masks = [idx.label_mask(lab) for lab in q.labels]

    domain0 = np.flatnonzero(masks[0])
    if 0 in fixed:
        domain0 = domain0[domain0 == fixed[0]]
    plan = _expansion_plan(q, 0)
    checked = {p[4] for p in plan if p[4] is not None}
    extra_edges = [e for ei, e in enumerate(q.edges) if ei not in checked]

    out, total, truncated = [], 0, False
    for c0 in range(0, len(domain0), chunk):
        rows = _expand_chunk(domain0[c0:c0 + chunk], plan, masks, fixed, extra_edges, idx, nv)
        if not len(rows):
            continue
        if limit is not None and total >= limit:
            truncated = True
            break
        out.append(rows)
        total += len(rows)
        if limit is not None and total > limit:
            truncated = True
            break
    rows = np.concatenate(out) if out else np.zeros((0, nv), dtype=np.int64)
    if limit is not None:
        rows = rows[:limit]
    return MatchSet(q.variables, rows.astype(np.int64), truncated)


def evaluate_literal(lit: Literal, m: Match | dict, g: PropertyGraph) -> bool:
    assignment = m.assignment if isinstance(m, Match) else m
    for v in lit.variables():
        if v not in assignment:
            raise ValueError(f"literal {lit} uses unbound variable {v!r}")
    idx = graph_index(g)
    binding = {v: np.array([assignment[v]], dtype=np.int64) for v in lit.variables()}
    return bool(idx.eval_literal(lit, binding)[0])


# -------------------------------------------------------------------- mining


@dataclass
class MiningConfig:
    min_support: int = 10
    min_confidence: float = 0.5
    max_pattern_nodes: int = 3
    max_lhs_literals: int = 2
    top_values: int = 20
    max_matches: int = 200_000
    use_node_labels: bool = True
    literal_kinds: tuple = LITERAL_KINDS

    def validate(self):
        from .errors import ConfigError

        kinds = tuple(self.literal_kinds)
        if not kinds or any(k not in LITERAL_KINDS for k in kinds):
            raise ConfigError(f"mining.literal_kinds must be a nonempty subset of {', '.join(LITERAL_KINDS)}")

        if self.min_support < 1:
            raise ConfigError("mining.min_support must be >= 1")
        if not (0 < self.min_confidence <= 1):
            raise ConfigError("mining.min_confidence must lie in (0, 1]")
        if not (1 <= self.max_pattern_nodes <= 3):
            raise ConfigError("mining.max_pattern_nodes must be in 1..3")
        if not (1 <= self.max_lhs_literals <= 2):
            raise ConfigError("mining.max_lhs_literals must be in 1..2")
        if self.top_values < 1 or self.max_matches < 1:
            raise ConfigError("mining.top_values and mining.max_matches must be >= 1")
        return self


def pattern_shapes(max_nodes: int) -> list[tuple[int, tuple[tuple[int, int], ...]]]:
    """Topologies: node, edge, 2-edge path, out-fork, in-fork."""
    shapes = [(1, ())]
    if max_nodes >= 2:
        shapes.append((2, ((0, 1),)))
    if max_nodes >= 3:
        shapes += [(3, ((0, 1), (1, 2))), (3, ((0, 1), (0, 2))), (3, ((0, 2), (1, 2)))]
    return shapes


def candidate_patterns(g: PropertyGraph, cfg: MiningConfig) -> list[GraphPattern]:
    node_labels = [WILDCARD] + (g.node_label_set() if cfg.use_node_labels else [])
    edge_labels = [None] + (sorted(set(g.edge_labels) - {""}) if g.has_edge_labels() else [])
    out = []
    for size, edges in pattern_shapes(cfg.max_pattern_nodes):
        variables = VAR_NAMES[:size]
        for labs in itertools.product(node_labels, repeat=size):
            for elabs in itertools.product(edge_labels, repeat=len(edges)):
                out.append(GraphPattern(variables, labs, tuple((s, t, el) for (s, t), el in zip(edges, elabs))))
    return out


def _parents(q: GraphPattern) -> list[GraphPattern]:
    out = []
    for i, lab in enumerate(q.labels):
        if lab != WILDCARD:
            out.append(GraphPattern(q.variables, q.labels[:i] + (WILDCARD,) + q.labels[i + 1:], q.edges))
    for i, (s, t, lab) in enumerate(q.edges):
        if lab is not None:
            out.append(GraphPattern(q.variables, q.labels, q.edges[:i] + ((s, t, None),) + q.edges[i + 1:]))
    return out


def _value_frequencies(g: PropertyGraph) -> dict[str, dict[str, int]]:
    idx = graph_index(g)
    if idx.value_freq is None:
        per_attr = np.bincount(g.assoc_attr, minlength=g.d)
        freq: dict[str, dict[str, int]] = {}
        for a in range(g.d):
            freq.setdefault(g.attr_labels[a], {})[g.attr_values[a]] = int(per_attr[a])
        idx.value_freq = freq
    return idx.value_freq


def candidate_literals(g: PropertyGraph, variables: Sequence[str], top_values: int,
                       kinds: Sequence[str] = None) -> list[Literal]:
    """Attribute, constant (top-F values per label) and variable literals."""
    kinds = set(LITERAL_KINDS if kinds is None else kinds)
    idx = graph_index(g)
    freq = _value_frequencies(g)
    top = {
        lab: [v for v, _ in sorted(cnt.items(), key=lambda kv: (-kv[1], kv[0]))[:top_values]]
        for lab, cnt in freq.items()
    }
    value_sets = {lab: set(cnt) for lab, cnt in freq.items()}
    labels = idx.label_names
    lits = []
    for v in variables:
        for lab in labels:
            if "attribute" in kinds:
                lits.append(Literal.attribute(v, lab))
            if "constant" in kinds:
                lits.extend(Literal.constant(v, lab, c) for c in top[lab])
    if "variable" not in kinds:
        return lits
    for a, b in itertools.combinations(variables, 2):
        for la in labels:
            for lb in labels:
                if value_sets[la] & value_sets[lb]:
                    lits.append(Literal.variable(a, la, b, lb))
    return lits


def _implied(rhs: Literal, lhs: Sequence[Literal]) -> bool:
    if rhs in lhs:
        return True
    if rhs.kind == "attribute":
        return any((rhs.var, rhs.label) in l.operands() for l in lhs if l.kind != "attribute")
    if rhs.kind == "variable":
        consts = {(l.var, l.label): l.value for l in lhs if l.kind == "constant"}
        a = consts.get((rhs.var, rhs.label))
        return a is not None and a == consts.get((rhs.other_var, rhs.other_label))
    return False


def _literal_matrix(lits, ms: MatchSet, g: PropertyGraph, cache: dict | None = None) -> np.ndarray:
    idx = graph_index(g)
    binding = ms.binding()
    cols = []
    for lit in lits:
        cols.append(idx.eval_literal(lit, binding))
    return np.stack(cols, axis=1) if cols else np.zeros((len(ms), 0), bool)


def _mine_pattern(q: GraphPattern, ms: MatchSet, g: PropertyGraph, cfg: MiningConfig) -> list[Rule]:
    lits = candidate_literals(g, q.variables, cfg.top_values, cfg.literal_kinds)
    if not lits or not len(ms):
        return []
    M = _literal_matrix(lits, ms, g)
    freq = M.sum(axis=0)
    keep = np.flatnonzero(freq >= cfg.min_support)
    if not len(keep):
        return []
    lits = [lits[i] for i in keep]
    M = M[:, keep]
    # identical literal rows collapse into weighted rows
    uniq, inverse = np.unique(np.packbits(M, axis=1), axis=0, return_inverse=True)
    weights = np.bincount(inverse.ravel()).astype(np.float64)
    U = np.unpackbits(uniq, axis=1, count=M.shape[1]).astype(np.float64)
    L = len(lits)
    all_vars = set(q.variables)
    lit_vars = [set(l.variables()) for l in lits]

    pair_counts = (U * weights[:, None]).T @ U
    rules = []

    def emit(lhs_pos: tuple, lhs_support: float, joint: np.ndarray):
        lhs = [lits[p] for p in lhs_pos]
        lhs_vars = set().union(*(lit_vars[p] for p in lhs_pos))
        ok = np.flatnonzero(joint >= cfg.min_support)
        for c in ok:
            if c in lhs_pos:
                continue
            support = int(round(joint[c]))
            conf = support / int(round(lhs_support))
            if conf < cfg.min_confidence or conf <= 0:
                continue
            if (lhs_vars | lit_vars[c]) != all_vars:
                continue
            if _implied(lits[c], lhs):
                continue
            rules.append(Rule(q, tuple(lhs), (lits[c],), support, conf))

    for a in range(L):
        if pair_counts[a, a] >= cfg.min_support:
            emit((a,), pair_counts[a, a], pair_counts[a])

    if cfg.max_lhs_literals >= 2:
        pairs = [(a, b) for a in range(L) for b in range(a + 1, L) if pair_counts[a, b] >= cfg.min_support]
        for c0 in range(0, len(pairs), 256):
            block = pairs[c0:c0 + 256]
            A = np.array([p[0] for p in block])
            B = np.array([p[1] for p in block])
            Z = U[:, A] * U[:, B] * weights[:, None]
            T = Z.T @ U
            for row, (a, b) in enumerate(block):
                emit((a, b), pair_counts[a, b], T[row])
    return rules


def mine_rules(g: PropertyGraph, cfg: MiningConfig | None = None) -> list[Rule]:
    """Levelwise rule mining over candidate patterns of growing size.

    Patterns too rare for ``min_support`` are skipped, as are label
    specializations that match exactly the same assignments as a parent.
    """
    cfg = (cfg or MiningConfig()).validate()
    if g.d == 0 or g.n_assoc == 0:
        return []
    counts: dict[str, int] = {}
    rules: dict[str, Rule] = {}
    for q in candidate_patterns(g, cfg):
        ms = match_pattern(q, g, limit=cfg.max_matches, max_pattern_nodes=cfg.max_pattern_nodes)
        counts[q.text()] = len(ms)
        if len(ms) < cfg.min_support:
            continue
        if any(counts.get(p.text()) == len(ms) and not ms.truncated for p in _parents(q)):
            continue
        if ms.truncated:
            log.warning("pattern %s truncated at %d matches", q.text(), cfg.max_matches)
        for r in _mine_pattern(q, ms, g, cfg):
            rules.setdefault(r.canonical(), r)
    return sorted(rules.values(), key=Rule.sort_key)


def rule_support(rule: Rule, g: PropertyGraph, limit: int | None = None) -> tuple[int, int]:
    """(support of LHS ∧ RHS, support of LHS) by direct match counting."""
    ms = match_pattern(rule.pattern, g, limit=limit)
    if not len(ms):
        return 0, 0
    idx = graph_index(g)
    b = ms.binding()
    lhs = np.ones(len(ms), bool)
    for lit in rule.lhs:
        lhs &= idx.eval_literal(lit, b)
    both = lhs.copy()
    for lit in rule.rhs:
        both &= idx.eval_literal(lit, b)
    return int(both.sum()), int(lhs.sum())


# ------------------------------------------------------- walk-time rule index


@dataclass
class _Trigger:
    rule_pos: int
    var: str


@dataclass
class _RuleTable:
    """Per rule: LHS-satisfying matches and the RHS attribute each would emit."""

    matches: MatchSet
    ok: np.ndarray
    target: np.ndarray
    first_ok: dict[str, dict[int, int]] = field(default_factory=dict)
    first_jump: dict[str, dict[int, int]] = field(default_factory=dict)


class RuleIndex:
    """Rules indexed by the attribute (or attribute label) their LHS mentions.

    Built once per (rules, graph); lookups are read-only apart from a memo of
    jump targets keyed by (node, attribute).
    """

    def __init__(self, rules: Sequence[Rule], g: PropertyGraph, match_limit: int = 1_000_000):
        self.rules = list(rules)
        self.g = g
        self.diagnostics: dict[str, int] = {"variable_rhs_skipped": 0, "truncated_rules": 0}
        idx = graph_index(g)
        self._idx = idx
        self.by_attr: dict[int, list[_Trigger]] = {}
        self.by_label: dict[str, list[_Trigger]] = {}
        for pos, r in enumerate(self.rules):
            seen = set()
            for lit in r.lhs:
                if lit.kind == "constant":
                    j = idx.attr_lookup.get((lit.label, lit.value))
                    if j is not None and (j, lit.var) not in seen:
                        seen.add((j, lit.var))
                        self.by_attr.setdefault(j, []).append(_Trigger(pos, lit.var))
                else:
                    for v, lab in lit.operands():
                        if (lab, v) not in seen:
                            seen.add((lab, v))
                            self.by_label.setdefault(lab, []).append(_Trigger(pos, v))
        self._tables: dict[int, _RuleTable] = {}
        self._match_cache: dict[str, MatchSet] = {}
        self._match_limit = match_limit
        self._jump_memo: dict[tuple[int, int], int] = {}

    def __len__(self):
        return len(self.rules)

    def _table(self, pos: int) -> _RuleTable:
        tab = self._tables.get(pos)
        if tab is not None:
            return tab
        r = self.rules[pos]
        key = r.pattern.text()
        ms = self._match_cache.get(key)
        if ms is None:
            ms = match_pattern(r.pattern, self.g, limit=self._match_limit)
            if ms.truncated:
                self.diagnostics["truncated_rules"] += 1
            self._match_cache[key] = ms
        b = ms.binding()
        ok = np.ones(len(ms), bool)
        for lit in r.lhs:
            ok &= self._idx.eval_literal(lit, b)
        target = np.full(len(ms), -1, dtype=np.int64)
        for lit in r.rhs:
            if lit.kind == "constant":
                j = self._idx.attr_lookup.get((lit.label, lit.value), -1)
                target[:] = j
                break
            if lit.kind == "attribute":
                fv = self._idx.first_value.get(lit.label)
                if fv is not None:
                    target = fv[b[lit.var]] if len(ms) else target
                break
        else:
            self.diagnostics["variable_rhs_skipped"] += 1
        tab = _RuleTable(ms, ok, target)
        for v in r.pattern.variables:
            col = ms.column(v)
            for name, mask in (("ok", ok), ("jump", ok & (target >= 0))):
                rows = np.flatnonzero(mask)
                nodes, first = np.unique(col[rows], return_index=True)
                getattr(tab, "first_" + name)[v] = dict(zip(nodes.tolist(), rows[first].tolist()))
        self._tables[pos] = tab
        return tab

    def triggers(self, attr: int) -> list[_Trigger]:
        lab = self.g.attr_labels[attr]
        trig = self.by_attr.get(attr, []) + self.by_label.get(lab, [])
        return sorted(trig, key=lambda t: (t.rule_pos, t.var))

    def satisfied(self, attr: int, node: int) -> list[tuple[Rule, Match]]:
        out, done = [], set()
        for t in self.triggers(attr):
            if t.rule_pos in done:
                continue
            tab = self._table(t.rule_pos)
            row = tab.first_ok[t.var].get(int(node))
            if row is not None:
                done.add(t.rule_pos)
                out.append((self.rules[t.rule_pos], tab.matches[row]))
        return out

    def jump_target(self, attr: int, node: int) -> int:
        """RHS attribute emitted by the first applicable rule, or -1."""
        key = (int(node), int(attr))
        hit = self._jump_memo.get(key)
        if hit is not None:
            return hit
        out = -1
        for t in self.triggers(attr):
            tab = self._table(t.rule_pos)
            row = tab.first_jump[t.var].get(int(node))
            if row is not None:
                out = int(tab.target[row])
                break
        self._jump_memo[key] = out
        return out


def satisfied_rules(attr: int, node: int, rules, g: PropertyGraph) -> list[tuple[Rule, Match]]:
    index = rules if isinstance(rules, RuleIndex) else RuleIndex(rules, g)
    return index.satisfied(attr, node)
