"""Independent brute-force reference implementations used by the tests."""
import itertools


def brute_matches(q, g):
    edges = {(int(s), int(t), lab) for (s, t), lab in zip(g.edges, g.edge_labels)}
    plain = {(s, t) for s, t, _ in edges}
    out = []
    for assign in itertools.product(range(g.n), repeat=q.size):
        if any(lab != "_" and g.node_labels[assign[i]] != lab for i, lab in enumerate(q.labels)):
            continue
        ok = True
        for s, t, lab in q.edges:
            if lab is None:
                ok = ok and (assign[s], assign[t]) in plain
            else:
                ok = ok and (assign[s], assign[t], lab) in edges
        if ok:
            out.append(dict(zip(q.variables, assign)))
    return out


def brute_values(g, node, label):
    return {g.attr_values[a] for v, a in zip(g.assoc_node, g.assoc_attr)
            if v == node and g.attr_labels[a] == label}


def brute_literal(lit, m, g):
    vals = brute_values(g, m[lit.var], lit.label)
    if lit.kind == "attribute":
        return bool(vals)
    if lit.kind == "constant":
        return lit.value in vals
    return bool(vals & brute_values(g, m[lit.other_var], lit.other_label))


def brute_stats(rule, g, matches=None):
    """(support of LHS and RHS, support of LHS) over every assignment."""
    lhs = both = 0
    for m in (brute_matches(rule.pattern, g) if matches is None else matches):
        if all(brute_literal(l, m, g) for l in rule.lhs):
            lhs += 1
            both += all(brute_literal(l, m, g) for l in rule.rhs)
    return both, lhs
