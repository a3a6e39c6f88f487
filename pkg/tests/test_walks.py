import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ruleembed.graph import build_graph, extend
from ruleembed.rules import GraphPattern, Literal, Rule, RuleIndex
from ruleembed.walks import (RULE_JUMP, WALK, PairSample, WalkConfig, backward_walk, estimate_affinities,
                             exact_rwr, forward_walk, read_affinities, sample_pairs, spmi_affinities,
                             write_affinities)


def six_node():
    edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3), (1, 4)]
    assoc = [(0, "A=x"), (1, "A=y", 2.0), (1, "B=u"), (2, "B=u"), (3, "A=x"), (3, "B=v"),
             (4, "A=y"), (5, "B=v", 3.0), (5, "A=x")]
    return build_graph(edges, assoc, directed=False)


def one_rule(g, lhs, rhs):
    q = GraphPattern(("x",), ("_",))
    la, va = lhs.split("=")
    lb, vb = rhs.split("=")
    return RuleIndex([Rule(q, (Literal.constant("x", la, va),), (Literal.constant("x", lb, vb),), 1, 1.0)], g)


def test_restart_dominates_forward():
    g = build_graph([(0, 1), (1, 0)], [(0, "r"), (1, "s")])
    eg = extend(g)
    rng = np.random.default_rng(0)
    cfg = WalkConfig(alpha=0.999, n_r=1)
    hits = sum(forward_walk(eg, 0, None, cfg, rng)[0][1] == g.attr_ids.index("r") for _ in range(2000))
    assert hits >= 0.99 * 2000


def test_no_rules_no_jumps():
    eg = extend(six_node())
    s = sample_pairs(eg, None, WalkConfig(n_r=20))
    assert s.delta == 0
    assert all(tag == WALK for _, _, tag in s.forward_pairs)


def test_rule_jump_trace():
    # node 0 holds only A=a; node 1 holds B=b; rule A=a => B=b
    g = build_graph([(0, 1)], [(0, "A=a"), (1, "B=b")], directed=False)
    eg = extend(g)
    idx = one_rule(g, "A=a", "B=b")
    rng = np.random.default_rng(1)
    out = forward_walk(eg, 0, idx, WalkConfig(alpha=0.999), rng)
    a, b = g.attr_ids.index("A=a"), g.attr_ids.index("B=b")
    assert out == [(0, a, WALK), (0, b, RULE_JUMP)]


def test_cardinality_without_rules():
    g = build_graph([(0, 1), (1, 2), (2, 3)], [(0, "a"), (1, "b"), (2, "a"), (3, "b")], directed=False)
    s = sample_pairs(extend(g), None, WalkConfig(n_r=10))
    assert (len(s.f_node), len(s.b_node), s.delta) == (40, 20, 0)


def test_delta_matches_stop_probability():
    g = six_node()
    eg = extend(g)
    idx = one_rule(g, "A=x", "B=u")
    n_r = 4000
    s = sample_pairs(eg, idx, WalkConfig(alpha=0.3, n_r=n_r, seed=3))
    a = g.attr_ids.index("A=x")
    walk_hits = int(((s.f_attr == a) & ~s.f_jump).sum())
    assert s.delta == walk_hits
    assert len(s.f_node) == n_r * g.n + s.delta
    expect = n_r * exact_rwr(eg, 0.3).p_f[:, a].sum()
    sd = math.sqrt(expect)
    assert abs(s.delta - expect) < 5 * sd


def test_sampling_deterministic():
    eg = extend(six_node())
    a = sample_pairs(eg, None, WalkConfig(n_r=30, seed=7))
    b = sample_pairs(eg, None, WalkConfig(n_r=30, seed=7))
    c = sample_pairs(eg, None, WalkConfig(n_r=30, seed=8))
    for f in ("f_node", "f_attr", "f_jump", "b_attr", "b_node"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.b_node, c.b_node)


def test_backward_single_entry():
    g = build_graph([(0, 1), (1, 0)], [(0, "r"), (1, "s")])
    eg = extend(g)
    rng = np.random.default_rng(0)
    r = g.attr_ids.index("r")
    hits = sum(backward_walk(eg, r, WalkConfig(alpha=0.999), rng) == (r, 0) for _ in range(2000))
    assert hits >= 0.99 * 2000


def test_backward_entry_split():
    g = build_graph([(0, 1), (1, 0)], [(0, "r"), (1, "r")])
    eg = extend(g)
    rng = np.random.default_rng(0)
    nodes = [backward_walk(eg, 0, WalkConfig(alpha=0.999), rng)[1] for _ in range(4000)]
    assert abs(np.mean(nodes) - 0.5) < 0.03


def test_backward_matches_exact():
    g = build_graph([(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)],
                    [(0, "a"), (1, "a"), (2, "b"), (3, "b"), (4, "a", 2.0), (4, "b")], directed=False)
    eg = extend(g)
    s = sample_pairs(eg, None, WalkConfig(alpha=0.2, n_r=10_000, seed=5))
    est = estimate_affinities(s)
    ex = exact_rwr(eg, 0.2)
    assert np.abs(est.p_b_hat - ex.p_b).max() < 0.02


def test_exact_self_loop():
    g = build_graph([(0, 0)], [(0, "r")])
    ex = exact_rwr(extend(g), 0.15)
    assert ex.stop[0, 0] == pytest.approx(1.0, abs=1e-10)


def test_exact_two_node_symmetry():
    g = build_graph([(0, 1)], [(0, "r"), (1, "r")], directed=False)
    ex = exact_rwr(extend(g), 0.15)
    np.testing.assert_allclose(ex.p_b[:, 0], [0.5, 0.5], atol=1e-12)


def test_exact_size_guard():
    g = build_graph([], [(i, "r") for i in range(2001)])
    with pytest.raises(ValueError, match="too large"):
        exact_rwr(extend(g), 0.15)


def test_exact_rows_are_distributions():
    ex = exact_rwr(extend(six_node()), 0.15)
    np.testing.assert_allclose(ex.stop.sum(axis=1), 1.0, atol=1e-10)


def test_monte_carlo_agrees_with_exact():
    eg = extend(six_node())
    s = sample_pairs(eg, None, WalkConfig(alpha=0.15, n_r=50_000, seed=11))
    est = estimate_affinities(s)
    ex = exact_rwr(eg, 0.15)
    assert np.abs(est.p_f_hat - ex.p_f).max() < 0.01
    F_exact, B_exact = spmi_affinities(ex.p_f, ex.p_b)
    assert np.abs(est.F - F_exact).max() < 0.05
    assert np.abs(est.B - B_exact).max() < 0.05


def test_uniform_column_gives_log2():
    p = np.full((4, 1), 0.25)
    F, _ = spmi_affinities(p, p)
    np.testing.assert_allclose(F, math.log(2), atol=1e-15)


def test_zero_probability_zero_affinity():
    p = np.array([[0.0, 1.0], [0.5, 0.5]])
    F, B = spmi_affinities(p, p)
    assert F[0, 0] == 0 and B[0, 0] == 0
    F, _ = spmi_affinities(np.zeros((3, 2)), np.zeros((3, 2)))
    assert not F.any()


def test_spmi_hand_computation():
    ex = exact_rwr(extend(six_node()), 0.15)
    n, d = ex.p_f.shape
    F, B = spmi_affinities(ex.p_f, ex.p_b)
    for i in range(n):
        for j in range(d):
            col = sum(ex.p_f[h, j] for h in range(n))
            row = sum(ex.p_b[i, r] for r in range(d))
            assert F[i, j] == pytest.approx(math.log(n * ex.p_f[i, j] / col + 1), abs=1e-12)
            assert B[i, j] == pytest.approx(math.log(d * ex.p_b[i, j] / row + 1), abs=1e-12)


def test_estimator_normalizes_by_node_emissions():
    s = PairSample(np.array([0, 0, 0, 1]), np.array([0, 1, 1, 0]), np.array([False, False, True, False]),
                   np.array([0, 1]), np.array([0, 1]), n=2, d=2, n_r=2)
    est = estimate_affinities(s, 2, 2, 1)
    np.testing.assert_allclose(est.p_f_hat, [[1 / 3, 2 / 3], [1.0, 0.0]])
    np.testing.assert_allclose(est.p_b_hat, [[1.0, 0.0], [0.0, 1.0]])


def test_affinities_binary_roundtrip(tmp_path):
    s = sample_pairs(extend(six_node()), None, WalkConfig(n_r=20))
    est = estimate_affinities(s)
    write_affinities(est, tmp_path / "a.bin")
    back = read_affinities(tmp_path / "a.bin")
    np.testing.assert_array_equal(back.F, est.F)
    np.testing.assert_array_equal(back.B, est.B)


walk_graphs = st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.just(n),
    st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=10),
    st.lists(st.sampled_from(["A=1", "A=2", "B=1"]), min_size=n, max_size=n),
    st.integers(0, 2**16),
))


def _walk_graph(case):
    n, edges, vals, _ = case
    g = build_graph(edges, [(i, v) for i, v in enumerate(vals)], directed=False,
                    nodes=[str(i) for i in range(n)])
    return g


@settings(max_examples=30, deadline=None)
@given(walk_graphs)
def test_cardinality_and_nonnegativity(case):
    g = _walk_graph(case)
    eg = extend(g)
    rules = one_rule(g, f"{g.attr_labels[0]}={g.attr_values[0]}", f"{g.attr_labels[-1]}={g.attr_values[-1]}")
    s = sample_pairs(eg, rules, WalkConfig(n_r=15, seed=case[3]))
    assert len(s.f_node) == 15 * g.n + s.delta
    assert len(s.b_node) == 15 * g.d
    assert s.delta == int(s.f_jump.sum())
    est = estimate_affinities(s)
    assert est.F.min() >= 0 and est.B.min() >= 0
    assert np.all(est.F[est.p_f_hat == 0] == 0)


@settings(max_examples=30, deadline=None)
@given(walk_graphs)
def test_adding_rule_never_shrinks_sample(case):
    g = _walk_graph(case)
    eg = extend(g)
    cfg = WalkConfig(n_r=15, seed=case[3])
    base = sample_pairs(eg, None, cfg)
    with_rule = sample_pairs(eg, one_rule(g, f"{g.attr_labels[0]}={g.attr_values[0]}",
                                          f"{g.attr_labels[-1]}={g.attr_values[-1]}"), cfg)
    assert len(with_rule.f_node) >= len(base.f_node)
