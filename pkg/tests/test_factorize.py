import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ruleembed.errors import ConfigError, DataError
from ruleembed.factorize import (EmbeddingSet, FactorizeConfig, factorize, objective_and_grad, read_embeddings,
                                 reconstruction_error, write_embeddings)


def planted(n=30, d=12, h=4, seed=0):
    rng = np.random.default_rng(seed)
    X_f, X_b, Y = rng.normal(size=(n, h)), rng.normal(size=(n, h)), rng.normal(size=(d, h))
    return X_f @ Y.T, X_b @ Y.T


def test_zero_target():
    Z = np.zeros((8, 5))
    e = factorize(Z, Z, FactorizeConfig(k=4, epochs=2000, learning_rate=0.01))
    assert reconstruction_error(Z, Z, e) < 1e-6


def test_planted_recovery():
    F, B = planted()
    e = factorize(F, B, FactorizeConfig(k=8, epochs=3000, learning_rate=0.02, convergence_tol=1e-12))
    rel = math.sqrt(reconstruction_error(F, B, e) / (np.sum(F ** 2) + np.sum(B ** 2)))
    assert rel < 1e-3


def test_planted_recovery_svd_init():
    F, B = planted(seed=1)
    e = factorize(F, B, FactorizeConfig(k=8, epochs=1, init="svd"))
    # curve[0] is the objective at the starting point
    assert math.sqrt(e.curve[0] / (np.sum(F ** 2) + np.sum(B ** 2))) < 1e-3


def test_scalar_fit():
    T = np.array([[math.log(2)]])
    e = factorize(T, T, FactorizeConfig(k=2, epochs=3000, learning_rate=0.01, convergence_tol=0))
    assert (e.X_f @ e.Y.T)[0, 0] == pytest.approx(math.log(2), abs=1e-4)
    assert (e.X_b @ e.Y.T)[0, 0] == pytest.approx(math.log(2), abs=1e-4)


def test_perfect_factors_zero_error():
    rng = np.random.default_rng(0)
    X_f, X_b, Y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), rng.normal(size=(3, 2))
    e = EmbeddingSet(X_f, X_b, Y, k=4)
    assert reconstruction_error(X_f @ Y.T, X_b @ Y.T, e) == pytest.approx(0, abs=1e-20)


def test_zero_embeddings_plug_in():
    rng = np.random.default_rng(0)
    F, B = rng.random((4, 3)), rng.random((4, 3))
    e = EmbeddingSet(np.zeros((4, 1)), np.zeros((4, 1)), np.zeros((3, 1)), k=2)
    assert reconstruction_error(F, B, e) == pytest.approx(np.linalg.norm(F) ** 2 + np.linalg.norm(B) ** 2)


def test_shape_mismatch():
    e = EmbeddingSet(np.zeros((4, 1)), np.zeros((4, 1)), np.zeros((3, 1)), k=2)
    with pytest.raises(ValueError):
        reconstruction_error(np.zeros((4, 2)), np.zeros((4, 2)), e)


def _fd(F, B, params, h=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = objective_and_grad(F, B, *params)[0]
            p[idx] = old - h
            down = objective_and_grad(F, B, *params)[0]
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    F, B = rng.random((5, 4)), rng.random((5, 4))
    params = [rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(4, 3))]
    _, *grads = objective_and_grad(F, B, *params)
    for a, n in zip(grads, _fd(F, B, params)):
        rel = np.abs(a - n).max() / max(np.abs(n).max(), 1e-12)
        assert rel < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_rotation_gauge(seed, h):
    rng = np.random.default_rng(seed)
    F, B = rng.random((6, 4)), rng.random((6, 4))
    X_f, X_b, Y = rng.normal(size=(6, h)), rng.normal(size=(6, h)), rng.normal(size=(4, h))
    Q, _ = np.linalg.qr(rng.normal(size=(h, h)))
    a = reconstruction_error(F, B, EmbeddingSet(X_f, X_b, Y, k=2 * h))
    b = reconstruction_error(F, B, EmbeddingSet(X_f @ Q, X_b @ Q, Y @ Q, k=2 * h))
    assert abs(a - b) < 1e-9 * max(1.0, a)


def test_deterministic():
    F, B = planted()
    cfg = FactorizeConfig(k=8, epochs=50, seed=3)
    a, b = factorize(F, B, cfg), factorize(F, B, cfg)
    for x, y in ((a.X_f, b.X_f), (a.X_b, b.X_b), (a.Y, b.Y)):
        assert x.tobytes() == y.tobytes()


def test_training_curve_non_increasing():
    F, B = planted()
    e = factorize(F, B, FactorizeConfig(k=8, epochs=200, learning_rate=0.01))
    curve = np.array(e.curve[3:-1])
    rises = np.flatnonzero(np.diff(curve) > 1e-6 * curve[:-1] + 1e-12) + 4
    # every rise is reported as a diagnostic
    assert set((rises + 1).tolist()) <= set(e.diagnostics["loss_increases"])


def test_non_finite_input_rejected():
    F = np.array([[np.nan]])
    with pytest.raises(DataError):
        factorize(F, F, FactorizeConfig(k=2))


def test_config_validation():
    with pytest.raises(ConfigError):
        FactorizeConfig(k=3).validate()
    with pytest.raises(ConfigError):
        FactorizeConfig(learning_rate=0).validate()


def test_embedding_binary_roundtrip(tmp_path):
    F, B = planted(n=7, d=3, h=2)
    e = factorize(F, B, FactorizeConfig(k=4, epochs=5))
    write_embeddings(e, tmp_path / "e.bin")
    back = read_embeddings(tmp_path / "e.bin")
    assert back.k == 4
    for x, y in ((e.X_f, back.X_f), (e.X_b, back.X_b), (e.Y, back.Y)):
        np.testing.assert_array_equal(x, y)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(DataError):
        read_embeddings(tmp_path / "bad.bin")
