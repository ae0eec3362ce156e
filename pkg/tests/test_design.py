import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from adrc.acceptance import char_poly
from adrc.design import (
    DEFAULT_K_ESO,
    StateTransform,
    TuningConfig,
    build_eso_matrices,
    build_transform,
    discretize,
    feedback_vector,
    observer_gains,
    observer_pole,
    suggest_b0,
    synthesize,
    transform_eso,
    tune_gains,
)
from adrc.errors import ConstructionError, InvalidModel, InvalidTuning, SingularTransform

NOMINAL = TuningConfig(order=1, b0=50000.0, t_sample=1e-5, t_settle=2e-3)


# -- gains and poles ---------------------------------------------------------


def test_tune_gains_first_order():
    g = tune_gains(1, 2e-3)
    assert g.k_p == pytest.approx(2000, rel=1e-15)
    assert g.s_cl == pytest.approx(-2000, rel=1e-15)
    assert g.k_d is None


def test_tune_gains_second_order_unit_pole():
    assert tune_gains(2, 6.0) == (1.0, 2.0, -1.0)


def test_tune_gains_slow_limit():
    assert tune_gains(1, 1e12).k_p < 1e-11


@pytest.mark.parametrize("t", [0.0, -1.0, math.inf, math.nan])
def test_tune_gains_rejects(t):
    with pytest.raises(InvalidTuning):
        tune_gains(1, t)


def test_observer_pole_examples():
    assert observer_pole(-2000, 5, 1e-5) == pytest.approx(0.9048374180359595, rel=1e-15)
    assert observer_pole(-2000, 10, 1e-5) == pytest.approx(0.8187307530779818, rel=1e-15)


def test_observer_pole_rejects_degenerate():
    with pytest.raises(InvalidTuning):
        observer_pole(-1e-300, 1, 1e-300)  # rounds to z = 1
    with pytest.raises(InvalidTuning):
        observer_pole(0.0, 5, 1e-5)
    with pytest.raises(InvalidTuning):
        observer_pole(-2000, 0.5, 1e-5)
    with pytest.raises(InvalidTuning, match="Z_ESO|below"):
        observer_pole(-1e6, 10, 1e-5)  # z = exp(-100)


def test_observer_gains_examples():
    np.testing.assert_allclose(observer_gains(1, 0.9048374180, 1e-5), [0.18126925, 905.5917], rtol=1e-7)
    np.testing.assert_allclose(observer_gains(2, 0.5, 0.1), [0.875, 5.625, 12.5], rtol=1e-15)
    np.testing.assert_allclose(observer_gains(1, 1 - 1e-15, 1.0), [0, 0], atol=1e-14)


@pytest.mark.parametrize("z", [0.0, 1.0, -0.5, 1.5])
def test_observer_gains_rejects(z):
    with pytest.raises(InvalidTuning):
        observer_gains(1, z, 1e-5)


def test_default_k_eso():
    assert DEFAULT_K_ESO == 5
    assert NOMINAL.z_eso() == pytest.approx(math.exp(-0.1), rel=1e-15)


@pytest.mark.parametrize(
    "kw",
    [
        dict(order=3, b0=1, t_sample=1, t_settle=1),
        dict(order=1, b0=0, t_sample=1, t_settle=1),
        dict(order=1, b0=1, t_sample=0, t_settle=1),
        dict(order=1, b0=1, t_sample=1),
        dict(order=1, b0=1, t_sample=1, t_settle=1, k_p=2),
        dict(order=2, b0=1, t_sample=1, k_p=1),
        dict(order=1, b0=1, t_sample=1, k_p=1, k_d=1),
        dict(order=1, b0=1, t_sample=1, t_settle=1, k_eso=0.5),
        dict(order=1, b0=1, t_sample=1, t_settle=1, s_eso=1.0),
    ],
)
def test_tuning_config_validation(kw):
    with pytest.raises(InvalidTuning):
        TuningConfig(**kw)


# -- discretisation ----------------------------------------------------------


def test_discretize_examples():
    m = discretize(1, 50000, 1e-5)
    np.testing.assert_array_equal(m.a_d, [[1, 1e-5], [0, 1]])
    np.testing.assert_allclose(m.b_d, [0.5, 0], rtol=1e-15)
    m = discretize(2, 2, 0.1)
    np.testing.assert_allclose(m.a_d, [[1, 0.1, 0.005], [0, 1, 0.1], [0, 0, 1]], rtol=1e-15)
    np.testing.assert_allclose(m.b_d, [0.01, 0.2, 0], rtol=1e-15)
    np.testing.assert_array_equal(m.c_d, [1, 0, 0])


def test_discretize_rejects_zero_sample_time():
    with pytest.raises(InvalidTuning):
        discretize(1, 50000, 0)


def _series_zoh(order, b0, t, terms=12):
    n = order + 1
    a = np.eye(n, k=1)
    b = np.zeros(n)
    b[order - 1] = b0
    a_d = np.zeros((n, n))
    b_d = np.zeros(n)
    p = np.eye(n)
    for i in range(terms):
        a_d += p * t**i / math.factorial(i)
        b_d += (p @ b) * t ** (i + 1) / math.factorial(i + 1)
        p = p @ a
    return a_d, b_d


@settings(max_examples=60, deadline=None)
@given(
    order=st.sampled_from([1, 2]),
    b0=st.floats(1e-3, 1e6) | st.floats(-1e6, -1e-3),
    t=st.floats(1e-7, 1.0),
)
def test_discretize_matches_series_and_expm(order, b0, t):
    m = discretize(order, b0, t)
    a_s, b_s = _series_zoh(order, b0, t)
    np.testing.assert_allclose(m.a_d, a_s, rtol=1e-15, atol=0)
    np.testing.assert_allclose(m.b_d, b_s, rtol=1e-14, atol=0)
    n = order + 1
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = np.eye(n, k=1)
    big[order - 1, n] = b0
    e = scipy.linalg.expm(big * t)
    np.testing.assert_allclose(m.a_d, e[:n, :n], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(m.b_d, e[:n, n], rtol=1e-12, atol=1e-15 * abs(b0))


# -- ESO matrices ------------------------------------------------------------


def test_build_eso_matrices_nominal():
    d = synthesize(NOMINAL)
    np.testing.assert_allclose(d.eso.a_eso, [[0.81873075, 8.1873075e-6], [-905.5917, 0.99094408]], rtol=1e-7)
    np.testing.assert_allclose(d.eso.b_eso, [0.40936538, -452.79585], rtol=1e-7)
    np.testing.assert_allclose(d.eso.w, [0.04, 2e-5], rtol=1e-15)
    ref = np.array([1, -2 * d.z_eso, d.z_eso**2])
    np.testing.assert_allclose(char_poly(d.eso.a_eso), ref, rtol=0, atol=1e-13)


def test_zero_gain_gives_open_loop_observer():
    model = discretize(2, 3.0, 0.01)
    m = build_eso_matrices(model, np.zeros(3), np.ones(3))
    np.testing.assert_array_equal(m.a_eso, model.a_d)
    np.testing.assert_array_equal(m.b_eso, model.b_d)


def test_build_eso_matrices_dimension_mismatch():
    with pytest.raises(ConstructionError):
        build_eso_matrices(discretize(1, 1.0, 0.1), np.zeros(3), np.ones(2))


def test_eso_matrices_read_only():
    d = synthesize(NOMINAL)
    with pytest.raises(ValueError):
        d.eso.a_eso[0, 0] = 1.0


def test_design_deterministic():
    a, b = synthesize(NOMINAL).eso, synthesize(NOMINAL).eso
    for name in ("a_eso", "b_eso", "l_eso", "w"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


# -- lag-reduced transform ---------------------------------------------------


def test_build_transform_examples():
    np.testing.assert_allclose(build_transform(1, 2000, None, 50000).diag, [0.04, 2e-5], rtol=1e-15)
    np.testing.assert_allclose(build_transform(2, 1, 2, 1).diag, [1, 2, 1])
    with pytest.raises(SingularTransform):
        build_transform(1, 0, None, 1)
    with pytest.raises(SingularTransform):
        build_transform(2, 1, 2, 0)


def test_identity_transform_keeps_matrices():
    d = synthesize(NOMINAL)
    m = transform_eso(d.eso, StateTransform.identity(1))
    np.testing.assert_array_equal(m.a_eso, d.eso.a_eso)
    np.testing.assert_array_equal(m.l_eso, d.eso.l_eso)


def test_transform_twice_rejected():
    d = synthesize(NOMINAL)
    with pytest.raises(ConstructionError):
        transform_eso(d.matrices(True), d.transform)


@settings(max_examples=60, deadline=None)
@given(
    order=st.sampled_from([1, 2]),
    b0=st.floats(1e-2, 1e6),
    ratio=st.floats(30, 3000),
    k_eso=st.floats(3, 10),
)
def test_transform_preserves_spectrum_and_gives_unit_gains(order, b0, ratio, k_eso):
    t = 1e-4
    d = synthesize(TuningConfig(order, b0, t, t_settle=ratio * t, k_eso=k_eso))
    lag = d.matrices(lag_reduced=True)
    np.testing.assert_array_equal(lag.w, np.ones(order + 1))
    np.testing.assert_allclose(char_poly(lag.a_eso), char_poly(d.eso.a_eso), rtol=1e-12, atol=1e-12)
    # u-contribution is coordinate free: w^T x == 1^T (T^-1 x)
    x = np.linspace(1.0, 2.0, order + 1)
    assert float(lag.w @ (d.transform.t_inv @ x)) == pytest.approx(float(d.eso.w @ x), rel=1e-12)


def test_feedback_vector_second_order_needs_k_d():
    with pytest.raises(InvalidTuning):
        feedback_vector(2, 1.0, 1.0)


# -- b0 suggestion -------------------------------------------------------------


def test_suggest_b0_examples():
    assert suggest_b0("first-order", 75.8546, 1.51709e-3) == pytest.approx(50000, rel=1e-3)
    assert suggest_b0("first-order", 1, 1) == 1
    assert suggest_b0("second-order", 4, 2) == 1
    assert suggest_b0("second-order", 4, 2, D=0.7) == 1


@pytest.mark.parametrize("args", [("first-order", 1, 0), ("first-order", 1, -1), ("first-order", 0, 1), ("third", 1, 1)])
def test_suggest_b0_rejects(args):
    with pytest.raises(InvalidModel):
        suggest_b0(*args)


def test_explicit_second_order_gains_use_natural_frequency():
    cfg = TuningConfig(2, 1.0, 1e-3, k_p=4.0, k_d=4.0)
    assert cfg.gains().s_cl == -2.0
    assert cfg.z_eso() == pytest.approx(math.exp(-5 * 2 * 1e-3))
