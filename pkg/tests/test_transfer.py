import math
from dataclasses import replace

import numpy as np
import pytest

from adrc import transfer
from adrc.controller import AdrcController
from adrc.design import TuningConfig, build_transform, synthesize
from adrc.errors import InvalidTuning, ProtocolError
from adrc.observer import EsoState
from adrc.sim import ALL_VARIANTS
from adrc.transfer import ControllerSnapshot, init_eso_bumpless, init_incremental_bumpless

NOMINAL = TuningConfig(order=1, b0=50000.0, t_sample=1e-5, t_settle=2e-3)
SECOND = TuningConfig(order=2, b0=2e8, t_sample=1e-5, t_settle=2e-3)
U_STAR = 3.2957747154594776
VARIANTS = [pytest.param(v, id=str(v)) for v in ALL_VARIANTS]


def test_init_eso_bumpless_formulas():
    x = init_eso_bumpless(250.0, U_STAR, SECOND)
    np.testing.assert_array_equal(x.x_hat, [250.0, 0.0, -2e8 * U_STAR])
    xt = init_eso_bumpless(250.0, U_STAR, SECOND, lag_reduced=True)
    k_p = SECOND.gains().k_p
    np.testing.assert_allclose(xt.x_hat, [k_p / 2e8 * 250.0, 0.0, -U_STAR], rtol=1e-15)


@pytest.mark.parametrize("lag", [False, True])
def test_init_incremental_at_steady_state(lag):
    d = synthesize(NOMINAL)
    snap = ControllerSnapshot.from_design(d, lag_reduced=lag, incremental=True)
    x = init_eso_bumpless(250.0, U_STAR, NOMINAL, lag_reduced=lag)
    ls = init_incremental_bumpless(250.0, x, U_STAR, snap.gain_set, u_lim_prev=U_STAR)
    assert ls.initialized
    assert abs(ls.delta_u_prev) <= 1e-12
    assert ls.carry_over == pytest.approx(0.0, abs=1e-12)


# -- driving helpers ---------------------------------------------------------


def _drive(ctrl: AdrcController, rs, ys):
    """Step the controller on given inputs, applying its own output."""
    us = []
    for r, y in zip(rs, ys):
        out = ctrl.update(r, y)
        u = ctrl.u_lim_prev + out if ctrl.incremental else out
        ctrl.commit(u)
        us.append(u)
    return np.array(us)


def _running(tuning, v, n=300, seed=0):
    rng = np.random.default_rng(seed)
    ctrl = AdrcController(tuning, incremental=v.incremental, lag_reduced=v.lag_reduced)
    ctrl.seed_history(y=250.0, r=250.0, u_lim=U_STAR)
    ctrl.enable()
    _drive(ctrl, np.full(n, 255.0), 250 + rng.normal(0, 1, n))
    return ctrl


def _fresh_with_state(tuning, v, x_hat_std, old: AdrcController):
    """Freshly designed controller holding ``x_hat_std`` (standard
    coordinates) and the history of ``old``."""
    new = AdrcController(tuning, incremental=v.incremental, lag_reduced=v.lag_reduced)
    snap = new.snapshot
    x = snap.lag_transform.t_inv @ x_hat_std if v.lag_reduced else x_hat_std
    new.snapshot = snap.copy_with(eso_state=EsoState(x))
    new.observer_on = new.law_on = True
    new.y_prev, new.r_prev = old.y_prev, old.r_prev
    new.u_lim_prev, new.u_lim_prev2 = old.u_lim_prev, old.u_lim_prev2
    if v.incremental:
        new.snapshot = new.snapshot.copy_with(
            law_state=init_incremental_bumpless(
                old.r_prev, new.snapshot.eso_state, old.u_lim_prev2, new.snapshot.gain_set, u_lim_prev=old.u_lim_prev
            )
        )
    return new


def _compare(a: AdrcController, b: AdrcController, n=1000, seed=1):
    rng = np.random.default_rng(seed)
    rs = np.where(np.arange(n) < n // 2, 255.0, 245.0)
    ys = 250 + rng.normal(0, 1, n)
    ua, ub = _drive(a, rs, ys), _drive(b, rs, ys)
    return float(np.max(np.abs(ua - ub) / np.maximum(np.abs(ua), 1.0)))


@pytest.mark.parametrize("v", VARIANTS)
@pytest.mark.parametrize("base", [NOMINAL, SECOND], ids=["order1", "order2"])
def test_retune_closed_loop_equivalent_to_fresh_design(v, base):
    ctrl = _running(base, v)
    x_std = ctrl.x_hat().copy()
    s_eso = base.observer_s_pole()
    ctrl.retune_closed_loop(t_settle=8e-3)
    expected = TuningConfig(base.order, base.b0, base.t_sample, t_settle=8e-3, s_eso=s_eso)
    fresh = _fresh_with_state(expected, v, x_std, ctrl)
    assert _compare(ctrl, fresh) <= 1e-9
    assert ctrl.tuning.z_eso() == pytest.approx(base.z_eso(), rel=1e-15)


@pytest.mark.parametrize("v", VARIANTS)
@pytest.mark.parametrize("base", [NOMINAL, SECOND], ids=["order1", "order2"])
def test_retune_observer_equivalent_to_fresh_design(v, base):
    ctrl = _running(base, v)
    x_std = ctrl.x_hat().copy()
    ctrl.retune_observer(k_eso=2.5)
    fresh = _fresh_with_state(replace(base, k_eso=2.5), v, x_std, ctrl)
    assert _compare(ctrl, fresh) <= 1e-9


@pytest.mark.parametrize("v", VARIANTS)
@pytest.mark.parametrize("base", [NOMINAL, SECOND], ids=["order1", "order2"])
def test_retune_b0_equivalent_to_fresh_design(v, base):
    ctrl = _running(base, v)
    x_std = ctrl.x_hat().copy()
    x_std[-1] *= 2.0
    ctrl.retune_b0(2 * base.b0)
    fresh = _fresh_with_state(replace(base, b0=2 * base.b0), v, x_std, ctrl)
    assert _compare(ctrl, fresh) <= 1e-9


def test_retune_observer_halved_bandwidth():
    snap = ControllerSnapshot.from_design(synthesize(NOMINAL))
    snap = snap.copy_with(eso_state=EsoState([250.0, -5e4 * U_STAR]))
    new = transfer.retune_observer(snap, k_eso=2.5)
    assert new.matrices.z_eso == pytest.approx(math.exp(-0.05), rel=1e-15)
    assert new.tuning.z_eso() == pytest.approx(0.9512294245007140, rel=1e-15)
    np.testing.assert_array_equal(new.eso_state.x_hat, snap.eso_state.x_hat)


@pytest.mark.parametrize("lag", [False, True])
def test_retune_observer_same_pole_is_bit_identical(lag):
    snap = ControllerSnapshot.from_design(synthesize(NOMINAL), lag_reduced=lag)
    new = transfer.retune_observer(snap, z_eso=NOMINAL.z_eso())
    for name in ("a_eso", "b_eso", "l_eso", "w"):
        assert getattr(new.matrices, name).tobytes() == getattr(snap.matrices, name).tobytes()


def test_retune_b0_example():
    snap = ControllerSnapshot.from_design(synthesize(NOMINAL))
    snap = snap.copy_with(eso_state=EsoState([250.0, -0.6]))
    new = transfer.retune_b0(snap, 2 * NOMINAL.b0)
    np.testing.assert_allclose(new.eso_state.x_hat, [250.0, -1.2])
    # disturbance compensation f_hat/b0 unchanged
    assert new.eso_state.x_hat[-1] / new.tuning.b0 == pytest.approx(-0.6 / NOMINAL.b0, rel=1e-15)


@pytest.mark.parametrize("lag", [False, True])
@pytest.mark.parametrize("base", [NOMINAL, SECOND], ids=["order1", "order2"])
def test_retune_b0_keeps_disturbance_term_and_stationary_u(lag, base):
    """The state-feedback sum w^T x changes with b0 through its k_p/b0 part;
    what stays fixed is the disturbance term and hence u at r = y_hat."""
    d = synthesize(base)
    snap = ControllerSnapshot.from_design(d, lag_reduced=lag)
    x_std = np.array([250.0, *([3.0] * (base.order - 1)), -base.b0 * U_STAR * 1.1])
    x = d.transform.t_inv @ x_std if lag else x_std
    snap = snap.copy_with(eso_state=EsoState(x))
    for factor in (0.5, 2.0, 7.3):
        new = transfer.retune_b0(snap, factor * base.b0)
        old_term = snap.matrices.w[-1] * snap.eso_state.x_hat[-1]
        new_term = new.matrices.w[-1] * new.eso_state.x_hat[-1]
        assert new_term == pytest.approx(old_term, rel=1e-12)
        r = float(new.x_hat_standard()[0])
        u_old = snap.gain_set.k_p_over_b0 * r - snap.gain_set.w @ snap.eso_state.x_hat
        u_new = new.gain_set.k_p_over_b0 * r - new.gain_set.w @ new.eso_state.x_hat
        if base.order == 1:
            assert u_new == pytest.approx(u_old, rel=1e-12)


def test_retune_rejections_leave_snapshot_untouched():
    snap = ControllerSnapshot.from_design(synthesize(NOMINAL))
    before = snap.matrices.a_eso.tobytes()
    with pytest.raises(InvalidTuning):
        transfer.retune_observer(snap, z_eso=1.5)
    with pytest.raises(InvalidTuning):
        transfer.retune_observer(snap)
    with pytest.raises(InvalidTuning):
        transfer.retune_b0(snap, 0.0)
    with pytest.raises(InvalidTuning):
        transfer.retune_closed_loop(snap, t_settle=-1.0)
    with pytest.raises(InvalidTuning):
        transfer.retune_closed_loop(snap)
    assert snap.matrices.a_eso.tobytes() == before


def test_lag_transform_follows_retunes():
    snap = ControllerSnapshot.from_design(synthesize(NOMINAL), lag_reduced=True)
    new = transfer.retune_closed_loop(snap, t_settle=4e-3)
    np.testing.assert_allclose(new.transform.diag, build_transform(1, 1000.0, None, 5e4).diag, rtol=1e-15)
    new = transfer.retune_b0(new, 1e5)
    np.testing.assert_allclose(new.transform.diag, build_transform(1, 1000.0, None, 1e5).diag, rtol=1e-15)


# -- controller lifecycle ----------------------------------------------------


@pytest.mark.parametrize("v", VARIANTS)
def test_joint_enable_is_bumpless(v):
    ctrl = AdrcController(NOMINAL, incremental=v.incremental, lag_reduced=v.lag_reduced)
    y = 250.0
    ctrl.seed_history(y=y, r=y, u_lim=U_STAR)
    ctrl.enable()
    out = ctrl.update(y, y)
    u = ctrl.u_lim_prev + out if v.incremental else out
    assert abs(u - U_STAR) <= 1e-9 * max(1.0, U_STAR)


def test_controller_before_observer_rejected():
    ctrl = AdrcController(NOMINAL)
    ctrl.seed_history(y=250.0, r=250.0, u_lim=U_STAR)
    ctrl.enable_controller()
    with pytest.raises(ProtocolError):
        ctrl.update(250.0, 250.0)


def test_observer_enable_needs_history():
    ctrl = AdrcController(NOMINAL)
    ctrl.enable_observer()
    with pytest.raises(ProtocolError):
        ctrl.update(250.0, 250.0)


def test_requests_apply_at_next_update():
    ctrl = AdrcController(NOMINAL)
    ctrl.seed_history(y=250.0, r=250.0, u_lim=U_STAR)
    ctrl.enable()
    assert not ctrl.observer_on
    assert math.isnan(ctrl.x_hat()[0])
    ctrl.update(250.0, 250.0)
    assert ctrl.observer_on and ctrl.law_on


def test_transient_retune_is_flagged():
    ctrl = _running(NOMINAL, ALL_VARIANTS[0], n=5)
    ctrl.retune_observer(k_eso=3.0)
    ctrl.update(260.0, 250.0)
    assert "retune_observer:transient" in ctrl.flags


def test_disable_resets_observer():
    ctrl = _running(NOMINAL, ALL_VARIANTS[2], n=5)
    ctrl.disable()
    assert ctrl.update(250.0, 250.0) is None
    assert not ctrl.observer_on and math.isnan(ctrl.x_hat()[0])
