"""Bumpless enabling and online parameter changes.

All procedures assume they run at sample ``k`` directly before the
observer and control law execute, and that the loop is stationary with
``r == y``. Retunes return a new :class:`ControllerSnapshot` and never
modify the one passed in, so a rejected retune leaves the controller as
it was.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, replace

import numpy as np

from .control import ControlLawState, GainSet
from .design import (
    ClosedLoopGains,
    Design,
    DiscretePlantModel,
    EsoMatrices,
    StateTransform,
    TuningConfig,
    build_eso_matrices,
    build_transform,
    feedback_vector,
    observer_gains,
    observer_pole,
    transform_eso,
)
from .errors import ConstructionError, InvalidTuning
from .observer import EsoState


@dataclass(frozen=True)
class ControllerSnapshot:
    """Every tuning-dependent quantity of one running controller.

    ``matrices`` and ``eso_state`` are in the controller's own coordinates
    (lag-reduced when ``matrices.transformed``). ``transform`` is the
    identity for standard-coordinate controllers; ``lag_transform`` always
    holds ``T^-1`` for the current gains, which the retune formulas need.
    """

    tuning: TuningConfig
    gains: ClosedLoopGains
    model: DiscretePlantModel
    matrices: EsoMatrices
    transform: StateTransform
    lag_transform: StateTransform
    eso_state: EsoState | None
    law_state: ControlLawState
    incremental: bool = False

    def __post_init__(self):
        if self.matrices.order != self.tuning.order:
            raise ConstructionError("matrices and tuning disagree on the order")
        if self.eso_state is not None and self.eso_state.order != self.tuning.order:
            raise ConstructionError("ESO state and tuning disagree on the order")
        if self.transform.t_inv.shape != self.matrices.a_eso.shape:
            raise ConstructionError("transform and matrices dimensions differ")

    @classmethod
    def from_design(cls, d: Design, *, lag_reduced: bool = False, incremental: bool = False):
        return cls(
            tuning=d.tuning,
            gains=d.gains,
            model=d.model,
            matrices=d.matrices(lag_reduced),
            transform=d.transform if lag_reduced else StateTransform.identity(d.tuning.order),
            lag_transform=d.transform,
            eso_state=None,
            law_state=ControlLawState(),
            incremental=incremental,
        )

    @property
    def lag_reduced(self) -> bool:
        return self.matrices.transformed

    @property
    def gain_set(self) -> GainSet:
        return GainSet(self.gains.k_p / self.tuning.b0, self.matrices.w)

    def x_hat_standard(self) -> np.ndarray:
        """Observer state mapped back to standard coordinates."""
        return self.transform.t @ self.eso_state.x_hat

    def copy_with(self, **changes) -> "ControllerSnapshot":
        changes.setdefault("law_state", copy.copy(self.law_state))
        return replace(self, **changes)


def init_eso_bumpless(
    y_prev: float, u_prev: float, cfg: TuningConfig, *, lag_reduced: bool = False
) -> EsoState:
    """Observer state for a plant resting at ``y_prev`` under ``u_prev``."""
    mid = [0.0] if cfg.order == 2 else []
    if lag_reduced:
        k_p = cfg.gains().k_p
        return EsoState([k_p / cfg.b0 * y_prev, *mid, -u_prev])
    return EsoState([y_prev, *mid, -cfg.b0 * u_prev])


def init_incremental_bumpless(
    r_prev: float, eso_state: EsoState, u_lim_prev2: float, g: GainSet, *, u_lim_prev: float
) -> ControlLawState:
    """Prime the incremental law so its first output continues the
    applied control signal."""
    du_prev = g.k_p_over_b0 * r_prev - float(g.w @ eso_state.x_hat) - u_lim_prev2
    return ControlLawState(
        r_prev=r_prev,
        delta_u_prev=du_prev,
        u_lim_prev=u_lim_prev,
        u_lim_prev2=u_lim_prev2,
        initialized=True,
    )


def _reinit_increment(snap: ControllerSnapshot) -> ControllerSnapshot:
    if not snap.incremental or not snap.law_state.initialized or snap.eso_state is None:
        return snap
    ls = snap.law_state
    new_ls = init_incremental_bumpless(
        ls.r_prev, snap.eso_state, ls.u_lim_prev2, snap.gain_set, u_lim_prev=ls.u_lim_prev
    )
    return replace(snap, law_state=new_ls)


def retune_closed_loop(
    snap: ControllerSnapshot,
    *,
    t_settle: float | None = None,
    k_p: float | None = None,
    k_d: float | None = None,
) -> ControllerSnapshot:
    """Move the closed-loop poles; the observer poles stay where they are."""
    old = snap.tuning
    changes = {"s_eso": old.observer_s_pole()}
    if t_settle is not None:
        changes.update(t_settle=t_settle, k_p=None, k_d=None)
    elif k_p is not None:
        changes.update(t_settle=None, k_p=k_p, k_d=k_d if old.order == 2 else None)
    else:
        raise InvalidTuning("retune_closed_loop needs t_settle or k_p")
    new_tuning = replace(old, **changes)
    g = new_tuning.gains()
    new_lag = build_transform(old.order, g.k_p, g.k_d, old.b0)

    m = snap.matrices
    state = snap.eso_state
    if m.transformed:
        ratio = new_lag.diag / snap.lag_transform.diag
        matrices = EsoMatrices(
            m.a_eso * np.outer(ratio, 1 / ratio),
            ratio * m.b_eso,
            ratio * m.l_eso,
            m.w,
            transformed=True,
            z_eso=m.z_eso,
        )
        transform = new_lag
        if state is not None:
            state = EsoState(ratio * state.x_hat)
    else:
        w = feedback_vector(old.order, old.b0, g.k_p, g.k_d)
        matrices = replace(m, w=w)
        transform = snap.transform
    new = snap.copy_with(
        tuning=new_tuning,
        gains=g,
        matrices=matrices,
        transform=transform,
        lag_transform=new_lag,
        eso_state=state,
    )
    return _reinit_increment(new)


def retune_observer(
    snap: ControllerSnapshot, *, k_eso: float | None = None, z_eso: float | None = None
) -> ControllerSnapshot:
    """Move the observer poles; the state vector is left untouched."""
    old = snap.tuning
    if (k_eso is None) == (z_eso is None):
        raise InvalidTuning("give exactly one of k_eso or z_eso")
    if k_eso is not None:
        z = observer_pole(snap.gains.s_cl, k_eso, old.t_sample)
        new_tuning = replace(old, k_eso=k_eso, s_eso=None)
    else:
        if not 0 < z_eso < 1:
            raise InvalidTuning(f"z_eso must lie in (0, 1), got {z_eso!r}")
        z = z_eso
        new_tuning = replace(old, s_eso=math.log(z_eso) / old.t_sample)
    l_c = observer_gains(old.order, z, old.t_sample)
    w = feedback_vector(old.order, old.b0, snap.gains.k_p, snap.gains.k_d)
    matrices = build_eso_matrices(snap.model, l_c, w, z)
    if snap.lag_reduced:
        matrices = transform_eso(matrices, snap.lag_transform)
    return snap.copy_with(tuning=new_tuning, matrices=matrices)


def retune_b0(snap: ControllerSnapshot, new_b0: float) -> ControllerSnapshot:
    """Change the plant-model gain b0, keeping the disturbance
    compensation constant."""
    old = snap.tuning
    new_tuning = replace(old, b0=new_b0)  # validates new_b0
    scale = new_b0 / old.b0
    model = replace(snap.model, b_d=scale * snap.model.b_d)
    m = snap.matrices
    state = snap.eso_state
    new_lag = build_transform(old.order, snap.gains.k_p, snap.gains.k_d, new_b0)
    if m.transformed:
        matrices = EsoMatrices(
            m.a_eso, m.b_eso, m.l_eso / scale, m.w, transformed=True, z_eso=m.z_eso
        )
        transform = new_lag
        if state is not None:
            x = state.x_hat / scale
            x[-1] = state.x_hat[-1]  # inverse scaling of the last element cancels
            state = EsoState(x)
    else:
        w = feedback_vector(old.order, new_b0, snap.gains.k_p, snap.gains.k_d)
        matrices = EsoMatrices(
            m.a_eso, scale * m.b_eso, m.l_eso, w, transformed=False, z_eso=m.z_eso
        )
        transform = snap.transform
        if state is not None:
            x = state.x_hat.copy()
            x[-1] *= scale
            state = EsoState(x)
    new = snap.copy_with(
        tuning=new_tuning,
        model=model,
        matrices=matrices,
        transform=transform,
        lag_transform=new_lag,
        eso_state=state,
    )
    return _reinit_increment(new)
