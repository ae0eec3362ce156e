"""ADRC control laws, non-incremental and incremental."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import Design, EsoMatrices
from .errors import NumericFault, ProtocolError
from .observer import EsoState


@dataclass(frozen=True)
class GainSet:
    k_p_over_b0: float
    w: np.ndarray

    @classmethod
    def from_design(cls, d: Design, m: EsoMatrices) -> "GainSet":
        return cls(d.k_p_over_b0, m.w)


@dataclass
class ControlLawState:
    """History the incremental law needs between samples."""

    r_prev: float = 0.0
    delta_u_prev: float = 0.0
    u_lim_prev: float = 0.0
    u_lim_prev2: float = 0.0
    initialized: bool = False

    def record_applied(self, u_lim: float) -> None:
        self.u_lim_prev2 = self.u_lim_prev
        self.u_lim_prev = u_lim

    @property
    def carry_over(self) -> float:
        """Desired increment of the last sample not yet delivered."""
        return self.delta_u_prev - (self.u_lim_prev - self.u_lim_prev2)


def control_law(g: GainSet, r: float, x_hat: EsoState) -> float:
    if not math.isfinite(r):
        raise NumericFault(f"non-finite reference {r!r}")
    return float(g.k_p_over_b0 * r - g.w @ x_hat.x_hat)


def control_law_incremental(
    g: GainSet, state: ControlLawState, delta_r: float, delta_x: np.ndarray
) -> float:
    """Desired increment including the carry-over of limited increments.

    Stores the result as ``state.delta_u_prev`` for the next sample.
    """
    if not state.initialized:
        raise ProtocolError("incremental control law used before initialisation")
    if not math.isfinite(delta_r):
        raise NumericFault(f"non-finite reference increment {delta_r!r}")
    du = g.k_p_over_b0 * delta_r - g.w @ delta_x + state.carry_over
    du = float(du)
    if not math.isfinite(du):
        raise NumericFault("control increment is not finite")
    state.delta_u_prev = du
    return du


def reconstruct_u(state: ControlLawState, delta_u: float) -> float:
    """Plain integrator ``u(k-1) + du`` for loops without a limiter."""
    if not state.initialized:
        raise ProtocolError("incremental control law used before initialisation")
    return state.u_lim_prev + delta_u
