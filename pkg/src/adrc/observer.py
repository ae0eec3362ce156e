"""Discrete-time current extended state observer (ESO).

The observer always consumes the *applied* (limited) control value from
the previous sample. Coordinates follow the paired ``EsoMatrices``: plain
``x_hat`` for standard matrices, ``x_tilde`` for lag-reduced ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import EsoMatrices
from .errors import ConstructionError, NumericFault


@dataclass(frozen=True)
class EsoState:
    x_hat: np.ndarray

    def __post_init__(self):
        x = np.array(self.x_hat, dtype=float)
        if x.ndim != 1 or len(x) not in (2, 3):
            raise ConstructionError(f"ESO state must have 2 or 3 elements, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericFault(f"non-finite ESO state {x}")
        x.setflags(write=False)
        object.__setattr__(self, "x_hat", x)

    @property
    def order(self) -> int:
        return len(self.x_hat) - 1

    @property
    def disturbance(self) -> float:
        """Last element: the generalised-disturbance estimate (in the
        state's own coordinates)."""
        return float(self.x_hat[-1])


def init_state_raw(x0, order: int | None = None) -> EsoState:
    x0 = np.asarray(x0, dtype=float)
    if order is not None and x0.shape != (order + 1,):
        raise ConstructionError(f"expected {order + 1} elements, got shape {x0.shape}")
    return EsoState(x0)


def _check(state: EsoState, m: EsoMatrices, u_prev_lim: float, y: float) -> None:
    if state.order != m.order:
        raise ConstructionError(f"state order {state.order} does not match matrices order {m.order}")
    if not (math.isfinite(u_prev_lim) and math.isfinite(y)):
        raise NumericFault(f"non-finite observer input u={u_prev_lim!r}, y={y!r}")


def eso_update(state: EsoState, m: EsoMatrices, u_prev_lim: float, y: float) -> EsoState:
    """One current-observer step: ``A x + B u(k-1) + L y(k)``."""
    _check(state, m, u_prev_lim, y)
    x = m.a_eso @ state.x_hat + m.b_eso * u_prev_lim + m.l_eso * y
    if not np.all(np.isfinite(x)):
        raise NumericFault(f"observer diverged to {x}")
    return EsoState(x)


def eso_update_incremental(
    state: EsoState, m: EsoMatrices, u_prev_lim: float, y: float
) -> tuple[np.ndarray, EsoState]:
    """Incremental observer step; returns ``(delta_x, new_state)``."""
    _check(state, m, u_prev_lim, y)
    dx = m.a_eso_minus_i @ state.x_hat + m.b_eso * u_prev_lim + m.l_eso * y
    if not np.all(np.isfinite(dx)):
        raise NumericFault(f"observer increment diverged to {dx}")
    dx.setflags(write=False)
    return dx, EsoState(state.x_hat + dx)


def innovation(state: EsoState, y: float, t_diag: np.ndarray | None = None) -> float:
    """Output residual ``y - y_hat`` of a state; pass the transform
    diagonal ``T^-1`` for lag-reduced states."""
    y_hat = state.x_hat[0] if t_diag is None else state.x_hat[0] / t_diag[0]
    return float(y - y_hat)
