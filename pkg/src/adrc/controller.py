"""Step-pipeline wrapper around the ADRC building blocks.

:class:`AdrcController` runs one of the four variants (standard or
lag-reduced coordinates, non-incremental or incremental law). Enabling and
retuning are *requests*: they are queued and executed at the start of the
next :meth:`AdrcController.update`, directly before the observer and
control law run for that sample.

Per sample the caller does::

    out = ctrl.update(r, y)      # u(k), or du(k) for incremental variants
    u_lim = ...                  # limiter / limiting integrator / manual value
    ctrl.commit(u_lim)           # applied value, always, in every mode
"""
from __future__ import annotations

import math

import numpy as np

from . import transfer
from .control import control_law, control_law_incremental
from .design import TuningConfig, synthesize
from .errors import NumericFault, ProtocolError
from .observer import EsoState, eso_update, eso_update_incremental
from .transfer import ControllerSnapshot

# |r - y| below this fraction of |y| counts as stationary for retune flags
STATIONARY_RTOL = 1e-6


class AdrcController:
    def __init__(self, tuning: TuningConfig, *, incremental: bool = False, lag_reduced: bool = False):
        self.initial_tuning = tuning
        self.snapshot = ControllerSnapshot.from_design(
            synthesize(tuning), lag_reduced=lag_reduced, incremental=incremental
        )
        self.observer_on = False
        self.law_on = False
        self._pending: list[tuple[str, dict]] = []
        self._init_increment = False
        self.y_prev = math.nan
        self.r_prev = math.nan
        self.u_lim_prev = math.nan
        self.u_lim_prev2 = math.nan
        self._r = math.nan
        self._y = math.nan
        self.flags: list[str] = []

    @property
    def incremental(self) -> bool:
        return self.snapshot.incremental

    @property
    def lag_reduced(self) -> bool:
        return self.snapshot.lag_reduced

    @property
    def tuning(self) -> TuningConfig:
        return self.snapshot.tuning

    def x_hat(self) -> np.ndarray:
        """Observer state in standard coordinates (NaN while disabled)."""
        if self.snapshot.eso_state is None or not self.observer_on:
            return np.full(self.tuning.order + 1, math.nan)
        return self.snapshot.x_hat_standard()

    # -- requests -----------------------------------------------------------
    def enable_observer(self):
        self._pending.append(("observer", {}))

    def enable_controller(self):
        self._pending.append(("controller", {}))

    def enable(self):
        self.enable_observer()
        self.enable_controller()

    def disable_controller(self):
        self._pending.append(("disable_controller", {}))

    def disable(self):
        self._pending.append(("disable", {}))

    def retune_closed_loop(self, **kw):
        self._pending.append(("retune_closed_loop", kw))

    def retune_observer(self, **kw):
        self._pending.append(("retune_observer", kw))

    def retune_b0(self, b0: float):
        self._pending.append(("retune_b0", {"new_b0": b0}))

    def seed_history(self, *, y: float, r: float, u_lim: float):
        """Pretend the loop has been resting at ``(y, r, u_lim)``."""
        self.y_prev = self._y = y
        self.r_prev = self._r = r
        self.u_lim_prev = self.u_lim_prev2 = u_lim
        ls = self.snapshot.law_state
        ls.r_prev, ls.u_lim_prev, ls.u_lim_prev2 = r, u_lim, u_lim

    # -- pipeline -----------------------------------------------------------
    def _have_history(self) -> bool:
        return not (math.isnan(self.y_prev) or math.isnan(self.u_lim_prev))

    def _apply_pending(self):
        snap = self.snapshot
        for kind, kw in self._pending:
            if kind == "observer":
                if not self._have_history():
                    raise ProtocolError("observer enable needs y(k-1) and u(k-1); commit a sample first")
                eso = transfer.init_eso_bumpless(
                    self.y_prev, self.u_lim_prev, snap.tuning, lag_reduced=snap.lag_reduced
                )
                snap = snap.copy_with(eso_state=eso)
                self.observer_on = True
            elif kind == "controller":
                if not self.observer_on:
                    raise ProtocolError("controller enabled before the observer")
                self.law_on = True
                self._init_increment = snap.incremental
            elif kind == "disable_controller":
                self.law_on = False
                snap.law_state.initialized = False
            elif kind == "disable":
                self.law_on = False
                self.observer_on = False
                snap.law_state.initialized = False
                snap = snap.copy_with(eso_state=None)
            else:
                snap = getattr(transfer, kind)(snap, **kw)
                if abs(self.r_prev - self.y_prev) > STATIONARY_RTOL * max(1.0, abs(self.y_prev)):
                    self.flags.append(f"{kind}:transient")
        self._pending.clear()
        self.snapshot = snap

    def update(self, r: float, y: float) -> float | None:
        """Run observer and control law for sample ``k``.

        Returns ``u(k)`` (non-incremental) or the desired increment
        ``du(k)`` (incremental), or ``None`` while the law is disabled.
        """
        if not (math.isfinite(r) and math.isfinite(y)):
            raise NumericFault(f"non-finite controller input r={r!r}, y={y!r}")
        self.flags = []
        if self._pending:
            self._apply_pending()
        snap = self.snapshot
        self._r, self._y = r, y
        if not self.observer_on:
            return None
        x_prev = snap.eso_state
        if snap.incremental:
            dx, x_new = eso_update_incremental(x_prev, snap.matrices, self.u_lim_prev, y)
        else:
            x_new = eso_update(x_prev, snap.matrices, self.u_lim_prev, y)
        if not self.law_on:
            self.snapshot = snap.copy_with(eso_state=x_new, law_state=snap.law_state)
            return None
        g = snap.gain_set
        if not snap.incremental:
            out = control_law(g, r, x_new)
            law_state = snap.law_state
        else:
            if self._init_increment:
                law_state = transfer.init_incremental_bumpless(
                    self.r_prev, x_prev, self.u_lim_prev2, g, u_lim_prev=self.u_lim_prev
                )
                self._init_increment = False
            else:
                law_state = snap.law_state
            out = control_law_incremental(g, law_state, r - self.r_prev, dx)
        self.snapshot = snap.copy_with(eso_state=x_new, law_state=law_state)
        return out

    def commit(self, u_lim: float) -> None:
        """Record the control value actually applied at sample ``k``."""
        if not math.isfinite(u_lim):
            raise NumericFault(f"non-finite applied control {u_lim!r}")
        self.y_prev, self.r_prev = self._y, self._r
        self.u_lim_prev2, self.u_lim_prev = self.u_lim_prev, u_lim
        ls = self.snapshot.law_state
        ls.record_applied(u_lim)
        ls.r_prev = self._r
