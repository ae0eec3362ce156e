"""Magnitude/rate limiter and the limiting integrator."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import LimitSpecError

INF = math.inf


def clamp(x: float, lo: float, hi: float) -> float:
    if lo > hi:
        raise LimitSpecError(f"lower bound {lo!r} exceeds upper bound {hi!r}")
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@dataclass(frozen=True)
class LimitSpec:
    """Bounds on the control signal. Rate bounds are per sample."""

    u_min: float = -INF
    u_max: float = INF
    du_min: float = -INF
    du_max: float = INF

    def __post_init__(self):
        vals = (self.u_min, self.u_max, self.du_min, self.du_max)
        if any(math.isnan(v) for v in vals):
            raise LimitSpecError("limits must not be NaN")
        if self.u_min > self.u_max:
            raise LimitSpecError(f"u_min {self.u_min} > u_max {self.u_max}")
        if not self.du_min <= 0 <= self.du_max:
            raise LimitSpecError(f"rate bounds must bracket zero, got [{self.du_min}, {self.du_max}]")

    @classmethod
    def from_rates(cls, u_min=-INF, u_max=INF, rate_min=-INF, rate_max=INF, *, t_sample: float):
        """Build from rate bounds in units per second."""
        if not t_sample > 0:
            raise LimitSpecError(f"t_sample must be > 0, got {t_sample!r}")
        return cls(u_min, u_max, rate_min * t_sample, rate_max * t_sample)

    def with_rate(self, du_max: float, du_min: float | None = None) -> "LimitSpec":
        return LimitSpec(self.u_min, self.u_max, -du_max if du_min is None else du_min, du_max)

    def without_rate(self) -> "LimitSpec":
        return LimitSpec(self.u_min, self.u_max)

    @property
    def rate_limited(self) -> bool:
        return math.isfinite(self.du_min) or math.isfinite(self.du_max)

    @property
    def unlimited(self) -> bool:
        return not self.rate_limited and self.u_min == -INF and self.u_max == INF


@dataclass
class LimiterState:
    u_lim_prev: float = 0.0
    u_lim_prev2: float = 0.0

    @classmethod
    def start(cls, spec: LimitSpec, u0: float = 0.0) -> "LimiterState":
        u = clamp(u0, spec.u_min, spec.u_max)
        return cls(u, u)

    def push(self, u_lim: float) -> None:
        self.u_lim_prev2 = self.u_lim_prev
        self.u_lim_prev = u_lim


def limit_magnitude_rate(spec: LimitSpec, state: LimiterState, u: float) -> float:
    """Limit an absolute control request (non-incremental loops)."""
    step = u - state.u_lim_prev
    if spec.du_min <= step <= spec.du_max:
        # pass u itself through, not prev + (u - prev), so the identity
        # region is exact
        u_lim = clamp(u, spec.u_min, spec.u_max)
    else:
        u_lim = clamp(state.u_lim_prev + clamp(step, spec.du_min, spec.du_max), spec.u_min, spec.u_max)
    state.push(u_lim)
    return u_lim


def limiting_integrator(spec: LimitSpec, state: LimiterState, delta_u: float) -> float:
    """Accumulate a control increment under rate and magnitude limits."""
    step = clamp(delta_u, spec.du_min, spec.du_max)
    u_lim = clamp(state.u_lim_prev + step, spec.u_min, spec.u_max)
    state.push(u_lim)
    return u_lim
