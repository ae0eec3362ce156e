"""Deterministic fixed-step closed-loop simulation.

The plant is an LTI model discretised exactly (ZOH) at the controller
sample time. Per sample ``k`` the loop runs: scheduled events, measure
``y(k)``, controller update, limiter, record, advance the plant under the
held ``u_lim(k)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.linalg
import scipy.signal

from .controller import AdrcController
from .design import TuningConfig
from .errors import NumericFault, ScenarioError
from .limiter import (
    LimiterState,
    LimitSpec,
    clamp,
    limit_magnitude_rate,
    limiting_integrator,
)


# -- plant ------------------------------------------------------------------


@dataclass(frozen=True)
class BuckConverterParams:
    """Buck converter in peak current-mode control, averaged model."""

    l: float = 1e-3
    c: float = 20e-6
    r_esr: float = 10e-3
    r: float = 100.0
    v_in: float = 400.0
    q: float = 1.0
    t_switch: float = 1e-5

    def __post_init__(self):
        for name in ("l", "c", "r", "v_in", "q", "t_switch"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if not (math.isfinite(self.r_esr) and self.r_esr >= 0):
            raise ValueError(f"r_esr must be >= 0, got {self.r_esr!r}")

    @property
    def omega_n(self) -> float:
        return math.pi / self.t_switch

    @property
    def k(self) -> float:
        return 1.0 / (1.0 + self.r / (self.l * self.omega_n * self.q))

    @property
    def dc_gain(self) -> float:
        return self.k * self.r

    @property
    def tau_dominant(self) -> float:
        return self.k * self.r * self.c


def _zoh(a: np.ndarray, b: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    n = a.shape[0]
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = a
    m[:n, n] = b
    e = scipy.linalg.expm(m * t)
    return e[:n, :n], e[:n, n]


class LtiPlant:
    """SISO continuous LTI plant simulated with an exact ZOH.

    ``num``/``den`` hold the transfer function (descending powers of s);
    ``(a, b, c)`` is the state-space realisation actually simulated.
    """

    def __init__(self, num, den, a, b, c, t_step: float):
        self.num = np.atleast_1d(np.asarray(num, dtype=float))
        self.den = np.atleast_1d(np.asarray(den, dtype=float))
        if len(np.trim_zeros(self.num, "f")) > len(np.trim_zeros(self.den, "f")):
            raise ValueError("improper transfer function")
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float).ravel()
        self.c = np.asarray(c, dtype=float).ravel()
        self.t_step = t_step
        self.ad, self.bd = _zoh(self.a, self.b, t_step)
        self.x = np.zeros(len(self.b))

    @classmethod
    def from_tf(cls, num, den, t_step: float) -> "LtiPlant":
        a, b, c, d = scipy.signal.tf2ss(num, den)
        if np.any(d != 0):
            raise ValueError("only strictly proper plants are supported")
        return cls(num, den, a, b, c, t_step)

    def resampled(self, t_step: float) -> "LtiPlant":
        return LtiPlant(self.num, self.den, self.a, self.b, self.c, t_step)

    @property
    def dc_gain(self) -> float:
        return float(-self.c @ np.linalg.solve(self.a, self.b))

    def reset(self):
        self.x = np.zeros(len(self.b))

    def set_equilibrium(self, u: float):
        """Place the state at rest under the constant input ``u``."""
        n = len(self.b)
        self.x = np.linalg.solve(np.eye(n) - self.ad, self.bd * u)

    def output(self) -> float:
        return float(self.c @ self.x)

    def step(self, u: float) -> float:
        """Advance one step under the held input ``u``; return the new output."""
        self.x = self.ad @ self.x + self.bd * u
        return float(self.c @ self.x)


def buck_transfer_function(p: BuckConverterParams) -> tuple[np.ndarray, np.ndarray]:
    wn, q, k = p.omega_n, p.q, p.k
    num = k * p.r * np.array([p.r_esr * p.c, 1.0])
    den = np.polymul([k * p.r * p.c, 1.0], [1.0 / wn**2, 1.0 / (wn * q), 1.0])
    return np.trim_zeros(num, "f"), den


def build_buck_model(p: BuckConverterParams = BuckConverterParams(), t_step: float | None = None) -> LtiPlant:
    """Control-to-output model ``v_o / i_c`` of the converter.

    Realised as the current-loop second-order block in series with the
    output-filter lag, which keeps the state matrix well scaled.
    """
    wn, q = p.omega_n, p.q
    g = p.dc_gain
    lag = p.tau_dominant
    lead = p.r_esr * p.c
    # states: current-loop output, its scaled derivative, output-filter lag
    a = np.array(
        [
            [0.0, wn, 0.0],
            [-wn, -wn / q, 0.0],
            [1.0 / lag, 0.0, -1.0 / lag],
        ]
    )
    b = np.array([0.0, wn, 0.0])
    c = np.array([g * lead / lag, 0.0, g * (1.0 - lead / lag)])
    num, den = buck_transfer_function(p)
    return LtiPlant(num, den, a, b, c, p.t_switch if t_step is None else t_step)


# -- noise ------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be >= 0, got {self.sigma!r}")


def gaussian_noise(cfg: NoiseConfig, chunk: int = 4096) -> Iterator[float]:
    """Endless deterministic stream of N(0, sigma^2) samples."""
    if cfg.sigma == 0:
        while True:
            yield 0.0
    rng = np.random.default_rng(cfg.seed)
    while True:
        yield from rng.normal(0.0, cfg.sigma, chunk).tolist()


def noise_samples(cfg: NoiseConfig, n: int) -> np.ndarray:
    if cfg.sigma == 0:
        return np.zeros(n)
    return np.random.default_rng(cfg.seed).normal(0.0, cfg.sigma, n)


# -- incremental PI -----------------------------------------------------------


@dataclass(frozen=True)
class PIGains:
    k_p: float
    k_i: float
    t_sample: float


@dataclass
class PIState:
    e_prev: float = 0.0
    initialized: bool = False


def pi_step_incremental(gains: PIGains, e: float, state: PIState) -> float:
    """Velocity-form PI increment."""
    if not state.initialized:
        state.e_prev = e
        state.initialized = True
    du = gains.k_p * (e - state.e_prev) + gains.k_i * gains.t_sample * e
    state.e_prev = e
    return du


# -- scenarios --------------------------------------------------------------


EVENT_KINDS = {
    "reference",
    "manual",
    "enable_observer",
    "enable_controller",
    "enable",
    "disable",
    "pi",
    "adrc",
    "retune_closed_loop",
    "retune_observer",
    "retune_b0",
    "reset_tuning",
    "rate_limit",
    "magnitude_limit",
    "disturbance",
}
# events whose instant gets a bump metric
TRANSFER_EVENTS = EVENT_KINDS - {"reference", "disturbance", "rate_limit", "magnitude_limit", "manual"}


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    value: object = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind {self.kind!r}")

    @property
    def label(self) -> str:
        return self.kind if self.value is None else f"{self.kind}={self.value}"


@dataclass(frozen=True)
class Variant:
    incremental: bool = False
    lag_reduced: bool = False

    @classmethod
    def parse(cls, text: str) -> "Variant":
        parts = {p.strip().lower() for p in text.replace("+", "-").replace("/", "-").split("-") if p.strip()}
        inc = parts & {"incremental", "nonincremental"}
        coords = parts & {"standard", "lagreduced"}
        if len(inc) != 1 or len(coords) > 1 or parts - inc - coords:
            raise ScenarioError(
                f"variant {text!r} must be (nonincremental|incremental)[-(standard|lagreduced)]"
            )
        return cls("incremental" in inc, "lagreduced" in coords)

    def __str__(self):
        return f"{'incremental' if self.incremental else 'nonincremental'}-" + (
            "lagreduced" if self.lag_reduced else "standard"
        )


ALL_VARIANTS = tuple(Variant(i, l) for i in (False, True) for l in (False, True))


@dataclass(frozen=True)
class Scenario:
    """Declarative experiment script.

    The loop starts at rest at output ``y0`` either in manual mode
    (``start="manual"``) or with ADRC already running (``start="adrc"``).
    """

    name: str
    horizon: float
    events: tuple[Event, ...] = ()
    y0: float = 250.0
    start: str = "manual"
    t_sample: float = 1e-5
    default_variant: Variant = Variant()

    def __post_init__(self):
        if self.start not in ("manual", "adrc", "pi"):
            raise ScenarioError(f"unknown start mode {self.start!r}")
        if not (self.horizon > 0 and self.t_sample > 0):
            raise ScenarioError("horizon and t_sample must be positive")
        times = [e.t for e in self.events]
        if times != sorted(times):
            raise ScenarioError("events must be time-sorted")
        if any(t < 0 or t > self.horizon for t in times):
            raise ScenarioError("event outside the simulated horizon")

    @property
    def n_samples(self) -> int:
        return int(round(self.horizon / self.t_sample))

    def sample_of(self, t: float) -> int:
        return int(round(t / self.t_sample))

    def validate(self, variant: Variant) -> None:
        """Check the event script against the loop's lifecycle rules."""
        observer = law = self.start == "adrc"
        for ev in self.events:
            k = ev.kind
            if k == "enable_observer":
                observer = True
            elif k == "enable":
                observer = law = True
            elif k in ("enable_controller", "adrc"):
                if not observer:
                    raise ScenarioError(f"t={ev.t}: ADRC law enabled before its observer")
                law = True
            elif k == "disable":
                observer = law = False
            elif k == "manual":
                law = False
            elif k == "pi":
                if not variant.incremental:
                    raise ScenarioError("PI handover needs an incremental ADRC variant (shared integrator)")
                law = False
            elif k.startswith("retune") or k == "reset_tuning":
                if not observer:
                    raise ScenarioError(f"t={ev.t}: retune while ADRC is disabled")


@dataclass
class TimeSeries:
    t: np.ndarray
    r: np.ndarray
    y_true: np.ndarray
    y_meas: np.ndarray
    u: np.ndarray
    u_lim: np.ndarray
    xhat: np.ndarray
    controller: list[str]
    event: list[str]
    bumps: list[dict] = field(default_factory=list)
    scenario: str = ""
    variant: str = ""

    def __len__(self):
        return len(self.t)

    def window(self, t0: float, t1: float) -> slice:
        k0 = int(np.searchsorted(self.t, t0 - 1e-12))
        k1 = int(np.searchsorted(self.t, t1 - 1e-12))
        return slice(k0, k1)

    def max_rate(self, t0: float = -math.inf, t1: float = math.inf) -> float:
        """Largest per-sample |u_lim(k) - u_lim(k-1)| with k in [t0, t1)."""
        d = np.abs(np.diff(self.u_lim))
        tk = self.t[1:]
        sel = (tk >= t0 - 1e-12) & (tk < t1 - 1e-12)
        return float(d[sel].max()) if sel.any() else 0.0

    def csv_header(self) -> list[str]:
        n = self.xhat.shape[1]
        return ["t", "r", "y_true", "y_meas", "u", "u_lim", *(f"xhat_{i + 1}" for i in range(n)), "controller", "event"]

    def to_csv(self, fh) -> None:
        """Write every channel; floats carry 17 significant digits so they
        round-trip exactly."""
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(self.csv_header())
        cols = np.column_stack([self.t, self.r, self.y_true, self.y_meas, self.u, self.u_lim, self.xhat])
        for row, tag, ev in zip(cols.tolist(), self.controller, self.event):
            wr.writerow([*(format(v, ".17g") for v in row), tag, ev])

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    def bump(self, kind: str, t: float) -> float:
        for b in self.bumps:
            if b["kind"] == kind and abs(b["t"] - t) < 1e-12:
                return b["bump"]
        raise KeyError((kind, t))


def plant_equilibrium_input(plant: LtiPlant, y: float) -> float:
    return y / plant.dc_gain


def run_scenario(
    s: Scenario,
    variant: Variant | None = None,
    tuning: TuningConfig | None = None,
    limits: LimitSpec | None = None,
    noise: NoiseConfig = NoiseConfig(),
    *,
    pi_gains: PIGains | None = None,
    plant: LtiPlant | None = None,
    rate_limit: float | None = None,
) -> TimeSeries:
    """Simulate ``s`` and return every recorded channel.

    ``limits`` gives the magnitude bounds (and any rate bound active from
    the start). ``rate_limit`` (units per second) is the bound switched on
    by ``rate_limit`` events that carry no rate of their own.
    """
    variant = s.default_variant if variant is None else variant
    s.validate(variant)
    T = s.t_sample
    plant = build_buck_model(t_step=T) if plant is None else plant
    if not math.isclose(plant.t_step, T, rel_tol=1e-12):
        raise ScenarioError("plant step differs from the scenario sample time")
    tuning = tuning or TuningConfig(order=1, b0=50000.0, t_sample=T, t_settle=2e-3)
    if not math.isclose(tuning.t_sample, T, rel_tol=1e-12):
        raise ScenarioError("tuning t_sample differs from the scenario sample time")
    spec = limits or LimitSpec()
    if any(e.kind == "pi" for e in s.events) or s.start == "pi":
        if pi_gains is None:
            raise ScenarioError("scenario uses PI control but no PI gains were given")

    ctrl = AdrcController(tuning, incremental=variant.incremental, lag_reduced=variant.lag_reduced)
    u_star = plant_equilibrium_input(plant, s.y0)
    plant.set_equilibrium(u_star)
    lim_state = LimiterState(u_star, u_star)
    r = s.y0
    manual_u = u_star
    mode = s.start
    pi_state = PIState()
    disturbance = 0.0
    ctrl.seed_history(y=plant.output(), r=r, u_lim=u_star)
    if s.start == "adrc":
        ctrl.enable()
    initial = tuning

    n = s.n_samples + 1
    order = tuning.order
    rec_t = np.arange(n) * T
    rec = {k: np.empty(n) for k in ("r", "y_true", "y_meas", "u", "u_lim")}
    rec_x = np.empty((n, order + 1))
    tags: list[str] = []
    ev_col: list[str] = []
    bumps: list[dict] = []
    noise_v = noise_samples(noise, n)

    by_sample: dict[int, list[Event]] = {}
    for ev in s.events:
        by_sample.setdefault(s.sample_of(ev.t), []).append(ev)

    for k in range(n):
        labels = []
        for ev in by_sample.get(k, ()):
            labels.append(ev.label)
            kind, val = ev.kind, ev.value
            if kind == "reference":
                r = float(val)
            elif kind == "manual":
                mode = "manual"
                if val is not None:
                    manual_u = float(val)
                else:
                    manual_u = lim_state.u_lim_prev
                if ctrl.law_on:
                    ctrl.disable_controller()
            elif kind == "enable_observer":
                ctrl.enable_observer()
            elif kind in ("enable_controller", "adrc"):
                ctrl.enable_controller()
                mode = "adrc"
            elif kind == "enable":
                ctrl.enable()
                mode = "adrc"
            elif kind == "disable":
                ctrl.disable()
                mode = "manual"
                manual_u = lim_state.u_lim_prev
            elif kind == "pi":
                if ctrl.law_on:
                    ctrl.disable_controller()
                mode = "pi"
                pi_state = PIState(e_prev=ctrl.r_prev - ctrl.y_prev, initialized=True)
            elif kind == "retune_closed_loop":
                ctrl.retune_closed_loop(**_retune_args(val, ctrl.tuning, "t_settle"))
            elif kind == "retune_observer":
                ctrl.retune_observer(**_retune_args(val, ctrl.tuning, "k_eso"))
            elif kind == "retune_b0":
                ctrl.retune_b0(_retune_args(val, ctrl.tuning, "b0")["b0"])
            elif kind == "reset_tuning":
                _queue_reset(ctrl, initial)
            elif kind == "rate_limit":
                rate = rate_limit if val is True or val is None else val
                if rate is None:
                    raise ScenarioError(f"t={ev.t}: rate_limit switched on but no rate configured")
                spec = spec.without_rate() if rate is False or rate == 0 else spec.with_rate(float(rate) * T)
            elif kind == "magnitude_limit":
                lo, hi = val
                spec = LimitSpec(lo, hi, spec.du_min, spec.du_max)
            elif kind == "disturbance":
                disturbance = float(val)

        y_true = plant.output()
        y_meas = y_true + noise_v[k]
        out = ctrl.update(r, y_meas)
        labels.extend(ctrl.flags)

        if mode == "manual":
            u = manual_u
            u_lim = clamp(u, spec.u_min, spec.u_max)
            lim_state.push(u_lim)
        elif mode == "pi":
            du = pi_step_incremental(pi_gains, r - y_meas, pi_state)
            u = lim_state.u_lim_prev + du
            u_lim = limiting_integrator(spec, lim_state, du)
        elif variant.incremental:
            u = lim_state.u_lim_prev + out
            u_lim = limiting_integrator(spec, lim_state, out)
        else:
            u = out
            u_lim = limit_magnitude_rate(spec, lim_state, u)
        if not math.isfinite(u_lim):
            raise NumericFault(f"control signal became non-finite at t={k * T}")
        ctrl.commit(u_lim)

        rec["r"][k] = r
        rec["y_true"][k] = y_true
        rec["y_meas"][k] = y_meas
        rec["u"][k] = u
        rec["u_lim"][k] = u_lim
        rec_x[k] = ctrl.x_hat()
        tags.append(_tag(mode, ctrl))
        ev_col.append(";".join(labels))
        for ev in by_sample.get(k, ()):
            if ev.kind in TRANSFER_EVENTS and k > 0:
                bumps.append(
                    {"t": k * T, "kind": ev.kind, "label": ev.label, "bump": abs(u_lim - rec["u_lim"][k - 1])}
                )
        plant.step(u_lim + disturbance)

    return TimeSeries(
        t=rec_t,
        r=rec["r"],
        y_true=rec["y_true"],
        y_meas=rec["y_meas"],
        u=rec["u"],
        u_lim=rec["u_lim"],
        xhat=rec_x,
        controller=tags,
        event=ev_col,
        bumps=bumps,
        scenario=s.name,
        variant=str(variant),
    )


def _tag(mode: str, ctrl: AdrcController) -> str:
    if mode == "adrc":
        return "adrc"
    if ctrl.observer_on:
        return f"{mode}+eso"
    return mode


def _retune_args(val, tuning: TuningConfig, key: str) -> dict:
    """Event payloads are either an absolute value or ``("x", factor)``."""
    if isinstance(val, dict):
        return val
    if isinstance(val, tuple) and val and val[0] == "x":
        factor = float(val[1])
        if key == "t_settle":
            t_settle = tuning.t_settle
            if t_settle is None:
                raise ScenarioError("relative settling-time change needs a t_settle tuning")
            return {"t_settle": t_settle * factor}
        if key == "k_eso":
            # scale the observer bandwidth itself, wherever it currently sits
            s_eso = tuning.observer_s_pole() * factor
            return {"z_eso": math.exp(s_eso * tuning.t_sample)}
        return {"b0": tuning.b0 * factor}
    return {key: float(val)}


def _queue_reset(ctrl: AdrcController, initial: TuningConfig):
    cur = ctrl.tuning
    if cur.b0 != initial.b0:
        ctrl.retune_b0(initial.b0)
    ctrl.retune_closed_loop(
        **({"t_settle": initial.t_settle} if initial.t_settle is not None else {"k_p": initial.k_p, "k_d": initial.k_d})
    )
    if initial.s_eso is not None:
        ctrl.retune_observer(z_eso=math.exp(initial.s_eso * initial.t_sample))
    else:
        ctrl.retune_observer(k_eso=initial.k_eso)


# -- metrics ----------------------------------------------------------------


def settling_time(ts: TimeSeries, t_step: float, t_end: float | None = None, band: float = 0.02,
                  channel: str = "y_true") -> float:
    """Time from ``t_step`` until the output enters and stays in a band of
    ``band * |step size|`` around the new reference. ``inf`` if never."""
    sl = ts.window(t_step, ts.t[-1] + ts.t[1] if t_end is None else t_end)
    k0 = sl.start
    r_new = ts.r[k0]
    r_old = ts.r[k0 - 1] if k0 > 0 else r_new
    tol = band * abs(r_new - r_old) if r_new != r_old else band * abs(r_new)
    y = getattr(ts, channel)[sl]
    outside = np.nonzero(np.abs(y - r_new) > tol)[0]
    if len(outside) == 0:
        return 0.0
    last = outside[-1]
    if last == len(y) - 1:
        return math.inf
    return float(ts.t[k0 + last + 1] - ts.t[k0])


def overshoot(ts: TimeSeries, t_step: float, t_end: float | None = None, channel: str = "y_true") -> float:
    """Peak overshoot past the new reference, relative to the step size."""
    sl = ts.window(t_step, ts.t[-1] + ts.t[1] if t_end is None else t_end)
    k0 = sl.start
    r_new, r_old = ts.r[k0], ts.r[k0 - 1]
    step = r_new - r_old
    if step == 0:
        return 0.0
    y = getattr(ts, channel)[sl]
    peak = np.max((y - r_new) * np.sign(step))
    return max(0.0, float(peak / abs(step)))


def saturation_exits(u_lim: np.ndarray, lo: float, hi: float, tol: float = 1e-12) -> int:
    """Number of transitions from a magnitude limit back into the interior."""
    sat = (u_lim <= lo + tol) | (u_lim >= hi - tol)
    return int(np.sum(sat[:-1] & ~sat[1:]))


def step_events(s: Scenario) -> list[float]:
    return [e.t for e in s.events if e.kind == "reference"]
