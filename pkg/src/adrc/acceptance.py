"""Executable acceptance checks, shared by ``adrc selftest`` and the test suite.

Each ``check_*`` function runs one criterion at its stated tolerance and
returns a :class:`CheckResult`. ``faults`` injects deliberate defects so
the checks can be shown to fail (negative controls); the only hook today
is ``"lc"``, which corrupts the first observer gain by a factor 1 + 1e-3.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from math import comb

import mpmath
import numpy as np

from . import config as cfgmod
from .design import (
    Z_ESO_MIN,
    TuningConfig,
    build_eso_matrices,
    discretize,
    feedback_vector,
    observer_gains,
    suggest_b0,
    synthesize,
)
from .limiter import LimitSpec
from .sim import (
    ALL_VARIANTS,
    Event,
    NoiseConfig,
    Scenario,
    Variant,
    build_buck_model,
    run_scenario,
    saturation_exits,
    settling_time,
)

MP_DPS = 80
LC_FAULT = 1e-3


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.name}: {self.detail}"


@dataclass(frozen=True)
class Setup:
    """Packaged defaults, resolved once."""

    tuning: TuningConfig
    limits: LimitSpec
    rate: float | None
    noise: NoiseConfig
    pi: object
    cp: object

    @classmethod
    def load(cls, path=None) -> "Setup":
        cp = cfgmod.load_config(path)
        tuning = cfgmod.tuning_from_config(cp)
        limits, rate = cfgmod.limits_from_config(cp, tuning.t_sample)
        return cls(tuning, limits, rate, cfgmod.noise_from_config(cp),
                   cfgmod.pi_from_config(cp, tuning.t_sample), cp)

    def scenario(self, name: str) -> Scenario:
        return cfgmod.load_scenario(name, self.cp, self.tuning.t_sample)

    def run(self, s: Scenario, variant=None, *, noise=None, limits=None, **kw):
        return run_scenario(
            s,
            variant,
            tuning=self.tuning,
            limits=self.limits if limits is None else limits,
            noise=NoiseConfig() if noise is None else noise,
            pi_gains=self.pi,
            rate_limit=self.rate,
            **kw,
        )


# -- criterion 1: pole placement ---------------------------------------------


def random_tunings(n: int = 1000, seed: int = 20240611) -> list[TuningConfig]:
    """Valid tunings: order 1 or 2, t_settle in [1 ms, 10 s], k_eso in
    [3, 10], t_sample in [1 us, 10 ms] (log-uniform), b0 of either sign over
    eight decades, half via settling time and half via explicit gains.
    Draws whose observer pole falls to Z_ESO_MIN or below are redrawn."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        order = int(rng.integers(1, 3))
        t = 10 ** rng.uniform(-6, -2)
        t_settle = 10 ** rng.uniform(-3, 1)
        k_eso = float(rng.uniform(3, 10))
        b0 = float(10 ** rng.uniform(-2, 6) * rng.choice([-1.0, 1.0]))
        explicit = rng.random() < 0.5
        damping = rng.uniform(0.5, 2)
        s = (4.0 if order == 1 else 6.0) / t_settle
        if k_eso * s * t >= -math.log(Z_ESO_MIN) * 0.999:
            continue
        if not explicit:
            out.append(TuningConfig(order, b0, t, t_settle=t_settle, k_eso=k_eso))
        elif order == 1:
            out.append(TuningConfig(1, b0, t, k_p=s, k_eso=k_eso))
        else:
            out.append(TuningConfig(2, b0, t, k_p=s * s, k_d=2 * s * damping, k_eso=k_eso))
    return out


def mp_eigenvalues(a) -> list:
    """Eigenvalues of a 2x2 or 3x3 mpmath matrix from its characteristic
    polynomial (quadratic formula / Cardano), at the working precision."""
    n = a.rows
    tr = sum(a[i, i] for i in range(n))
    if n == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        s = mpmath.sqrt(mpmath.mpc(tr * tr - 4 * det))
        return [(tr + s) / 2, (tr - s) / 2]
    if n != 3:
        raise ValueError("only 2x2 and 3x3 matrices")
    m2 = sum(a[i, i] * a[j, j] - a[i, j] * a[j, i] for i in range(3) for j in range(i + 1, 3))
    det = mpmath.det(a)
    # depressed cubic t^3 + p t + q in lambda = t + tr/3
    p = m2 - tr * tr / 3
    q = -(2 * tr**3 / 27 - tr * m2 / 3 + det)
    c = mpmath.cbrt(-q / 2 + mpmath.sqrt(mpmath.mpc(q * q / 4 + p**3 / 27)))
    if c == 0:
        return [tr / 3] * 3
    w = mpmath.exp(2j * mpmath.pi / 3)
    return [tr / 3 + w**k * c - p / (3 * w**k * c) for k in range(3)]


def char_poly(a: np.ndarray) -> np.ndarray:
    """Monic characteristic polynomial from traces and minors (no eigen
    solver involved)."""
    n = a.shape[0]
    if n == 2:
        return np.array([1.0, -np.trace(a), a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]])
    m2 = sum(a[i, i] * a[j, j] - a[i, j] * a[j, i] for i in range(3) for j in range(i + 1, 3))
    return np.array([1.0, -np.trace(a), m2, -np.linalg.det(a)])


def _corrupt(l_c, faults):
    if "lc" not in faults:
        return l_c
    l_c = np.array(l_c)
    l_c[0] = l_c[0] * (1 + LC_FAULT)
    return l_c


def check_pole_placement(setup=None, faults=frozenset(), n: int = 1000, tol: float = 1e-9) -> CheckResult:
    worst_mp = worst_cp = worst_f64 = 0.0
    with mpmath.workdps(MP_DPS):
        for cfg in random_tunings(n):
            n_x = cfg.order + 1
            z = cfg.z_eso()
            # the design chain itself, evaluated with MP_DPS-digit scalars
            zm, tm, bm = mpmath.mpf(z), mpmath.mpf(cfg.t_sample), mpmath.mpf(cfg.b0)
            l_mp = _corrupt(observer_gains(cfg.order, zm, tm), faults)
            m_mp = build_eso_matrices(discretize(cfg.order, bm, tm), l_mp, np.ones(n_x))
            ev = mp_eigenvalues(mpmath.matrix(m_mp.a_eso.tolist()))
            worst_mp = max(worst_mp, max(float(abs(e - zm) / zm) for e in ev))
            # the float64 matrices the controller actually runs with
            d = synthesize(cfg)
            a = d.eso.a_eso
            if "lc" in faults:
                a = build_eso_matrices(d.model, _corrupt(d.l_c, faults), d.eso.w).a_eso
            ref = np.array([comb(n_x, k) * (-z) ** k for k in range(n_x + 1)])
            scale = np.array([comb(n_x, k) for k in range(n_x + 1)], dtype=float)
            worst_cp = max(worst_cp, float(np.max(np.abs(char_poly(a) - ref) / scale)))
            worst_f64 = max(worst_f64, float(np.max(np.abs(np.linalg.eigvals(a) - z)) / z))
    ok = worst_mp <= tol and worst_cp <= tol
    return CheckResult(
        1, "pole placement", ok,
        f"{n} tunings: max |lambda - z|/z = {worst_mp:.2e} ({MP_DPS}-digit design path), "
        f"float64 char-poly dev = {worst_cp:.2e} (tol {tol:g}); "
        f"float64 eigvals of the defective matrix: {worst_f64:.2e} (informational)",
        {"eig_rel": worst_mp, "charpoly": worst_cp, "float_eigvals": worst_f64},
    )


# -- criterion 2: variant equivalence ----------------------------------------


def equivalence_scenario(t_sample: float) -> Scenario:
    ev = (Event(10e-3, "reference", 260.0), Event(40e-3, "reference", 240.0), Event(70e-3, "reference", 250.0))
    return Scenario("equivalence", 10000 * t_sample, ev, start="adrc", t_sample=t_sample)


def check_variant_equivalence(setup: Setup, faults=frozenset(), tol: float = 1e-9) -> CheckResult:
    s = equivalence_scenario(setup.tuning.t_sample)
    noise = NoiseConfig(setup.noise.sigma or 1.0, setup.noise.seed)
    us = {str(v): setup.run(s, v, noise=noise, limits=LimitSpec()).u for v in ALL_VARIANTS}
    worst = 0.0
    names = list(us)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            ua, ub = us[a], us[b]
            rel = np.abs(ua - ub) / np.maximum(np.maximum(np.abs(ua), np.abs(ub)), 1e-300)
            worst = max(worst, float(rel.max()))
    return CheckResult(
        2, "four-variant equivalence", worst <= tol,
        f"{len(s.events)} steps, sigma={noise.sigma}, {s.n_samples} samples: max pairwise rel diff {worst:.2e} (tol {tol:g})",
        {"max_rel": worst},
    )


# -- criterion 3: rate limitation --------------------------------------------


def check_rate_limit(setup: Setup, faults=frozenset()) -> CheckResult:
    s = setup.scenario("a")
    t_on = next(e.t for e in s.events if e.kind == "rate_limit")
    bound = setup.rate * setup.tuning.t_sample
    ts = setup.run(s, noise=setup.noise)
    limited = ts.max_rate(t_on)
    free = replace(s, events=tuple(e for e in s.events if e.kind != "rate_limit"))
    unlimited = setup.run(free, noise=setup.noise).max_rate(t_on)
    ok = limited <= bound + 1e-12 and unlimited > bound
    return CheckResult(
        3, "rate limitation", ok,
        f"max |du_lim| after {t_on * 1e3:g} ms = {limited:.15g} A (bound {bound:g}); without limiter {unlimited:.4g} A",
        {"limited": limited, "unlimited": unlimited},
    )


# -- criterion 4: anti-windup ------------------------------------------------


def antiwindup_scenario(t_sample: float) -> Scenario:
    return Scenario("antiwindup", 40e-3, (Event(5e-3, "reference", 350.0),), start="adrc", t_sample=t_sample)


def replay_observer(ts, design) -> np.ndarray:
    """Recompute the standard-coordinate observer offline from the recorded
    applied control and measurement, starting from the first recorded state."""
    m = design.eso
    x = np.array(ts.xhat[0])
    out = [x]
    for k in range(1, len(ts)):
        x = m.a_eso @ x + m.b_eso * ts.u_lim[k - 1] + m.l_eso * ts.y_meas[k]
        out.append(x)
    return np.array(out)


def check_antiwindup(setup: Setup, faults=frozenset()) -> CheckResult:
    s = antiwindup_scenario(setup.tuning.t_sample)
    lo, hi = setup.limits.u_min, setup.limits.u_max
    d = synthesize(setup.tuning)
    rows, ok = [], True
    for v in ALL_VARIANTS:
        ts = setup.run(s, v, limits=LimitSpec(lo, hi))
        t_set = settling_time(ts, 5e-3)
        exits = saturation_exits(ts.u_lim, lo, hi)
        saturated = bool(np.any(ts.u_lim >= hi - 1e-12))
        replay = replay_observer(ts, d)
        scale = np.maximum(np.abs(ts.xhat).max(axis=0), 1e-300)
        dev = float(np.max(np.abs(replay - ts.xhat) / scale))
        good = saturated and math.isfinite(t_set) and exits <= 2 and dev <= 1e-9
        ok &= good
        rows.append(f"{v}: settle {t_set * 1e3:.3f} ms, exits {exits}, observer replay dev {dev:.1e}")
    return CheckResult(4, "anti-windup", ok, "step 250->350 V, [0, 5] A; " + "; ".join(rows))


# -- criterion 5: bumpless enable --------------------------------------------


def check_bumpless_enable(setup: Setup, faults=frozenset(), tol: float = 1e-9) -> CheckResult:
    s = setup.scenario("b")
    enables = ("enable_observer", "enable_controller", "enable")
    worst_bump = worst_innov = 0.0
    for v in ALL_VARIANTS:
        ts = setup.run(s, v)
        for b in ts.bumps:
            if b["kind"] in enables:
                worst_bump = max(worst_bump, b["bump"])
        for e in s.events:
            if e.kind in ("enable_observer", "enable"):
                k = s.sample_of(e.t)
                sl = slice(k, k + 5)
                innov = np.abs(ts.y_meas[sl] - ts.xhat[sl, 0]) / np.abs(ts.y_meas[sl])
                worst_innov = max(worst_innov, float(innov.max()))
    ok = worst_bump <= tol and worst_innov <= 1e-6
    return CheckResult(
        5, "bumpless enable", ok,
        f"max enable bump {worst_bump:.2e} A (tol {tol:g}), max |y - y_hat|/|y| over 5 samples {worst_innov:.2e} (tol 1e-6)",
        {"bump": worst_bump, "innovation": worst_innov},
    )


# -- criterion 6: PI <-> ADRC handover ----------------------------------------


def check_handover(setup: Setup, faults=frozenset(), tol: float = 1e-9) -> CheckResult:
    s = setup.scenario("c")
    T = setup.tuning.t_sample
    rate_ev = [e for e in s.events if e.kind == "rate_limit" and isinstance(e.value, float)]
    bound = (rate_ev[-1].value if rate_ev else setup.rate) * T
    stat = {"pi": 0, "adrc": 0}
    worst_stat = worst_trans = 0.0
    n_trans = 0
    for v in (x for x in ALL_VARIANTS if x.incremental):
        ts = setup.run(s, v)
        for b in ts.bumps:
            if b["kind"] not in ("pi", "adrc"):
                continue
            k = s.sample_of(b["t"])
            if abs(ts.r[k] - ts.y_true[k]) <= 1e-6 * abs(ts.y_true[k]):
                stat[b["kind"]] += 1
                worst_stat = max(worst_stat, b["bump"])
            else:
                n_trans += 1
                worst_trans = max(worst_trans, ts.max_rate(b["t"] - 5 * T, b["t"] + 5 * T))
    ok = min(stat.values()) > 0 and n_trans > 0 and worst_stat <= tol and worst_trans <= bound + 1e-12
    return CheckResult(
        6, "PI<->ADRC handover", ok,
        f"stationary handovers {stat}: max bump {worst_stat:.2e} A (tol {tol:g}); "
        f"{n_trans} mid-transient: max |du_lim| {worst_trans:.4g} A (bound {bound:g})",
        {"stationary": worst_stat, "transient": worst_trans},
    )


# -- criterion 7: bumpless retunes -------------------------------------------


def check_retunes(setup: Setup, faults=frozenset(), tol: float = 1e-9) -> CheckResult:
    s = setup.scenario("d")
    kinds = ("retune_observer", "retune_closed_loop", "reset_tuning")
    worst = 0.0
    for v in ALL_VARIANTS:
        ts = setup.run(s, v)
        got = [b for b in ts.bumps if b["kind"] in kinds]
        if len(got) != 3:
            worst = math.inf
        worst = max([worst] + [b["bump"] for b in got])
    t_obs = next(e.t for e in s.events if e.kind == "retune_observer")
    t_cl = next(e.t for e in s.events if e.kind == "retune_closed_loop")
    noisy = setup.run(s, noise=NoiseConfig(setup.noise.sigma or 1.0, setup.noise.seed))
    # last 10 ms of the nominal segment vs the last 10 ms of the halved-observer one
    sd_nom = float(np.std(noisy.u_lim[noisy.window(t_obs - 10e-3, t_obs)]))
    sd_slow = float(np.std(noisy.u_lim[noisy.window(t_cl - 10e-3, t_cl)]))
    ratio = sd_slow / sd_nom
    ok = worst <= tol and ratio <= 0.8
    return CheckResult(
        7, "bumpless retunes", ok,
        f"max retune bump {worst:.2e} A over 4 variants (tol {tol:g}); std(u) halved observer / nominal = {ratio:.3f} (<= 0.8)",
        {"bump": worst, "std_ratio": ratio},
    )


# -- criterion 8: tracking ---------------------------------------------------


def tracking_scenario(t_sample: float) -> Scenario:
    ev = (
        Event(5e-3, "reference", 260.0),
        Event(15e-3, "reference", 250.0),
        Event(25e-3, "reference", 50.0),
        Event(45e-3, "reference", 250.0),
    )
    return Scenario("tracking", 65e-3, ev, start="adrc", t_sample=t_sample)


def check_tracking(setup: Setup, faults=frozenset()) -> CheckResult:
    s = tracking_scenario(setup.tuning.t_sample)
    ts = setup.run(s, limits=LimitSpec(setup.limits.u_min, setup.limits.u_max))
    t = [e.t for e in s.events]
    small_up = settling_time(ts, t[0], t[1])
    small_down = settling_time(ts, t[1], t[2])
    big_down = settling_time(ts, t[2], t[3])
    big_up = settling_time(ts, t[3])
    hit_floor = bool(np.any(ts.u_lim[ts.window(t[2], t[3])] <= setup.limits.u_min + 1e-12))
    ok = all(1e-3 <= x <= 4e-3 for x in (small_up, small_down)) and hit_floor and big_down > big_up
    return CheckResult(
        8, "closed-loop tracking", ok,
        f"10 V steps settle in {small_up * 1e3:.3f} / {small_down * 1e3:.3f} ms (window [1, 4] ms); "
        f"250->50 V {big_down * 1e3:.3f} ms vs 50->250 V {big_up * 1e3:.3f} ms, u_min reached: {hit_floor}",
        {"up": small_up, "down": small_down, "big_down": big_down, "big_up": big_up},
    )


# -- criterion 9: b0 identification ------------------------------------------


def check_b0_identification(setup: Setup, faults=frozenset()) -> CheckResult:
    params = cfgmod.plant_from_config(setup.cp)
    plant = build_buck_model(params, setup.tuning.t_sample)
    gain = plant.dc_gain
    # dominant (slowest) pole of the simulated model
    tau = -1.0 / float(np.max(np.linalg.eigvals(plant.a).real))
    b0 = suggest_b0("first-order", gain, tau)
    rel = abs(b0 * params.c - 1.0)
    return CheckResult(
        9, "b0 identification", rel <= 1e-3,
        f"K = {gain:.6g}, T = {tau:.6g} s -> b0 = {b0:.6g}, 1/C = {1 / params.c:.6g} (rel {rel:.1e})",
        {"rel": rel},
    )


# -- criterion 10: determinism -----------------------------------------------


def check_determinism(setup: Setup, faults=frozenset()) -> CheckResult:
    same = []
    for name in cfgmod.scenario_names(setup.cp):
        s = setup.scenario(name)
        a = setup.run(s, noise=setup.noise).csv_text()
        b = setup.run(setup.scenario(name), noise=setup.noise).csv_text()
        same.append((name, a == b))
    ok = all(x for _, x in same)
    return CheckResult(
        10, "determinism", ok,
        ", ".join(f"{n}: {'identical' if x else 'DIFFERENT'}" for n, x in same) + f" (seed {setup.noise.seed})",
    )


CHECKS = (
    check_pole_placement,
    check_variant_equivalence,
    check_rate_limit,
    check_antiwindup,
    check_bumpless_enable,
    check_handover,
    check_retunes,
    check_tracking,
    check_b0_identification,
    check_determinism,
)


def run_check(fn, setup: Setup | None = None, faults=frozenset()) -> CheckResult:
    setup = setup or Setup.load()
    t0 = time.perf_counter()
    res = fn(setup, faults=frozenset(faults))
    res.seconds = time.perf_counter() - t0
    return res


def run_all(setup: Setup | None = None, faults=frozenset(), stop_at_first: bool = False, echo=None) -> list[CheckResult]:
    setup = setup or Setup.load()
    out = []
    for fn in CHECKS:
        res = run_check(fn, setup, faults)
        out.append(res)
        if echo:
            echo(res.line())
        if stop_at_first and not res.passed:
            break
    return out
