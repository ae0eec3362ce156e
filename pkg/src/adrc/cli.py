"""Command-line front end: ``adrc run | design | selftest``.

Exit codes: 0 success, 1 selftest failure, 2 invalid configuration,
3 numeric fault during simulation.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from .design import TuningConfig, synthesize
from .errors import AdrcError, ConfigError, NumericFault
from .limiter import LimitSpec
from .sim import NoiseConfig, Variant, build_buck_model, overshoot, run_scenario, settling_time, step_events

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file overlaid on the packaged defaults")
    g = p.add_argument_group("tuning overrides")
    g.add_argument("--order", type=int)
    g.add_argument("--b0", type=float)
    g.add_argument("--t-settle", type=cfgmod.parse_time, help="e.g. 2ms")
    g.add_argument("--k-p", type=float)
    g.add_argument("--k-d", type=float)
    g.add_argument("--k-eso", type=float)
    g.add_argument("--t-sample", type=cfgmod.parse_time, help="e.g. 10us")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adrc", description="Discrete linear ADRC toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write CSV")
    run.add_argument("--scenario", required=True, help="builtin a..d or path to a scenario INI")
    run.add_argument("--variant", help="(nonincremental|incremental)-(standard|lagreduced)")
    _add_config_args(run)
    g = run.add_argument_group("limits and noise")
    g.add_argument("--u-min", type=float)
    g.add_argument("--u-max", type=float)
    g.add_argument("--rate-limit", help="bound used by 'rate_limit on' events, e.g. 1A/ms")
    g.add_argument("--noise", type=float, metavar="SIGMA", help="measurement noise std (V)")
    g.add_argument("--seed", type=int, help="noise seed (falls back to $ADRC_SEED, then the config)")
    run.add_argument("--out", help="CSV output path (default: stdout summary only)")

    design = sub.add_parser("design", help="print the synthesized controller constants")
    _add_config_args(design)

    st = sub.add_parser("selftest", help="run the acceptance checks")
    st.add_argument("--inject-fault", choices=["lc"], action="append", default=[],
                    help="deliberately corrupt a quantity (negative control)")
    return ap


def _tuning(args, cp):
    keys = ("order", "b0", "t_settle", "k_p", "k_d", "k_eso", "t_sample")
    return cfgmod.tuning_from_config(cp, **{k: getattr(args, k) for k in keys})


def _fmt(x: float, unit: str = "") -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    if math.isinf(x):
        return "never"
    return f"{x:.6g}{unit}"


def cmd_run(args) -> int:
    try:
        cp = cfgmod.load_config(args.config)
        tuning = _tuning(args, cp)
        scenario = cfgmod.load_scenario(args.scenario, cp, tuning.t_sample)
        variant = Variant.parse(args.variant) if args.variant else scenario.default_variant
        spec, rate = cfgmod.limits_from_config(cp, tuning.t_sample)
        spec = LimitSpec(
            spec.u_min if args.u_min is None else args.u_min,
            spec.u_max if args.u_max is None else args.u_max,
        )
        if args.rate_limit is not None:
            rate = cfgmod.parse_rate(args.rate_limit)
        noise = cfgmod.noise_from_config(cp)
        seed = args.seed
        if seed is None and os.environ.get("ADRC_SEED"):
            try:
                seed = int(os.environ["ADRC_SEED"])
            except ValueError:
                raise ConfigError(f"ADRC_SEED must be an integer, got {os.environ['ADRC_SEED']!r}") from None
        noise = NoiseConfig(noise.sigma if args.noise is None else args.noise, noise.seed if seed is None else seed)
        plant_model = build_buck_model(cfgmod.plant_from_config(cp), tuning.t_sample)
        pi = cfgmod.pi_from_config(cp, tuning.t_sample)
        scenario.validate(variant)
    except (AdrcError, ValueError) as e:
        print(f"adrc run: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        ts = run_scenario(
            scenario, variant, tuning, spec, noise, pi_gains=pi, plant=plant_model, rate_limit=rate
        )
    except NumericFault as e:
        print(f"adrc run: numeric fault: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except AdrcError as e:
        print(f"adrc run: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    if args.out:
        with open(args.out, "w", newline="") as fh:
            ts.to_csv(fh)
    print(f"scenario {ts.scenario}, variant {ts.variant}, {len(ts)} samples, noise sigma={noise.sigma:g} seed={noise.seed}")
    steps = step_events(scenario)
    for i, t in enumerate(steps):
        t_end = steps[i + 1] if i + 1 < len(steps) else None
        print(
            f"  step at {t * 1e3:g} ms to {ts.r[scenario.sample_of(t)]:g}: "
            f"settling {_fmt(settling_time(ts, t, t_end) * 1e3, ' ms')}, "
            f"overshoot {_fmt(100 * overshoot(ts, t, t_end), ' %')}"
        )
    print(f"  max |du_lim| per sample: {ts.max_rate():.17g} A")
    for b in ts.bumps:
        print(f"  bump at {b['t'] * 1e3:g} ms ({b['label']}): {b['bump']:.3e} A")
    if args.out:
        print(f"  wrote {args.out}")
    return EXIT_OK


def cmd_design(args) -> int:
    try:
        cp = cfgmod.load_config(args.config)
        tuning = _tuning(args, cp)
        d = synthesize(tuning)
    except (AdrcError, ValueError) as e:
        print(f"adrc design: invalid tuning: {e}", file=sys.stderr)
        return EXIT_CONFIG
    g = d.gains
    lag = d.matrices(lag_reduced=True)
    np.set_printoptions(precision=10)
    print(f"order {tuning.order}, b0 = {tuning.b0:g}, T = {tuning.t_sample:g} s")
    print(f"closed-loop pole s_cl = {g.s_cl:.10g} rad/s, observer pole z_eso = {d.z_eso:.10g}")
    print("A_ESO =\n" + str(d.eso.a_eso))
    print("lag-reduced A_ESO =\n" + str(lag.a_eso))
    print("--")
    kv = {"order": tuning.order, "b0": tuning.b0, "t_sample": tuning.t_sample, "k_p": g.k_p}
    if g.k_d is not None:
        kv["k_d"] = g.k_d
    kv.update(s_cl=g.s_cl, z_eso=d.z_eso)
    for name, vec in (("l_c", d.l_c), ("w", d.eso.w), ("b_eso", d.eso.b_eso), ("t_inv", d.transform.diag)):
        kv[name] = ",".join(f"{v:.17g}" for v in vec)
    kv["a_eso"] = ";".join(",".join(f"{v:.17g}" for v in row) for row in d.eso.a_eso)
    kv["a_eso_lagreduced"] = ";".join(",".join(f"{v:.17g}" for v in row) for row in lag.a_eso)
    kv["b_eso_lagreduced"] = ",".join(f"{v:.17g}" for v in lag.b_eso)
    kv["l_eso_lagreduced"] = ",".join(f"{v:.17g}" for v in lag.l_eso)
    for k, v in kv.items():
        print(f"{k}={v:.17g}" if isinstance(v, float) else f"{k}={v}")
    return EXIT_OK


def _design_examples() -> list[str]:
    """Spot values of the nominal design; returns failure messages."""
    d = synthesize(TuningConfig(1, 50000.0, 1e-5, t_settle=2e-3))
    fails = []
    if not math.isclose(d.gains.k_p, 2000.0, rel_tol=1e-12):
        fails.append(f"k_p = {d.gains.k_p}, expected 2000")
    if not math.isclose(d.z_eso, math.exp(-0.1), rel_tol=1e-12):
        fails.append(f"z_eso = {d.z_eso}, expected exp(-0.1)")
    if not np.allclose(d.l_c, [0.18126925, 905.5917], rtol=1e-7):
        fails.append(f"l_c = {d.l_c}")
    return fails


def cmd_selftest(args) -> int:
    from . import acceptance

    faults = frozenset(args.inject_fault)
    fails = _design_examples()
    print(f"[{'FAIL' if fails else 'PASS'}] design examples" + (f": {'; '.join(fails)}" if fails else ""))
    if fails:
        print("selftest FAILED: design examples", file=sys.stderr)
        return EXIT_FAIL
    results = acceptance.run_all(faults=faults, stop_at_first=True, echo=print)
    bad = [r for r in results if not r.passed]
    if bad:
        print(f"selftest FAILED: criterion {bad[0].number} ({bad[0].name})", file=sys.stderr)
        return EXIT_FAIL
    print("selftest passed")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "design": cmd_design, "selftest": cmd_selftest}[args.cmd](args)


if __name__ == "__main__":
    sys.exit(main())
