"""Command-line entry point: ``cyclemarket <command> ...``."""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import equilibrium, scenario, selftest
from .scenario import ConfigError, DemandFileError, ScenarioError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _load(args) -> scenario.ScenarioConfig:
    cfg = scenario.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, cfg) -> Path:
    return Path(args.out if args.out is not None else cfg.out_dir)


def _cmd_run(args) -> int:
    cfg = _load(args)
    outcomes = scenario.run_scenario(cfg)
    print(f"{'mechanism':<10}{'social_cost':>16}{'cycling_cost':>14}{'storage_profit':>16}  converged")
    for o in outcomes:
        print(f"{o.mechanism:<10}{o.social_cost:>16.4f}{o.cycling_cost:>14.4f}"
              f"{o.storage_profit:>16.4f}  {bool(o.dispatch.converged)}")
    for p in scenario.emit_reports(outcomes, _out_dir(args, cfg), args.format):
        print(f"wrote {p}")
    if args.check_orderings:
        from .settlement import ordering_failures
        failures = ordering_failures({o.mechanism: o for o in outcomes})
        return _report_failures(failures)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    result = scenario.run_sweep(cfg, workers=args.workers)
    for v, rows in result.by_point():
        costs = "  ".join(f"{m}={r.social_cost:.4f}" for m, r in rows.items())
        print(f"{result.param}={v:g}: {costs}")
    for p in scenario.emit_reports(result, _out_dir(args, cfg), args.format):
        print(f"wrote {p}")
    errors = [r for r in result.rows if r.error]
    for r in errors:
        print(f"point {result.param}={r.param_value:g} failed: {r.error}", file=sys.stderr)
    if args.check_orderings:
        return _report_failures(result.ordering_failures())
    return EXIT_CHECK_FAILED if errors else EXIT_OK


def _report_failures(failures) -> int:
    if failures:
        for f in failures:
            print(f"ORDERING FAILED {f}")
        return EXIT_CHECK_FAILED
    print("orderings hold")
    return EXIT_OK


def _cmd_equilibrium(args) -> int:
    cfg = _load(args)
    inst = cfg.instance()
    alphas, beta_hats = equilibrium.prosumer_bids(inst)
    intercepts = np.array([g.a for g in inst.generators])
    total = alphas.sum() + beta_hats.sum()
    np.set_printoptions(precision=6, suppress=True, linewidth=100)
    print(f"alpha = {alphas}")
    print(f"beta_hat = {beta_hats}")
    if np.isinf(total):
        print("delta = 0 (some storage bid is unbounded)")
    else:
        lam = (inst.demand + float(alphas @ intercepts)) / total
        print(f"delta = {1.0 / total:.9g}")
        if np.any(intercepts != 0.0):
            print("lambda = delta * (d + sum(alpha * a))  (affine generator bids)")
        print(f"lambda = {lam}")
    E = inst.storages[0].E if inst.storages else 1.0
    cert = equilibrium.alignment_condition(inst.demand, E)
    verdict = "holds" if cert.holds else "fails"
    print(f"alignment condition {verdict} (residual {cert.residual:.3e}, "
          f"enumeration {'complete' if cert.enumeration_complete else 'truncated'})")
    return EXIT_OK


def _cmd_validate(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfg = _load(args)
        inst = cfg.instance()
    problems = [str(w.message) for w in caught]
    d = inst.demand
    g_min = sum(g.g_min for g in inst.generators)
    g_max = sum(g.g_max for g in inst.generators)
    s_in = sum(-s.u_min for s in inst.storages)
    s_out = sum(s.u_max for s in inst.storages)
    if np.max(d) > g_max + s_out:
        problems.append(f"peak demand {np.max(d):g} exceeds total supply {g_max + s_out:g}")
    if np.min(d) < g_min - s_in:
        problems.append(f"minimum demand {np.min(d):g} is below must-run output {g_min - s_in:g}")
    print(f"horizon {cfg.horizon}, {len(inst.generators)} generator(s), "
          f"{len(inst.storages)} storage unit(s), mechanisms {', '.join(cfg.mechanisms)}")
    for p in problems:
        print(f"problem: {p}")
    print("valid" if not problems else "invalid")
    return EXIT_OK if not problems else EXIT_CHECK_FAILED


def _cmd_selftest(args) -> int:
    seed = 0 if args.seed is None else args.seed
    results = selftest.run(seed)
    report = selftest.format_report(results)
    sys.stdout.write(report)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "selftest.txt").write_text(report, encoding="utf-8")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyclemarket",
                                     description="Cycle-aware electricity market simulator.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: the config's out_dir)")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--check-orderings", action="store_true",
                        help="exit with status 1 if the mechanism orderings fail")
    common.add_argument("--format", choices=("csv", "plotdata"), default="csv")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in [
        ("run", _cmd_run, "run every configured mechanism once"),
        ("sweep", _cmd_sweep, "sweep storage capital cost or capacity"),
        ("equilibrium", _cmd_equilibrium, "print prosumer equilibrium bids and alignment verdict"),
        ("validate", _cmd_validate, "check a config for feasibility problems"),
    ]:
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("config", help="YAML scenario file")
        p.set_defaults(func=fn)
        if name == "sweep":
            p.add_argument("--workers", type=int, default=1, help="parallel sweep points")
    p = sub.add_parser("selftest", parents=[common], help="run seeded invariant checks")
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DemandFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
