"""Command-line front end: ``adakrig {design,calibrate,adaptive,compare,diagnose}``.

Exit status: 0 success, 2 configuration error, 3 numerical error,
4 unconverged chains (files are still written), 5 budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .criteria import AuditLog
from .doe import Design, is_latin, min_intersite_distance
from .errors import (
    AdakrigError,
    ArgumentError,
    BudgetError,
    ConfigError,
    DegenerateDomainError,
    FitError,
    NumericalError,
)
from .experiment import (
    build_observations,
    calibrate,
    compare_runs,
    initial_design,
    load_config,
    read_run,
    run_adaptive,
    write_run,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_UNCONVERGED, EXIT_BUDGET = 0, 2, 3, 4, 5


def _config(args):
    config = load_config(args.config) if args.config else load_config({})
    overrides = {
        "seed": args.seed,
        "strategy": getattr(args, "strategy", None),
        "wimse.alpha": getattr(args, "alpha", None),
        "budget": getattr(args, "budget", None),
        "mcmc.threads": getattr(args, "threads", None),
    }
    return config.with_overrides(**overrides)


def cmd_design(args) -> int:
    config = _config(args)
    design = initial_design(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "design.csv").write_text(design.to_csv())
    meta = {
        "size": len(design),
        "delta": min_intersite_distance(design) if len(design) > 1 else None,
        "latin": is_latin(design.unit_points),
        "seed": config.seed,
        "domain": config.domain.to_dict(),
    }
    (out / "design.json").write_text(json.dumps(meta, indent=1))
    print(f"delta_D = {meta['delta']:.6g}" if meta["delta"] is not None else "delta_D undefined")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _config(args)
    path = Path(args.design)
    try:
        design = Design.from_csv(path.read_text(), config.domain, ())
    except OSError as exc:
        raise ConfigError("--design", f"cannot read {path}: {exc}") from exc
    if not design.has_evaluations:
        raise ConfigError("--design", f"{path} has no evaluation columns (h1, ...)")
    observations, _ = build_observations(config)
    result = calibrate(config, design, observations)
    result.audit = AuditLog()
    diag = write_run(args.out, config, result, "calibrate")
    _print_summary(diag)
    return EXIT_OK if diag["converged"] else EXIT_UNCONVERGED


def cmd_adaptive(args) -> int:
    config = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_adaptive(config, checkpoint_dir=out)
    diag = write_run(out, config, result, config.strategy)
    _print_summary(diag)
    return EXIT_OK if diag["converged"] else EXIT_UNCONVERGED


def cmd_compare(args) -> int:
    sample_size = 1000
    if args.config:
        sample_size = int(load_config(args.config).raw["compare"]["sample_size"])
    bench = Path(args.benchmark)
    if not bench.is_dir():
        raise ConfigError("--benchmark", f"benchmark run {bench} does not exist")
    rows = compare_runs(args.runs, bench, sample_size)
    buf = io.StringIO()
    fields = ["run", "strategy", "kl_to_benchmark", "q2", "evaluations", "converged"]
    writer = csv.DictWriter(buf, fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    lines = ["| run | strategy | KL to benchmark | Q2 | runs | converged |", "|---|---|---|---|---|---|"]
    for r in rows:
        q2 = "n/a" if r["q2"] is None else f"{r['q2']:.4f}"
        lines.append(
            f"| {r['run']} | {r['strategy']} | {r['kl_to_benchmark']:.4f} | {q2} "
            f"| {r['evaluations']} | {r['converged']} |"
        )
    summary = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(buf.getvalue())
        (out / "comparison.md").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    run = read_run(args.run_dir)
    diag = run["diagnostics"]
    print(f"converged: {str(diag['converged']).lower()}")
    print(f"burn-in: {diag['burn_in']}  iterations: {diag['iterations']}")
    print(f"MH acceptance rate: {diag['acceptance_rate']:.4f}")
    print("R-hat history (iteration, R-hat):")
    for t, r in diag["rhat_history"]:
        print(f"  {t:6d}  {r:.4f}")
    print("Q2 by design size:")
    for size, q2 in diag["q2_history"]:
        print(f"  {size:4d}  {'n/a' if q2 is None else f'{q2:.4f}'}")
    return EXIT_OK


def _print_summary(diag):
    q2 = "n/a" if diag["q2"] is None else f"{diag['q2']:.4f}"
    print(
        f"converged: {str(diag['converged']).lower()}  burn-in: {diag['burn_in']}  "
        f"design size: {diag['design_size']}  Q2: {q2}"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adakrig", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="experiment JSON file (defaults: toy problem)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--threads", type=int)

    p = sub.add_parser("design", help="write the initial maximin LHD")
    common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("calibrate", help="sample the posterior for an evaluated design")
    common(p)
    p.add_argument("--design", required=True, help="design CSV with evaluation columns")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("adaptive", help="sequential design enrichment and calibration")
    common(p)
    p.add_argument("--strategy", choices=["lhd", "mmse", "wimse", "ecd"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--budget", type=int)
    p.set_defaults(func=cmd_adaptive)

    p = sub.add_parser("compare", help="KL divergence of runs to a benchmark posterior")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="print convergence and Q2 diagnostics of a run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (NumericalError, FitError, DegenerateDomainError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ArgumentError, AdakrigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
