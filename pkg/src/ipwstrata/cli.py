"""Command-line entry point: ``ipwstrata <command> ...``.

Commands:
  validate         check a population JSON file
  exact            closed-form per-stratum variance table (CSV)
  simulate         Monte Carlo report (JSON)
  figure           data behind the variance-vs-propensity figures (CSV)
  appendix-check   grid audit of the merged-cell variance inequality (JSON)

Exit codes: 0 success, 1 validation or audit failure, 2 usage or parse error.
Every output carries a metadata envelope (command options, population, seed,
tool version) sufficient to reproduce it; CSV outputs put it on a leading
``#`` comment line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .moments import (
    aggregate_variance,
    appendix_polynomial_chain,
    collapsed_pair_gap,
    stratum_variances,
    variance_difference,
)
from .simulate import OutcomeModel, SimConfig, run_monte_carlo, sweep
from .strata import (
    PopulationFormatError,
    PopulationSpec,
    StratumSpec,
    WeightingScheme,
    load_population,
    validate,
)

SEED_ENV = "IPWSTRATA_SEED"
TOOL = "ipwstrata"
GAP_TOLERANCE = -1e-15
G1_TOLERANCE = -1e-12

# Figure defaults: cell size and arm variances shared by both figures.
FIG_N_TOTAL = 17
FIG_VAR1 = 4.0
FIG_VAR0 = 16.0
FIG1_LEFT_MU = (0.0, 0.0)
FIG1_RIGHT_MU = (1.0, 3.0)


class UsageError(Exception):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(x)
    return format(float(x), ".17g")


def p_grid(points: int) -> list[float]:
    """``points`` equally spaced interior points of (0, 1): i/(points+1)."""
    if points < 1:
        raise UsageError("--grid-points must be >= 1")
    return [i / (points + 1) for i in range(1, points + 1)]


def _envelope(command: dict, population, seed, result) -> dict:
    return {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "population": population,
        "seed": seed,
        "environment": {SEED_ENV: os.environ.get(SEED_ENV)},
        "result": result,
    }


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _csv_text(meta: dict, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def _read_population(path: str) -> PopulationSpec:
    try:
        return load_population(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except PopulationFormatError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _require_valid(pop: PopulationSpec) -> int:
    problems = validate(pop)
    for v in problems:
        print(v, file=sys.stderr)
    return 1 if problems else 0


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _schemes(text: str) -> list[WeightingScheme]:
    try:
        return [WeightingScheme.parse(s.strip()) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_validate(args) -> int:
    pop = _read_population(args.population)
    problems = validate(pop)
    for v in problems:
        print(v)
    if not problems:
        print(f"ok: {len(pop)} strata, N={pop.n_total}")
    return 1 if problems else 0


def cmd_exact(args) -> int:
    pop = _read_population(args.population)
    if _require_valid(pop):
        return 1
    mode = "weighted" if args.weighted else "unweighted"
    header = ["label", "v_true", "v_est", "mean_true", "mean_est", "difference"]
    rows = []
    stats = []
    for s in pop.strata:
        sv = stratum_variances(s)
        stats.append((s, sv))
        rows.append([s.label, sv.v_true, sv.v_est, sv.mean_true, sv.mean_est, sv.difference])
    if mode == "unweighted":
        footer = [
            "TOTAL",
            math.fsum(r[1] for r in rows),
            math.fsum(r[2] for r in rows),
            math.fsum(r[3] for r in rows),
            math.fsum(r[4] for r in rows),
            variance_difference(pop).total,
        ]
    else:
        shares = pop.weights()
        v_true = aggregate_variance(pop, WeightingScheme.TRUE)
        v_est = aggregate_variance(pop, WeightingScheme.ESTIMATED)
        footer = [
            "TOTAL",
            v_true,
            v_est,
            math.fsum(shares[s.label] * sv.mean_true for s, sv in stats),
            math.fsum(shares[s.label] * sv.mean_est for s, sv in stats),
            v_true - v_est,
        ]
    rows.append(footer)
    meta = _envelope({"name": "exact", "mode": mode}, pop.to_dict(), None, None)
    del meta["result"]
    _emit(_csv_text(meta, header, rows), args.out)
    return 0


def simulate_payload(pop: PopulationSpec, schemes, reps: int, seed: int, model, chunk_size: int, workers: int = 1):
    config = SimConfig(replications=reps, master_seed=seed, outcome_model=model, chunk_size=chunk_size)
    report = run_monte_carlo(pop, schemes, config, workers=workers)
    command = {
        "name": "simulate",
        "schemes": [s.value for s in schemes],
        "reps": reps,
        "seed": seed,
        "outcome_model": config.outcome_model.value,
        "chunk_size": chunk_size,
    }
    return _envelope(command, pop.to_dict(), seed, report.to_dict())


def cmd_simulate(args) -> int:
    pop = _read_population(args.population)
    if _require_valid(pop):
        return 1
    seed = args.seed if args.seed is not None else _default_seed()
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    try:
        model = OutcomeModel.parse(args.outcome_model)
        payload = simulate_payload(
            pop, _schemes(args.schemes), args.reps, seed, model, args.chunk_size, workers=args.workers
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def figure1_population(n_total=FIG_N_TOTAL, var1=FIG_VAR1, var0=FIG_VAR0, mu=FIG1_LEFT_MU) -> PopulationSpec:
    return PopulationSpec([StratumSpec("x", 0.5, mu[0], mu[1], var1, var0, n_total)])


def figure2_population(n_total=FIG_N_TOTAL, var1=FIG_VAR1, var0=FIG_VAR0) -> PopulationSpec:
    return PopulationSpec(
        [
            StratumSpec("a", 0.5, 0.0, 0.0, var1, var0, n_total),
            StratumSpec("b", 0.5, 0.0, 0.0, var1, var0, n_total),
        ]
    )


def figure_table(figure: int, grid, *, n_total, var1, var0, left_mu, right_mu, config=None, workers=1):
    """Header and rows of the figure CSV, plus the populations used."""
    mc = config is not None
    if figure == 1:
        header = ["p"]
        panels = {
            "left": figure1_population(n_total, var1, var0, left_mu),
            "right": figure1_population(n_total, var1, var0, right_mu),
        }
        columns = {}
        for name, pop in panels.items():
            header += [f"{name}_v_true", f"{name}_v_est", f"{name}_difference"]
            if mc:
                header += [f"{name}_mc_true", f"{name}_mc_se_true", f"{name}_mc_est", f"{name}_mc_se_est"]
            columns[name] = sweep(pop, "p", grid, ["true", "estimated"], config, workers=workers)
        rows = []
        for i, p in enumerate(grid):
            row = [p]
            for name in panels:
                r = columns[name][i]
                row += [r["exact_true"], r["exact_estimated"], r["exact_true"] - r["exact_estimated"]]
                if mc:
                    row += [r["mc_true"], r["mc_se_true"], r["mc_estimated"], r["mc_se_estimated"]]
            rows.append(row)
        return header, rows, {k: v.to_dict() for k, v in panels.items()}

    pop = figure2_population(n_total, var1, var0)
    header = ["p", "noncollapsed", "collapsed", "gap"]
    if mc:
        header += ["mc_noncollapsed", "mc_se_noncollapsed", "mc_collapsed", "mc_se_collapsed"]
    rows = []
    for r in sweep(pop, "p", grid, ["estimated", "hybrid"], config, workers=workers):
        row = [r["value"], r["exact_estimated"], r["exact_hybrid"], r["exact_estimated"] - r["exact_hybrid"]]
        if mc:
            row += [r["mc_estimated"], r["mc_se_estimated"], r["mc_hybrid"], r["mc_se_hybrid"]]
        rows.append(row)
    return header, rows, pop.to_dict()


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


def cmd_figure(args) -> int:
    grid = p_grid(args.grid_points)
    config = None
    seed = None
    try:
        if args.reps > 0:
            seed = args.seed if args.seed is not None else _default_seed()
            config = SimConfig(args.reps, seed, args.outcome_model, args.chunk_size)
        header, rows, pops = figure_table(
            args.figure,
            grid,
            n_total=args.n_total,
            var1=args.var1,
            var0=args.var0,
            left_mu=args.left_mu,
            right_mu=args.right_mu,
            config=config,
            workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    command = {
        "name": "figure",
        "figure": args.figure,
        "grid_points": args.grid_points,
        "reps": args.reps,
        "outcome_model": OutcomeModel.parse(args.outcome_model).value,
        "chunk_size": args.chunk_size,
        "n_total": args.n_total,
        "var1": args.var1,
        "var0": args.var0,
        "left_mu": list(args.left_mu),
        "right_mu": list(args.right_mu),
    }
    meta = _envelope(command, pops, seed, None)
    del meta["result"]
    _emit(_csv_text(meta, header, rows), args.out)
    return 0


def appendix_audit(n_max: int, grid_points: int) -> dict:
    if n_max < 1:
        raise UsageError("--n-max must be >= 1")
    p = np.array(p_grid(grid_points))
    n = np.arange(1, n_max + 1)[:, None]
    gap = collapsed_pair_gap(n, p[None, :])
    chain = appendix_polynomial_chain(n, p[None, :])
    gi = np.unravel_index(np.argmin(gap), gap.shape)
    g1i = np.unravel_index(np.argmin(chain.g1), chain.g1.shape)
    min_gap = float(gap[gi])
    min_g1 = float(chain.g1[g1i])
    min_g3 = float(np.min(chain.g3))
    checks = {
        "gap_nonnegative": min_gap >= GAP_TOLERANCE,
        "g1_nonnegative": min_g1 >= G1_TOLERANCE,
        "g3_nonnegative": min_g3 >= 0.0,
    }
    return {
        "n_max": n_max,
        "grid_points": grid_points,
        "p_min": float(p[0]),
        "p_max": float(p[-1]),
        "min_gap": min_gap,
        "argmin_gap": {"n": int(n[gi[0], 0]), "p": float(p[gi[1]])},
        "min_g1": min_g1,
        "argmin_g1": {"n": int(n[g1i[0], 0]), "p": float(p[g1i[1]])},
        "min_g3": min_g3,
        "tolerances": {"gap": GAP_TOLERANCE, "g1": G1_TOLERANCE, "g3": 0.0},
        "checks": checks,
        "passed": all(checks.values()),
    }


def cmd_appendix_check(args) -> int:
    audit = appendix_audit(args.n_max, args.grid_points)
    command = {"name": "appendix-check", "n_max": args.n_max, "grid_points": args.grid_points}
    _emit(json.dumps(_envelope(command, None, None, audit), indent=2, sort_keys=True) + "\n", args.out)
    return 0 if audit["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a population file")
    p.add_argument("population")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("exact", help="closed-form variance table")
    p.add_argument("population")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--weighted", action="store_true", help="footer uses (N_x/N)^2-weighted totals")
    mode.add_argument("--unweighted", action="store_true", help="footer is the unweighted sum (default)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_exact)

    def mc_options(p, reps_default):
        p.add_argument("--reps", type=int, default=reps_default)
        p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
        p.add_argument("--outcome-model", default="gaussian", choices=["gaussian", "twopoint"])
        p.add_argument("--chunk-size", type=int, default=8192)
        p.add_argument("--workers", type=int, default=1, help="threads; results do not depend on it")
        p.add_argument("--out")

    p = sub.add_parser("simulate", help="Monte Carlo report")
    p.add_argument("population")
    p.add_argument("--schemes", default="true,estimated", help="comma list of true, estimated, hybrid")
    mc_options(p, 200000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("figure", help="figure data as CSV")
    p.add_argument("--figure", type=int, choices=[1, 2], required=True)
    p.add_argument("--grid-points", type=int, default=49)
    p.add_argument("--n-total", type=int, default=FIG_N_TOTAL)
    p.add_argument("--var1", type=float, default=FIG_VAR1)
    p.add_argument("--var0", type=float, default=FIG_VAR0)
    p.add_argument("--left-mu", type=_pair, default=FIG1_LEFT_MU, metavar="MU1,MU0")
    p.add_argument("--right-mu", type=_pair, default=FIG1_RIGHT_MU, metavar="MU1,MU0")
    mc_options(p, 0)
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("appendix-check", help="audit the merged-cell inequality on a grid")
    p.add_argument("--n-max", type=int, default=200)
    p.add_argument("--grid-points", type=int, default=199)
    p.add_argument("--out")
    p.set_defaults(func=cmd_appendix_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{TOOL}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
