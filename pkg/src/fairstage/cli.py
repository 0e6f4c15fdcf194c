"""Command-line interface.

Exit codes: 0 success, 1 bad input, 2 solver failure, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

from . import harness
from .datasets import (
    DEFAULT_FILES,
    default_sources,
    estimate_distribution,
    get_recipe,
    load_and_binarize,
    load_recipe_file,
)
from .lpsolver import SolverError, dump_lp
from .metrics import evaluate, polf_bound
from .model import (
    Budgets,
    Criterion,
    FairnessSpec,
    InputError,
    InvariantViolation,
    JointDistribution,
    Policy,
    Scope,
    StagePlan,
)
from .montecarlo import CSV_COLUMNS, simulate, write_csv
from .policy import optimize

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_INVARIANT = 0, 1, 2, 3


def _num(v) -> str:
    return repr(float(v))


def _joined(values) -> str:
    return ";".join(_num(v) for v in values)


def parse_stages(text: str) -> list[list[str]]:
    """``"a,b|c,d"`` -> [["a", "b"], ["c", "d"]]."""
    stages = [[f.strip() for f in part.split(",") if f.strip()] for part in text.split("|")]
    if not stages or any(not s for s in stages):
        raise InputError(f"bad stage list {text!r}: use comma-separated features, stages split by '|'")
    return stages


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"bad number list {text!r}") from None


def split_placement(stages: list[list[str]], sensitive: str) -> tuple[list[list[str]], str]:
    """Remove the sensitive feature from the stage lists and report where it was."""
    placement = "unobserved"
    decision = []
    for i, s in enumerate(stages, start=1):
        if sensitive in s:
            placement = f"stage{i}"
        decision.append([f for f in s if f != sensitive])
    return decision, placement


# ------------------------------------------------------------------ sources


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input distribution (one of)")
    g.add_argument("--dist", type=Path, help="distribution JSON written by `ingest`")
    g.add_argument("--dataset", choices=sorted(DEFAULT_FILES), help="builtin recipe")
    g.add_argument("--input", nargs="+", type=Path, help="raw files for --dataset (default: bundled data)")
    g.add_argument("--invert-label", action="store_true", help="flip the dataset label")


def load_source(args) -> tuple[JointDistribution, str]:
    if args.dist is not None and args.dataset is not None:
        raise InputError("give either --dist or --dataset, not both")
    if args.dist is not None:
        return JointDistribution.load(args.dist), args.dist.stem
    if args.dataset is None:
        raise InputError("an input distribution is required (--dist or --dataset)")
    batch = load_and_binarize(args.input or default_sources(args.dataset), get_recipe(args.dataset), args.invert_label)
    name = args.dataset + ("-inverted" if args.invert_label else "")
    return estimate_distribution(batch), name


def _add_common(p: argparse.ArgumentParser, grid: bool = True) -> None:
    p.add_argument("--criterion", default="dp", help="dp, eo or a comma list")
    p.add_argument("--alpha-k", type=float, default=harness.DEFAULT_ALPHA_K, help="final-stage budget")
    if grid:
        p.add_argument("--grid-step", type=float, default=harness.DEFAULT_GRID_STEP, help="α grid spacing")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--no-svg", action="store_true", help="skip SVG plots")


def _criteria(text: str) -> tuple[Criterion, ...]:
    try:
        return tuple(Criterion(c.strip().lower()) for c in text.split(","))
    except ValueError:
        raise InputError(f"unknown criterion in {text!r}; use dp or eo") from None


# ------------------------------------------------------------------ commands


def cmd_ingest(args) -> int:
    recipe = load_recipe_file(args.recipe) if args.recipe else get_recipe(args.dataset)
    sources = args.input or (default_sources(args.dataset) if args.dataset else None)
    if not sources:
        raise InputError("--input is required with --recipe")
    batch = load_and_binarize(sources, recipe, args.invert_label)
    features = [f.strip() for f in args.features.split(",")] if args.features else None
    dist = estimate_distribution(batch, features)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    dist.save(args.output)
    report = batch.report.to_json() if batch.report else {}
    report["features"] = list(dist.features)
    report["p_positive"] = dist.p_positive()
    report_path = args.output.with_suffix(".report.json")
    report_path.write_text(json.dumps(report, indent=1) + "\n")
    print(f"{recipe.dataset}: kept {report.get('rows_kept')} rows -> {args.output} (report {report_path})")
    return EXIT_OK


def cmd_solve(args) -> int:
    dist, _ = load_source(args)
    plan = StagePlan.from_stages(parse_stages(args.stages), args.sensitive)
    budgets = Budgets(parse_floats(args.alphas))
    fairness = FairnessSpec(Criterion(args.criterion), Scope(args.scope))
    result = optimize(dist, plan, budgets, fairness)
    if args.dump_lp:
        dump_lp(result.problem, args.dump_lp)
    ev = evaluate(result.policy, dist, budgets)
    doc = result.to_json()
    doc["budgets"] = list(budgets.alphas)
    doc["evaluation"] = ev.to_json()
    doc["polf_bound"] = polf_bound(dist, budgets)
    text = json.dumps(doc, indent=1) + "\n"
    if args.output:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    if args.eval_csv:
        with open(args.eval_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stages", "sensitive", "criterion", "scope", "alphas", "utility", "precision",
                        "selection", "dp_gaps", "eo_gaps"])  # fmt: skip
            w.writerow([
                plan.describe(), plan.sensitive, fairness.criterion.value, fairness.scope.value,
                _joined(budgets.alphas), _num(result.utility), _num(ev.precision),
                _joined(ev.selection), _joined(ev.dp_gaps), _joined(ev.eo_gaps),
            ])  # fmt: skip
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if result.policy.problems():
        raise InvariantViolation("; ".join(result.policy.problems()))
    return EXIT_OK


def _finish(rows: list[harness.SweepRow], args, curves: bool = False) -> int:
    paths = harness.emit_outputs(rows, args.out_dir, curves=curves, svg=not args.no_svg)
    print(f"wrote {len(paths)} files to {args.out_dir}")
    bad = harness.all_violations(rows)
    if bad:
        (Path(args.out_dir) / "violations.txt").write_text("\n".join(bad) + "\n")
        for line in bad[:20]:
            print(f"invariant violation: {line}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_sweep(args) -> int:
    dist, name = load_source(args)
    stages, placement = split_placement(parse_stages(args.stages), args.sensitive)
    criteria = _criteria(args.criterion)
    rows = []
    for c in criteria:
        rows += harness.sweep_alpha(
            dist, stages, args.sensitive, placement, c, args.alpha_k, args.grid_step, name, args.threads
        )
    return _finish(rows, args, curves=True)


def _config(args, dist, name, k: int) -> harness.SweepConfig:
    features = tuple(f.strip() for f in args.features.split(",")) if args.features else dist.features
    default = harness.PLACEMENTS_2 if k == 2 else harness.PLACEMENTS_3
    placements = tuple(args.placements.split(",")) if args.placements else default
    return harness.SweepConfig(
        features=features, placements=placements, criteria=_criteria(args.criterion),
        alpha_k=args.alpha_k, grid_step=args.grid_step, k=k, dataset=name,
    )  # fmt: skip


def cmd_enumerate(args) -> int:
    dist, name = load_source(args)
    config = _config(args, dist, name, 2)
    print(f"# {name}: {harness.enumeration_header(config)}")
    rows = harness.enumerate_combinations(dist, config, args.threads)
    return _finish(rows, args)


def cmd_three_stage(args) -> int:
    dist, name = load_source(args)
    config = _config(args, dist, name, 3)
    print(f"# {name}: {harness.three_stage_count(config)} rows")
    rows = harness.three_stage_study(dist, config, args.threads)
    status = _finish(rows, args)
    for c in config.criteria:
        meds = [
            harness.median(r.polf for r in rows if r.placement == p and r.criterion == c.value)
            for p in config.placements
        ]
        print(f"{c.value}: median PoLF by placement " + ", ".join(f"{p}={m:.6g}" for p, m in zip(config.placements, meds)))
    return status


def cmd_cdf(args) -> int:
    rows = harness.read_results(args.results)
    if not rows:
        raise InputError(f"{args.results} holds no rows")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    paths = harness.emit_cdfs(rows, args.out_dir, not args.no_svg)
    paths += harness.emit_scatters(rows, args.out_dir, not args.no_svg)
    print(f"wrote {len(paths)} files to {args.out_dir}")
    for (dataset, criterion), group in sorted(harness.group_by(rows, "dataset", "criterion").items()):
        for p in sorted({r.placement for r in group}):
            g = [r for r in group if r.placement == p]
            print(
                f"{dataset} {criterion} {p}: median PoLF {harness.median(r.polf for r in g):.6g}, "
                f"median VoLF {harness.median(r.volf for r in g):.6g}"
            )
    bad = harness.all_violations(rows)
    return EXIT_INVARIANT if bad else EXIT_OK


def cmd_simulate(args) -> int:
    dist = JointDistribution.load(args.dist)
    try:
        policy = Policy.from_json(json.loads(args.policy.read_text()))
    except (KeyError, TypeError) as exc:
        raise InputError(f"{args.policy}: not a policy file ({exc})") from None
    records = simulate(dist, policy, args.n, args.reps, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(records, args.out)
    meta = {
        "generator": "PCG64",
        "seed": args.seed,
        "reps": args.reps,
        "n": list(args.n),
        "columns": list(CSV_COLUMNS),
    }
    args.out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"wrote {len(records)} records to {args.out} (seed {args.seed})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairstage", description="Fair multistage selection policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="binarize raw data into a distribution JSON")
    p.add_argument("--dataset", choices=sorted(DEFAULT_FILES))
    p.add_argument("--recipe", type=Path, help="JSON recipe for other tables")
    p.add_argument("--input", nargs="+", type=Path)
    p.add_argument("--features", help="comma list; default all recipe features")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--invert-label", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("solve", help="optimal policy for one instance")
    _add_source(p)
    p.add_argument("--stages", required=True, help='features per stage, e.g. "age,sex|education"')
    p.add_argument("--sensitive", required=True)
    p.add_argument("--alphas", required=True, help="budgets, e.g. 0.5,0.3")
    p.add_argument("--criterion", default="dp", choices=[c.value for c in Criterion])
    p.add_argument("--scope", default="gf", choices=[s.value for s in Scope])
    p.add_argument("--output", type=Path, help="policy JSON (default stdout)")
    p.add_argument("--dump-lp", type=Path, help="write the LP as plain text")
    p.add_argument("--eval-csv", type=Path, help="one-row evaluation CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="utilities along the α₁ grid for one combination")
    _add_source(p)
    p.add_argument("--stages", required=True, help="two stages; include the sensitive feature where observed")
    p.add_argument("--sensitive", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    for name, func, help_text in (
        ("enumerate", cmd_enumerate, "all two-stage combinations of a six-feature pool"),
        ("three-stage", cmd_three_stage, "PoLF by sensitive placement with one feature per stage"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_source(p)
        p.add_argument("--features", help="feature pool (default: all features of the input)")
        p.add_argument("--placements", help="comma list of stage<i>/unobserved")
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("cdf", help="CDFs and scatter data from a results CSV")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_cdf)

    p = sub.add_parser("simulate", help="finite-population Monte Carlo of a policy")
    p.add_argument("--dist", type=Path, required=True)
    p.add_argument("--policy", type=Path, required=True, help="policy JSON from `solve`")
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


__all__ = ["build_parser", "main", "parse_stages", "split_placement"]
