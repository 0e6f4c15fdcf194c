"""Experiment orchestration: α sweeps, feature-combination enumeration, the
three-stage study, empirical CDFs and file emission.

Every instance is solved three times (unconstrained, globally fair, locally
fair) and summarized as one ``SweepRow``. Instances are independent, so they
can be fanned out to worker processes; rows are sorted by a deterministic key
before anything is written, which makes the output independent of the
parallelism degree.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations, permutations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import svgplot
from .metrics import polf_bound, volf
from .model import (
    Budgets,
    Criterion,
    FairnessSpec,
    InputError,
    JointDistribution,
    Scope,
    StagePlan,
)
from .policy import optimize

SLACK = 1e-9
DEFAULT_ALPHA_K = 0.3
DEFAULT_GRID_STEP = 0.05
PLACEMENTS_2 = ("stage1", "stage2", "unobserved")
PLACEMENTS_3 = ("stage1", "stage2", "stage3")


def placement_label(stage: int | None) -> str:
    return "unobserved" if stage is None else f"stage{stage}"


def placement_stage(label: str) -> int | None:
    if label == "unobserved":
        return None
    if label.startswith("stage") and label[5:].isdigit():
        return int(label[5:])
    raise InputError(f"unknown placement {label!r}; use stage<i> or unobserved")


def alpha_grid(lo: float, step: float, hi: float = 1.0) -> list[float]:
    """Points lo, lo+step, ... up to ``hi``; ``hi`` itself is always included."""
    if not 0 < step:
        raise InputError(f"grid step must be > 0, got {step}")
    n = int(math.floor((hi - lo) / step + 1e-9))
    pts = [round(lo + i * step, 10) for i in range(n + 1)]
    if hi - pts[-1] > 1e-9:
        pts.append(hi)
    return pts


@dataclass(frozen=True)
class SweepConfig:
    """What to enumerate. ``features`` is the pool the combinations are drawn from."""

    features: tuple[str, ...]
    placements: tuple[str, ...] = PLACEMENTS_2
    criteria: tuple[Criterion, ...] = (Criterion.DP,)
    alpha_k: float = DEFAULT_ALPHA_K
    grid_step: float = DEFAULT_GRID_STEP
    k: int = 2
    dataset: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "placements", tuple(self.placements))
        object.__setattr__(self, "criteria", tuple(Criterion(c) for c in self.criteria))
        problems = self.problems()
        if problems:
            raise InputError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.k not in (2, 3):
            out.append(f"k must be 2 or 3, got {self.k}")
        if not 0 < self.alpha_k <= 1:
            out.append(f"alpha_k must lie in (0, 1], got {self.alpha_k}")
        gap = 1 - self.alpha_k
        if gap > 0 and not 0 < self.grid_step <= gap + 1e-12:
            out.append(f"grid step must lie in (0, {gap:g}], got {self.grid_step}")
        if not self.placements:
            out.append("at least one placement required")
        for p in self.placements:
            try:
                stage = placement_stage(p)
            except InputError as exc:
                out.append(str(exc))
                continue
            if stage is not None and not 1 <= stage <= self.k:
                out.append(f"placement {p} outside 1..{self.k}")
        if not self.criteria:
            out.append("at least one criterion required")
        return out

    def grid(self) -> list[float]:
        if self.alpha_k >= 1:
            return [1.0]
        return alpha_grid(self.alpha_k, self.grid_step)

    def alpha_vectors(self) -> list[tuple[float, ...]]:
        g = self.grid()
        if self.k == 2:
            return [(a1, self.alpha_k) for a1 in g]
        return [(a1, a2, self.alpha_k) for a1 in g for a2 in g if a2 <= a1]


@dataclass(frozen=True)
class SweepRow:
    dataset: str
    combination: str
    stages: str
    sensitive: str
    placement: str
    criterion: str
    alphas: tuple[float, ...]
    u_un: float
    u_gf: float
    u_lf: float
    polf: float
    bound: float
    volf: float
    volf_stages: tuple[float, ...]
    volf_lf: float
    warnings: tuple[str, ...] = ()

    def sort_key(self):
        return (self.dataset, self.criterion, self.combination, self.placement, self.alphas)

    def violations(self) -> list[str]:
        """Breaches of the PoLF bounds, the utility ordering and LF fairness."""
        out = []
        tag = f"{self.combination} {self.placement} {self.criterion} α={self.alphas}"
        if not self.u_lf <= self.u_gf + SLACK:
            out.append(f"{tag}: U_LF={self.u_lf!r} > U_GF={self.u_gf!r}")
        if not self.u_gf <= self.u_un + SLACK:
            out.append(f"{tag}: U_GF={self.u_gf!r} > U_un={self.u_un!r}")
        if not 1 - SLACK <= self.polf <= self.bound + SLACK:
            out.append(f"{tag}: PoLF={self.polf!r} outside [1, {self.bound!r}]")
        if not self.volf_lf <= SLACK:
            out.append(f"{tag}: LF policy violates intermediate fairness by {self.volf_lf!r}")
        return out


@dataclass(frozen=True)
class Task:
    dist: JointDistribution
    plan: StagePlan
    alphas: tuple[float, ...]
    criterion: Criterion
    dataset: str = ""
    combination: str = ""


def solve_task(task: Task) -> SweepRow:
    """Solve one instance under all three scopes and summarize it."""
    budgets = Budgets(task.alphas)
    res = {
        scope: optimize(task.dist, task.plan, budgets, FairnessSpec(task.criterion, scope))
        for scope in (Scope.UNCONSTRAINED, Scope.GLOBAL, Scope.LOCAL)
    }
    u_un, u_gf, u_lf = (res[s].utility for s in (Scope.UNCONSTRAINED, Scope.GLOBAL, Scope.LOCAL))
    gaps, scalar = volf(res[Scope.GLOBAL].policy, task.dist, task.criterion)
    _, lf_scalar = volf(res[Scope.LOCAL].policy, task.dist, task.criterion)
    warnings = tuple(dict.fromkeys(w for r in res.values() for w in r.warnings))
    return SweepRow(
        dataset=task.dataset,
        combination=task.combination,
        stages=task.plan.describe(),
        sensitive=task.plan.sensitive,
        placement=placement_label(task.plan.placement),
        criterion=task.criterion.value,
        alphas=tuple(task.alphas),
        u_un=u_un,
        u_gf=u_gf,
        u_lf=u_lf,
        polf=u_gf / u_lf if u_lf > 0 else float("nan"),
        bound=polf_bound(task.dist, budgets),
        volf=scalar,
        volf_stages=tuple(float(g) for g in np.nan_to_num(gaps)),
        volf_lf=lf_scalar,
        warnings=warnings,
    )


def run_tasks(tasks: Sequence[Task], threads: int = 1) -> list[SweepRow]:
    """Solve ``tasks`` serially or on ``threads`` worker processes; sorted rows."""
    if threads <= 1 or len(tasks) < 2:
        rows = [solve_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (threads * 16))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(solve_task, tasks, chunksize=chunk))
    return sorted(rows, key=SweepRow.sort_key)


def stages_with_sensitive(
    decision_stages: Sequence[Sequence[str]], sensitive: str, placement: str
) -> list[list[str]]:
    """Append the sensitive feature to the stage named by ``placement``."""
    stages = [list(s) for s in decision_stages]
    stage = placement_stage(placement)
    if stage is not None:
        if not 1 <= stage <= len(stages):
            raise InputError(f"placement {placement} outside 1..{len(stages)}")
        stages[stage - 1].append(sensitive)
    return stages


def sweep_alpha(
    dist: JointDistribution,
    decision_stages: Sequence[Sequence[str]],
    sensitive: str,
    placement: str,
    criterion: Criterion = Criterion.DP,
    alpha_k: float = DEFAULT_ALPHA_K,
    grid_step: float = DEFAULT_GRID_STEP,
    dataset: str = "",
    threads: int = 1,
) -> list[SweepRow]:
    """One row per α₁ on the grid [α₂, 1] for a fixed two-stage combination."""
    if len(decision_stages) != 2:
        raise InputError(f"an α sweep needs two stages, got {len(decision_stages)}")
    config = SweepConfig(
        features=tuple(dist.features), placements=(placement,), criteria=(criterion,),
        alpha_k=alpha_k, grid_step=grid_step, k=2, dataset=dataset,
    )  # fmt: skip
    plan = StagePlan.from_stages(stages_with_sensitive(decision_stages, sensitive, placement), sensitive)
    combo = combination_id(decision_stages, sensitive)
    tasks = [Task(dist, plan, a, config.criteria[0], dataset, combo) for a in config.alpha_vectors()]
    return run_tasks(tasks, threads)


def combination_id(decision_stages: Sequence[Sequence[str]], sensitive: str) -> str:
    """Placement-free instance name, e.g. ``age+education|relationship+sex/s=race``."""
    return "|".join("+".join(s) for s in decision_stages) + f"/s={sensitive}"


def _require_pool(dist: JointDistribution, config: SweepConfig, size: int) -> None:
    if len(config.features) != size:
        raise InputError(f"enumeration needs exactly {size} features, got {len(config.features)}")
    missing = [f for f in config.features if f not in dist.features]
    if missing:
        raise InputError(f"features {missing} not in distribution")


def enumeration_count(config: SweepConfig) -> int:
    """Closed-form row count of ``enumerate_combinations``."""
    n = len(config.features)
    per_pool = n * (n - 1) * math.comb(n - 2, 2)
    return per_pool * len(config.placements) * len(config.alpha_vectors()) * len(config.criteria)


def enumeration_header(config: SweepConfig) -> str:
    n = len(config.features)
    return (
        f"{n} held-out x {n - 1} sensitive x C({n - 2},2) stage-1 sets x "
        f"{len(config.placements)} placements x {len(config.alpha_vectors())} alpha values x "
        f"{len(config.criteria)} criteria = {enumeration_count(config)} rows"
    )


def enumeration_tasks(dist: JointDistribution, config: SweepConfig) -> list[Task]:
    """Two-stage cross-product: held-out feature, sensitive feature, stage-1
    pair (the other two decision features go to stage 2), placement, α, criterion.

    Stage contents are sets, so each split of the four decision features into
    two pairs is counted once per ordered (stage 1, stage 2) assignment.
    """
    if config.k != 2:
        raise InputError("enumerate_combinations is two-stage; use three_stage_study for k=3")
    _require_pool(dist, config, 6)
    tasks = []
    for held in config.features:
        pool = [f for f in config.features if f != held]
        marginal = dist.project(pool)
        for sensitive in pool:
            decision = [f for f in pool if f != sensitive]
            for first in combinations(decision, 2):
                second = tuple(f for f in decision if f not in first)
                combo = combination_id([first, second], sensitive)
                for placement in config.placements:
                    plan = StagePlan.from_stages(stages_with_sensitive([first, second], sensitive, placement), sensitive)
                    for criterion in config.criteria:
                        for alphas in config.alpha_vectors():
                            tasks.append(Task(marginal, plan, alphas, criterion, config.dataset, combo))
    return tasks


def enumerate_combinations(dist: JointDistribution, config: SweepConfig, threads: int = 1) -> list[SweepRow]:
    return run_tasks(enumeration_tasks(dist, config), threads)


def three_stage_count(config: SweepConfig) -> int:
    n = len(config.features)
    per_pool = math.comb(n, 4) * 4 * math.factorial(3)
    return per_pool * len(config.placements) * len(config.alpha_vectors()) * len(config.criteria)


def three_stage_tasks(dist: JointDistribution, config: SweepConfig) -> list[Task]:
    """Every 4-feature subset, every choice of sensitive feature among them and
    every ordering of the other three (one per stage), at each placement."""
    if config.k != 3:
        raise InputError("three_stage_study needs k=3")
    _require_pool(dist, config, len(config.features))
    if len(config.features) < 4:
        raise InputError("three_stage_study needs at least 4 features")
    tasks = []
    for subset in combinations(config.features, 4):
        marginal = dist.project(subset)
        for sensitive in subset:
            decision = [f for f in subset if f != sensitive]
            for order in permutations(decision):
                stages = [[f] for f in order]
                combo = combination_id(stages, sensitive)
                for placement in config.placements:
                    plan = StagePlan.from_stages(stages_with_sensitive(stages, sensitive, placement), sensitive)
                    for criterion in config.criteria:
                        for alphas in config.alpha_vectors():
                            tasks.append(Task(marginal, plan, alphas, criterion, config.dataset, combo))
    return tasks


def three_stage_study(dist: JointDistribution, config: SweepConfig, threads: int = 1) -> list[SweepRow]:
    return run_tasks(three_stage_tasks(dist, config), threads)


def empirical_cdf(values: Iterable[float]) -> list[tuple[float, float]]:
    """Right-continuous step function as (value, fraction of values <= value)."""
    arr = np.sort(np.asarray(list(values), dtype=float))
    if arr.size == 0:
        raise ValueError("empirical CDF of an empty sample")
    if np.isnan(arr).any():
        raise ValueError("empirical CDF input contains NaN")
    uniq = np.unique(arr)
    ends = np.searchsorted(arr, uniq, side="right")
    out = [(float(v), float(e) / arr.size) for v, e in zip(uniq, ends)]
    out[-1] = (out[-1][0], 1.0)
    return out


def median(values: Iterable[float]) -> float:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ValueError("median of an empty sample")
    return float(np.median(arr))


def group_by(rows: Iterable[SweepRow], *attrs: str) -> dict[tuple, list[SweepRow]]:
    out: dict[tuple, list[SweepRow]] = {}
    for r in rows:
        out.setdefault(tuple(getattr(r, a) for a in attrs), []).append(r)
    return out


def placement_pairs(rows: Sequence[SweepRow], a: str, b: str) -> list[tuple[SweepRow, SweepRow]]:
    """Rows of the same instance (combination, criterion, α) at placements a and b."""
    index = {(r.dataset, r.criterion, r.combination, r.alphas): r for r in rows if r.placement == b}
    out = []
    for r in rows:
        if r.placement == a:
            other = index.get((r.dataset, r.criterion, r.combination, r.alphas))
            if other is not None:
                out.append((r, other))
    return out


# ---------------------------------------------------------------- file output

RESULT_COLUMNS = (
    "dataset",
    "combination",
    "stages",
    "sensitive",
    "placement",
    "criterion",
    "alphas",
    "u_un",
    "u_gf",
    "u_lf",
    "polf",
    "bound",
    "volf",
    "volf_stages",
    "volf_lf",
    "warnings",
)


def _num(x: float) -> str:
    return repr(float(x))


def _nums(xs: Sequence[float]) -> str:
    return ";".join(_num(x) for x in xs)


def row_to_record(row: SweepRow) -> list[str]:
    return [
        row.dataset, row.combination, row.stages, row.sensitive, row.placement, row.criterion,
        _nums(row.alphas), _num(row.u_un), _num(row.u_gf), _num(row.u_lf), _num(row.polf),
        _num(row.bound), _num(row.volf), _nums(row.volf_stages), _num(row.volf_lf),
        " | ".join(row.warnings),
    ]  # fmt: skip


def record_to_row(rec: dict) -> SweepRow:
    def floats(s: str) -> tuple[float, ...]:
        return tuple(float(v) for v in s.split(";")) if s else ()

    try:
        return SweepRow(
            dataset=rec["dataset"], combination=rec["combination"], stages=rec["stages"],
            sensitive=rec["sensitive"], placement=rec["placement"], criterion=rec["criterion"],
            alphas=floats(rec["alphas"]), u_un=float(rec["u_un"]), u_gf=float(rec["u_gf"]),
            u_lf=float(rec["u_lf"]), polf=float(rec["polf"]), bound=float(rec["bound"]),
            volf=float(rec["volf"]), volf_stages=floats(rec["volf_stages"]),
            volf_lf=float(rec["volf_lf"]),
            warnings=tuple(rec["warnings"].split(" | ")) if rec["warnings"] else (),
        )  # fmt: skip
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed results record: {exc}") from None


def write_results(rows: Sequence[SweepRow], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow(row_to_record(r))
    return path


def read_results(path: str | Path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise InputError(f"{path}: header does not match the results format")
        return [record_to_row(rec) for rec in reader]


def _write_csv(path: Path, header: Sequence[str], records: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in records:
            w.writerow([_num(v) if isinstance(v, float) else v for v in rec])
    return path


def _slug(*parts: str) -> str:
    return "_".join(p for p in parts if p).replace("/", "-")


def _placements_in(rows: Sequence[SweepRow]) -> list[str]:
    return sorted({r.placement for r in rows}, key=lambda p: (p == "unobserved", p))


def emit_cdfs(rows: Sequence[SweepRow], out_dir: Path, svg: bool = True) -> list[Path]:
    """CDF CSV (and SVG) per dataset, criterion and metric, one series per placement."""
    written = []
    for (dataset, criterion), group in sorted(group_by(rows, "dataset", "criterion").items()):
        placements = _placements_in(group)
        for metric, label in (("polf", "PoLF"), ("volf", "VoLF")):
            series = {}
            for p in placements:
                vals = [getattr(r, metric) for r in group if r.placement == p]
                vals = [v for v in vals if not math.isnan(v)]
                if metric == "volf" and all(len(r.volf_stages) == 0 for r in group):
                    continue
                series[p] = empirical_cdf(vals)
            if not series:
                continue
            name = _slug("cdf", dataset, criterion, metric)
            records = [(p, v, f) for p, pts in series.items() for v, f in pts]
            written.append(_write_csv(out_dir / f"{name}.csv", ("placement", "value", "fraction"), records))
            if svg:
                doc = svgplot.line_chart(
                    series, f"{dataset} {criterion.upper()}: CDF of {label}", label, "fraction",
                    step=True, ylim=(0.0, 1.02),
                )  # fmt: skip
                written.append(_write_text(out_dir / f"{name}.svg", doc))
    return written


def emit_scatters(rows: Sequence[SweepRow], out_dir: Path, svg: bool = True) -> list[Path]:
    """Joint (PoLF, VoLF) per placement and PoLF-vs-PoLF across placements."""
    written = []
    for (dataset, criterion), group in sorted(group_by(rows, "dataset", "criterion").items()):
        placements = _placements_in(group)
        name = _slug("scatter", dataset, criterion, "polf_volf")
        records = [(r.placement, r.combination, _nums(r.alphas), r.polf, r.volf) for r in group]
        written.append(
            _write_csv(out_dir / f"{name}.csv", ("placement", "combination", "alphas", "polf", "volf"), records)
        )
        if svg:
            for p in placements:
                pts = [(r.polf, r.volf) for r in group if r.placement == p]
                doc = svgplot.scatter_chart(pts, f"{dataset} {criterion.upper()} ({p})", "PoLF", "VoLF")
                written.append(_write_text(out_dir / f"{name}_{p}.svg", doc))
        for a, b in combinations(placements, 2):
            pairs = placement_pairs(group, a, b)
            if not pairs:
                continue
            pname = _slug("scatter", dataset, criterion, f"polf_{a}_vs_{b}")
            records = [(x.combination, _nums(x.alphas), x.polf, y.polf) for x, y in pairs]
            written.append(
                _write_csv(out_dir / f"{pname}.csv", ("combination", "alphas", f"polf_{a}", f"polf_{b}"), records)
            )
            if svg:
                pts = [(x.polf, y.polf) for x, y in pairs]
                doc = svgplot.scatter_chart(
                    pts, f"{dataset} {criterion.upper()}: PoLF", f"PoLF ({a})", f"PoLF ({b})", diagonal=True
                )
                written.append(_write_text(out_dir / f"{pname}.svg", doc))
    return written


def emit_utility_curves(rows: Sequence[SweepRow], out_dir: Path, svg: bool = True) -> list[Path]:
    """U* against α₁ for each scope (sweep output)."""
    written = []
    for key, group in sorted(group_by(rows, "dataset", "criterion", "combination", "placement").items()):
        dataset, criterion, _, placement = key
        group = sorted(group, key=lambda r: r.alphas)
        name = _slug("utility", dataset, criterion, placement)
        records = [(r.alphas[0], r.u_un, r.u_gf, r.u_lf) for r in group]
        written.append(_write_csv(out_dir / f"{name}.csv", ("alpha_1", "u_un", "u_gf", "u_lf"), records))
        if svg:
            series = {
                "unconstrained": [(r.alphas[0], r.u_un) for r in group],
                "global fairness": [(r.alphas[0], r.u_gf) for r in group],
                "local fairness": [(r.alphas[0], r.u_lf) for r in group],
            }
            doc = svgplot.line_chart(series, f"{group[0].stages} ({criterion.upper()})", "α₁", "precision")
            written.append(_write_text(out_dir / f"{name}.svg", doc))
    return written


def _write_text(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def emit_outputs(
    rows: Sequence[SweepRow],
    out_dir: str | Path,
    cdfs: bool = True,
    scatters: bool = True,
    curves: bool = False,
    svg: bool = True,
) -> list[Path]:
    """Write results.csv plus the requested derived tables and plots."""
    if not rows:
        raise ValueError("no rows to emit")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from None
    rows = sorted(rows, key=SweepRow.sort_key)
    written = [write_results(rows, out / "results.csv")]
    if cdfs:
        written += emit_cdfs(rows, out, svg)
    if scatters:
        written += emit_scatters(rows, out, svg)
    if curves:
        written += emit_utility_curves(rows, out, svg)
    return written


def all_violations(rows: Iterable[SweepRow]) -> list[str]:
    return [v for r in rows for v in r.violations()]


__all__ = [
    "DEFAULT_ALPHA_K",
    "DEFAULT_GRID_STEP",
    "PLACEMENTS_2",
    "PLACEMENTS_3",
    "RESULT_COLUMNS",
    "SweepConfig",
    "SweepRow",
    "Task",
    "all_violations",
    "alpha_grid",
    "combination_id",
    "emit_outputs",
    "empirical_cdf",
    "enumerate_combinations",
    "enumeration_count",
    "enumeration_header",
    "enumeration_tasks",
    "group_by",
    "median",
    "placement_pairs",
    "read_results",
    "run_tasks",
    "solve_task",
    "sweep_alpha",
    "three_stage_count",
    "three_stage_study",
    "three_stage_tasks",
    "write_results",
]
