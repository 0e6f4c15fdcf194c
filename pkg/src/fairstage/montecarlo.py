"""Finite-population simulation of a multistage policy.

Candidates are drawn i.i.d. from the joint distribution; at every stage each
surviving candidate passes independently with the policy's conditional
probability for its revealed prefix. Budgets hold only in expectation, so the
simulator measures realized fractions and does not clip them (unless
``quota`` clipping is asked for explicitly).

Random numbers come from numpy's PCG64 generator; replication ``r`` of a run
seeded with ``seed`` uses ``SeedSequence(seed).spawn`` child ``r``, so streams
are stable across platforms and independent of execution order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import evaluate
from .model import Budgets, JointDistribution, Policy, stage_prefixes


@dataclass(frozen=True, eq=False)
class Cohort:
    cells: np.ndarray
    labels: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.cells.size


@dataclass(frozen=True, eq=False)
class CohortResult:
    n: int
    counts: tuple[np.ndarray, ...]  # per stage, selected count per stage-i prefix
    selected: np.ndarray  # per stage, number of survivors
    good_selected: int
    seed: int | None

    @property
    def budgets(self) -> np.ndarray:
        """Realized pass fractions B_n(i)."""
        return self.selected / self.n

    @property
    def precision(self) -> float | None:
        """Fraction of final survivors with y=1; None when nobody survives."""
        final = self.selected[-1]
        return self.good_selected / final if final > 0 else None

    def fractions(self, i: int) -> np.ndarray:
        return self.counts[i] / self.n


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def sample_cohort(dist: JointDistribution, n: int, seed) -> Cohort:
    """Draw ``n`` candidates: a cell from ``mass`` and a label from ``positive[cell]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    cdf = np.cumsum(dist.mass)
    cells = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    cells = np.minimum(cells, dist.mass.size - 1)
    labels = rng.random(n) < dist.positive[cells]
    return Cohort(cells.astype(np.int64), labels, seed if isinstance(seed, int) else None)


def run_policy(
    cohort: Cohort,
    policy: Policy,
    dist: JointDistribution,
    seed,
    quota: Budgets | None = None,
) -> CohortResult:
    """Apply independent Bernoulli pass decisions stage by stage.

    With ``quota`` the survivors of stage i are additionally trimmed at random
    to at most round(α_i n) candidates (exactly, at the last stage if enough
    survive); off by default.
    """
    rng = _rng(seed)
    plan = policy.plan
    prefixes = stage_prefixes(dist.space, plan)[:, cohort.cells]
    alive = np.ones(cohort.n, dtype=bool)
    counts, selected = [], []
    for i in range(plan.k):
        q = prefixes[i]
        draw = rng.random(cohort.n)
        alive &= draw < policy.conditional[i][q]
        if quota is not None:
            cap = int(round(quota.alphas[i] * cohort.n))
            idx = np.flatnonzero(alive)
            if idx.size > cap:
                alive[rng.choice(idx, idx.size - cap, replace=False)] = False
        counts.append(np.bincount(q[alive], minlength=1 << plan.cuts[i]))
        selected.append(int(alive.sum()))
    good = int(cohort.labels[alive].sum())
    return CohortResult(cohort.n, tuple(counts), np.array(selected), good, seed if isinstance(seed, int) else None)


def expected_fractions(policy: Policy, dist: JointDistribution) -> list[np.ndarray]:
    """Limit of n_i[q]/n: mass of prefix q times its cumulative pass probability."""
    prefixes = stage_prefixes(dist.space, policy.plan)
    out = []
    for i, cum in enumerate(policy.cumulative):
        prefix_mass = np.bincount(prefixes[i], weights=dist.mass, minlength=cum.size)
        out.append(prefix_mass * cum)
    return out


def replication_seeds(seed: int, reps: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(reps)


@dataclass(frozen=True)
class Deviation:
    n: int
    rep: int
    stage: int  # 0 for whole-run quantities such as precision
    quantity: str
    realized: float
    expected: float

    @property
    def deviation(self) -> float:
        return abs(self.realized - self.expected)


def simulate(
    dist: JointDistribution,
    policy: Policy,
    n_grid: Sequence[int],
    reps: int,
    seed: int,
    include_prefixes: bool = True,
) -> list[Deviation]:
    """Realized vs limiting values for every (n, replication).

    Quantities: ``fraction[q]`` per prefix (if ``include_prefixes``),
    ``fraction_l1`` (sum over prefixes of |n_i[q]/n - limit|), ``budget``
    (B_n(i)) and ``precision``. Replications with an empty final selection
    contribute no precision record.
    """
    exp_frac = expected_fractions(policy, dist)
    ev = evaluate(policy, dist)
    rows: list[Deviation] = []
    for n in n_grid:
        for rep, ss in enumerate(replication_seeds(seed, reps)):
            cohort_ss, policy_ss = ss.spawn(2)
            res = run_policy(sample_cohort(dist, n, cohort_ss), policy, dist, policy_ss)
            for i in range(policy.plan.k):
                frac = res.fractions(i)
                if include_prefixes:
                    for q in range(frac.size):
                        rows.append(Deviation(n, rep, i + 1, f"fraction[{q}]", float(frac[q]), float(exp_frac[i][q])))
                l1 = float(np.abs(frac - exp_frac[i]).sum())
                rows.append(Deviation(n, rep, i + 1, "fraction_l1", l1, 0.0))
                rows.append(Deviation(n, rep, i + 1, "budget", float(res.budgets[i]), float(ev.selection[i])))
            if res.precision is not None:
                rows.append(Deviation(n, rep, 0, "precision", res.precision, ev.precision))
    return rows


@dataclass(frozen=True)
class ConvergenceRow:
    stage: int
    quantity: str
    n: int
    mean_deviation: float
    replications: int


def convergence_study(
    dist: JointDistribution,
    policy: Policy,
    n_grid: Sequence[int],
    reps: int,
    seed: int,
) -> list[ConvergenceRow]:
    """Mean |realized - expected| per (stage, quantity, n), over replications."""
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n grid must be increasing")
    records = simulate(dist, policy, n_grid, reps, seed, include_prefixes=False)
    groups: dict[tuple[int, str, int], list[float]] = {}
    for r in records:
        groups.setdefault((r.stage, r.quantity, r.n), []).append(r.deviation)
    return [
        ConvergenceRow(stage, quantity, n, float(np.mean(devs)), len(devs))
        for (stage, quantity, n), devs in sorted(groups.items())
    ]


def loglog_slope(rows: Sequence[ConvergenceRow], stage: int, quantity: str) -> float:
    """Least-squares slope of log(mean deviation) against log(n)."""
    pts = [(r.n, r.mean_deviation) for r in rows if r.stage == stage and r.quantity == quantity]
    pts = [(n, d) for n, d in pts if d > 0]
    if len(pts) < 2:
        return float("nan")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


CSV_COLUMNS = ("n", "rep", "stage", "quantity", "realized", "expected", "deviation")


def write_csv(records: Sequence[Deviation], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.n, r.rep, r.stage, r.quantity, *(repr(float(v)) for v in (r.realized, r.expected, r.deviation))])


__all__ = [
    "CSV_COLUMNS",
    "Cohort",
    "CohortResult",
    "ConvergenceRow",
    "Deviation",
    "convergence_study",
    "expected_fractions",
    "loglog_slope",
    "replication_seeds",
    "run_policy",
    "sample_cohort",
    "simulate",
    "write_csv",
]
