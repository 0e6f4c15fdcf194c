"""Build the precision-maximizing LP over cumulative pass probabilities and
turn its solution back into a multistage policy.

Variables are the cumulative pass probabilities ``t_i[q]`` (probability of
surviving stages 1..i given stage-i prefix ``q``). In these variables the
objective, budgets, nesting and fairness constraints are all linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lpsolver import EQ, LE, LpProblem, LpSolution, Row, SolverError, Status, Tolerances, DEFAULT_TOL, solve
from .model import (
    Budgets,
    Criterion,
    FairnessSpec,
    JointDistribution,
    Policy,
    Scope,
    StagePlan,
    require_valid,
    stage_prefixes,
)

ZERO_SNAP = 1e-12


class InfeasibleInstance(SolverError):
    """The assembled LP has no feasible point (should not happen for valid input)."""


@dataclass(frozen=True)
class VariableLayout:
    cuts: tuple[int, ...]

    @classmethod
    def for_plan(cls, plan: StagePlan) -> "VariableLayout":
        return cls(plan.cuts)

    @property
    def k(self) -> int:
        return len(self.cuts)

    @property
    def offsets(self) -> tuple[int, ...]:
        out = [0]
        for c in self.cuts:
            out.append(out[-1] + (1 << c))
        return tuple(out)

    @property
    def n_vars(self) -> int:
        return self.offsets[-1]

    def stage_range(self, i: int) -> range:
        """Variable indices of 0-based stage ``i``."""
        off = self.offsets
        return range(off[i], off[i + 1])

    def parent(self, i: int, q):
        """Stage-(i-1) prefix of stage-i prefix ``q`` (0-based stages)."""
        return q & ((1 << self.cuts[i - 1]) - 1)


def build_objective(dist: JointDistribution, plan: StagePlan, budgets: Budgets, layout: VariableLayout) -> np.ndarray:
    """Precision as a linear function of the final-stage cumulative variables."""
    prefixes = stage_prefixes(dist.space, plan)
    c = np.zeros(layout.n_vars)
    k = layout.k - 1
    np.add.at(c, layout.offsets[k] + prefixes[k], dist.mass * dist.positive / budgets.final)
    return c


def build_budget_rows(dist: JointDistribution, plan: StagePlan, budgets: Budgets, layout: VariableLayout) -> list[Row]:
    prefixes = stage_prefixes(dist.space, plan)
    rows = []
    for i in range(layout.k):
        a = np.zeros(layout.n_vars)
        np.add.at(a, layout.offsets[i] + prefixes[i], dist.mass)
        last = i == layout.k - 1
        rows.append(Row(a, EQ if last else LE, budgets.alphas[i], f"budget_{i + 1}"))
    return rows


def build_coupling_rows(layout: VariableLayout) -> list[Row]:
    """t_i[q] - t_{i-1}[parent(q)] <= 0 for every stage i >= 2."""
    rows = []
    for i in range(1, layout.k):
        for q in range(1 << layout.cuts[i]):
            a = np.zeros(layout.n_vars)
            a[layout.offsets[i] + q] = 1.0
            a[layout.offsets[i - 1] + layout.parent(i, q)] = -1.0
            rows.append(Row(a, LE, 0.0, f"nest_{i + 1}_{q}"))
    return rows


def fairness_weights(dist: JointDistribution, criterion: Criterion) -> np.ndarray:
    """Per-cell weight whose group-normalized sums give the conditional rates."""
    if Criterion(criterion) is Criterion.EO:
        return dist.mass * dist.positive
    return dist.mass.copy()


def fairness_stages(scope: Scope, k: int) -> list[int]:
    """0-based stages that carry a fairness equality under ``scope``."""
    scope = Scope(scope)
    if scope is Scope.LOCAL:
        return list(range(k))
    if scope is Scope.GLOBAL:
        return [k - 1]
    return []


def build_fairness_rows(
    dist: JointDistribution, plan: StagePlan, fairness: FairnessSpec, layout: VariableLayout
) -> tuple[list[Row], list[str]]:
    """Homogeneous rows P(pass_i | s=0) - P(pass_i | s=1) = 0 (EO: also given y=1).

    A stage whose outcome is constrained need not observe the sensitive
    feature: the rates marginalize over it. Rows are dropped with a warning
    when a group has zero (positive) mass.
    """
    stages = fairness_stages(fairness.scope, layout.k)
    if not stages:
        return [], []
    w = fairness_weights(dist, fairness.criterion)
    s = dist.space.bits(plan.sensitive)
    totals = [w[s == 0].sum(), w[s == 1].sum()]
    if min(totals) <= 0:
        empty = [a for a in (0, 1) if totals[a] <= 0]
        what = "positive mass" if fairness.criterion is Criterion.EO else "mass"
        return [], [
            f"{fairness.criterion.value} fairness rows dropped: group {plan.sensitive}={a} has zero {what}"
            for a in empty
        ]
    signed = np.where(s == 0, w / totals[0], -w / totals[1])
    prefixes = stage_prefixes(dist.space, plan)
    rows = []
    for i in stages:
        a = np.zeros(layout.n_vars)
        np.add.at(a, layout.offsets[i] + prefixes[i], signed)
        rows.append(Row(a, EQ, 0.0, f"fair_{fairness.criterion.value}_{i + 1}"))
    return rows, []


def assemble(
    dist: JointDistribution,
    plan: StagePlan,
    budgets: Budgets,
    fairness: FairnessSpec,
    warnings: list[str] | None = None,
) -> LpProblem:
    require_valid(dist, plan, budgets)
    layout = VariableLayout.for_plan(plan)
    fair_rows, dropped = build_fairness_rows(dist, plan, fairness, layout)
    if warnings is not None:
        warnings.extend(dropped)
    rows = build_budget_rows(dist, plan, budgets, layout) + build_coupling_rows(layout) + fair_rows
    c = build_objective(dist, plan, budgets, layout)
    return LpProblem.from_rows(c, rows, lo=0.0, hi=1.0)


def recover_policy(solution: LpSolution, layout: VariableLayout, plan: StagePlan) -> Policy:
    """Cumulative values from the LP point; conditionals as ratios of nested cumulatives."""
    if solution.status is not Status.OPTIMAL or solution.x is None:
        raise ValueError(f"cannot recover a policy from a {solution.status.value} solution")
    x = np.clip(solution.x, 0.0, 1.0)
    x[x < ZERO_SNAP] = 0.0
    cumulative, conditional = [], []
    for i in range(layout.k):
        cum = x[layout.stage_range(i)].copy()
        if i == 0:
            cond = cum.copy()
        else:
            parent = cumulative[-1][layout.parent(i, np.arange(cum.size))]
            cum = np.minimum(cum, parent)
            cond = np.zeros_like(cum)
            nz = parent > 0
            cond[nz] = cum[nz] / parent[nz]
        cumulative.append(cum)
        conditional.append(np.clip(cond, 0.0, 1.0))
    return Policy(plan, tuple(cumulative), tuple(conditional))


@dataclass(frozen=True, eq=False)
class OptimizeResult:
    utility: float
    policy: Policy
    solution: LpSolution
    problem: LpProblem
    fairness: FairnessSpec
    warnings: tuple[str, ...] = ()

    def to_json(self) -> dict:
        doc = self.policy.to_json()
        doc.update(
            utility=self.utility,
            status=self.solution.status.value,
            criterion=self.fairness.criterion.value,
            scope=self.fairness.scope.value,
            warnings=list(self.warnings),
        )
        return doc


def optimize(
    dist: JointDistribution,
    plan: StagePlan,
    budgets: Budgets,
    fairness: FairnessSpec,
    tol: Tolerances = DEFAULT_TOL,
) -> OptimizeResult:
    """Maximize final-stage precision subject to budgets and ``fairness``."""
    warnings: list[str] = []
    problem = assemble(dist, plan, budgets, fairness, warnings)
    solution = solve(problem, tol)
    if solution.status is not Status.OPTIMAL:
        raise InfeasibleInstance(
            f"LP is {solution.status.value} for plan {plan.describe()} "
            f"(sensitive {plan.sensitive}), budgets {budgets.alphas}, {fairness}"
        )
    policy = recover_policy(solution, VariableLayout.for_plan(plan), plan)
    return OptimizeResult(solution.objective, policy, solution, problem, fairness, tuple(warnings))


__all__ = [
    "InfeasibleInstance",
    "OptimizeResult",
    "VariableLayout",
    "assemble",
    "build_budget_rows",
    "build_coupling_rows",
    "build_fairness_rows",
    "build_objective",
    "fairness_stages",
    "fairness_weights",
    "optimize",
    "recover_policy",
]
