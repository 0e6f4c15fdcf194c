"""Exact evaluation of policies and the price/violation of local fairness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    Budgets,
    Criterion,
    InputError,
    InvariantViolation,
    JointDistribution,
    Policy,
    StagePlan,
)

POLF_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class PolicyEvaluation:
    precision: float
    selection: np.ndarray  # P(pass stage i), per stage
    dp_rates: np.ndarray  # (k, 2): P(pass_i | s=a)
    eo_rates: np.ndarray  # (k, 2): P(pass_i | y=1, s=a)

    @property
    def dp_gaps(self) -> np.ndarray:
        return np.abs(self.dp_rates[:, 0] - self.dp_rates[:, 1])

    @property
    def eo_gaps(self) -> np.ndarray:
        return np.abs(self.eo_rates[:, 0] - self.eo_rates[:, 1])

    def rates(self, criterion: Criterion) -> np.ndarray:
        return self.eo_rates if Criterion(criterion) is Criterion.EO else self.dp_rates

    def gaps(self, criterion: Criterion) -> np.ndarray:
        return self.eo_gaps if Criterion(criterion) is Criterion.EO else self.dp_gaps

    def survivor_rates(self, criterion: Criterion) -> np.ndarray:
        """P(pass_i | pass_{i-1}, s=a); NaN where the conditioning event is null."""
        rates = self.rates(criterion)
        prev = np.vstack([np.ones((1, 2)), rates[:-1]])
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(prev > 0, rates / np.where(prev > 0, prev, 1.0), np.nan)

    def to_json(self) -> dict:
        return {
            "precision": None if np.isnan(self.precision) else self.precision,
            "selection": self.selection.tolist(),
            "dp_rates": self.dp_rates.tolist(),
            "eo_rates": self.eo_rates.tolist(),
            "dp_gaps": self.dp_gaps.tolist(),
            "eo_gaps": self.eo_gaps.tolist(),
        }


def _group_rates(per_cell: np.ndarray, weight: np.ndarray, s: np.ndarray) -> np.ndarray:
    out = np.full((per_cell.shape[0], 2), np.nan)
    for a in (0, 1):
        mask = s == a
        total = weight[mask].sum()
        if total > 0:
            out[:, a] = per_cell[:, mask] @ weight[mask] / total
    return out


def evaluate(policy: Policy, dist: JointDistribution, budgets: Budgets | None = None) -> PolicyEvaluation:
    """Precision, stage pass fractions and group-conditional rates, by exact cell sums."""
    plan = policy.plan
    if budgets is not None and budgets.k != plan.k:
        raise InputError(f"{budgets.k} budgets for a {plan.k}-stage policy")
    t = policy.per_cell(dist.space)
    selection = t @ dist.mass
    good = t[-1] @ (dist.mass * dist.positive)
    precision = good / selection[-1] if selection[-1] > 0 else float("nan")
    s = dist.space.bits(plan.sensitive)
    return PolicyEvaluation(
        precision=float(precision),
        selection=selection,
        dp_rates=_group_rates(t, dist.mass, s),
        eo_rates=_group_rates(t, dist.mass * dist.positive, s),
    )


def polf(u_gf: float, u_lf: float) -> float:
    """Price of local fairness U*_GF / U*_LF."""
    if not u_lf > 0:
        raise ValueError(f"PoLF undefined for locally fair utility {u_lf}")
    ratio = u_gf / u_lf
    if ratio < 1 - POLF_SLACK:
        raise InvariantViolation(f"PoLF {ratio} < 1: U*_GF={u_gf} below U*_LF={u_lf}")
    return ratio


def polf_bound(dist: JointDistribution, budgets: Budgets) -> float:
    """min(1/α_k, 1/P(y=1))."""
    py = dist.p_positive()
    return min(1.0 / budgets.final, 1.0 / py if py > 0 else float("inf"))


def volf(gf_policy: Policy, dist: JointDistribution, criterion: Criterion) -> tuple[np.ndarray, float]:
    """Fairness gaps at the intermediate stages 1..k-1 and their maximum.

    For two stages the scalar is the stage-1 gap. NaN gaps (an empty group)
    count as zero in the scalar.
    """
    gaps = evaluate(gf_policy, dist).gaps(criterion)[:-1]
    scalar = float(np.nanmax(gaps)) if gaps.size and not np.isnan(gaps).all() else 0.0
    return gaps, scalar


__all__ = ["POLF_SLACK", "PolicyEvaluation", "evaluate", "polf", "polf_bound", "volf"]
