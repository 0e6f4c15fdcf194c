"""Domain types: feature spaces, joint distributions, stage plans, budgets,
fairness specifications and policies.

Cells are indexed by packing the binary feature values little-endian:
feature 0 is the least significant bit.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_FEATURES = 20
MASS_TOL = 1e-12


class InputError(ValueError):
    """Malformed user input (files, arguments, instances)."""


class InvariantViolation(AssertionError):
    """A computed result breaks a property that must always hold."""


def cell_index(assignment: Sequence[int], d: int | None = None) -> int:
    """Pack a bit assignment into a cell index (feature 0 = LSB)."""
    if d is not None and len(assignment) != d:
        raise ValueError(f"assignment has {len(assignment)} bits, expected {d}")
    idx = 0
    for j, bit in enumerate(assignment):
        if bit not in (0, 1):
            raise ValueError(f"bit {j} is {bit!r}, expected 0 or 1")
        idx |= int(bit) << j
    return idx


def cell_decode(index: int, d: int) -> tuple[int, ...]:
    if not 0 <= index < (1 << d):
        raise ValueError(f"cell index {index} out of range for d={d}")
    return tuple((index >> j) & 1 for j in range(d))


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FeatureSpace:
    features: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not 1 <= len(self.features) <= MAX_FEATURES:
            raise InputError(f"need 1..{MAX_FEATURES} features, got {len(self.features)}")
        if len(set(self.features)) != len(self.features):
            raise InputError(f"duplicate feature names in {self.features}")

    @property
    def d(self) -> int:
        return len(self.features)

    @property
    def n_cells(self) -> int:
        return 1 << self.d

    def position(self, name: str) -> int:
        try:
            return self.features.index(name)
        except ValueError:
            raise InputError(f"unknown feature {name!r}; have {list(self.features)}") from None

    def bits(self, name: str) -> np.ndarray:
        """Value of feature ``name`` in every cell, as a 0/1 int array."""
        return (np.arange(self.n_cells) >> self.position(name)) & 1


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Cell probabilities ``mass`` and conditional positives P(y=1 | cell)."""

    space: FeatureSpace
    mass: np.ndarray
    positive: np.ndarray

    def __post_init__(self):
        mass = _frozen(self.mass)
        positive = _frozen(self.positive)
        n = self.space.n_cells
        if mass.shape != (n,) or positive.shape != (n,):
            raise InputError(
                f"mass/positive must have {n} entries for d={self.space.d}, "
                f"got {mass.shape} and {positive.shape}"
            )
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "positive", positive)

    @property
    def features(self) -> tuple[str, ...]:
        return self.space.features

    def problems(self) -> list[str]:
        out = []
        if np.isnan(self.mass).any() or np.isnan(self.positive).any():
            out.append("mass and positive must not contain NaN")
            return out
        if (self.mass < 0).any():
            out.append("every mass must be >= 0")
        if abs(self.mass.sum() - 1.0) > MASS_TOL:
            out.append(f"mass sums to 1 (got {self.mass.sum():.15g})")
        if ((self.positive < 0) | (self.positive > 1)).any():
            out.append("every positive must lie in [0, 1]")
        if (self.positive[self.mass == 0] != 0).any():
            out.append("zero-mass cells must carry positive = 0")
        return out

    def p_positive(self) -> float:
        """P(y=1)."""
        return float(self.mass @ self.positive)

    def marginal(self, name: str) -> float:
        """P(feature = 1)."""
        return float(self.mass @ self.space.bits(name))

    def project(self, names: Sequence[str]) -> "JointDistribution":
        """Marginal distribution over the ordered subset ``names``."""
        names = tuple(names)
        space = FeatureSpace(names)
        idx = np.zeros(self.space.n_cells, dtype=np.int64)
        for j, name in enumerate(names):
            idx |= self.space.bits(name) << j
        mass = np.bincount(idx, weights=self.mass, minlength=space.n_cells)
        good = np.bincount(idx, weights=self.mass * self.positive, minlength=space.n_cells)
        positive = np.divide(good, mass, out=np.zeros(space.n_cells), where=mass > 0)
        return JointDistribution(space, mass, np.clip(positive, 0.0, 1.0))

    def to_json(self) -> dict:
        return {
            "features": list(self.features),
            "mass": self.mass.tolist(),
            "positive": self.positive.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "JointDistribution":
        try:
            return cls(FeatureSpace(tuple(doc["features"])), doc["mass"], doc["positive"])
        except KeyError as exc:
            raise InputError(f"distribution file lacks field {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "JointDistribution":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class StagePlan:
    """Which decision features each stage observes.

    ``decision`` lists the decision features in reveal order; stage i sees the
    first ``cuts[i]`` of them. ``sensitive`` names the protected feature, which
    may or may not be a decision feature.
    """

    decision: tuple[str, ...]
    cuts: tuple[int, ...]
    sensitive: str

    def __post_init__(self):
        object.__setattr__(self, "decision", tuple(self.decision))
        object.__setattr__(self, "cuts", tuple(int(c) for c in self.cuts))

    @classmethod
    def from_stages(cls, stages: Sequence[Sequence[str]], sensitive: str) -> "StagePlan":
        """Build from per-stage lists of newly revealed decision features."""
        decision, cuts = [], []
        for new in stages:
            decision.extend(new)
            cuts.append(len(decision))
        return cls(tuple(decision), tuple(cuts), sensitive)

    @property
    def k(self) -> int:
        return len(self.cuts)

    @property
    def placement(self) -> int | None:
        """1-based stage revealing the sensitive feature, or None if unobserved."""
        if self.sensitive not in self.decision:
            return None
        pos = self.decision.index(self.sensitive)
        return next(i + 1 for i, c in enumerate(self.cuts) if pos < c)

    def stage_features(self, i: int) -> tuple[str, ...]:
        """Features newly revealed at 1-based stage ``i``."""
        lo = self.cuts[i - 2] if i > 1 else 0
        return self.decision[lo : self.cuts[i - 1]]

    def describe(self) -> str:
        return "|".join(",".join(self.stage_features(i)) for i in range(1, self.k + 1))

    def problems(self, space: FeatureSpace | None = None) -> list[str]:
        out = []
        if self.k < 1:
            out.append("k >= 1 stages required")
            return out
        if self.cuts[0] < 1 or any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            out.append(f"cuts must be strictly increasing and positive, got {self.cuts}")
        if self.cuts[-1] != len(self.decision):
            out.append(f"last cut {self.cuts[-1]} must equal decision feature count {len(self.decision)}")
        if len(set(self.decision)) != len(self.decision):
            out.append("decision features must be distinct")
        if space is not None:
            missing = [f for f in (*self.decision, self.sensitive) if f not in space.features]
            if missing:
                out.append(f"features {missing} not in distribution")
        return out

    def to_json(self) -> dict:
        return {"decision": list(self.decision), "cuts": list(self.cuts), "sensitive": self.sensitive}

    @classmethod
    def from_json(cls, doc: dict) -> "StagePlan":
        return cls(tuple(doc["decision"]), tuple(doc["cuts"]), doc["sensitive"])


@dataclass(frozen=True)
class Budgets:
    """Expected pass fractions; upper bounds before the last stage, exact at it."""

    alphas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))

    @property
    def k(self) -> int:
        return len(self.alphas)

    @property
    def final(self) -> float:
        return self.alphas[-1]

    def problems(self) -> list[str]:
        a = self.alphas
        if not a:
            return ["at least one budget required"]
        if any(np.isnan(x) for x in a):
            return ["budgets must not be NaN"]
        if a[0] > 1:
            return [f"α_1 <= 1 fails ({a[0]})"]
        for i in range(len(a) - 1):
            if a[i] < a[i + 1]:
                return [f"α_{i + 1} ≥ α_{i + 2} fails ({a[i]} < {a[i + 1]})"]
        if a[-1] <= 0:
            return [f"α_k > 0 fails ({a[-1]})"]
        return []


class Criterion(str, enum.Enum):
    DP = "dp"
    EO = "eo"


class Scope(str, enum.Enum):
    UNCONSTRAINED = "un"
    GLOBAL = "gf"
    LOCAL = "lf"


@dataclass(frozen=True)
class FairnessSpec:
    criterion: Criterion = Criterion.DP
    scope: Scope = Scope.UNCONSTRAINED

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        object.__setattr__(self, "scope", Scope(self.scope))


def validate_instance(dist: JointDistribution, plan: StagePlan, budgets: Budgets) -> str | None:
    """Return the first violated instance invariant, or None when valid."""
    for problem in (*dist.problems(), *plan.problems(dist.space), *budgets.problems()):
        return problem
    if budgets.k != plan.k:
        return f"{budgets.k} budgets given for a {plan.k}-stage plan"
    return None


def require_valid(dist: JointDistribution, plan: StagePlan, budgets: Budgets) -> None:
    problem = validate_instance(dist, plan, budgets)
    if problem is not None:
        raise InputError(problem)


def group_mass(dist: JointDistribution, sensitive: str, a: int, positives_only: bool = False) -> float:
    """P(x_s = a), or P(y = 1, x_s = a) when ``positives_only``."""
    weight = dist.mass * dist.positive if positives_only else dist.mass
    return float(weight[dist.space.bits(sensitive) == a].sum())


def stage_prefixes(space: FeatureSpace, plan: StagePlan) -> np.ndarray:
    """Prefix index of every cell at every stage, shape (k, n_cells).

    The stage-i prefix packs the first ``cuts[i]`` decision features
    little-endian in reveal order.
    """
    cells = np.arange(space.n_cells)
    out = np.zeros((plan.k, space.n_cells), dtype=np.int64)
    code = np.zeros(space.n_cells, dtype=np.int64)
    j = 0
    for i, cut in enumerate(plan.cuts):
        for name in plan.decision[j:cut]:
            code |= ((cells >> space.position(name)) & 1) << j
            j += 1
        out[i] = code
    return out


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-stage pass probabilities indexed by revealed-feature prefix.

    ``cumulative[i][q]`` is the probability that a candidate with stage-(i+1)
    prefix ``q`` passes stages 1..i+1; ``conditional[i][q]`` is the probability
    of passing stage i+1 given it passed stage i.
    """

    plan: StagePlan
    cumulative: tuple[np.ndarray, ...]
    conditional: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "cumulative", tuple(_frozen(c) for c in self.cumulative))
        object.__setattr__(self, "conditional", tuple(_frozen(c) for c in self.conditional))
        for i, cut in enumerate(self.plan.cuts):
            for arr in (self.cumulative[i], self.conditional[i]):
                if arr.shape != (1 << cut,):
                    raise InputError(f"stage {i + 1} table needs {1 << cut} entries, got {arr.shape}")

    @classmethod
    def from_conditional(cls, plan: StagePlan, conditional: Sequence[Sequence[float]]) -> "Policy":
        cond = [np.asarray(c, dtype=float) for c in conditional]
        cum = [cond[0].copy()]
        for i in range(1, plan.k):
            parent = np.arange(1 << plan.cuts[i]) & ((1 << plan.cuts[i - 1]) - 1)
            cum.append(cum[-1][parent] * cond[i])
        return cls(plan, tuple(cum), tuple(cond))

    @classmethod
    def proportional(cls, plan: StagePlan, budgets: Budgets) -> "Policy":
        """Select uniformly at random: α_1 at stage 1, then α_i / α_{i-1}."""
        a = budgets.alphas
        cond = [np.full(1 << plan.cuts[0], a[0])]
        cond += [np.full(1 << plan.cuts[i], a[i] / a[i - 1]) for i in range(1, plan.k)]
        return cls.from_conditional(plan, cond)

    def per_cell(self, space: FeatureSpace) -> np.ndarray:
        """Cumulative pass probability of every cell at every stage, shape (k, n_cells)."""
        prefixes = stage_prefixes(space, self.plan)
        return np.stack([self.cumulative[i][prefixes[i]] for i in range(self.plan.k)])

    def problems(self, tol: float = 1e-12) -> list[str]:
        out = []
        for i, cum in enumerate(self.cumulative):
            if (cum < -tol).any() or (cum > 1 + tol).any():
                out.append(f"stage {i + 1} cumulative outside [0,1]")
            if i:
                parent = np.arange(cum.size) & ((1 << self.plan.cuts[i - 1]) - 1)
                if (cum > self.cumulative[i - 1][parent] + tol).any():
                    out.append(f"stage {i + 1} cumulative exceeds its parent")
        return out

    def to_json(self) -> dict:
        stages = []
        for i in range(self.plan.k):
            cut = self.plan.cuts[i]
            names = self.plan.decision[:cut]
            rows = [
                {
                    "prefix": dict(zip(names, cell_decode(q, cut))),
                    "cumulative": float(self.cumulative[i][q]),
                    "conditional": float(self.conditional[i][q]),
                }
                for q in range(1 << cut)
            ]
            stages.append({"stage": i + 1, "features": list(names), "table": rows})
        return {"plan": self.plan.to_json(), "stages": stages}

    @classmethod
    def from_json(cls, doc: dict) -> "Policy":
        plan = StagePlan.from_json(doc["plan"])
        cum, cond = [], []
        for i, stage in enumerate(doc["stages"]):
            names = plan.decision[: plan.cuts[i]]
            c = np.zeros(1 << plan.cuts[i])
            p = np.zeros(1 << plan.cuts[i])
            for row in stage["table"]:
                q = cell_index([row["prefix"][n] for n in names])
                c[q], p[q] = row["cumulative"], row["conditional"]
            cum.append(c)
            cond.append(p)
        return cls(plan, tuple(cum), tuple(cond))


__all__ = [
    "Budgets",
    "Criterion",
    "FairnessSpec",
    "FeatureSpace",
    "InputError",
    "InvariantViolation",
    "JointDistribution",
    "Policy",
    "Scope",
    "StagePlan",
    "cell_decode",
    "cell_index",
    "group_mass",
    "require_valid",
    "stage_prefixes",
    "validate_instance",
]
