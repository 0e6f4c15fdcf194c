"""Dense bounded-variable primal simplex.

Solves ``max c^T x`` subject to rows ``a^T x {<=,=,>=} b`` and box bounds
``lo <= x <= hi`` (``lo`` finite, ``hi`` may be +inf). Two phases: phase one
drives artificial variables to zero, phase two optimizes the real objective.
Pricing is Dantzig's largest reduced cost until a run of degenerate pivots
exceeds ``stall_threshold``; from then on Bland's smallest-index rule is used
for both entering and leaving choices, which guarantees termination.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

LE, EQ, GE = "<=", "=", ">="
_SENSES = (LE, EQ, GE)


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SolverError(RuntimeError):
    """The simplex failed to terminate or lost numerical control."""


@dataclass(frozen=True)
class Tolerances:
    pivot: float = 1e-10
    feasibility: float = 1e-9
    optimality: float = 1e-9
    stall_threshold: int = 50
    max_iter_factor: int = 200


DEFAULT_TOL = Tolerances()
REFACTOR_EVERY = 50
SMALL_PIVOT = 1e-6
RESIDUAL_LIMIT = 1e-7


class Row(NamedTuple):
    coeffs: np.ndarray
    sense: str
    rhs: float
    name: str = ""


@dataclass(frozen=True, eq=False)
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    senses: tuple[str, ...]
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    row_names: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        n = c.size
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (n,)).copy()
        senses = tuple(self.senses)
        if A.shape[0] != b.size or len(senses) != b.size:
            raise ValueError(f"{A.shape[0]} rows, {b.size} right-hand sides, {len(senses)} senses")
        bad = [s for s in senses if s not in _SENSES]
        if bad:
            raise ValueError(f"unknown relation(s) {bad}")
        for name, arr in (("c", c), ("A", A), ("b", b), ("lo", lo), ("hi", hi)):
            if np.isnan(arr).any():
                raise ValueError(f"NaN in {name}")
        if np.isinf(c).any() or np.isinf(A).any() or np.isinf(b).any():
            raise ValueError("infinite coefficient")
        if np.isinf(lo).any():
            raise ValueError("lower bounds must be finite")
        if (lo > hi).any():
            raise ValueError("lo <= hi violated")
        names = tuple(self.row_names) or tuple(f"r{i}" for i in range(b.size))
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "row_names", names)

    @classmethod
    def from_rows(cls, c, rows: Sequence[Row], lo=0.0, hi=1.0) -> "LpProblem":
        c = np.asarray(c, dtype=float)
        A = np.array([r.coeffs for r in rows], dtype=float).reshape(len(rows), c.size)
        return cls(
            c,
            A,
            tuple(r.sense for r in rows),
            np.array([r.rhs for r in rows], dtype=float),
            lo,
            hi,
            tuple(r.name or f"r{i}" for i, r in enumerate(rows)),
        )

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: Status
    x: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0


@dataclass(frozen=True)
class Residuals:
    primal: float
    bounds: float
    objective: float

    @property
    def worst(self) -> float:
        return max(self.primal, self.bounds, self.objective)

    def ok(self, tol: float = 1e-9) -> bool:
        return self.worst <= tol


class _Tableau:
    """Working state of the bounded simplex on the standard-form problem
    ``M y = r``, ``0 <= y <= u``."""

    def __init__(self, M, r, u, basis, tol: Tolerances):
        self.M0 = M.copy()
        self.r = r
        self.T = M.copy()
        self.u = u
        self.basis = np.array(basis)
        self.tol = tol
        m, N = M.shape
        self.is_basic = np.zeros(N, dtype=bool)
        self.is_basic[self.basis] = True
        self.at_upper = np.zeros(N, dtype=bool)
        self.y = np.zeros(N)
        self.y[self.basis] = r
        self.enterable = np.ones(N, dtype=bool)
        self.iterations = 0

    def run(self, cost: np.ndarray, max_iter: int) -> Status:
        tol = self.tol
        u = self.u
        self.refactor()
        T = self.T
        d = cost - cost[self.basis] @ T
        degenerate_run = 0
        since_refactor = 0
        bland = False
        for _ in range(max_iter):
            if since_refactor >= REFACTOR_EVERY:
                self.refactor()
                T = self.T
                d = cost - cost[self.basis] @ T
                since_refactor = 0
            movable = self.enterable & ~self.is_basic & (u > 0)
            up = movable & ~self.at_upper & (d > tol.optimality)
            down = movable & self.at_upper & (d < -tol.optimality)
            eligible = np.flatnonzero(up | down)
            if eligible.size == 0:
                return Status.OPTIMAL
            if bland:
                j = int(eligible[0])
            else:
                j = int(eligible[np.argmax(np.abs(d[eligible]))])
            sigma = -1.0 if self.at_upper[j] else 1.0
            alpha = sigma * T[:, j]
            yb = self.y[self.basis]
            ub = u[self.basis]

            piv = tol.pivot * max(1.0, float(np.abs(alpha).max(initial=0.0)))
            dec = alpha > piv
            inc = (alpha < -piv) & np.isfinite(ub)
            room_dec = np.maximum(yb[dec], 0.0)
            room_inc = np.maximum(ub[inc] - yb[inc], 0.0)
            ratios = np.full(alpha.size, np.inf)
            ratios[dec] = room_dec / alpha[dec]
            ratios[inc] = room_inc / -alpha[inc]
            t_row = ratios.min() if ratios.size else np.inf
            if not np.isfinite(t_row) and not np.isfinite(u[j]):
                return Status.UNBOUNDED
            self.iterations += 1

            if np.isfinite(t_row):
                ties = np.flatnonzero(ratios <= t_row + 1e-12)
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    # Harris: among rows blocking within the feasibility
                    # tolerance, pivot on the largest element
                    relaxed = np.full(alpha.size, np.inf)
                    relaxed[dec] = (room_dec + tol.feasibility) / alpha[dec]
                    relaxed[inc] = (room_inc + tol.feasibility) / -alpha[inc]
                    cand = np.flatnonzero(ratios <= relaxed.min())
                    r = int(cand[np.argmax(np.abs(alpha[cand]))])
                t = ratios[r]
            else:
                t = np.inf

            if u[j] <= t:
                # bound flip, basis unchanged
                self.y[self.basis] = yb - alpha * u[j]
                self.at_upper[j] = not self.at_upper[j]
                self.y[j] = u[j] if self.at_upper[j] else 0.0
                degenerate_run = 0
                continue

            leaving = int(self.basis[r])
            self.y[self.basis] = yb - alpha * t
            self.y[j] += sigma * t
            to_upper = alpha[r] < 0
            self.y[leaving] = u[leaving] if to_upper else 0.0
            self.at_upper[leaving] = to_upper
            self.at_upper[j] = False
            small = abs(alpha[r]) < SMALL_PIVOT
            self._pivot(r, j)
            d = d - d[j] * T[r]
            d[j] = 0.0
            since_refactor = REFACTOR_EVERY if small else since_refactor + 1

            if t <= 1e-12:
                degenerate_run += 1
                if degenerate_run > tol.stall_threshold:
                    bland = True
            else:
                degenerate_run = 0
        raise SolverError(f"simplex did not terminate within {max_iter} iterations")

    def refactor(self) -> None:
        """Rebuild the tableau and basic values from the original matrix."""
        try:
            T = np.linalg.solve(self.M0[:, self.basis], self.M0)
        except np.linalg.LinAlgError:
            return
        T[:, self.basis] = np.eye(self.basis.size)
        self.T = T
        self.refresh_basic_values()

    def _pivot(self, r: int, j: int) -> None:
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, j] = 0.0
        T[r, j] = 1.0
        self.is_basic[self.basis[r]] = False
        self.is_basic[j] = True
        self.basis[r] = j

    def refresh_basic_values(self) -> None:
        """Recompute basic values from the original matrix to shed drift."""
        nonbasic = ~self.is_basic
        rhs = self.r - self.M0[:, nonbasic] @ self.y[nonbasic]
        B = self.M0[:, self.basis]
        try:
            self.y[self.basis] = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError:
            pass


def solve(problem: LpProblem, tol: Tolerances = DEFAULT_TOL) -> LpSolution:
    """Maximize ``problem.c @ x``; returns an optimal basic solution or a status."""
    n, m = problem.n_vars, problem.n_rows
    u_struct = problem.hi - problem.lo
    r = problem.b - problem.A @ problem.lo

    slack_sign = np.array([{LE: 1.0, EQ: 0.0, GE: -1.0}[s] for s in problem.senses])
    slack_rows = np.flatnonzero(slack_sign != 0)
    flip = np.where(r < 0, -1.0, 1.0)
    r = r * flip

    M_struct = problem.A * flip[:, None]
    M_slack = np.zeros((m, slack_rows.size))
    M_slack[slack_rows, np.arange(slack_rows.size)] = slack_sign[slack_rows] * flip[slack_rows]

    # rows whose slack enters with +1 start with that slack basic
    basis = np.full(m, -1)
    for k, row in enumerate(slack_rows):
        if M_slack[row, k] > 0:
            basis[row] = n + k
    need_art = np.flatnonzero(basis < 0)
    n_art = need_art.size
    M_art = np.zeros((m, n_art))
    M_art[need_art, np.arange(n_art)] = 1.0
    art_start = n + slack_rows.size
    basis[need_art] = art_start + np.arange(n_art)

    M = np.hstack([M_struct, M_slack, M_art])
    N = M.shape[1]
    u = np.concatenate([u_struct, np.full(slack_rows.size, np.inf), np.full(n_art, np.inf)])
    max_iter = tol.max_iter_factor * (m + N + 1)
    tab = _Tableau(M, r, u, basis, tol)

    if n_art:
        phase1 = np.zeros(N)
        phase1[art_start:] = -1.0
        tab.run(phase1, max_iter)
        tab.refresh_basic_values()
        infeas = tab.y[art_start:].sum()
        if infeas > tol.feasibility * max(1.0, np.abs(r).max(initial=0.0)):
            return LpSolution(Status.INFEASIBLE, iterations=tab.iterations)
        _drive_out_artificials(tab, art_start, tol)
        tab.u = u = u.copy()
        u[art_start:] = 0.0
        tab.y[art_start:] = 0.0
        tab.enterable[art_start:] = False

    cost = np.zeros(N)
    cost[:n] = problem.c
    status = tab.run(cost, max_iter)
    if status is Status.UNBOUNDED:
        return LpSolution(status, iterations=tab.iterations)
    tab.refresh_basic_values()
    y = np.clip(tab.y[:n], 0.0, u_struct)
    x = problem.lo + y
    solution = LpSolution(Status.OPTIMAL, x, float(problem.c @ x), tab.iterations)
    scale = max(1.0, float(np.abs(problem.b).max(initial=0.0)))
    if check_solution(problem, solution).primal > RESIDUAL_LIMIT * scale:
        raise SolverError("simplex lost numerical control: final point violates its rows")
    return solution


def _drive_out_artificials(tab: _Tableau, art_start: int, tol: Tolerances) -> None:
    for r in range(tab.basis.size):
        if tab.basis[r] < art_start:
            continue
        row = np.abs(tab.T[r, :art_start])
        row[tab.is_basic[:art_start]] = 0.0
        j = int(np.argmax(row)) if row.size else -1
        if j >= 0 and row[j] > tol.pivot:
            # degenerate pivot: the artificial sits at zero, values do not move
            leaving = tab.basis[r]
            tab._pivot(r, j)
            tab.y[leaving] = 0.0
        # otherwise the row is redundant; the artificial stays basic, fixed at 0


def check_solution(problem: LpProblem, solution: LpSolution) -> Residuals:
    """Worst row violation, bound violation and objective mismatch of ``solution``."""
    if solution.status is not Status.OPTIMAL or solution.x is None:
        raise ValueError("check_solution needs an optimal solution")
    x = solution.x
    ax = problem.A @ x
    viol = np.zeros(problem.n_rows)
    for i, s in enumerate(problem.senses):
        if s == LE:
            viol[i] = max(0.0, ax[i] - problem.b[i])
        elif s == GE:
            viol[i] = max(0.0, problem.b[i] - ax[i])
        else:
            viol[i] = abs(ax[i] - problem.b[i])
    bound = np.maximum(problem.lo - x, 0.0).max(initial=0.0)
    bound = max(bound, np.maximum(x - problem.hi, 0.0).max(initial=0.0))
    return Residuals(
        primal=float(viol.max(initial=0.0)),
        bounds=float(bound),
        objective=abs(float(problem.c @ x) - solution.objective),
    )


def dump_lp(problem: LpProblem, path: str | Path) -> None:
    """Write the LP as tab-separated text: one line per variable, then one per row."""
    fmt = "{:.17g}".format
    lines = [
        "# maximize c.x subject to rows; tab-separated",
        f"vars\t{problem.n_vars}\trows\t{problem.n_rows}",
        "var\tc\tlo\thi",
    ]
    for j in range(problem.n_vars):
        lines.append(f"x{j}\t{fmt(problem.c[j])}\t{fmt(problem.lo[j])}\t{fmt(problem.hi[j])}")
    lines.append("row\tsense\trhs\t" + "\t".join(f"x{j}" for j in range(problem.n_vars)))
    for i in range(problem.n_rows):
        coeffs = "\t".join(fmt(v) for v in problem.A[i])
        lines.append(f"{problem.row_names[i]}\t{problem.senses[i]}\t{fmt(problem.b[i])}\t{coeffs}")
    Path(path).write_text("\n".join(lines) + "\n")


__all__ = [
    "DEFAULT_TOL",
    "EQ",
    "GE",
    "LE",
    "LpProblem",
    "LpSolution",
    "Residuals",
    "Row",
    "SolverError",
    "Status",
    "Tolerances",
    "check_solution",
    "dump_lp",
    "solve",
]
