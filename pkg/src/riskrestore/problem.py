"""Sparse MILP container shared by the model builders and the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

CONTINUOUS = 0
BINARY = 1
INTEGER = 2

LE, EQ, GE = "<=", "=", ">="


@dataclass
class MilpProblem:
    """``min c @ x + offset`` subject to sparse rows and column bounds.

    Rows are stored as ``A x (sense) rhs``; :attr:`row_lo` / :attr:`row_hi`
    give the equivalent two-sided form the simplex works with.
    """

    names: list[str]
    lb: np.ndarray
    ub: np.ndarray
    kind: np.ndarray
    c: np.ndarray
    A: sp.csr_matrix
    sense: list[str]
    rhs: np.ndarray
    row_names: list[str]
    offset: float = 0.0
    var_index: dict[str, int] = field(default_factory=dict)
    catalog: object = None  # builder-specific column map, carried through copies
    branch_class: np.ndarray | None = None  # lower class is branched on first

    def __post_init__(self):
        if not self.var_index:
            self.var_index = {n: i for i, n in enumerate(self.names)}
        if np.any(self.lb > self.ub):
            bad = int(np.flatnonzero(self.lb > self.ub)[0])
            raise ValueError(f"column {self.names[bad]!r} has lower bound above upper bound")

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_rows(self) -> int:
        return len(self.row_names)

    @property
    def integer_mask(self) -> np.ndarray:
        return self.kind != CONTINUOUS

    @property
    def row_lo(self) -> np.ndarray:
        s = np.asarray(self.sense)
        return np.where(s == LE, -np.inf, self.rhs)

    @property
    def row_hi(self) -> np.ndarray:
        s = np.asarray(self.sense)
        return np.where(s == GE, np.inf, self.rhs)

    def index(self, name: str) -> int:
        return self.var_index[name]

    def objective(self, x) -> float:
        return float(self.c @ x + self.offset)

    def with_bounds(self, lb=None, ub=None) -> "MilpProblem":
        return replace(
            self,
            lb=self.lb.copy() if lb is None else np.asarray(lb, float),
            ub=self.ub.copy() if ub is None else np.asarray(ub, float),
            var_index=self.var_index,
        )

    def with_objective(self, c, offset=None) -> "MilpProblem":
        return replace(
            self,
            c=np.asarray(c, float),
            offset=self.offset if offset is None else float(offset),
            lb=self.lb.copy(),
            ub=self.ub.copy(),
            var_index=self.var_index,
        )

    def relaxed(self) -> "MilpProblem":
        return replace(self, kind=np.zeros_like(self.kind), var_index=self.var_index)

    def violation(self, x, int_tol: float = 1e-6) -> float:
        """Largest violation of rows, bounds and integrality at ``x``.

        Computed directly from the stored rows, independent of any solver.
        """
        x = np.asarray(x, float)
        act = self.A @ x
        viol = 0.0
        if self.num_rows:
            lo, hi = self.row_lo, self.row_hi
            viol = max(viol, float(np.max(np.maximum(lo - act, 0.0), initial=0.0)))
            viol = max(viol, float(np.max(np.maximum(act - hi, 0.0), initial=0.0)))
        viol = max(viol, float(np.max(np.maximum(self.lb - x, 0.0), initial=0.0)))
        viol = max(viol, float(np.max(np.maximum(x - self.ub, 0.0), initial=0.0)))
        ints = self.integer_mask
        if ints.any():
            frac = np.abs(x[ints] - np.round(x[ints]))
            fmax = float(frac.max())
            if fmax > int_tol:
                viol = max(viol, fmax)
        return viol

    def is_feasible(self, x, tol: float = 1e-6) -> bool:
        return self.violation(x, int_tol=tol) <= tol

    def violated_rows(self, x, tol: float = 1e-6) -> list[str]:
        act = self.A @ np.asarray(x, float)
        bad = (act < self.row_lo - tol) | (act > self.row_hi + tol)
        return [self.row_names[i] for i in np.flatnonzero(bad)]

    def to_lp(self, path) -> None:
        """Write the problem in CPLEX LP text format."""
        with open(path, "w") as fh:
            fh.write(write_lp(self))


class ModelBuilder:
    """Incremental row/column assembly for :class:`MilpProblem`."""

    def __init__(self):
        self.names: list[str] = []
        self.var_index: dict[str, int] = {}
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._kind: list[int] = []
        self._c: list[float] = []
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self.sense: list[str] = []
        self.rhs: list[float] = []
        self.row_names: list[str] = []
        self.offset = 0.0

    def add_var(self, name, lb=0.0, ub=math.inf, kind=CONTINUOUS, cost=0.0) -> int:
        if name in self.var_index:
            raise ValueError(f"duplicate column {name!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        idx = len(self.names)
        self.names.append(name)
        self.var_index[name] = idx
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._kind.append(kind)
        self._c.append(float(cost))
        return idx

    def add_cost(self, col: int, cost: float) -> None:
        self._c[col] += cost

    def add_row(self, terms, sense, rhs, name) -> int:
        """Add ``sum(coef * x[col]) sense rhs``; ``terms`` is (col, coef) pairs."""
        if sense not in (LE, EQ, GE):
            raise ValueError(f"bad sense {sense!r}")
        r = len(self.row_names)
        merged: dict[int, float] = {}
        for col, coef in terms:
            if not 0 <= col < len(self.names):
                raise IndexError(f"row {name!r} references unknown column {col}")
            merged[col] = merged.get(col, 0.0) + float(coef)
        for col, coef in merged.items():
            if coef != 0.0:
                self._rows.append(r)
                self._cols.append(col)
                self._vals.append(coef)
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name)
        return r

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_rows(self) -> int:
        return len(self.row_names)

    def build(self) -> MilpProblem:
        n, m = len(self.names), len(self.row_names)
        A = sp.csr_matrix(
            (np.asarray(self._vals, float), (np.asarray(self._rows, int), np.asarray(self._cols, int))),
            shape=(m, n),
        )
        A.sum_duplicates()
        return MilpProblem(
            names=list(self.names),
            lb=np.asarray(self._lb, float),
            ub=np.asarray(self._ub, float),
            kind=np.asarray(self._kind, np.int8),
            c=np.asarray(self._c, float),
            A=A,
            sense=list(self.sense),
            rhs=np.asarray(self.rhs, float),
            row_names=list(self.row_names),
            offset=self.offset,
            var_index=dict(self.var_index),
        )


def _num(v: float) -> str:
    return format(v, ".12g")


def _lp_name(name: str) -> str:
    out = name.replace("][", "_").replace("[", "_").replace("]", "")
    return out.replace("-", "m").replace(",", "_")


def write_lp(problem: MilpProblem) -> str:
    names = [_lp_name(n) for n in problem.names]
    lines = ["\\ generated by riskrestore", "Minimize"]

    def expr(cols, vals):
        parts = []
        for j, v in zip(cols, vals):
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {_num(abs(v))} {names[j]}")
        return " ".join(parts) if parts else "0 " + names[0]

    nz = np.flatnonzero(problem.c)
    obj = expr(nz, problem.c[nz])
    if problem.offset:
        obj += f" + {_num(problem.offset)} __offset" if problem.offset > 0 else f" - {_num(-problem.offset)} __offset"
    lines.append(" obj: " + obj)
    lines.append("Subject To")
    A = problem.A.tocsr()
    ops = {LE: "<=", EQ: "=", GE: ">="}
    for i in range(problem.num_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        lines.append(
            f" {_lp_name(problem.row_names[i])}: {expr(A.indices[lo:hi], A.data[lo:hi])} "
            f"{ops[problem.sense[i]]} {_num(problem.rhs[i])}"
        )
    lines.append("Bounds")
    for j, name in enumerate(names):
        lo, hi = problem.lb[j], problem.ub[j]
        lo_s = "-inf" if lo == -math.inf else _num(lo)
        hi_s = "+inf" if hi == math.inf else _num(hi)
        lines.append(f" {lo_s} <= {name} <= {hi_s}")
    if problem.offset:
        lines.append(" __offset = 1")
    bins = [names[j] for j in range(problem.num_vars) if problem.kind[j] == BINARY]
    ints = [names[j] for j in range(problem.num_vars) if problem.kind[j] == INTEGER]
    if bins:
        lines.append("Binaries")
        lines.extend(" " + b for b in bins)
    if ints:
        lines.append("Generals")
        lines.extend(" " + b for b in ints)
    lines.append("End")
    return "\n".join(lines) + "\n"
