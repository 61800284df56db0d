"""Matrix-form linear programs and their solutions."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..errors import SchemaViolation


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"


SENSES = ("L", "E", "G")


@dataclass
class SparseLP:
    """min c'x + offset  s.t.  A x (<=,=,>=) b,  lb <= x <= ub.

    ``senses`` holds one of ``"L"``, ``"E"``, ``"G"`` per row. Integer columns
    are flagged in ``integrality``.
    """

    c: np.ndarray
    A: sp.csc_matrix
    senses: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: Optional[np.ndarray] = None
    obj_offset: float = 0.0
    row_names: Optional[list] = None
    col_names: Optional[list] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.A.eliminate_zeros()
        self.senses = np.asarray(self.senses, dtype="<U1")
        self.b = np.asarray(self.b, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        m, n = self.A.shape
        if self.integrality is None:
            self.integrality = np.zeros(n, dtype=bool)
        self.integrality = np.asarray(self.integrality, dtype=bool)
        for name, arr, size in (("c", self.c, n), ("lb", self.lb, n), ("ub", self.ub, n),
                                ("integrality", self.integrality, n),
                                ("b", self.b, m), ("senses", self.senses, m)):
            if arr.shape != (size,):
                raise SchemaViolation(name, f"expected shape ({size},), got {arr.shape}")
        if not np.all(np.isfinite(self.c)):
            raise SchemaViolation("c", "objective must be finite")
        if not np.all(np.isfinite(self.A.data)):
            raise SchemaViolation("A", "coefficients must be finite")
        if not np.all(np.isfinite(self.b)):
            raise SchemaViolation("b", "right-hand sides must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise SchemaViolation("bounds", "NaN bound")
        bad = set(np.unique(self.senses)) - set(SENSES)
        if bad:
            raise SchemaViolation("senses", f"unknown sense(s) {sorted(bad)}")

    @property
    def shape(self):
        return self.A.shape

    @property
    def num_rows(self):
        return self.A.shape[0]

    @property
    def num_cols(self):
        return self.A.shape[1]

    def row_bounds(self):
        """Return (lower, upper) row activity bounds."""
        lo = np.where(self.senses == "L", -np.inf, self.b)
        hi = np.where(self.senses == "G", np.inf, self.b)
        return lo, hi

    def with_bounds(self, lb=None, ub=None) -> "SparseLP":
        return SparseLP(self.c, self.A, self.senses, self.b,
                        self.lb if lb is None else lb, self.ub if ub is None else ub,
                        self.integrality, self.obj_offset, self.row_names, self.col_names)

    def relaxation(self) -> "SparseLP":
        return SparseLP(self.c, self.A, self.senses, self.b, self.lb, self.ub,
                        None, self.obj_offset, self.row_names, self.col_names)


@dataclass
class LPSolution:
    """Primal/dual result of an LP solve.

    ``duals[i]`` is the sensitivity of the optimal objective to ``b[i]``;
    ``reduced_costs = c - A' duals``.
    """

    status: Status
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")
    iterations: int = 0
    basis: object = None
    message: str = ""
    # branch-and-bound bookkeeping
    bound: float = float("nan")
    nodes: int = 0
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


class LPBuilder:
    """Incremental assembly of a SparseLP from named columns and tagged rows."""

    def __init__(self):
        self._lb: list = []
        self._ub: list = []
        self._c: list = []
        self._int: list = []
        self.col_names: list = []
        self._rows: list = []
        self._cols: list = []
        self._vals: list = []
        self._senses: list = []
        self._rhs: list = []
        self.row_tags: list = []
        self.row_names: list = []

    @property
    def num_cols(self):
        return len(self._c)

    @property
    def num_rows(self):
        return len(self._rhs)

    def add_col(self, name, lb=0.0, ub=np.inf, cost=0.0, integer=False) -> int:
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._c.append(float(cost))
        self._int.append(bool(integer))
        self.col_names.append(name)
        return len(self._c) - 1

    def add_cols(self, names, lb=0.0, ub=np.inf, cost=0.0) -> np.ndarray:
        k = len(names)
        start = len(self._c)
        self._lb.extend(np.broadcast_to(np.asarray(lb, dtype=float), (k,)).tolist())
        self._ub.extend(np.broadcast_to(np.asarray(ub, dtype=float), (k,)).tolist())
        self._c.extend(np.broadcast_to(np.asarray(cost, dtype=float), (k,)).tolist())
        self._int.extend([False] * k)
        self.col_names.extend(names)
        return np.arange(start, start + k)

    def add_row(self, cols, vals, sense, rhs, tag, name=None) -> int:
        i = len(self._rhs)
        cols = list(cols)
        vals = list(vals)
        if len(cols) != len(vals):
            raise ValueError("cols/vals length mismatch")
        self._rows.extend([i] * len(cols))
        self._cols.extend(int(c) for c in cols)
        self._vals.extend(float(v) for v in vals)
        self._senses.append(sense)
        self._rhs.append(float(rhs))
        self.row_tags.append(tag)
        self.row_names.append(name if name is not None else f"{tag}[{i}]")
        return i

    def set_cost(self, col, cost):
        self._c[col] = float(cost)

    def add_cost(self, col, cost):
        self._c[col] += float(cost)

    def set_bounds(self, col, lb=None, ub=None):
        if lb is not None:
            self._lb[col] = float(lb)
        if ub is not None:
            self._ub[col] = float(ub)

    def build(self) -> SparseLP:
        m, n = len(self._rhs), len(self._c)
        A = sp.coo_matrix((np.asarray(self._vals, dtype=float),
                           (np.asarray(self._rows, dtype=np.int64), np.asarray(self._cols, dtype=np.int64))),
                          shape=(m, n)).tocsc()
        A.sum_duplicates()
        return SparseLP(np.asarray(self._c), A, np.asarray(self._senses, dtype="<U1"),
                        np.asarray(self._rhs), np.asarray(self._lb), np.asarray(self._ub),
                        np.asarray(self._int, dtype=bool), 0.0,
                        list(self.row_names), list(self.col_names))
