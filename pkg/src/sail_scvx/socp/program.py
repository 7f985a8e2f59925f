"""Cone program data and solver results.

Standard form::

    minimize    c'x
    subject to  A x = b
                G x + s = h,   s in K

where K is a product of one nonnegative orthant followed by second-order
cones ``{(t, w): ||w|| <= t}`` in the order listed by ``soc``.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_TROUBLE = "NumericalTrouble"


class ProgramError(ValueError):
    """Malformed or structurally infeasible program data."""


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    nonneg: int = 0
    soc: tuple[int, ...] = ()

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = sp.csc_matrix(self.A if self.A is not None else (0, n), dtype=float)
        self.G = sp.csc_matrix(self.G if self.G is not None else (0, n), dtype=float)
        self.b = np.asarray(self.b if self.b is not None else [], dtype=float).ravel()
        self.h = np.asarray(self.h if self.h is not None else [], dtype=float).ravel()
        self.soc = tuple(int(d) for d in self.soc)
        self.nonneg = int(self.nonneg)
        if self.A.shape[1] != n or self.G.shape[1] != n:
            raise ProgramError(f"A and G need {n} columns, got {self.A.shape[1]} and {self.G.shape[1]}")
        if self.A.shape[0] != self.b.size:
            raise ProgramError("A and b row counts differ")
        if self.G.shape[0] != self.h.size:
            raise ProgramError("G and h row counts differ")
        if self.nonneg < 0 or any(d < 1 for d in self.soc):
            raise ProgramError("cone dimensions must be positive")
        if self.nonneg + sum(self.soc) != self.G.shape[0]:
            raise ProgramError(
                f"G has {self.G.shape[0]} rows but cones cover {self.nonneg + sum(self.soc)}"
            )
        for name, arr in (("c", self.c), ("b", self.b), ("h", self.h), ("A", self.A.data), ("G", self.G.data)):
            if not np.all(np.isfinite(arr)):
                raise ProgramError(f"non-finite entries in {name}")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def p(self) -> int:
        return self.b.size

    @property
    def m(self) -> int:
        return self.h.size

    @property
    def degree(self) -> int:
        """Barrier degree: one per orthant coordinate plus one per SOC."""
        return self.nonneg + len(self.soc)

    def dump(self, fh) -> None:
        """Write the plain-text matrix format (see ``load``)."""
        fh.write("# conic program: minimize c'x s.t. Ax = b, Gx + s = h, s in K\n")
        fh.write(f"dims {self.n} {self.p} {self.m}\n")
        fh.write(f"cones nonneg {self.nonneg} soc {len(self.soc)}")
        for d in self.soc:
            fh.write(f" {d}")
        fh.write("\n")
        for name, vec in (("c", self.c), ("b", self.b), ("h", self.h)):
            nz = np.flatnonzero(vec)
            fh.write(f"vector {name} {nz.size}\n")
            for i in nz:
                fh.write(f"{i} {float(vec[i])!r}\n")
        for name, mat in (("A", self.A), ("G", self.G)):
            coo = mat.tocoo()
            fh.write(f"matrix {name} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")

    def dumps(self) -> str:
        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()

    @classmethod
    def load(cls, fh) -> "ConicProgram":
        lines = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
        it = iter(lines)
        head = next(it)
        if head[0] != "dims":
            raise ProgramError("expected 'dims' header")
        n, p, m = (int(x) for x in head[1:4])
        cones = next(it)
        nonneg = int(cones[2])
        nsoc = int(cones[4])
        soc = tuple(int(x) for x in cones[5 : 5 + nsoc])
        vecs = {"c": np.zeros(n), "b": np.zeros(p), "h": np.zeros(m)}
        mats = {}
        shapes = {"A": (p, n), "G": (m, n)}
        for tok in it:
            kind, name, count = tok[0], tok[1], int(tok[2])
            if kind == "vector":
                for _ in range(count):
                    i, v = next(it)
                    vecs[name][int(i)] = float(v)
            elif kind == "matrix":
                rows, cols, vals = [], [], []
                for _ in range(count):
                    i, j, v = next(it)
                    rows.append(int(i))
                    cols.append(int(j))
                    vals.append(float(v))
                mats[name] = sp.csc_matrix((vals, (rows, cols)), shape=shapes[name])
            else:
                raise ProgramError(f"unknown section {kind!r}")
        return cls(
            vecs["c"],
            mats.get("A", sp.csc_matrix(shapes["A"])),
            vecs["b"],
            mats.get("G", sp.csc_matrix(shapes["G"])),
            vecs["h"],
            nonneg,
            soc,
        )


@dataclass
class SolverSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    status: Status
    iterations: int
    duality_gap: float
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL
