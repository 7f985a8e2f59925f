"""Presolve: row/column reductions and Ruiz equilibration.

The reductions keep enough bookkeeping (``Presolved.recover``) to map a
solution of the reduced, scaled program back to the original variables
exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .program import ConicProgram, ProgramError

log = logging.getLogger(__name__)

_RANK_CHECK_MAX_ENTRIES = 4_000_000


@dataclass
class Presolved:
    program: ConicProgram
    original: ConicProgram
    rows_kept: np.ndarray  # equality rows of the original that survive
    cols_kept: np.ndarray
    D: np.ndarray  # equality row scaling
    E: np.ndarray  # cone row scaling (constant on each SOC)
    F: np.ndarray  # column scaling
    cost_scale: float
    unbounded_cols: np.ndarray  # zero columns with nonzero cost

    def recover(self, x, y, z, s):
        """Map a scaled, reduced primal-dual point to the original space."""
        orig = self.original
        xo = np.zeros(orig.n)
        xo[self.cols_kept] = self.F * x
        yo = np.zeros(orig.p)
        yo[self.rows_kept] = self.D * y / self.cost_scale
        zo = self.E * z / self.cost_scale
        so = s / self.E
        return xo, yo, zo, so


def _zero_and_duplicate_rows(A: sp.csr_matrix, b: np.ndarray):
    """Indices of equality rows to keep after dropping empty and repeated rows."""
    keep = []
    seen: dict[tuple, tuple[int, float]] = {}
    A = A.tocsr()
    A.sort_indices()
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        cols = A.indices[lo:hi]
        vals = A.data[lo:hi]
        nz = vals != 0.0
        cols, vals = cols[nz], vals[nz]
        if cols.size == 0:
            if abs(b[i]) > 1e-12 * (1.0 + np.abs(b).max(initial=0.0)):
                raise ProgramError(f"equality row {i} reads 0 = {b[i]:g}")
            continue
        pivot = vals[np.argmax(np.abs(vals))]
        key = (tuple(cols), tuple(np.round(vals / pivot, 14)))
        rhs = b[i] / pivot
        if key in seen:
            j, rhs_j = seen[key]
            if abs(rhs - rhs_j) > 1e-10 * (1.0 + abs(rhs)):
                raise ProgramError(f"equality rows {j} and {i} are parallel but inconsistent")
            continue
        seen[key] = (i, rhs)
        keep.append(i)
    return np.asarray(keep, dtype=int)


def _independent_rows(A: sp.csc_matrix, b: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Drop linearly dependent rows (dense pivoted QR; skipped for large A)."""
    sub = A[rows]
    if sub.shape[0] == 0 or sub.shape[0] * sub.shape[1] > _RANK_CHECK_MAX_ENTRIES:
        return rows
    dense = sub.toarray()
    _, r, piv = sla.qr(dense.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        return rows
    tol = max(dense.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank == len(rows):
        return rows
    indep = np.sort(piv[:rank])
    dep = np.setdiff1d(np.arange(len(rows)), indep)
    # consistency: dependent rows must agree with the independent ones
    coef, *_ = np.linalg.lstsq(dense[indep].T, dense[dep].T, rcond=None)
    if np.max(np.abs(coef.T @ b[rows][indep] - b[rows][dep]), initial=0.0) > 1e-8 * (1.0 + np.abs(b).max()):
        raise ProgramError("linearly dependent equality rows have inconsistent right-hand sides")
    log.warning("presolve removed %d linearly dependent equality rows", dep.size)
    return rows[indep]


def _ruiz(A, G, block_of_row, nblocks, iters=25):
    p, n = A.shape
    D = np.ones(p)
    E_blk = np.ones(nblocks)
    F = np.ones(n)
    A = A.tocsc(copy=True)
    G = G.tocsc(copy=True)
    for _ in range(iters):
        col = np.zeros(n)
        if A.nnz:
            col = np.maximum(col, abs(A).max(axis=0).toarray().ravel())
        if G.nnz:
            col = np.maximum(col, abs(G).max(axis=0).toarray().ravel())
        rowA = abs(A).max(axis=1).toarray().ravel() if p else np.zeros(0)
        rowG = abs(G).max(axis=1).toarray().ravel() if G.shape[0] else np.zeros(0)
        blk = np.zeros(nblocks)
        np.maximum.at(blk, block_of_row, rowG)
        if (
            np.all(np.abs(col[col > 0] - 1) < 1e-3)
            and np.all(np.abs(rowA[rowA > 0] - 1) < 1e-3)
            and np.all(np.abs(blk[blk > 0] - 1) < 1e-3)
        ):
            break
        fc = 1.0 / np.sqrt(np.clip(np.where(col > 0, col, 1.0), 1e-8, 1e8))
        fa = 1.0 / np.sqrt(np.clip(np.where(rowA > 0, rowA, 1.0), 1e-8, 1e8))
        fb = 1.0 / np.sqrt(np.clip(np.where(blk > 0, blk, 1.0), 1e-8, 1e8))
        fg = fb[block_of_row]
        A = sp.diags(fa) @ A @ sp.diags(fc)
        G = sp.diags(fg) @ G @ sp.diags(fc)
        D *= fa
        E_blk *= fb
        F *= fc
    return D, E_blk, F


def presolve(program: ConicProgram, equilibrate: bool = True, rank_check: bool = True) -> Presolved:
    """Reduce and equilibrate ``program``.

    Raises ``ProgramError`` for structurally infeasible equalities.
    """
    from .cones import ConeSet  # local import keeps module graph acyclic

    A = program.A.tocsr()
    rows = _zero_and_duplicate_rows(A, program.b)
    if rank_check:
        rows = _independent_rows(program.A.tocsc(), program.b, rows)
    A = program.A.tocsc()[rows]
    b = program.b[rows]

    used = np.zeros(program.n, dtype=bool)
    if A.nnz:
        used |= np.asarray(abs(A).sum(axis=0)).ravel() > 0
    if program.G.nnz:
        used |= np.asarray(abs(program.G).sum(axis=0)).ravel() > 0
    cols = np.flatnonzero(used)
    unbounded = np.flatnonzero(~used & (program.c != 0.0))
    A = A[:, cols]
    G = program.G.tocsc()[:, cols]
    c = program.c[cols]

    cones = ConeSet(program.nonneg, program.soc)
    nblocks = program.nonneg + len(program.soc)
    if equilibrate:
        D, E_blk, F = _ruiz(A, G, cones.block_of_row, nblocks)
    else:
        D, E_blk, F = np.ones(A.shape[0]), np.ones(nblocks), np.ones(len(cols))
    E = E_blk[cones.block_of_row] if program.m else np.ones(0)
    c_s = F * c
    cmax = float(np.abs(c_s).max(initial=0.0))
    cost_scale = 1.0 / cmax if cmax > 1.0 else 1.0
    scaled = ConicProgram(
        cost_scale * c_s,
        sp.diags(D) @ A @ sp.diags(F),
        D * b,
        sp.diags(E) @ G @ sp.diags(F),
        E * program.h,
        program.nonneg,
        program.soc,
    )
    return Presolved(scaled, program, rows, cols, D, E, F, cost_scale, unbounded)
