"""Stable factorisation of the (quasi-definite) KKT matrix.

The KKT matrices produced by trajectory transcriptions are banded after a
bandwidth-reducing ordering, apart from a handful of dense rows/columns
(variables shared by every node, such as a free time step).  Those are split
off as a border; the banded interior is factorised by LAPACK's banded LU with
partial pivoting and the border is handled through its Schur complement.
Small or unstructured matrices fall back to a dense LU.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee

DENSE_MAX_DIM = 400
MAX_BORDER = 64


def _border(pattern: sp.csr_matrix) -> np.ndarray:
    deg = np.diff(pattern.indptr)
    thr = max(32.0, 5.0 * float(np.median(deg)))
    cand = np.flatnonzero(deg > thr)
    if cand.size > MAX_BORDER:
        cand = cand[np.argsort(-deg[cand], kind="stable")[:MAX_BORDER]]
    return np.sort(cand)


class BorderedBandLU:
    """LU of a fixed-pattern square sparse matrix; values may change between factorisations."""

    def __init__(self, pattern: sp.spmatrix):
        pat = sp.csr_matrix(pattern, dtype=float, copy=True)
        pat.data[:] = 1.0  # structural pattern, explicit zeros included
        pat = (pat + pat.T).tocsr()
        self.dim = pat.shape[0]
        self.dense = self.dim <= DENSE_MAX_DIM
        if self.dense:
            return
        border = _border(pat)
        interior = np.setdiff1d(np.arange(self.dim), border)
        sub = pat[interior][:, interior]
        order = reverse_cuthill_mckee(sub.tocsr(), symmetric_mode=True)
        self.inner = interior[order]
        self.border = border
        sub = pat[self.inner][:, self.inner].tocoo()
        self.kl = int(max(0, np.max(sub.row - sub.col, initial=0)))
        self.ku = int(max(0, np.max(sub.col - sub.row, initial=0)))
        if self.kl + self.ku > self.inner.size // 3:
            self.dense = True
        inv = np.empty(self.dim, dtype=np.int64)
        inv[self.inner] = np.arange(self.inner.size)
        inv[self.border] = -1 - np.arange(self.border.size)
        self._pos = inv

    def factor(self, K: sp.spmatrix) -> None:
        if self.dense:
            self._lu = sla.lu_factor(K.toarray(), check_finite=True)
            return
        coo = K.tocoo()
        pi, pj = self._pos[coo.row], self._pos[coo.col]
        ni, nb = self.inner.size, self.border.size
        kl, ku = self.kl, self.ku
        ii = (pi >= 0) & (pj >= 0)
        ab = np.zeros((2 * kl + ku + 1, ni), order="F")
        np.add.at(ab, (kl + ku + pi[ii] - pj[ii], pj[ii]), coo.data[ii])
        lub, piv, info = lapack.dgbtrf(ab, kl, ku)
        if info > 0:
            raise np.linalg.LinAlgError(f"singular banded block (pivot {info})")
        self._band = (lub, piv)
        ib = (pi >= 0) & (pj < 0)
        K12 = np.zeros((ni, nb))
        np.add.at(K12, (pi[ib], -1 - pj[ib]), coo.data[ib])
        bi = (pi < 0) & (pj >= 0)
        K21 = np.zeros((nb, ni))
        np.add.at(K21, (-1 - pi[bi], pj[bi]), coo.data[bi])
        bb = (pi < 0) & (pj < 0)
        K22 = np.zeros((nb, nb))
        np.add.at(K22, (-1 - pi[bb], -1 - pj[bb]), coo.data[bb])
        X = self._band_solve(K12) if nb else K12
        self._X, self._K21 = X, K21
        if nb:
            self._schur = sla.lu_factor(K22 - K21 @ X, check_finite=True)

    def _band_solve(self, rhs):
        lub, piv = self._band
        x, info = lapack.dgbtrs(lub, self.kl, self.ku, rhs, piv)
        if info != 0:
            raise np.linalg.LinAlgError("banded solve failed")
        return x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.dense:
            return sla.lu_solve(self._lu, rhs)
        r1 = rhs[self.inner]
        y1 = self._band_solve(r1)
        out = np.empty_like(rhs)
        if self.border.size:
            x2 = sla.lu_solve(self._schur, rhs[self.border] - self._K21 @ y1)
            y1 = y1 - self._X @ x2
            out[self.border] = x2
        out[self.inner] = y1
        return out
