"""Vectorised operations on a product of a nonnegative orthant and SOCs.

Second-order cones of equal dimension are grouped so every operation is a
handful of numpy calls regardless of how many cones there are.
"""

from __future__ import annotations

import numpy as np


class ConeSet:
    def __init__(self, nonneg: int, soc):
        self.nonneg = nonneg
        self.soc = tuple(soc)
        self.m = nonneg + sum(self.soc)
        self.degree = nonneg + len(self.soc)
        groups: dict[int, list[int]] = {}
        offset = nonneg
        for d in self.soc:
            groups.setdefault(d, []).append(offset)
            offset += d
        # each group: (dim, index array of shape (ncones, dim))
        self.groups = [(d, np.asarray(starts)[:, None] + np.arange(d)) for d, starts in sorted(groups.items())]
        self.lin = np.arange(nonneg)
        # cone id per row, used for per-block scalings
        self.block_of_row = np.empty(self.m, dtype=int)
        self.block_of_row[:nonneg] = np.arange(nonneg)
        offset = nonneg
        for j, d in enumerate(self.soc):
            self.block_of_row[offset : offset + d] = nonneg + j
            offset += d

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[: self.nonneg] = 1.0
        for _, idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e

    def inner_residual(self, x):
        """Smallest 'interiority' per cone: x_i for the orthant, t - ||w|| for SOCs."""
        vals = [x[: self.nonneg]]
        for _, idx in self.groups:
            blk = x[idx]
            vals.append(blk[:, 0] - np.linalg.norm(blk[:, 1:], axis=1))
        return np.concatenate(vals) if vals else np.zeros(0)

    def min_shift(self, x) -> float:
        """Smallest alpha with x + alpha*e in the (closed) cone; can be negative."""
        r = self.inner_residual(x)
        return float(-r.min()) if r.size else -1.0

    def jdet(self, x):
        """x0^2 - ||x1||^2 per SOC block."""
        out = []
        for _, idx in self.groups:
            blk = x[idx]
            out.append(blk[:, 0] ** 2 - np.sum(blk[:, 1:] ** 2, axis=1))
        return out

    def jordan(self, u, v):
        """Jordan product u o v."""
        out = np.empty(self.m)
        k = self.nonneg
        out[:k] = u[:k] * v[:k]
        for _, idx in self.groups:
            ub, vb = u[idx], v[idx]
            out[idx[:, 0]] = np.sum(ub * vb, axis=1)
            out[idx[:, 1:]] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
        return out

    def jordan_div(self, lam, v):
        """Solve lam o x = v for x."""
        out = np.empty(self.m)
        k = self.nonneg
        out[:k] = v[:k] / lam[:k]
        for _, idx in self.groups:
            lb, vb = lam[idx], v[idx]
            l0, l1 = lb[:, 0], lb[:, 1:]
            v0, v1 = vb[:, 0], vb[:, 1:]
            det = l0 * l0 - np.sum(l1 * l1, axis=1)
            x0 = (l0 * v0 - np.sum(l1 * v1, axis=1)) / det
            out[idx[:, 0]] = x0
            out[idx[:, 1:]] = (v1 - x0[:, None] * l1) / l0[:, None]
        return out

    def max_step(self, x, d) -> float:
        """Largest t >= 0 with x + t d in the cone (x strictly interior)."""
        t = np.inf
        k = self.nonneg
        if k:
            neg = d[:k] < 0.0
            if np.any(neg):
                t = min(t, float(np.min(-x[:k][neg] / d[:k][neg])))
        for _, idx in self.groups:
            xb, db = x[idx], d[idx]
            nrm = np.sqrt(np.maximum(xb[:, 0] ** 2 - np.sum(xb[:, 1:] ** 2, axis=1), 1e-300))
            xbar = xb / nrm[:, None]
            rho0 = xbar[:, 0] * db[:, 0] - np.sum(xbar[:, 1:] * db[:, 1:], axis=1)
            rho1 = db[:, 1:] - ((rho0 + db[:, 0]) / (1.0 + xbar[:, 0]))[:, None] * xbar[:, 1:]
            gap = (np.linalg.norm(rho1, axis=1) - rho0) / nrm
            pos = gap > 0.0
            if np.any(pos):
                t = min(t, float(1.0 / np.max(gap[pos])))
        return t


class NTScaling:
    """Nesterov-Todd scaling W with W z = W^{-T} s = lambda (W symmetric)."""

    def __init__(self, cones: ConeSet, s, z):
        self.cones = cones
        k = cones.nonneg
        self.d_lin = np.sqrt(s[:k] / z[:k])
        self.lam = np.empty(cones.m)
        self.lam[:k] = np.sqrt(s[:k] * z[:k])
        self.blocks = []  # (idx, eta, w) per SOC group
        for _, idx in cones.groups:
            sb, zb = s[idx], z[idx]
            s_n = np.sqrt(sb[:, 0] ** 2 - np.sum(sb[:, 1:] ** 2, axis=1))
            z_n = np.sqrt(zb[:, 0] ** 2 - np.sum(zb[:, 1:] ** 2, axis=1))
            sbar = sb / s_n[:, None]
            zbar = zb / z_n[:, None]
            gamma = np.sqrt(0.5 * (1.0 + np.sum(sbar * zbar, axis=1)))
            w = sbar.copy()
            w[:, 0] += zbar[:, 0]
            w[:, 1:] -= zbar[:, 1:]
            w /= (2.0 * gamma)[:, None]
            eta = np.sqrt(s_n / z_n)
            self.blocks.append((idx, eta, w))
            # lambda = W z, computed in the numerically stable normalised form
            lam0 = gamma
            coef = (gamma + zbar[:, 0]) / (sbar[:, 0] + zbar[:, 0] + 2.0 * gamma)
            lam1 = coef[:, None] * sbar[:, 1:] + (1.0 - coef)[:, None] * zbar[:, 1:]
            scale = np.sqrt(s_n * z_n)
            self.lam[idx[:, 0]] = scale * lam0
            self.lam[idx[:, 1:]] = scale[:, None] * lam1

    def _apply(self, v, inverse: bool):
        out = np.empty_like(v)
        k = self.cones.nonneg
        out[:k] = v[:k] / self.d_lin if inverse else v[:k] * self.d_lin
        for idx, eta, w in self.blocks:
            vb = v[idx]
            w0, w1 = w[:, 0], w[:, 1:]
            v0, v1 = vb[:, 0], vb[:, 1:]
            sgn = -1.0 if inverse else 1.0
            w1v1 = np.sum(w1 * v1, axis=1)
            o0 = w0 * v0 + sgn * w1v1
            o1 = v1 + (sgn * v0 + w1v1 / (1.0 + w0))[:, None] * w1
            f = 1.0 / eta if inverse else eta
            out[idx[:, 0]] = f * o0
            out[idx[:, 1:]] = f[:, None] * o1
        return out

    def apply(self, v):
        """W v."""
        return self._apply(v, inverse=False)

    def apply_inv(self, v):
        """W^{-1} v (= W^{-T} v)."""
        return self._apply(v, inverse=True)

    def squared_blocks(self):
        """Diagonal of W^2 on the orthant and dense (ncones, d, d) W^2 blocks per SOC group."""
        dense = []
        for idx, eta, w in self.blocks:
            d = idx.shape[1]
            # W^2 = eta^2 (2 w w' - J) for w' J w = 1
            wsq = 2.0 * w[:, :, None] * w[:, None, :]
            wsq[:, 0, 0] -= 1.0
            wsq[:, np.arange(1, d), np.arange(1, d)] += 1.0
            dense.append(wsq * (eta**2)[:, None, None])
        return self.d_lin**2, dense
