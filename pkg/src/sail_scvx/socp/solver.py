"""Primal-dual interior-point method for SOCPs.

Homogeneous self-dual embedding, Nesterov-Todd scaling and Mehrotra
predictor-corrector steps.  The KKT system

    [ dI   A'   G'        ]
    [ A   -dI   0         ]
    [ G    0   -(W'W + dI) ]

is factorised once per iteration (banded LU with partial pivoting, see
``linsys``) and solves are polished against the unregularised system by
iterative refinement, with preconditioned GMRES when refinement stalls.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linsys import BorderedBandLU
from .cones import ConeSet, NTScaling
from .presolve import presolve
from .program import ConicProgram, ProgramError, SolverSolution, Status

log = logging.getLogger(__name__)

STATIC_REG = 1e-13
STEP_FRACTION = 0.99
REFINE_STEPS = 3
REFINE_TOL = 1e-14


class KKTSolver:
    """Factorisation of the scaled KKT matrix with a fixed sparsity pattern."""

    def __init__(self, A: sp.csc_matrix, G: sp.csc_matrix, cones: ConeSet, reg: float = STATIC_REG):
        self.n, self.p, self.m = A.shape[1], A.shape[0], G.shape[0]
        self.cones = cones
        self.reg = reg
        n, p, m = self.n, self.p, self.m
        Ac, Gc = A.tocoo(), G.tocoo()
        rows = [np.arange(n), Ac.row + n, Ac.col, Gc.row + n + p, Gc.col, np.arange(p) + n]
        cols = [np.arange(n), Ac.col, Ac.row + n, Gc.col, Gc.row + n + p, np.arange(p) + n]
        vals = [np.full(n, reg), Ac.data, Ac.data, Gc.data, Gc.data, np.full(p, -reg)]
        # (3,3) block: orthant diagonal then dense SOC blocks, in squared_blocks() order
        off = n + p
        lin = np.arange(cones.nonneg) + off
        blk_rows, blk_cols = [lin], [lin]
        for _, idx in cones.groups:
            r = np.repeat(idx[:, :, None], idx.shape[1], axis=2)
            c = np.repeat(idx[:, None, :], idx.shape[1], axis=1)
            blk_rows.append(r.ravel() + off)
            blk_cols.append(c.ravel() + off)
        self._n_static = sum(len(v) for v in vals)
        r33 = np.concatenate(blk_rows)
        c33 = np.concatenate(blk_cols)
        rows.append(r33)
        cols.append(c33)
        vals.append(np.zeros(r33.size))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        self._static_vals = np.concatenate(vals)
        dim = n + p + m
        order = sp.csc_matrix((np.arange(rows.size, dtype=float) + 1.0, (rows, cols)), shape=(dim, dim))
        order.sort_indices()
        self._perm = order.data.astype(np.int64) - 1  # csc position -> coo entry
        self._K = sp.csc_matrix((np.zeros(rows.size), order.indices.copy(), order.indptr.copy()), shape=(dim, dim))
        self._sign_reg = np.concatenate([np.full(n, reg), np.full(p, -reg), np.full(m, -reg)])
        self._lu = BorderedBandLU(self._K)
        self.last_residual = 0.0
        self.A, self.G = A, G

    def factor(self, scaling: NTScaling | None) -> None:
        vals = self._static_vals.copy()
        if scaling is None:
            diag = np.ones(self.cones.nonneg)
            dense = [np.broadcast_to(np.eye(d), (idx.shape[0], d, d)) for d, idx in self.cones.groups]
        else:
            diag, dense = scaling.squared_blocks()
        blocks = [diag + self.reg]
        for (d, _), B in zip(self.cones.groups, dense):
            B = np.array(B, copy=True)
            B[:, np.arange(d), np.arange(d)] += self.reg
            blocks.append(B.ravel())
        vals[self._n_static :] = -np.concatenate(blocks)
        self._K.data = vals[self._perm]
        self._scaling = scaling
        self._lu.factor(self._K)

    def _matvec_unreg(self, v):
        return self._K @ v - self._sign_reg * v

    def solve(self, rhs):
        """Solve the unregularised system, using the regularised factors as a preconditioner."""
        sol = self._lu.solve(rhs)
        scale = 1.0 + np.max(np.abs(rhs))
        res = rhs - self._matvec_unreg(sol)
        for _ in range(REFINE_STEPS):
            if np.max(np.abs(res)) <= REFINE_TOL * scale:
                break
            sol = sol + self._lu.solve(res)
            res = rhs - self._matvec_unreg(sol)
        if np.max(np.abs(res)) > REFINE_TOL * scale:
            # plain refinement stalls when the regularisation dominates; GMRES does not
            op = spla.LinearOperator(self._K.shape, matvec=self._matvec_unreg)
            pre = spla.LinearOperator(self._K.shape, matvec=self._lu.solve)
            d, _ = spla.gmres(op, res, M=pre, rtol=1e-12, atol=REFINE_TOL * scale, restart=20, maxiter=3)
            sol = sol + d
            res = rhs - self._matvec_unreg(sol)
        self.last_residual = float(np.max(np.abs(res))) / scale
        n, p = self.n, self.p
        return sol[:n], sol[n : n + p], sol[n + p :]


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


class _Residuals:
    """Convergence measures evaluated on the original (unscaled) program."""

    def __init__(self, prog: ConicProgram, x, y, z, s):
        self.pres_eq = _inf(prog.A @ x - prog.b) / (1.0 + _inf(prog.b))
        self.pres_cone = _inf(prog.G @ x + s - prog.h) / (1.0 + _inf(prog.h))
        self.dres = _inf(prog.A.T @ y + prog.G.T @ z + prog.c) / (1.0 + _inf(prog.c))
        self.pcost = float(prog.c @ x)
        self.dcost = float(-prog.b @ y - prog.h @ z)
        self.gap = float(s @ z)
        self.relgap = abs(self.pcost - self.dcost) / (1.0 + min(abs(self.pcost), abs(self.dcost)))

    def as_dict(self):
        return dict(
            primal_eq=self.pres_eq,
            primal_cone=self.pres_cone,
            dual=self.dres,
            gap=self.gap,
            relative_gap=self.relgap,
        )

    def converged(self, tol):
        return (
            self.pres_eq <= tol
            and self.pres_cone <= tol
            and self.dres <= tol
            and self.relgap <= tol
            and self.gap <= tol * (1.0 + abs(self.pcost))
        )


def solve(
    program: ConicProgram,
    tol: float = 1e-8,
    max_iter: int = 100,
    equilibrate: bool = True,
    rank_check: bool = True,
    verbose: bool = False,
) -> SolverSolution:
    """Solve a cone program.

    On ``Optimal`` the returned point satisfies, in the original scaling,
    primal/dual residuals and relative gap at most ``tol``.  On infeasible
    statuses ``x`` (dual infeasible) or ``(y, z)`` (primal infeasible) hold a
    normalised certificate.
    """
    pre = presolve(program, equilibrate=equilibrate, rank_check=rank_check)
    orig = program
    if pre.unbounded_cols.size:
        x = np.zeros(orig.n)
        j = pre.unbounded_cols[0]
        x[j] = -np.sign(orig.c[j])
        return SolverSolution(x, np.zeros(orig.p), np.zeros(orig.m), np.zeros(orig.m), Status.DUAL_INFEASIBLE, 0, np.nan)

    prog = pre.program
    cones = ConeSet(prog.nonneg, prog.soc)
    A, G, b, h, c = prog.A, prog.G, prog.b, prog.h, prog.c
    At, Gt = A.T.tocsr(), G.T.tocsr()
    e = cones.identity()
    kkt = None
    reg = STATIC_REG
    for attempt in range(3):
        try:
            kkt = KKTSolver(A, G, cones, reg)
            kkt.factor(None)
            break
        except (RuntimeError, np.linalg.LinAlgError):
            reg *= 100.0
    if kkt is None:
        return _trouble(orig, 0, "initial factorisation failed")

    # initial point (CVXOPT-style least-norm projections, shifted into the cone)
    xh, _, zp = kkt.solve(np.concatenate([np.zeros(prog.n), b, h]))
    _, yh, zd = kkt.solve(np.concatenate([-c, np.zeros(prog.p), np.zeros(prog.m)]))
    s = -zp
    z = zd
    ap = cones.min_shift(s)
    if ap >= -1e-8:
        s = s + (1.0 + ap) * e
    az = cones.min_shift(z)
    if az >= -1e-8:
        z = z + (1.0 + az) * e
    x, y = xh, yh
    tau, kappa = 1.0, 1.0

    best = None
    status = Status.MAX_ITERATIONS
    it = 0
    stall = 0
    for it in range(max_iter + 1):
        rx = At @ y + Gt @ z + c * tau
        ry = A @ x - b * tau
        rz = G @ x + s - h * tau
        rt = c @ x + b @ y + h @ z + kappa
        mu = (s @ z + tau * kappa) / (cones.degree + 1)

        xo, yo, zo, so = pre.recover(x / tau, y / tau, z / tau, s / tau)
        res = _Residuals(orig, xo, yo, zo, so)
        if verbose:
            log.info(
                "it %3d pcost %+.6e dcost %+.6e gap %.1e pres %.1e dres %.1e tau %.1e kap %.1e",
                it, res.pcost, res.dcost, res.gap, max(res.pres_eq, res.pres_cone), res.dres, tau, kappa,
            )
        score = max(res.pres_eq, res.pres_cone, res.dres, res.relgap)
        if best is None or score < best[0]:
            best = (score, xo, yo, zo, so, res)
        if res.converged(tol):
            status = Status.OPTIMAL
            break
        cert = _certificate(pre, orig, x, y, z, s, tol)
        if cert is not None:
            status, xo, yo, zo, so = cert
            return SolverSolution(xo, yo, zo, so, status, it, np.nan)
        if it == max_iter:
            break

        try:
            W = NTScaling(cones, s, z)
            kkt.factor(W)
        except (RuntimeError, FloatingPointError, ValueError, np.linalg.LinAlgError):
            status = Status.NUMERICAL_TROUBLE
            break
        lam = W.lam
        x1, y1, z1 = kkt.solve(np.concatenate([-c, b, h]))
        den = c @ x1 + b @ y1 + h @ z1 - kappa / tau

        def direction(eta, dss, dk):
            x0, y0, z0 = kkt.solve(np.concatenate([-eta * rx, -eta * ry, -eta * rz - W.apply(cones.jordan_div(lam, dss))]))
            dtau = (-eta * rt - dk / tau - (c @ x0 + b @ y0 + h @ z0)) / den
            dx = x0 + dtau * x1
            dy = y0 + dtau * y1
            dz = z0 + dtau * z1
            ds = W.apply(cones.jordan_div(lam, dss) - W.apply(dz))
            dkap = (dk - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkap

        def step_to_boundary(dz, ds, dtau, dkap):
            a = min(cones.max_step(s, ds), cones.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a

        lamsq = cones.jordan(lam, lam)
        aff = direction(1.0, -lamsq, -tau * kappa)
        a_aff = min(1.0, step_to_boundary(aff[2], aff[3], aff[4], aff[5]))
        sigma = min(1.0, max(0.0, 1.0 - a_aff)) ** 3
        ds_s = W.apply_inv(aff[3])
        dz_s = W.apply(aff[2])
        dss = -lamsq + sigma * mu * e - cones.jordan(ds_s, dz_s)
        dk = -tau * kappa + sigma * mu - aff[4] * aff[5]
        dx, dy, dz, ds, dtau, dkap = direction(1.0 - sigma, dss, dk)
        alpha = min(1.0, STEP_FRACTION * step_to_boundary(dz, ds, dtau, dkap))
        if verbose:
            log.info("      sigma %.2e alpha %.2e a_aff %.2e kkt-res %.1e", sigma, alpha, a_aff, kkt.last_residual)
        if not np.isfinite(alpha) or alpha < 1e-10:
            stall += 1
            if stall >= 3:
                status = Status.NUMERICAL_TROUBLE
                break
        else:
            stall = 0
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkap
        if not (np.all(np.isfinite(x)) and np.isfinite(tau)):
            status = Status.NUMERICAL_TROUBLE
            break

    if status is not Status.OPTIMAL:
        _, xo, yo, zo, so, res = best
    return SolverSolution(
        xo, yo, zo, so, status, it, res.gap, res.pcost, res.dcost, res.as_dict()
    )


def _certificate(pre, orig: ConicProgram, x, y, z, s, tol):
    """Check the current homogeneous iterate for an infeasibility certificate."""
    xo, yo, zo, so = pre.recover(x, y, z, s)
    by_hz = float(orig.b @ yo + orig.h @ zo)
    if by_hz < 0.0:
        r = _inf(orig.A.T @ yo + orig.G.T @ zo) / (-by_hz)
        if r <= tol:
            k = -by_hz
            return Status.PRIMAL_INFEASIBLE, np.full(orig.n, np.nan), yo / k, zo / k, np.full(orig.m, np.nan)
    cx = float(orig.c @ xo)
    if cx < 0.0:
        r = max(_inf(orig.A @ xo), _inf(orig.G @ xo + so)) / (-cx)
        if r <= tol:
            k = -cx
            return Status.DUAL_INFEASIBLE, xo / k, np.full(orig.p, np.nan), np.full(orig.m, np.nan), so / k
    return None


def _trouble(orig, it, msg):
    log.warning("solver: %s", msg)
    nan = np.full
    return SolverSolution(nan(orig.n, np.nan), nan(orig.p, np.nan), nan(orig.m, np.nan), nan(orig.m, np.nan),
                          Status.NUMERICAL_TROUBLE, it, np.nan)


__all__ = ["solve", "KKTSolver", "ConicProgram", "SolverSolution", "Status", "ProgramError"]
