"""Strictly convex quadratic programs with linear inequality constraints.

    minimize    0.5 x'Hx + g'x
    subject to  A x >= b

Primal active-set method (Nocedal & Wright, Alg. 16.3) started from a
feasible point. ``H`` is factored once; each working-set subproblem is an
equality-constrained QP solved through the Schur complement
``A_W H^{-1} A_W'``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NumericalFailure


@dataclass
class QPResult:
    x: np.ndarray
    multipliers: np.ndarray  # one per row of A; zero off the working set
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    stationarity: float
    primal_violation: float
    dual_violation: float
    complementarity: float
    residual_floor: float = 0.0


def _refined_solve(H: np.ndarray, fac, rhs: np.ndarray, steps: int = 3) -> np.ndarray:
    """Cholesky solve plus iterative refinement with extended-precision residuals."""
    x = cho_solve(fac, rhs)
    Hl = H.astype(np.longdouble)
    for _ in range(steps):
        r = (rhs.astype(np.longdouble) - Hl @ x.astype(np.longdouble)).astype(float)
        if not np.any(r):
            break
        x = x + cho_solve(fac, r)
    return x


def residual_floor(H, g, x) -> float:
    """Smallest stationarity residual resolvable in double precision at ``x``."""
    eps = np.finfo(float).eps
    return float(64.0 * eps * (np.max(np.sum(np.abs(H), axis=1)) * np.max(np.abs(x), initial=1.0) + np.max(np.abs(g), initial=0.0)))


def kkt_measures(H, g, A, b, x, lam) -> tuple[float, float, float, float]:
    grad = (H.astype(np.longdouble) @ x.astype(np.longdouble) + g).astype(float)
    if A is not None and A.size:
        grad = grad - A.T @ lam
        slack = A @ x - b
        primal = float(max(0.0, -slack.min()))
        dual = float(max(0.0, -lam.min()))
        comp = float(np.max(np.abs(lam * slack)))
    else:
        primal = dual = comp = 0.0
    return float(np.max(np.abs(grad))) if grad.size else 0.0, primal, dual, comp


def solve_qp(
    H: np.ndarray,
    g: np.ndarray,
    A: np.ndarray | None = None,
    b: np.ndarray | None = None,
    x0: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iter: int = 2000,
) -> QPResult:
    """Solve the QP. ``x0`` must satisfy ``A x0 >= b`` when constraints are given.

    ``converged`` requires the KKT residual to be at most ``tol``, or, for
    badly scaled problems where that is below what double precision can
    resolve, at most :func:`residual_floor`. Stall or iteration exhaustion
    is reported through ``converged=False``,
    never raised; a Hessian that is not positive definite raises
    :class:`NumericalFailure`.
    """
    H = np.asarray(H, float)
    g = np.asarray(g, float)
    H = 0.5 * (H + H.T)
    try:
        fac = cho_factor(H)
    except LinAlgError as exc:
        raise NumericalFailure(f"QP Hessian is not positive definite: {exc}") from None

    def objective(x):
        return float(0.5 * x @ H @ x + g @ x)

    if A is None or np.size(A) == 0:
        x = _refined_solve(H, fac, -g)
        lam = np.zeros(0)
        st, pv, dv, cp = kkt_measures(H, g, None, None, x, lam)
        floor = residual_floor(H, g, x)
        return QPResult(x, lam, objective(x), 1, st <= max(tol, floor), st, st, 0.0, 0.0, 0.0, floor)

    A = np.asarray(A, float)
    b = np.asarray(b, float)
    m = A.shape[0]
    x = np.zeros(H.shape[0]) if x0 is None else np.asarray(x0, float).copy()
    feas_tol = 1e-12 * (1.0 + np.abs(b))
    if np.any(A @ x - b < -feas_tol):
        raise NumericalFailure("starting point is infeasible")

    Hinv_g = _refined_solve(H, fac, -g)  # unconstrained minimizer
    work: list[int] = []
    lam = np.zeros(m)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # minimizer of the objective on {A_W x = b_W}
        if work:
            AW = A[work]
            Y = cho_solve(fac, AW.T)
            S = AW @ Y
            lw = np.linalg.solve(S, b[work] - AW @ Hinv_g)
            target = Hinv_g + Y @ lw
        else:
            lw = np.zeros(0)
            target = Hinv_g
        p = target - x
        if np.max(np.abs(p)) <= 1e-13 * (1.0 + np.max(np.abs(x))):
            lam = np.zeros(m)
            lam[work] = lw
            if not work or lw.min() >= 0.0:
                converged = True
                break
            work.pop(int(np.argmin(lw)))
            continue
        Ap = A @ p
        slack = A @ x - b
        inactive = np.ones(m, bool)
        inactive[work] = False
        cand = inactive & (Ap < 0)
        alpha, block = 1.0, -1
        if np.any(cand):
            ratios = np.full(m, np.inf)
            ratios[cand] = np.maximum(slack[cand], 0.0) / -Ap[cand]
            j = int(np.argmin(ratios))
            if ratios[j] < 1.0:
                alpha, block = float(ratios[j]), j
        x = x + alpha * p
        if block >= 0:
            work.append(block)
        else:
            x = target
    # final multipliers for the reported point
    lam = np.zeros(m)
    if work:
        AW = A[work]
        lam[work] = np.linalg.lstsq(AW.T, (H @ x + g), rcond=None)[0]
    st, pv, dv, cp = kkt_measures(H, g, A, b, x, lam)
    resid = max(st, pv, dv, cp)
    floor = residual_floor(H, g, x)
    ok = converged and max(st, cp) <= max(tol, floor) and max(pv, dv) <= tol
    return QPResult(x, lam, objective(x), it, ok, resid, st, pv, dv, cp, floor)
