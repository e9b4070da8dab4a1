"""Bounded-variable least squares by gradient projection.

Minimises ``0.5 * ||A z - c||^2`` over the box ``lo <= z <= hi``.  Each
iteration does an exact minimisation of the quadratic along the projected
gradient path (a piecewise-linear arc, searched breakpoint by breakpoint),
followed by the same exact projected search along the least-squares step
restricted to the free coordinates.  Both searches start at the current
iterate, so the objective never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InputError

MAX_ITER = 10_000
PG_TOL = 1e-8


@dataclass
class BVLSResult:
    z: np.ndarray
    objective: float  # ||A z - c||_2 on the caller's scale
    iterations: int
    pg_norm: float  # projected-gradient norm on the normalised problem
    scale: float
    history: list[float] = field(default_factory=list)  # objective after each step

    @property
    def converged(self) -> bool:
        return self.pg_norm < PG_TOL


def projected_gradient(z, g, lo, hi) -> np.ndarray:
    return z - np.clip(z - g, lo, hi)


def _path_search(A, r, z, d, lo, hi):
    """Exact minimiser of 0.5||r + A (P(z + t d) - z)||^2 over t >= 0.

    ``r`` is the residual ``A z - c`` at the starting point.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hit = np.where(d > 0, (hi - z) / d, np.where(d < 0, (lo - z) / d, np.inf))
    t_hit = np.maximum(t_hit, 0.0)
    breaks = np.unique(t_hit[np.isfinite(t_hit)])
    breaks = np.append(breaks, np.inf)

    z = z.copy()
    r = r.copy()
    t_prev = 0.0
    for t_next in breaks:
        moving = t_hit > t_prev
        p = np.where(moving, d, 0.0)
        if not p.any():
            break
        Ap = A @ p
        slope = Ap @ r
        if slope >= 0:
            break
        curv = Ap @ Ap
        span = t_next - t_prev
        tau = -slope / curv if curv > 0 else np.inf
        if tau < span:
            z += tau * p
            r += tau * Ap
            break
        if not np.isfinite(span):
            break
        z += span * p
        r += span * Ap
        # land exactly on the bounds reached at this breakpoint
        hit = moving & (t_hit <= t_next)
        z[hit] = np.where(d[hit] > 0, hi[hit], lo[hit])
        t_prev = t_next
    return np.clip(z, lo, hi)


def solve_bvls(A, c, lo, hi, z0=None, max_iter: int = MAX_ITER, tol: float = PG_TOL,
               raise_on_failure: bool = True) -> BVLSResult:
    """Solve ``min ||A z - c||_2`` subject to ``lo <= z <= hi``.

    The problem is normalised by the spectral norm of ``A`` internally so that
    the projected-gradient tolerance is scale free.
    """
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m, n = A.shape
    if c.shape != (m,) or lo.shape != (n,) or hi.shape != (n,):
        raise InputError("inconsistent BVLS dimensions")
    if np.any(lo > hi):
        raise InputError("empty box: some lower bound exceeds its upper bound")

    scale = float(np.linalg.norm(A, 2)) or 1.0
    As = A / scale
    cs = c / scale

    z = np.clip(np.zeros(n) if z0 is None else np.asarray(z0, dtype=float), lo, hi)
    r = As @ z - cs
    history = [float(np.linalg.norm(r)) * scale]
    pg = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = As.T @ r
        pg = float(np.linalg.norm(projected_gradient(z, g, lo, hi)))
        if pg < tol:
            it -= 1
            break

        z = _path_search(As, r, z, -g, lo, hi)
        r = As @ z - cs

        free = (z > lo) & (z < hi)
        if free.any():
            d = np.zeros(n)
            d[free] = np.linalg.lstsq(As[:, free], -r, rcond=None)[0]
            z_new = _path_search(As, r, z, d, lo, hi)
            r_new = As @ z_new - cs
            if r_new @ r_new <= r @ r:
                z, r = z_new, r_new
        history.append(float(np.linalg.norm(r)) * scale)
    else:
        g = As.T @ r
        pg = float(np.linalg.norm(projected_gradient(z, g, lo, hi)))

    result = BVLSResult(z, float(np.linalg.norm(A @ z - c)), it, pg, scale, history)
    if pg >= tol and raise_on_failure:
        raise ConvergenceError(
            f"BVLS did not converge in {max_iter} iterations (projected gradient {pg:.3g})",
            best=result,
            grad_norm=pg,
        )
    return result


def kkt_violation(A, c, lo, hi, z, active_tol: float = 1e-12) -> float:
    """Largest violation of the first-order conditions for 0.5||A z - c||^2.

    Free coordinates need a vanishing gradient; at a lower bound the gradient
    may only be non-negative, at an upper bound only non-positive.
    """
    A = np.asarray(A, dtype=float)
    z = np.asarray(z, dtype=float)
    g = A.T @ (A @ z - np.asarray(c, dtype=float))
    at_lo = z <= np.asarray(lo) + active_tol
    at_hi = z >= np.asarray(hi) - active_tol
    viol = np.abs(g)
    viol = np.where(at_lo & ~at_hi, np.maximum(-g, 0.0), viol)
    viol = np.where(at_hi & ~at_lo, np.maximum(g, 0.0), viol)
    viol = np.where(at_lo & at_hi, 0.0, viol)
    return float(viol.max(initial=0.0))
