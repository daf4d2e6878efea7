"""Preconditioned Krylov solvers with a pluggable preconditioner contract.

Operators and preconditioners are plain callables vector -> vector.  Both
solvers start from x = 0, stop at ||b - A x|| / ||b|| <= tol, and are fully
deterministic.  The recursively updated residual is replaced by the true
residual every 50 iterations to guard against drift, and the final reported
residual is always recomputed from the returned iterate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Operator = Callable[[np.ndarray], np.ndarray]

_TRUE_RESIDUAL_EVERY = 50


class SpdViolationError(RuntimeError):
    """CG met nonpositive curvature: the operator is not positive definite."""


@dataclass(frozen=True)
class KrylovStats:
    iterations: int
    final_relres: float
    breakdown: bool = False

    @property
    def converged(self) -> bool:
        return not self.breakdown and np.isfinite(self.final_relres)


def _identity(r: np.ndarray) -> np.ndarray:
    return r


def cg(apply_A: Operator, apply_P: Operator | None, b: np.ndarray,
       tol: float, maxit: int) -> tuple[np.ndarray, KrylovStats]:
    """Preconditioned conjugate gradients; A and P must be SPD.

    Returns (x, stats); non-convergence is reported through stats (caller
    decides whether that is an error), nonpositive curvature raises
    SpdViolationError since it signals a broken operator upstream.
    """
    apply_P = apply_P or _identity
    b = np.asarray(b, dtype=np.float64)
    normb = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if normb == 0.0:
        return x, KrylovStats(iterations=0, final_relres=0.0)

    r = b.copy()
    z = apply_P(r)
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < maxit:
        if float(np.linalg.norm(r)) <= tol * normb:
            # Confirm on the true residual before declaring convergence.
            r = b - apply_A(x)
            if float(np.linalg.norm(r)) <= tol * normb:
                break
            z = apply_P(r)
            rz = float(r @ z)
            p = z.copy()
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SpdViolationError(
                f"nonpositive curvature p'Ap = {pAp:.3e} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if it % _TRUE_RESIDUAL_EVERY == 0:
            r = b - apply_A(x)
        z = apply_P(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    final = float(np.linalg.norm(b - apply_A(x))) / normb
    return x, KrylovStats(iterations=it, final_relres=final)


def bicgstab(apply_A: Operator, apply_P: Operator | None, b: np.ndarray,
             tol: float, maxit: int) -> tuple[np.ndarray, KrylovStats]:
    """Right-preconditioned BiCGStab; A need not be symmetric.

    rho- or omega-breakdown sets the breakdown flag and returns the best
    iterate found so far.
    """
    apply_P = apply_P or _identity
    b = np.asarray(b, dtype=np.float64)
    normb = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if normb == 0.0:
        return x, KrylovStats(iterations=0, final_relres=0.0)

    eps = np.finfo(np.float64).tiny
    r = b.copy()
    r0 = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    it = 0
    breakdown = False
    restarted = False
    while it < maxit:
        if float(np.linalg.norm(r)) <= tol * normb:
            r = b - apply_A(x)
            if float(np.linalg.norm(r)) <= tol * normb:
                break
            if not restarted:  # restart the recurrence on the true residual
                restarted = True
                r0 = r.copy()
                rho = alpha = omega = 1.0
                v[:] = 0.0
                p[:] = 0.0
        rho_new = float(r0 @ r)
        if abs(rho_new) < eps:
            breakdown = True
            break
        if it == 0:
            p = r.copy()
        else:
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
        phat = apply_P(p)
        v = apply_A(phat)
        denom = float(r0 @ v)
        if abs(denom) < eps:
            breakdown = True
            break
        alpha = rho_new / denom
        s = r - alpha * v
        if float(np.linalg.norm(s)) <= tol * normb:
            x += alpha * phat
            it += 1
            r = s
            break
        shat = apply_P(s)
        t = apply_A(shat)
        tt = float(t @ t)
        if tt < eps:
            breakdown = True
            break
        omega = float(t @ s) / tt
        x += alpha * phat + omega * shat
        r = s - omega * t
        rho = rho_new
        it += 1
        if abs(omega) < eps:
            breakdown = True
            break
        if it % _TRUE_RESIDUAL_EVERY == 0:
            r = b - apply_A(x)
    final = float(np.linalg.norm(b - apply_A(x))) / normb
    return x, KrylovStats(iterations=it, final_relres=final, breakdown=breakdown)
