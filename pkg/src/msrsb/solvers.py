"""Krylov solvers and the two-level multiscale preconditioner.

The two-level application is: pre-smooth, coarse multiscale correction
(restrict, direct coarse solve, interpolate), post-smooth, each stage acting
on the current residual. Convergence histories record the true relative
residual ||f - A x_k|| / ||f|| recomputed at every iteration, starting from
x0 = 0.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .basis import CoarseSystem, Prolongation
from .smoothers import Smoother


@dataclass(frozen=True)
class SolverSpec:
    method: str = "gmres"          # richardson | cg | gmres | bicgstab
    tol: float = 1e-8
    max_iters: int = 200
    restart: int | None = None     # gmres only; None = full

    def __post_init__(self):
        if self.method not in ("richardson", "cg", "gmres", "bicgstab"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.tol <= 0:
            raise ValueError("solver tolerance must be positive")


@dataclass
class ConvergenceHistory:
    residuals: list = dc_field(default_factory=list)  # entry k: relres at iter k
    converged: bool = False
    iterations: int = 0
    wall_time: float = 0.0
    status: str = ""

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("iteration,relative_residual\n")
            for k, r in enumerate(self.residuals):
                f.write(f"{k},{r:.16e}\n")


def apply_ms(prolongation: Prolongation | sp.csr_matrix, coarse: CoarseSystem,
             v: np.ndarray) -> np.ndarray:
    """Multiscale correction: restrict the residual, solve the coarse
    problem, interpolate back."""
    P = prolongation.P if isinstance(prolongation, Prolongation) else prolongation
    return P @ coarse.solve(coarse.R @ v)


class TwoLevelPreconditioner:
    """Pre-smoother, multiscale correction, post-smoother composition.

    Any stage may be disabled (smoother kind "none", or ``coarse=None`` for a
    smoother-only preconditioner)."""

    def __init__(self, A: sp.csr_matrix, pre: Smoother | None,
                 coarse: CoarseSystem | None, prolongation: Prolongation | None,
                 post: Smoother | None):
        self.A = A
        self.pre = pre if (pre is not None and pre.spec.kind != "none") else None
        self.post = post if (post is not None and post.spec.kind != "none") else None
        self.coarse = coarse
        self.prolongation = prolongation
        if coarse is not None and prolongation is None:
            raise ValueError("multiscale stage needs the prolongation")

    def apply(self, v: np.ndarray) -> np.ndarray:
        z = np.zeros_like(v)
        if self.pre is not None:
            z = z + self.pre.apply(v)
        if self.coarse is not None:
            r = v - self.A @ z if self.pre is not None else v
            z = z + apply_ms(self.prolongation, self.coarse, r)
        if self.post is not None:
            z = z + self.post.apply(v - self.A @ z)
        return z


def apply_two_level(A, precond: TwoLevelPreconditioner, v: np.ndarray) -> np.ndarray:
    return precond.apply(v)


def _precond_callable(precond):
    if precond is None:
        return lambda v: v
    if hasattr(precond, "apply"):
        return precond.apply
    return precond


def solve(A: sp.csr_matrix, f: np.ndarray, precond=None,
          spec: SolverSpec = SolverSpec()):
    """Solve ``A x = f`` from a zero initial guess.

    ``precond`` is None, a callable, or an object with ``apply`` (applied as
    a right preconditioner for GMRES/BiCGStab). Returns ``(x, history)``.
    """
    t0 = time.perf_counter()
    M = _precond_callable(precond)
    fnorm = np.linalg.norm(f)
    if fnorm == 0.0:
        hist = ConvergenceHistory([0.0], True, 0, time.perf_counter() - t0,
                                  "zero right-hand side")
        return np.zeros_like(f), hist
    runner = {
        "richardson": _richardson,
        "cg": _pcg,
        "gmres": _gmres_right,
        "bicgstab": _bicgstab,
    }[spec.method]
    x, hist = runner(A, f, M, spec, fnorm)
    hist.wall_time = time.perf_counter() - t0
    return x, hist


def _relres(A, x, f, fnorm):
    return float(np.linalg.norm(f - A @ x) / fnorm)


def _richardson(A, f, M, spec, fnorm):
    x = np.zeros_like(f)
    hist = ConvergenceHistory([1.0])
    for k in range(1, spec.max_iters + 1):
        x = x + M(f - A @ x)
        rel = _relres(A, x, f, fnorm)
        hist.residuals.append(rel)
        hist.iterations = k
        if rel <= spec.tol:
            hist.converged = True
            break
    return x, hist


def _pcg(A, f, M, spec, fnorm):
    x = np.zeros_like(f)
    r = f.copy()
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    hist = ConvergenceHistory([1.0])
    for k in range(1, spec.max_iters + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            hist.status = f"indefinite operator detected at iteration {k}"
            break
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rel = _relres(A, x, f, fnorm)
        hist.residuals.append(rel)
        hist.iterations = k
        if rel <= spec.tol:
            hist.converged = True
            break
        z = M(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, hist


def _gmres_right(A, f, M, spec, fnorm):
    """Right-preconditioned GMRES with Givens rotations; full by default,
    restarted when spec.restart is set."""
    x = np.zeros_like(f)
    hist = ConvergenceHistory([1.0])
    total = 0
    while total < spec.max_iters:
        r = f - A @ x
        beta = np.linalg.norm(r)
        m = spec.restart or (spec.max_iters - total)
        Q = [r / beta]
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        xk = x
        stop = False
        for j in range(m):
            w = A @ M(Q[j])
            for i in range(j + 1):
                H[i, j] = float(w @ Q[i])
                w = w - H[i, j] * Q[i]
            H[j + 1, j] = np.linalg.norm(w)
            invariant = H[j + 1, j] == 0.0
            if not invariant:
                Q.append(w / H[j + 1, j])
            for i in range(j):
                h0 = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = h0
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            total += 1
            y = np.linalg.solve(H[:k, :k], g[:k])
            xk = x + M(np.column_stack(Q[:k]) @ y)
            rel = _relres(A, xk, f, fnorm)
            hist.residuals.append(rel)
            hist.iterations = total
            if rel <= spec.tol:
                hist.converged = True
                stop = True
            elif invariant:
                hist.status = "Krylov space became invariant before convergence"
                stop = True
            elif total >= spec.max_iters:
                stop = True
            if stop:
                break
        x = xk
        if stop:
            break
    return x, hist


def _bicgstab(A, f, M, spec, fnorm):
    """Right-preconditioned BiCGStab; the preconditioner is applied twice per
    iteration (once for the search direction, once for the stabilizer)."""
    x = np.zeros_like(f)
    r = f.copy()
    r0 = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(f)
    p = np.zeros_like(f)
    hist = ConvergenceHistory([1.0])
    eps = np.finfo(float).tiny
    for k in range(1, spec.max_iters + 1):
        rho_new = float(r0 @ r)
        if abs(rho_new) < eps * 1e3:
            hist.status = f"BiCGStab breakdown (rho ~ 0) at iteration {k}"
            break
        beta = (rho_new / rho) * (alpha / omega) if k > 1 else 0.0
        p = r + beta * (p - omega * v) if k > 1 else r.copy()
        phat = M(p)
        v = A @ phat
        denom = float(r0 @ v)
        if denom == 0.0:
            hist.status = f"BiCGStab breakdown (r0.v = 0) at iteration {k}"
            break
        alpha = rho_new / denom
        s = r - alpha * v
        shat = M(s)
        t = A @ shat
        tt = float(t @ t)
        if tt == 0.0:
            x = x + alpha * phat
            rel = _relres(A, x, f, fnorm)
            hist.residuals.append(rel)
            hist.iterations = k
            hist.converged = rel <= spec.tol
            break
        omega = float(t @ s) / tt
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        rho = rho_new
        rel = _relres(A, x, f, fnorm)
        hist.residuals.append(rel)
        hist.iterations = k
        if rel <= spec.tol:
            hist.converged = True
            break
        if omega == 0.0:
            hist.status = f"BiCGStab breakdown (omega = 0) at iteration {k}"
            break
    return x, hist
