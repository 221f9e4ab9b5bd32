"""Relaxation solvers: preconditioned L-BFGS descent for the energy-based
models and Jacobian-free Newton-Krylov for the BQCF force balance.

Both work on the flattened free-dof vector a model exposes; any object with
``energy``/``gradient`` (or ``residual``) plus ``n_free`` and an optional
``preconditioner()`` factory fits, which is how the quadratic/linear test
problems are injected.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .cauchy_born import InvertedElementError


@dataclass
class SolverConfig:
    gradient_tolerance: float = 1e-8
    max_iterations: int = 5000
    history: int = 20
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    preconditioner: str = "laplacian"       # or "none"
    newton_fd_step: float = 1e-7
    krylov_max_inner: int = 200
    krylov_forcing: float = 1e-2
    verbose: bool = False

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.newton_fd_step <= 0:
            raise ValueError("tolerances must be positive")
        if self.history < 1:
            raise ValueError("history must be at least 1")


@dataclass
class SolveResult:
    displacement: np.ndarray
    residual_norm: float
    iterations: int
    energy_trace: list[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    message: str = ""


def _make_precond(model, cfg: SolverConfig):
    if cfg.preconditioner == "none" or not hasattr(model, "preconditioner"):
        return lambda v: v
    return model.preconditioner()


def minimize_energy(model, u0: np.ndarray | None = None,
                    cfg: SolverConfig | None = None) -> SolveResult:
    """Limited-memory quasi-Newton descent with backtracking line search."""
    cfg = cfg or SolverConfig()
    t_start = time.perf_counter()
    x = np.zeros(model.n_free) if u0 is None else np.asarray(u0, float).copy()
    apply_h0 = _make_precond(model, cfg)

    def eval_energy(z):
        try:
            return model.energy(z)
        except InvertedElementError:
            return np.inf

    f = model.energy(x)
    g = model.gradient(x)
    trace = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    it = 0
    message = "gradient tolerance reached"
    converged = False
    while True:
        gnorm = np.abs(g).max() if g.size else 0.0
        if gnorm <= cfg.gradient_tolerance:
            converged = True
            break
        if it >= cfg.max_iterations:
            message = "iteration limit reached"
            break
        p = -_two_loop(g, s_hist, y_hist, apply_h0)
        slope = float(np.dot(p, g))
        if slope >= 0.0:
            p = -apply_h0(g)
            slope = float(np.dot(p, g))
        # absolute slack absorbs roundoff in the energy once decrements fall
        # below the precision of f itself
        slack = 1e-12 * (1.0 + abs(f))
        step, f_new = _backtrack(eval_energy, x, p, f, slope,
                                 cfg.armijo_c1, cfg.backtrack_factor, slack)
        if step is None and s_hist:
            # retry from a plain preconditioned gradient step
            s_hist.clear()
            y_hist.clear()
            p = -apply_h0(g)
            slope = float(np.dot(p, g))
            step, f_new = _backtrack(eval_energy, x, p, f, slope,
                                     cfg.armijo_c1, cfg.backtrack_factor, slack)
        if step is None:
            message = "line search failure (step below 1e-14)"
            break
        x_new = x + step * p
        g_new = model.gradient(x_new)
        s = x_new - x
        y = g_new - g
        if float(np.dot(s, y)) > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > cfg.history:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        it += 1
        if cfg.verbose and it % 10 == 0:
            print(f"  iter {it:5d}  f = {f:.12g}  |g|inf = {gnorm:.3e}")
    return SolveResult(displacement=x, residual_norm=float(np.abs(g).max() if g.size else 0.0),
                       iterations=it, energy_trace=trace, converged=converged,
                       wall_time=time.perf_counter() - t_start, message=message)


def _backtrack(eval_energy, x, p, f, slope, c1, factor, slack):
    step = 1.0
    while step >= 1e-14:
        f_new = eval_energy(x + step * p)
        if f_new <= f + c1 * step * slope + slack:
            return step, f_new
        step *= factor
    return None, f


def _two_loop(g, s_hist, y_hist, apply_h0):
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(np.dot(y, s)) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    r = apply_h0(q)
    if s_hist:
        # scale the preconditioned seed by the standard gamma factor
        s, y = s_hist[-1], y_hist[-1]
        gamma = float(np.dot(s, y)) / float(np.dot(y, apply_h0(y)))
        r = gamma * r
    for s, y, rho, a in zip(s_hist, y_hist, rhos, reversed(alphas)):
        b = rho * float(np.dot(y, r))
        r += (a - b) * s
    return r


def solve_force_balance(model, u0: np.ndarray | None = None,
                        cfg: SolverConfig | None = None) -> SolveResult:
    """Jacobian-free Newton-Krylov on the blended force residual."""
    cfg = cfg or SolverConfig()
    t_start = time.perf_counter()
    x = np.zeros(model.n_free) if u0 is None else np.asarray(u0, float).copy()
    apply_m = _make_precond(model, cfg)
    n = x.size

    R = model.residual(x)
    it = 0
    converged = False
    message = "residual tolerance reached"
    stagnations = 0
    while True:
        rnorm = np.abs(R).max() if n else 0.0
        if rnorm <= cfg.gradient_tolerance:
            converged = True
            break
        if it >= cfg.max_iterations:
            message = "iteration limit reached"
            break

        def jv(v, x=x, R=R):
            nv = np.linalg.norm(v)
            if nv == 0.0:
                return np.zeros_like(v)
            eps = cfg.newton_fd_step * (1.0 + np.linalg.norm(x)) / nv
            return (model.residual(x + eps * v) - R) / eps

        op = spla.LinearOperator((n, n), matvec=jv)
        pre = spla.LinearOperator((n, n), matvec=lambda v: apply_m(v))
        delta, info = spla.lgmres(op, -R, M=pre,
                                  rtol=cfg.krylov_forcing, atol=0.0,
                                  maxiter=cfg.krylov_max_inner)
        step = 1.0
        accepted = False
        r2 = float(np.linalg.norm(R))
        for _ in range(30):
            try:
                R_new = model.residual(x + step * delta)
            except InvertedElementError:
                step *= 0.5
                continue
            if float(np.linalg.norm(R_new)) < (1.0 - 1e-4 * step) * r2:
                accepted = True
                break
            step *= 0.5
        if accepted:
            x = x + step * delta
            R = R_new
            stagnations = 0
        else:
            # fall back to preconditioned residual descent for a while
            ok = False
            for _ in range(50):
                d = apply_m(R)
                t = 1.0
                for _ in range(30):
                    try:
                        R_try = model.residual(x + t * d)
                    except InvertedElementError:
                        t *= 0.5
                        continue
                    if float(np.linalg.norm(R_try)) < float(np.linalg.norm(R)):
                        x = x + t * d
                        R = R_try
                        ok = True
                        break
                    t *= 0.5
                if not ok:
                    break
            stagnations += 1
            if not ok or stagnations >= 3:
                message = "stagnation: Newton and fallback descent both failed"
                break
        it += 1
    return SolveResult(displacement=x, residual_norm=float(np.abs(R).max() if n else 0.0),
                       iterations=it, energy_trace=[], converged=converged,
                       wall_time=time.perf_counter() - t_start, message=message)
