"""Matrix-free inexact Newton with right-preconditioned GMRES.

The outer loop minimises ``phi = 0.5 ||R||^2`` with Armijo backtracking and
an Eisenstat-Walker forcing term; the inner loop is GMRES on ``J W^{-1} y = -R``
with two-pass modified Gram-Schmidt and Givens rotations. Jacobian actions
come from centred finite differences of the residual.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .core import SolverParams
from .exceptions import InvertedElementError

logger = logging.getLogger(__name__)

ResidualFn = Callable[[np.ndarray], np.ndarray]


class JVPFailure(ArithmeticError):
    """Both perturbed residual evaluations failed."""


def jvp(residual_fn: ResidualFn, du: np.ndarray, p: np.ndarray, target: float = 1e-4,
        free_mask: np.ndarray | None = None) -> np.ndarray:
    """Centred-difference approximation of ``J(du) p``.

    The step is scaled so that ``||eps p||_inf == target``. If only one side
    of the stencil is admissible the one-sided difference is used instead.
    """
    p = np.asarray(p, dtype=float)
    if free_mask is not None:
        p = np.where(free_mask, p, 0.0)
    pmax = np.max(np.abs(p)) if p.size else 0.0
    if pmax == 0.0:
        return np.zeros_like(p)
    eps = target / max(pmax, 1e-30)
    try:
        r_plus = residual_fn(du + eps * p)
    except InvertedElementError:
        r_plus = None
    try:
        r_minus = residual_fn(du - eps * p)
    except InvertedElementError:
        r_minus = None
    if r_plus is not None and r_minus is not None:
        return (r_plus - r_minus) / (2.0 * eps)
    if r_plus is None and r_minus is None:
        raise JVPFailure("residual evaluation failed on both sides of the JVP stencil")
    r0 = residual_fn(du)
    if r_plus is not None:
        return (r_plus - r0) / eps
    return (r0 - r_minus) / eps


@dataclass
class GMRESResult:
    x: np.ndarray
    iters: int
    rel_res: float
    converged: bool
    Jx: np.ndarray
    residual_history: list[float]
    breakdown: bool = False


def gmres_right_precond(apply_J: Callable[[np.ndarray], np.ndarray], b: np.ndarray, W,
                        eta: float, max_iters: int) -> GMRESResult:
    """Solve ``J W^{-1} y = b`` and return ``x = W^{-1} y``.

    ``W`` is a positive diagonal given as a vector (or scalar). Iteration
    stops once the Givens least-squares residual satisfies
    ``||b - J x|| <= eta ||b||``, on happy breakdown, or at ``max_iters``.
    ``Jx`` is recovered from the Arnoldi relation without extra operator
    applications.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    W = np.broadcast_to(np.asarray(W, dtype=float), (n,))
    if np.any(~(W > 0)):
        raise ValueError("preconditioner diagonal must be strictly positive")
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        return GMRESResult(np.zeros(n), 0, 0.0, True, np.zeros(n), [0.0])
    m = max(1, min(int(max_iters), n))
    V = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    Hbar = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = b / beta
    history = [beta]
    k = 0
    breakdown = False
    for j in range(m):
        w = apply_J(V[j] / W)
        wnorm0 = np.linalg.norm(w)
        for _ in range(2):
            for i in range(j + 1):
                c = V[i] @ w
                H[i, j] += c
                w -= c * V[i]
        hn = float(np.linalg.norm(w))
        H[j + 1, j] = hn
        Hbar[: j + 2, j] = H[: j + 2, j]
        breakdown = hn <= 1e-14 * max(wnorm0, 1e-300)
        if not breakdown:
            V[j + 1] = w / hn
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = math.hypot(H[j, j], H[j + 1, j])
        if denom == 0.0:
            cs[j], sn[j] = 1.0, 0.0
        else:
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
        H[j, j] = denom
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        history.append(abs(g[j + 1]))
        k = j + 1
        if abs(g[j + 1]) <= eta * beta or breakdown:
            break
    R = H[:k, :k]
    diag = np.abs(np.diag(R))
    if np.any(diag <= 1e-300):
        # singular least-squares block: fall back to a dense lstsq on Hbar
        e1 = np.zeros(k + 1)
        e1[0] = beta
        y = np.linalg.lstsq(Hbar[: k + 1, :k], e1, rcond=None)[0]
    else:
        y = solve_triangular(R, g[:k], lower=False)
    x = (V[:k].T @ y) / W
    Jx = V[: k + 1].T @ (Hbar[: k + 1, :k] @ y)
    rel = abs(g[k]) / beta
    return GMRESResult(x, k, rel, rel <= eta or breakdown, Jx, history, breakdown)


def ew_forcing(R_curr: float, R_prev: float | None, eta_prev: float | None, params: SolverParams) -> float:
    """Eisenstat-Walker choice 2 with the standard safeguard."""
    if R_prev is None or eta_prev is None:
        return params.eta_max
    if R_prev == 0.0:
        return params.eta_min
    # the ratio is capped only to keep the power finite; the result is clamped below anyway
    eta = params.ew_gamma * min(R_curr / R_prev, 1e6) ** params.ew_alpha
    safeguard = params.ew_gamma * eta_prev**params.ew_alpha
    if safeguard > 0.1:
        eta = max(eta, safeguard)
    return min(max(eta, params.eta_min), params.eta_max)


@dataclass
class LineSearchResult:
    alpha: float
    accepted: bool
    phi: float
    backtracks: int


def line_search(phi_fn: Callable[[np.ndarray], float], phi0: float, dphi0: float, du: np.ndarray,
                ddu: np.ndarray, params: SolverParams) -> LineSearchResult:
    """Armijo backtracking over ``alpha in {1, rho, rho^2, ...}``.

    ``phi_fn`` returns ``inf`` (or raises :class:`InvertedElementError`) for
    inadmissible trial states, which counts as insufficient decrease.
    """
    alpha = 1.0
    for nb in range(params.max_backtracks + 1):
        try:
            phi = float(phi_fn(du + alpha * ddu))
        except InvertedElementError:
            phi = math.inf
        if math.isfinite(phi) and phi <= phi0 + params.armijo_c * alpha * dphi0:
            return LineSearchResult(alpha, True, phi, nb)
        alpha *= params.backtrack_factor
    return LineSearchResult(alpha / params.backtrack_factor, False, math.inf, params.max_backtracks)


@dataclass
class NewtonReport:
    converged: bool = False
    newton_iters: int = 0
    final_residual_norm: float = math.nan
    initial_residual_norm: float = math.nan
    gmres_iters_per_newton: list[int] = field(default_factory=list)
    line_search_alphas: list[float] = field(default_factory=list)
    etas: list[float] = field(default_factory=list)
    phi_history: list[float] = field(default_factory=list)
    dphi_history: list[float] = field(default_factory=list)
    fallback_used: bool = False
    stagnated: bool = False
    failure: str | None = None
    tolerance: float = math.nan
    wall_time: float = 0.0

    @property
    def gmres_total(self) -> int:
        return int(sum(self.gmres_iters_per_newton))

    @property
    def rel_end(self) -> float:
        if self.initial_residual_norm == 0.0:
            return 0.0
        return self.final_residual_norm / self.initial_residual_norm


def _descent_fallback(residual_fn, x, R, W, target):
    """Steepest-descent style direction ``-R`` (scaled by ``W^{-1}``), sign-corrected.

    ``-R`` is tried first; when the residual Jacobian is negative definite
    (as for the momentum residual) ``+R`` is the descent direction instead.
    """
    d = -R / W
    Jd = jvp(residual_fn, x, d, target)
    dphi = float(R @ Jd)
    if dphi >= 0.0:
        d, Jd, dphi = -d, -Jd, -dphi
    return d, Jd, dphi


def newton_solve(residual_fn: ResidualFn, du0: np.ndarray, W_fn, params: SolverParams,
                 linear_solver: Callable | None = None) -> tuple[np.ndarray, NewtonReport]:
    """Inexact Newton-GMRES on ``residual_fn(x) = 0``.

    ``W_fn`` is the preconditioner diagonal, either an array or a callable of
    the current iterate. ``linear_solver(apply_J, b, W, eta, max_iters)``
    replaces GMRES when given (testing hook). Never raises on
    non-convergence: the report says what happened.
    """
    t_start = time.perf_counter()
    report = NewtonReport()
    x = np.array(du0, dtype=float)
    n = x.size
    solve = linear_solver or gmres_right_precond
    target = params.jvp_target_perturbation
    try:
        R = residual_fn(x)
    except InvertedElementError as exc:
        report.failure = f"initial residual evaluation failed: {exc}"
        report.wall_time = time.perf_counter() - t_start
        return x, report
    r = float(np.linalg.norm(R))
    r0 = r
    report.initial_residual_norm = r0
    tol = params.newton_tol * (math.sqrt(max(n, 1)) if params.scale_tol_by_dofs else 1.0)
    report.tolerance = tol

    def done(rr: float) -> bool:
        return rr <= tol or (r0 > 0 and rr / r0 <= params.newton_rtol)

    if n == 0 or done(r):
        report.converged = True
        report.final_residual_norm = r
        report.wall_time = time.perf_counter() - t_start
        return x, report

    cache: dict[str, np.ndarray] = {}

    def phi_fn(candidate: np.ndarray) -> float:
        Rc = residual_fn(candidate)
        cache["R"] = Rc
        return 0.5 * float(Rc @ Rc)

    r_prev: float | None = None
    eta_prev: float | None = None
    small_steps = 0
    for it in range(params.newton_max_iters):
        if params.forcing_mode == "fixed":
            eta = params.fixed_eta
        else:
            eta = ew_forcing(r, r_prev, eta_prev, params)
        report.etas.append(eta)
        W = W_fn(x) if callable(W_fn) else W_fn
        W = np.broadcast_to(np.asarray(W, dtype=float), (n,))

        def apply_J(p, _x=x):
            return jvp(residual_fn, _x, p, target)

        try:
            res = solve(apply_J, -R, W, eta, params.gmres_max_iters)
            d, Jd = res.x, res.Jx
            report.gmres_iters_per_newton.append(int(res.iters))
            dphi = float(R @ Jd)
        except JVPFailure:
            report.gmres_iters_per_newton.append(0)
            d, Jd, dphi = None, None, math.inf
        used_fallback = False
        if d is None or not np.all(np.isfinite(d)) or not dphi < 0.0:
            d, Jd, dphi = _descent_fallback(residual_fn, x, R, W, target)
            used_fallback = True
            report.fallback_used = True
            logger.debug("non-descent Newton direction; falling back to residual direction")

        phi0 = 0.5 * r * r
        if params.line_search_enabled:
            ls = line_search(phi_fn, phi0, dphi, x, d, params)
            if not ls.accepted and not used_fallback:
                d, Jd, dphi = _descent_fallback(residual_fn, x, R, W, target)
                report.fallback_used = True
                ls = line_search(phi_fn, phi0, dphi, x, d, params)
            if not ls.accepted:
                report.failure = "line search exhausted backtracks"
                break
            alpha = ls.alpha
            # phi_fn's cache holds the last evaluated candidate, which is the accepted one
            R_new = cache["R"]
        else:
            alpha = 1.0
            try:
                R_new = residual_fn(x + d)
            except InvertedElementError:
                report.failure = "full step produced an inadmissible state"
                break
            if not np.all(np.isfinite(R_new)):
                report.failure = "non-finite residual"
                break

        step = alpha * d
        x = x + step
        report.line_search_alphas.append(alpha)
        report.phi_history.append(phi0)
        report.dphi_history.append(dphi)
        r_prev, eta_prev = r, eta
        R = R_new
        r = float(np.linalg.norm(R))
        report.newton_iters = it + 1
        if params.line_search_enabled:
            # advisory only; J is frozen at the previous iterate
            dphi_new = float(R @ Jd)
            if abs(dphi_new) > abs(dphi):
                logger.debug("weak curvature check: directional derivative grew (%g > %g)", dphi_new, dphi)
        if done(r):
            report.converged = True
            break
        if np.max(np.abs(step)) < 1e-14 * (1.0 + np.max(np.abs(x))):
            small_steps += 1
            if small_steps >= 2:
                report.stagnated = True
                report.failure = "stagnated"
                break
        else:
            small_steps = 0

    report.phi_history.append(0.5 * r * r)
    report.final_residual_norm = r
    report.wall_time = time.perf_counter() - t_start
    return x, report
