"""Limited-memory BFGS with a strong Wolfe line search.

The objective is a callable ``fun(x) -> (f, g)`` on 1-D float arrays.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, LineSearchError, ParameterError


@dataclass
class LbfgsConfig:
    history_size: int = 10
    max_iterations: int = 4
    c1: float = 1e-4
    c2: float = 0.9
    gradient_tol: float = 1e-9
    change_tol: float = 1e-14
    max_ls_evals: int = 25

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ParameterError("Wolfe constants need 0 < c1 < c2 < 1")
        if self.history_size < 1:
            raise ParameterError("history_size must be at least 1")
        if self.max_iterations < 1 or self.max_ls_evals < 1:
            raise ParameterError("iteration budgets must be positive")


@dataclass
class LineSearchResult:
    step: float
    f: float
    g: np.ndarray
    evals: int
    ok: bool
    steps_tried: list = field(default_factory=list)


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimiser of the cubic through two points with slopes, clamped to [lo, hi]."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0 and np.isfinite(disc):
        d2 = math.copysign(math.sqrt(disc), x2 - x1)
        denom = g2 - g1 + 2.0 * d2
        if denom != 0:
            t = x2 - (x2 - x1) * (g2 + d2 - d1) / denom
            if np.isfinite(t):
                return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe_search(fun, x, direction, config=None, f0=None, g0=None, step0=1.0):
    """Find a step satisfying the strong Wolfe conditions along ``direction``.

    Bracketing phase followed by cubic-interpolation zoom. If the evaluation
    budget runs out, the lowest sufficient-decrease point seen so far is
    returned with ``ok=False`` (or step 0 when there is none).
    """
    cfg = config or LbfgsConfig()
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    if f0 is None or g0 is None:
        f0, g0 = fun(x)
    dphi0 = float(g0 @ d)
    if not dphi0 < 0:
        raise LineSearchError(f"direction is not a descent direction (g.d = {dphi0:g})")
    c1, c2 = cfg.c1, cfg.c2
    evals = 0
    tried = []
    best = (0.0, f0, g0)

    def phi(a):
        nonlocal evals, best
        evals += 1
        f, g = fun(x + a * d)
        f = float(f)
        if not np.isfinite(f):
            f = math.inf
        tried.append(a)
        if f <= f0 + c1 * a * dphi0 and f < best[1]:
            best = (a, f, g)
        return f, g, float(g @ d) if np.isfinite(f) else math.inf

    def done(a, f, g):
        return LineSearchResult(a, f, g, evals, True, tried)

    def zoom(lo, f_lo, dp_lo, hi, f_hi, dp_hi):
        while evals < cfg.max_ls_evals:
            left, right = min(lo, hi), max(lo, hi)
            width = right - left
            if width <= 1e-16 * max(1.0, right):
                break
            a = _cubic_min(lo, f_lo, dp_lo, hi, f_hi, dp_hi, left + 0.1 * width, right - 0.1 * width)
            f, g, dp = phi(a)
            if f > f0 + c1 * a * dphi0 or f >= f_lo:
                hi, f_hi, dp_hi = a, f, dp
            else:
                if abs(dp) <= -c2 * dphi0:
                    return done(a, f, g)
                if dp * (hi - lo) >= 0:
                    hi, f_hi, dp_hi = lo, f_lo, dp_lo
                lo, f_lo, dp_lo = a, f, dp
        return None

    a_prev, f_prev, dp_prev = 0.0, f0, dphi0
    a = step0
    first = True
    while evals < cfg.max_ls_evals:
        f, g, dp = phi(a)
        if f > f0 + c1 * a * dphi0 or (not first and f >= f_prev):
            res = zoom(a_prev, f_prev, dp_prev, a, f, dp)
            break
        if abs(dp) <= -c2 * dphi0:
            return done(a, f, g)
        if dp >= 0:
            res = zoom(a, f, dp, a_prev, f_prev, dp_prev)
            break
        nxt = _cubic_min(a_prev, f_prev, dp_prev, a, f, dp, a + 0.01 * (a - a_prev), 10.0 * a)
        a_prev, f_prev, dp_prev = a, f, dp
        a = nxt
        first = False
    else:
        res = None
    if res is not None:
        return res
    a, f, g = best
    return LineSearchResult(a, f, g, evals, False, tried)


@dataclass
class LbfgsState:
    """Curvature pairs kept between calls, so repeated short runs share history."""

    s: deque = field(default_factory=deque)
    y: deque = field(default_factory=deque)


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    trace: list
    iterations: int
    evaluations: int
    converged: bool
    message: str
    fallback_steps: int = 0
    wolfe_audit: list = field(default_factory=list)


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _armijo_backtrack(fun, x, f0, g0, d, c1, max_evals):
    dphi0 = float(g0 @ d)
    a = 1.0
    for _ in range(max_evals):
        f, g = fun(x + a * d)
        if np.isfinite(f) and f <= f0 + c1 * a * dphi0 and f < f0:
            return a, float(f), g
        a *= 0.5
    return None


def lbfgs_minimize(fun, x0, config=None, state=None, audit=False):
    """Minimise ``fun`` from ``x0``.

    Runs at most ``config.max_iterations`` iterations and stops early when the
    max-norm of the gradient drops below ``gradient_tol`` or the objective
    change falls below ``change_tol`` (relative). Each accepted value is
    appended to ``trace``, which is therefore non-increasing. Passing the
    same ``state`` to consecutive calls continues with the stored curvature
    pairs. With ``audit=True`` every accepted step records
    ``(step, sufficient_decrease_ok, curvature_ok)``.
    """
    cfg = config or LbfgsConfig()
    state = LbfgsState() if state is None else state
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    f = float(f)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise DivergenceError(f"objective is not finite at the starting point (f={f!r})")
    trace = [f]
    evals = 1
    fallbacks = 0
    audit_log = []
    message = "max_iterations reached"
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if np.max(np.abs(g)) <= cfg.gradient_tol:
            converged, message, it = True, "gradient tolerance reached", it - 1
            break
        d = _two_loop(g, list(state.s), list(state.y))
        if not g @ d < 0:
            state.s.clear()
            state.y.clear()
            d = -g
        if state.s:
            step0 = 1.0
        else:
            step0 = min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))
        ls = strong_wolfe_search(fun, x, d, cfg, f, g, step0)
        evals += ls.evals
        step, f_new, g_new = ls.step, ls.f, ls.g
        if audit and ls.ok:
            audit_log.append(
                (step, f_new <= f + cfg.c1 * step * (g @ d), abs(g_new @ d) <= -cfg.c2 * (g @ d))
            )
        if not ls.ok and step == 0.0:
            fb = _armijo_backtrack(fun, x, f, g, -g, cfg.c1, cfg.max_ls_evals)
            fallbacks += 1
            if fb is None:
                message = "line search failed and steepest-descent fallback found no decrease"
                break
            step, f_new, g_new = fb
            d = -g
            state.s.clear()
            state.y.clear()
        elif not ls.ok:
            fallbacks += 1
        x_new = x + step * d
        s_vec = x_new - x
        y_vec = g_new - g
        if s_vec @ y_vec > 1e-12 * (y_vec @ y_vec):
            state.s.append(s_vec)
            state.y.append(y_vec)
            while len(state.s) > cfg.history_size:
                state.s.popleft()
                state.y.popleft()
        change = f - f_new
        x, f, g = x_new, float(f_new), g_new
        trace.append(f)
        if not np.isfinite(f):
            raise DivergenceError("objective became non-finite")
        if change <= cfg.change_tol * max(1.0, abs(f)):
            converged, message = True, "objective change below tolerance"
            break
    else:
        if np.max(np.abs(g)) <= cfg.gradient_tol:
            converged, message = True, "gradient tolerance reached"
    return LbfgsResult(x, f, g, trace, it, evals, converged, message, fallbacks, audit_log)
