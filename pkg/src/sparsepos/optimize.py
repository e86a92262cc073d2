"""L-BFGS with a strong Wolfe line search, projected gradient ascent, and
Euclidean projection onto {u >= 0, sum(u) <= sigma}.
"""
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class OptimizationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_iters: int = 100
    grad_tol: float = 1e-5
    rel_tol: float = 1e-10
    max_linesearch: int = 30

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")


@dataclass(frozen=True)
class ProjGradConfig:
    max_iters: int = 500
    tol: float = 1e-6
    initial_step: float = 1.0
    max_halvings: int = 30
    armijo: float = 1e-4
    step_rule: str = "bb"
    min_step: float = 1e-3
    max_step: float = 1e3

    def __post_init__(self):
        if self.tol <= 0 or self.initial_step <= 0:
            raise ValueError("tolerances and step must be positive")
        if self.step_rule not in ("fixed", "bb"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    status: str
    iterations: int
    evaluations: int

    @property
    def ok(self):
        return self.status in ("converged", "max_iters")


def _cubic_min(a, fa, da, b, fb, db):
    # minimizer of the cubic interpolating (a, fa, da), (b, fb, db)
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


class _LineFunction:
    def __init__(self, fun, x, d):
        self.fun, self.x, self.d = fun, x, d
        self.evals = 0
        self.cache = {}

    def __call__(self, alpha):
        if alpha in self.cache:
            return self.cache[alpha]
        xa = self.x + alpha * self.d
        f, g = self.fun(xa)
        self.evals += 1
        f = float(f)
        g = np.asarray(g, dtype=float)
        if np.isfinite(f) and not np.all(np.isfinite(g)):
            raise OptimizationError("NaN or infinite gradient")
        dphi = float(g @ self.d) if np.isfinite(f) else np.nan
        out = (f, dphi, xa, g)
        self.cache[alpha] = out
        return out


def wolfe_line_search(phi, f0, d0, alpha1, c1, c2, max_evals):
    """Step satisfying the strong Wolfe conditions, or None on failure.

    ``phi(alpha)`` returns ``(f, dphi, x, g)``; non-finite values count as
    a failed sufficient-decrease test.
    """
    def bad(f, alpha, f_ref):
        return (not np.isfinite(f)) or f > f0 + c1 * alpha * d0 or f >= f_ref

    a_prev, f_prev, d_prev = 0.0, f0, d0
    alpha = alpha1
    for i in range(max_evals):
        f, d, _, _ = phi(alpha)
        if bad(f, alpha, f_prev if i > 0 else np.inf):
            return _zoom(phi, f0, d0, c1, c2, a_prev, f_prev, d_prev, alpha, f, d, max_evals - i - 1)
        if abs(d) <= -c2 * d0:
            return alpha
        if d >= 0:
            return _zoom(phi, f0, d0, c1, c2, alpha, f, d, a_prev, f_prev, d_prev, max_evals - i - 1)
        a_prev, f_prev, d_prev = alpha, f, d
        alpha *= 2.0
    return None


def _zoom(phi, f0, d0, c1, c2, lo, f_lo, d_lo, hi, f_hi, d_hi, budget):
    for _ in range(max(budget, 0)):
        width = hi - lo
        trial = None
        if np.isfinite(f_hi) and np.isfinite(d_hi):
            trial = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
        lo_b, hi_b = sorted((lo + 0.1 * width, hi - 0.1 * width))
        if trial is None or not np.isfinite(trial) or not lo_b <= trial <= hi_b:
            trial = lo + 0.5 * width
        f, d, _, _ = phi(trial)
        if (not np.isfinite(f)) or f > f0 + c1 * trial * d0 or f >= f_lo:
            hi, f_hi, d_hi = trial, f, d
        else:
            if abs(d) <= -c2 * d0:
                return trial
            if d * (hi - lo) >= 0:
                hi, f_hi, d_hi = lo, f_lo, d_lo
            lo, f_lo, d_lo = trial, f, d
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
    # fall back to the best sufficient-decrease point seen
    if lo > 0 and f_lo <= f0 + c1 * lo * d0:
        return lo
    return None


def lbfgs_minimize(fun, x0, config=None, callback=None):
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Stops when the gradient infinity-norm drops below ``grad_tol``, the
    relative decrease falls below ``rel_tol``, or ``max_iters`` is reached.
    A failed line search after a memory reset ends the run with status
    ``"line_search_failed"``.
    """
    config = config or LbfgsConfig()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    evals = 1
    if not np.isfinite(f):
        raise OptimizationError("objective is not finite at the starting point")
    if not np.all(np.isfinite(g)):
        raise OptimizationError("NaN or infinite gradient")
    S, Y, RHO = [], [], []
    status = "max_iters"
    it = 0
    while it < config.max_iters:
        if np.max(np.abs(g), initial=0.0) <= config.grad_tol:
            status = "converged"
            break
        d = _two_loop(g, S, Y, RHO)
        d0 = float(g @ d)
        if d0 >= 0:
            S, Y, RHO = [], [], []
            d = -g
            d0 = float(g @ d)
        alpha1 = 1.0 if S else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        phi = _LineFunction(fun, x, d)
        alpha = wolfe_line_search(phi, f, d0, alpha1, config.wolfe_c1, config.wolfe_c2, config.max_linesearch)
        evals += phi.evals
        if alpha is None and S:
            S, Y, RHO = [], [], []
            d = -g
            d0 = float(g @ d)
            phi = _LineFunction(fun, x, d)
            alpha = wolfe_line_search(phi, f, d0, min(1.0, 1.0 / np.linalg.norm(g)),
                                      config.wolfe_c1, config.wolfe_c2, config.max_linesearch)
            evals += phi.evals
        if alpha is None:
            status = "line_search_failed"
            break
        f_new, _, x_new, g_new = phi(alpha)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y):
            S.append(s)
            Y.append(y)
            RHO.append(1.0 / sy)
            if len(S) > config.memory:
                S.pop(0)
                Y.pop(0)
                RHO.pop(0)
        rel = abs(f - f_new) / max(abs(f), abs(f_new), 1.0)
        x, f, g = x_new, f_new, g_new
        it += 1
        if callback is not None:
            callback(it, x, f, g)
        if rel < config.rel_tol:
            status = "converged"
            break
    return OptimResult(x, f, g, status, it, evals)


def _two_loop(g, S, Y, RHO):
    q = -g.copy()
    alphas = []
    for s, y, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if S:
        q *= float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
    for (s, y, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def simplex_project(v, sigma):
    """Euclidean projection of ``v`` onto ``{u : u >= 0, sum(u) <= sigma}``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    v = np.asarray(v, dtype=float)
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= sigma:
        return clipped
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - (css - sigma) / k > 0)[0][-1]
    theta = (css[rho] - sigma) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def projected_gradient_ascent(fun, project, x0, config=None):
    """Maximize ``fun`` over the set ``project`` maps onto.

    Each iteration tries ``project(x + s * grad)`` starting from a trial step
    and halving until an Armijo ascent condition holds. The trial step is
    ``initial_step`` (rule ``"fixed"``) or, after the first iteration, the
    Barzilai-Borwein step from the last move (rule ``"bb"``). Stops once the
    projected-gradient infinity norm is below ``tol``.
    """
    config = config or ProjGradConfig()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    evals = 1
    if np.isnan(f):
        raise OptimizationError("NaN objective")
    status = "max_iters"
    it = 0
    step0 = config.initial_step
    while it < config.max_iters:
        full = project(x + g)
        if np.max(np.abs(full - x), initial=0.0) <= config.tol:
            status = "converged"
            break
        step = step0
        accepted = False
        for _ in range(config.max_halvings + 1):
            x_new = full if step == 1.0 else project(x + step * g)
            f_new, g_new = fun(x_new)
            evals += 1
            if np.isnan(f_new):
                raise OptimizationError("NaN objective")
            if f_new >= f + config.armijo * float(np.vdot(g, x_new - x)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            status = "step_failed"
            break
        if config.step_rule == "bb":
            s = x_new - x
            curv = -float(np.vdot(s, g_new - g))
            step0 = float(np.vdot(s, s)) / curv if curv > 0 else config.max_step
            step0 = min(max(step0, config.min_step), config.max_step)
        x, f, g = x_new, f_new, g_new
        it += 1
    return OptimResult(x, float(f), g, status, it, evals)
