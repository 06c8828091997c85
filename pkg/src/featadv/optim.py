"""Box-constrained limited-memory quasi-Newton minimizer.

Direction from the L-BFGS two-loop recursion, trial points projected onto the
box, Armijo backtracking on the projected step, history reset on curvature
failure.  Every accepted iterate is feasible and the objective trajectory is
non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError, ShapeError

ARMIJO_C = 1e-4
BACKTRACK_FACTOR = 0.5
MAX_BACKTRACKS = 30
CURVATURE_EPS = 1e-10

TERM_GRAD = "converged_grad"
TERM_FTOL = "converged_ftol"
TERM_MAXITER = "max_iterations"

PIXEL_MAX = 255.0


@dataclass(frozen=True)
class BoxConstraint:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ShapeError(f"box bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ShapeError("box has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, tol=1e-9):
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


def pixel_box(source, delta):
    """The L-inf ball of radius delta around source, intersected with [0, 255]."""
    source = np.asarray(source, dtype=np.float64)
    return BoxConstraint(np.maximum(0.0, source - delta),
                         np.minimum(PIXEL_MAX, source + delta))


def project_box(image, source, delta):
    """Clamp image into the delta-box around source and the global pixel range."""
    image = np.asarray(image, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    if image.shape != source.shape:
        raise ShapeError(f"image shape {image.shape}, source {source.shape}")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return pixel_box(source, delta).project(image)


@dataclass
class OptResult:
    point: np.ndarray
    trajectory: list = field(default_factory=list)   # (iteration, objective)
    termination: str = TERM_MAXITER
    iterations: int = 0
    objective: float = np.inf


def _two_loop(grad, history, gamma):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s.ravel() @ q.ravel())
        alphas.append(a)
        q -= a * y
    q *= gamma
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y.ravel() @ q.ravel())
        q += (a - b) * s
    return q


def _eval(fg, x, where):
    f, g = fg(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericError(f"objective returned non-finite value at {where}")
    return f, g


def lbfgsb_minimize(fg, start, box, config, callback=None):
    """Minimize fg (returning (value, gradient)) over the box from a feasible start.

    ``config`` supplies max_iterations, history_size, grad_tol (on the
    projected-gradient infinity norm) and ftol (relative decrease).  The
    optional ``callback(iteration, x, f)`` fires on every accepted iterate.
    Returns the best-seen feasible point.
    """
    x = np.asarray(start, dtype=np.float64).copy()
    if not box.contains(x):
        raise ShapeError("start point is infeasible")
    x = box.project(x)

    f, g = _eval(fg, x, "start")
    best_f, best_x = f, x.copy()
    result = OptResult(point=best_x, objective=best_f)
    result.trajectory.append((0, f))
    if callback is not None:
        callback(0, x, f)

    history = []
    gamma = 1.0
    for it in range(1, config.max_iterations + 1):
        pg = np.abs(x - box.project(x - g)).max()
        if pg <= config.grad_tol:
            result.termination = TERM_GRAD
            break

        def linesearch(d, t):
            for _ in range(MAX_BACKTRACKS):
                x_trial = box.project(x + t * d)
                step = x_trial - x
                slope = float(g.ravel() @ step.ravel())
                if slope >= 0.0 or not np.any(step):
                    t *= BACKTRACK_FACTOR
                    continue
                f_trial, g_trial = _eval(fg, x_trial, f"iteration {it}")
                if f_trial <= f + ARMIJO_C * slope:
                    return x_trial, f_trial, g_trial
                t *= BACKTRACK_FACTOR
            return None

        # freeze coordinates pinned at a bound with the gradient pushing
        # outward; the quasi-Newton direction acts on the free set only
        active = ((np.isclose(x, box.lower) & (g > 0))
                  | (np.isclose(x, box.upper) & (g < 0)))
        gm = np.where(active, 0.0, g)
        gmax = np.abs(gm).max()
        t_sd = min(1.0, 1.0 / gmax) if gmax > 0 else 1.0
        d = -_two_loop(gm, history, gamma)
        d[active] = 0.0
        if float(d.ravel() @ gm.ravel()) >= 0.0:
            history.clear()
            d = -gm
        hit = linesearch(d, 1.0 if history else t_sd)
        if hit is None and history:
            # projection can turn the quasi-Newton step into ascent; fall
            # back to projected steepest descent before giving up
            history.clear()
            gamma = 1.0
            hit = linesearch(-gm, t_sd)
        if hit is None:
            result.termination = TERM_FTOL
            break
        x_trial, f_trial, g_trial = hit

        s = x_trial - x
        y = g_trial - g
        sy = float(s.ravel() @ y.ravel())
        if sy > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y, 1.0 / sy))
            if len(history) > config.history_size:
                history.pop(0)
            gamma = sy / float(y.ravel() @ y.ravel())
        else:
            history.clear()
            gamma = 1.0

        drop = f - f_trial
        x, f, g = x_trial, f_trial, g_trial
        result.iterations = it
        result.trajectory.append((it, f))
        if callback is not None:
            callback(it, x, f)
        if f < best_f:
            best_f, best_x = f, x.copy()

        if drop <= config.ftol * max(1.0, abs(f)):
            result.termination = TERM_FTOL
            break
    else:
        result.termination = TERM_MAXITER

    result.point = best_x
    result.objective = best_f
    return result
