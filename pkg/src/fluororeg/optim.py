"""Derivative-free (Powell direction set) and first-order (ADAM) minimizers.

Powell drives the distortion-polynomial fit; ADAM drives pose registration
through a finite-difference gradient callback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteObjective(ValueError):
    pass


class NonFiniteGradient(ValueError):
    pass


@dataclass
class OptimConfig:
    max_iters: int = 200
    step_init: float = 1.0
    tol_f: float = 1e-10
    tol_x: float = 1e-10
    lr: float = 0.25
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.tol_f <= 0 or self.tol_x <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class OptimTrace:
    objective: list = field(default_factory=list)
    final_x: np.ndarray | None = None
    iterations: int = 0
    converged: bool = False
    best_x: np.ndarray | None = None
    best_f: float | None = None


def _checked(f, x):
    v = float(f(x))
    if not np.isfinite(v):
        raise NonFiniteObjective(f"objective is {v} at {x}")
    return v


def _bracket(f1d, fa, step):
    """Expand from 0 until a triple a < b < c with f(b) below both ends."""
    a, b = 0.0, step
    fb = f1d(b)
    if fb > fa:
        a, b, fa, fb = b, a, fb, fa  # downhill is the other way
    c = b + 1.618 * (b - a)
    fc = f1d(c)
    n = 0
    while fc < fb and n < 60:
        a, b, fa, fb = b, c, fb, fc
        c = b + 1.618 * (b - a)
        fc = f1d(c)
        n += 1
    return (a, b, c) if a < c else (c, b, a), fb


def _brent_1d(f1d, bracket, fb, tol=1e-8, max_evals=100):
    """Brent minimization on a bracketed interval; returns (alpha, f(alpha))."""
    a, x, b = bracket
    fx = fb
    w = v = x
    fw = fv = fx
    d = e = 0.0
    golden = 0.3819660112501051
    for _ in range(max_evals):
        m = 0.5 * (a + b)
        tol1 = tol * abs(x) + 1e-12
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            break
        use_golden = True
        if abs(e) > tol1:
            # parabolic fit through x, w, v
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            etemp = e
            e = d
            if abs(p) < abs(0.5 * q * etemp) and q * (a - x) < p < q * (b - x):
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol1 if x < m else -tol1
                use_golden = False
        if use_golden:
            e = (b - x) if x < m else (a - x)
            d = golden * e
        u = x + d if abs(d) >= tol1 else x + (tol1 if d > 0 else -tol1)
        fu = f1d(u)
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x, fx


def powell_minimize(f, x0, cfg: OptimConfig | None = None):
    """Powell's direction-set method with Brent line searches.

    Directions are restarted to the coordinate axes every n sweeps to avoid
    linear dependence.  Never returns a point worse than x0.
    """
    cfg = cfg or OptimConfig(max_iters=100)
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    fx = _checked(f, x)
    trace = OptimTrace()
    dirs = np.eye(n) * cfg.step_init
    converged = False
    for it in range(cfg.max_iters):
        f_start = fx
        x_start = x.copy()
        biggest_drop = 0.0
        biggest_idx = 0
        for i in range(n):
            d = dirs[i]

            def f1d(alpha, d=d):
                return _checked(f, x + alpha * d)

            bracket, fb = _bracket(f1d, fx, 1.0)
            alpha, f_new = _brent_1d(f1d, bracket, fb)
            if f_new < fx:
                drop = fx - f_new
                if drop > biggest_drop:
                    biggest_drop = drop
                    biggest_idx = i
                x = x + alpha * d
                fx = f_new
        trace.objective.append(fx)
        if f_start - fx <= cfg.tol_f * (abs(f_start) + cfg.tol_f):
            converged = True
            trace.iterations = it + 1
            break
        # Powell direction update: replace the direction of largest decrease
        # with the net sweep displacement, then restart every n sweeps.
        if (it + 1) % n == 0:
            dirs = np.eye(n) * cfg.step_init
        else:
            new_dir = x - x_start
            norm = np.linalg.norm(new_dir)
            if norm > 0:
                dirs[biggest_idx] = new_dir
    else:
        trace.iterations = cfg.max_iters
    trace.converged = converged
    trace.final_x = x
    return x, trace


def adam_minimize(g, x0, cfg: OptimConfig | None = None, f=None):
    """Standard ADAM with bias correction over exactly cfg.max_iters steps.

    g is a gradient callback; no early stopping, matching a fixed step budget.
    When an objective callback f is given, f is evaluated at every iterate and
    the best-seen point is tracked in the trace (best_x, best_f).
    """
    cfg = cfg or OptimConfig()
    x = np.asarray(x0, dtype=float).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace = OptimTrace()
    best_x = x.copy()
    best_f = None
    if f is not None:
        best_f = float(f(x))
        trace.objective.append(best_f)  # index 0 = objective at x0
    for k in range(1, cfg.max_iters + 1):
        grad = np.asarray(g(x), dtype=float)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"gradient non-finite at step {k}")
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        mhat = m / (1 - cfg.beta1**k)
        vhat = v / (1 - cfg.beta2**k)
        x = x - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
        if f is not None:
            fx = float(f(x))
            trace.objective.append(fx)
            if fx < best_f:
                best_f = fx
                best_x = x.copy()
    trace.iterations = cfg.max_iters
    trace.converged = True
    trace.final_x = x
    trace.best_x = best_x
    trace.best_f = best_f
    return x, trace


def finite_diff_grad(f, x, h):
    """Central-difference gradient; h is a scalar or per-dimension step."""
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        fp = float(f(x + e))
        fm = float(f(x - e))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteObjective(f"objective non-finite probing dimension {i}")
        grad[i] = (fp - fm) / (2.0 * h[i])
    return grad
