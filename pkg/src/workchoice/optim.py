"""Optimizers and the finite-difference gradient oracle.

Both optimizers minimize.  Likelihood code passes the negated
log-likelihood.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LbfgsSettings:
    memory: int = 10
    tol: float = 1e-6
    max_iter: int = 500
    armijo_c: float = 1e-4
    shrink: float = 0.5
    min_step: float = 1e-20

    def __post_init__(self):
        for name in ("memory", "tol", "max_iter", "armijo_c", "shrink", "min_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LbfgsSettings.{name} must be positive")
        if not self.shrink < 1:
            raise ValueError("LbfgsSettings.shrink must be below 1")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    converged: bool
    iterations: int
    message: str = ""


def lbfgs_minimize(
    fun_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    settings: LbfgsSettings = LbfgsSettings(),
) -> OptimizeResult:
    """Limited-memory BFGS with two-loop recursion and Armijo backtracking.

    Convergence is declared when the max-norm of the gradient drops below
    ``settings.tol``.  A failed line search (the step shrinks below
    ``settings.min_step`` or no longer changes ``x``) ends the run with
    ``converged=False`` and the last accepted iterate.

    Raises
    ------
    FloatingPointError
        If the objective or gradient is not finite at ``x0``.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun_and_grad(x)
    g = np.asarray(g, dtype=np.float64)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise FloatingPointError("objective or gradient not finite at the starting point")

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    for it in range(settings.max_iter + 1):
        if np.max(np.abs(g)) < settings.tol:
            return OptimizeResult(x, float(f), g, True, it, "gradient tolerance reached")
        if it == settings.max_iter:
            break

        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            gamma = 1.0 / max(1.0, np.max(np.abs(g)))
        r = gamma * q
        for s, y, rho, a in zip(s_hist, y_hist, rho_hist, reversed(alphas)):
            b = rho * (y @ r)
            r += (a - b) * s
        d = -r

        slope = g @ d
        if not slope < 0:
            # not a descent direction: restart from steepest descent
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            d = -g / max(1.0, np.max(np.abs(g)))
            slope = g @ d

        step = 1.0
        while True:
            x_new = x + step * d
            if step < settings.min_step or np.array_equal(x_new, x):
                # the step no longer moves x: Armijo would pass on rounding alone
                return OptimizeResult(x, float(f), g, False, it, "line search failed")
            f_new, g_new = fun_and_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + settings.armijo_c * step * slope:
                break
            step *= settings.shrink
        # one safeguarded refinement: secant root of the directional
        # derivative, exact on quadratics; derivatives stay accurate near
        # the optimum where function differences drown in rounding
        slope_new = np.asarray(g_new, dtype=np.float64) @ d
        if slope_new > slope:
            trial = min(step * slope / (slope - slope_new), 10.0 * step)
            if abs(trial - step) > 1e-3 * step:
                x_try = x + trial * d
                f_try, g_try = fun_and_grad(x_try)
                if np.isfinite(f_try) and f_try <= f + settings.armijo_c * trial * slope:
                    x_new, f_new, g_new, step = x_try, f_try, g_try, trial
        g_new = np.asarray(g_new, dtype=np.float64)

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > settings.memory:
                s_hist.pop(0), y_hist.pop(0), rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        log.debug("lbfgs iter %d f=%.10g |g|=%.3g step=%.3g", it + 1, f, np.max(np.abs(g)), step)

    return OptimizeResult(x, float(f), g, False, settings.max_iter, "maximum iterations reached")


@dataclass
class AdamState:
    """Moment estimates for a list of parameter arrays."""

    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    timestep: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer moments must align")
    state.timestep += 1
    t = state.timestep
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def finite_diff_gradient(objective: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient ``(f(x + h e_i) - f(x - h e_i)) / 2h``."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        fp, fm = objective(xp), objective(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"objective not finite around coordinate {i}")
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad
