"""Outer inversion loop: conductivity, auxiliary field, and multiplier updates.

Each outer iteration minimizes the augmented Lagrangian

    L(sigma, s, y) = G(sigma) + alpha*TV(s) + y.(s - sigma)
                     + (beta/2) ||grad s - grad sigma||^2

in three sweeps: a projected nonlinear CG pass on sigma with s and y
frozen, the shrinkage ADMM of :mod:`eddytv.tv` on s, and the multiplier
update y = G'(sigma) that reuses the gradient already computed during
the sigma sweep.

Gradients and the multiplier y live in the dual (load-vector)
convention throughout, so every pairing below is a plain dot product.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tv import (BoxBounds, InnerAdmmConfig, SSubproblemResult, project_box,
                 s_subproblem, tv_seminorm)

log = logging.getLogger(__name__)

MULTIPLIER_MODES = ("gradient", "classical")


@dataclass(frozen=True)
class OuterConfig:
    """Knobs for the outer loop.

    ``m_cap`` bounds the lower-bound ramp ``m_k = m_slope*(k-1)``; the
    default cap of 0 keeps the box at [0, sigma_max] every iteration.
    ``m_cap=None`` lets the ramp grow without bound.
    """

    alpha: float = 1e-7
    beta: float = 2e-3
    outer_iterations: int = 50
    nlcg_iterations: int = 3
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20
    nlcg_initial_step: float = 0.5
    m_slope: float = 0.05
    m_cap: float | None = 0.0
    sigma_max: float = 15.0
    inner: InnerAdmmConfig = field(default_factory=InnerAdmmConfig)
    multiplier_mode: str = "gradient"
    early_stop_tol: float | None = None

    def validate(self, sigma0: float | None = None) -> None:
        if not (self.alpha > 0):
            raise ConfigError("alpha must be positive")
        if not (self.beta > 0):
            raise ConfigError("beta must be positive")
        if self.outer_iterations < 1:
            raise ConfigError("outer_iterations must be >= 1")
        if self.nlcg_iterations < 1:
            raise ConfigError("nlcg_iterations must be >= 1")
        if not (0 < self.armijo_c1 < 1):
            raise ConfigError("armijo_c1 must lie in (0, 1)")
        if not (0 < self.backtrack < 1):
            raise ConfigError("backtrack factor must lie in (0, 1)")
        if self.max_backtracks < 1:
            raise ConfigError("max_backtracks must be >= 1")
        if not (self.nlcg_initial_step > 0):
            raise ConfigError("nlcg_initial_step must be positive")
        if self.m_slope < 0:
            raise ConfigError("m_slope must be >= 0")
        if self.multiplier_mode not in MULTIPLIER_MODES:
            raise ConfigError(
                "multiplier_mode must be one of %s" % (MULTIPLIER_MODES,))
        if self.early_stop_tol is not None and self.early_stop_tol < 0:
            raise ConfigError("early_stop_tol must be >= 0")
        self.inner.validate()
        bounds = bounds_for_iteration(self, self.outer_iterations)
        bounds.validate(sigma0)


def bounds_for_iteration(cfg: OuterConfig, k: int) -> BoxBounds:
    """Box constraint for outer iteration ``k`` (1-based)."""
    if k < 1:
        raise ConfigError("iteration index must be >= 1")
    lower = cfg.m_slope * (k - 1)
    if cfg.m_cap is not None:
        lower = min(lower, cfg.m_cap)
    if lower >= cfg.sigma_max:
        raise ConfigError(
            "lower bound %g at iteration %d reaches sigma_max %g"
            % (lower, k, cfg.sigma_max))
    return BoxBounds(lower, cfg.sigma_max)


@dataclass
class AdmmState:
    """Mutable trajectory of the outer loop.

    ``k`` counts completed outer iterations; the arrays hold the current
    iterates and the lists one entry per completed iteration.
    """

    k: int
    sigma: np.ndarray
    s: np.ndarray
    y_dual: np.ndarray
    d: np.ndarray
    u: np.ndarray
    L_history: list[float] = field(default_factory=list)
    G_history: list[float] = field(default_factory=list)
    TV_history: list[float] = field(default_factory=list)
    s_minus_sigma_history: list[float] = field(default_factory=list)
    grad_diff_history: list[float] = field(default_factory=list)
    error_history: list[float] = field(default_factory=list)
    wall_time_history: list[float] = field(default_factory=list)

    _HISTORY_KEYS = ("L_history", "G_history", "TV_history",
                     "s_minus_sigma_history", "grad_diff_history",
                     "error_history", "wall_time_history")

    @classmethod
    def initial(cls, n_sigma: int, n_cells: int) -> "AdmmState":
        return cls(k=0,
                   sigma=np.zeros(n_sigma),
                   s=np.zeros(n_sigma),
                   y_dual=np.zeros(n_sigma),
                   d=np.zeros((n_cells, 3)),
                   u=np.zeros((n_cells, 3)))

    def copy(self) -> "AdmmState":
        return AdmmState(
            k=self.k,
            sigma=self.sigma.copy(), s=self.s.copy(),
            y_dual=self.y_dual.copy(), d=self.d.copy(), u=self.u.copy(),
            **{key: list(getattr(self, key)) for key in self._HISTORY_KEYS})

    def save(self, path) -> None:
        arrays = {key: np.asarray(getattr(self, key), dtype=float)
                  for key in self._HISTORY_KEYS}
        np.savez(path, k=self.k, sigma=self.sigma, s=self.s,
                 y_dual=self.y_dual, d=self.d, u=self.u, **arrays)

    @classmethod
    def load(cls, path) -> "AdmmState":
        with np.load(path) as data:
            return cls(k=int(data["k"]),
                       sigma=data["sigma"], s=data["s"],
                       y_dual=data["y_dual"], d=data["d"], u=data["u"],
                       **{key: list(data[key]) for key in cls._HISTORY_KEYS})


def _objective_parts(problem, sigma, s_grad_flat, y_dual, beta, grad_op):
    """Value and dual gradient of F(sigma) = G - y.sigma + quadratic tether."""
    g_value, g_grad = problem.value_and_gradient(sigma)
    diff = grad_op.matrix @ sigma - s_grad_flat
    weighted = grad_op.weights3() * diff
    value = g_value - y_dual @ sigma + 0.5 * beta * (diff @ weighted)
    grad = g_grad - y_dual + beta * (grad_op.matrix.T @ weighted)
    return value, grad, g_value, g_grad


def _active_set(sigma: np.ndarray, bounds: BoxBounds) -> np.ndarray:
    return (sigma <= bounds.lower) | (sigma >= bounds.upper)


@dataclass
class SigmaResult:
    sigma: np.ndarray
    g_value: float
    g_grad: np.ndarray
    f_value: float
    steps_taken: int
    line_search_failures: int


def sigma_subproblem(problem, sigma, s, y_dual, bounds: BoxBounds,
                     cfg: OuterConfig) -> SigmaResult:
    """Projected Polak-Ribiere CG pass on the smooth sigma objective.

    Runs exactly ``cfg.nlcg_iterations`` steps with Armijo backtracking
    along the projected path P(sigma + t*d). The direction resets to
    steepest descent whenever the PR coefficient would be negative, the
    direction stops being a descent direction, or a step changes the
    active bound set. A failed line search contributes a zero step.
    """
    grad_op = problem.grad_op
    s_grad_flat = grad_op.matrix @ s
    sigma = project_box(sigma, bounds)
    value, grad, g_value, g_grad = _objective_parts(
        problem, sigma, s_grad_flat, y_dual, cfg.beta, grad_op)

    direction = -grad
    steepest = True
    active = _active_set(sigma, bounds)
    t_next = None
    steps = 0
    failures = 0

    for _ in range(cfg.nlcg_iterations):
        if np.linalg.norm(grad) == 0.0:
            break
        if grad @ direction >= 0:
            direction = -grad
            steepest = True
        dir_scale = np.abs(direction).max()
        if dir_scale == 0.0:
            break
        # first trial moves no component by more than nlcg_initial_step;
        # later trials may grow from the last accepted step
        t_cap = cfg.nlcg_initial_step / dir_scale
        t = t_cap if t_next is None else min(t_next, 4.0 * t_cap)
        accepted = None
        for _ in range(cfg.max_backtracks):
            trial = project_box(sigma + t * direction, bounds)
            step_vec = trial - sigma
            slope = grad @ step_vec
            if slope < 0:
                trial_value = problem.augmented_lagrangian_sigma_part(
                    trial, s_grad_flat, y_dual, cfg.beta)
                if trial_value <= value + cfg.armijo_c1 * slope:
                    accepted = trial
                    break
            t *= cfg.backtrack
        if accepted is None:
            failures += 1
            log.warning("sigma line search failed after %d backtracks; "
                        "keeping current iterate", cfg.max_backtracks)
            if steepest:
                break
            direction = -grad
            steepest = True
            t_next = None
            continue
        t_next = 2.0 * t
        steps += 1
        grad_old = grad
        sigma = accepted
        value, grad, g_value, g_grad = _objective_parts(
            problem, sigma, s_grad_flat, y_dual, cfg.beta, grad_op)
        active_new = _active_set(sigma, bounds)
        if (active_new != active).any():
            direction = -grad
            steepest = True
        else:
            pr = grad @ (grad - grad_old) / (grad_old @ grad_old)
            direction = -grad + max(pr, 0.0) * direction
            steepest = False
        active = active_new

    return SigmaResult(sigma=sigma, g_value=g_value, g_grad=g_grad,
                       f_value=value, steps_taken=steps,
                       line_search_failures=failures)


def y_update(sigma_result: SigmaResult, state: AdmmState,
             cfg: OuterConfig, problem) -> np.ndarray:
    """New multiplier; the default mode recycles the cached gradient."""
    if cfg.multiplier_mode == "gradient":
        return sigma_result.g_grad.copy()
    stiffness = problem.grad_op.stiffness()
    return state.y_dual + cfg.beta * (stiffness @ (state.s - sigma_result.sigma))


def run_modified_admm(problem, cfg: OuterConfig, error_fn=None,
                      callback=None, state: AdmmState | None = None,
                      record_timing: bool = True):
    """Drive the outer loop for ``cfg.outer_iterations`` iterations.

    ``error_fn(sigma)`` is an optional truth-error functional used only
    for the error column. ``callback(state)`` fires after each completed
    iteration. Passing a previously saved ``state`` resumes the
    trajectory; the remaining iterations reproduce a cold run with the
    same total count because every per-iteration input is part of the
    state.
    """
    cfg.validate(problem.params.sigma0)
    grad_op = problem.grad_op
    if state is None:
        state = AdmmState.initial(problem.n_sigma, grad_op.vols.size)
    mass = problem.nodal_mass()

    while state.k < cfg.outer_iterations:
        k = state.k + 1
        tick = time.perf_counter() if record_timing else 0.0
        bounds = bounds_for_iteration(cfg, k)

        sres = sigma_subproblem(problem, state.sigma, state.s,
                                state.y_dual, bounds, cfg)
        warm = None if k == 1 else (state.s, state.d, state.u)
        ssol = s_subproblem(sres.sigma, state.y_dual, grad_op, cfg.alpha,
                            cfg.beta, bounds, cfg.inner, warm=warm)
        y_new = y_update(sres, state, cfg, problem)

        sigma_step = float(np.linalg.norm(sres.sigma - state.sigma))
        state.sigma = sres.sigma
        state.s = ssol.s
        state.d = ssol.d
        state.u = ssol.u
        state.y_dual = y_new
        state.k = k

        tv_value = tv_seminorm(state.s, grad_op)
        lagrangian = problem.augmented_lagrangian(
            state.sigma, state.s, state.y_dual, cfg.alpha, cfg.beta,
            misfit_value=sres.g_value)
        diff = state.s - state.sigma
        l2_gap = float(np.sqrt(max(diff @ (mass @ diff), 0.0)))
        grad_gap_vec = grad_op.apply(diff)
        grad_gap = float(np.sqrt(grad_op.vols @ (grad_gap_vec ** 2).sum(1)))
        state.L_history.append(float(lagrangian))
        state.G_history.append(float(sres.g_value))
        state.TV_history.append(float(tv_value))
        state.s_minus_sigma_history.append(l2_gap)
        state.grad_diff_history.append(grad_gap)
        state.error_history.append(
            float(error_fn(state.sigma)) if error_fn is not None
            else float("nan"))
        state.wall_time_history.append(
            time.perf_counter() - tick if record_timing else 0.0)

        log.info("outer k=%d L=%.6e G=%.6e TV=%.6e |s-sigma|=%.3e", k,
                 lagrangian, sres.g_value, tv_value, l2_gap)
        if callback is not None:
            callback(state)
        if (cfg.early_stop_tol is not None
                and sigma_step < cfg.early_stop_tol):
            log.info("early stop at k=%d: step %.3e below tolerance",
                     k, sigma_step)
            break

    return state
