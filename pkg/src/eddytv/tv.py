"""Total-variation operators and the regularization half-step.

The regularizer couples a nodal surrogate field s to the conductivity
through a quadratic gradient penalty; the s-update minimizes

    alpha*|grad s|_L1 + y.s + (beta/2)*|grad s - grad sigma|^2_L2

over the box-and-boundary constrained nodal set. It is solved by an
inner ADMM with a per-cell auxiliary vector d and scaled multiplier u:
isotropic shrinkage in d, an SPD conjugate-gradient solve plus clipping
in s, and a dual ascent in u. All L2 quantities are volume-weighted
per-cell sums, so the shrinkage threshold is volume-free.

Multipliers (y) are dual vectors: y.s is a plain dot product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .assembly import CellGradient
from .errors import ConfigError
from .linalg import cg_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoxBounds:
    """Pointwise bounds of the admissible set; interior nodes only."""

    lower: float
    upper: float

    def validate(self, sigma0: float | None = None) -> None:
        if not self.upper > self.lower:
            raise ConfigError(f"bounds must satisfy upper > lower, got {self}")
        if sigma0 is not None and self.lower <= -sigma0:
            raise ConfigError(
                f"lower bound {self.lower} must exceed -sigma0 = {-sigma0}"
            )


@dataclass(frozen=True)
class InnerAdmmConfig:
    """Inner ADMM controls; rho = None means rho = beta at call time."""

    rho: float | None = None
    iterations: int = 40
    cg_tol: float = 1e-10
    cg_max_iter: int = 500
    anisotropic: bool = False

    def validate(self) -> None:
        if self.rho is not None and self.rho <= 0:
            raise ConfigError(f"rho must be positive, got {self.rho!r}")
        if self.iterations < 1:
            raise ConfigError("inner iterations must be >= 1")


def tv_seminorm(v: np.ndarray, grad_op: CellGradient, anisotropic: bool = False) -> float:
    """Volume-weighted L1 norm of the per-cell gradient."""
    g = grad_op.apply(np.asarray(v, dtype=np.float64))
    mag = np.abs(g).sum(axis=1) if anisotropic else np.linalg.norm(g, axis=1)
    return float(grad_op.vols @ mag)


def shrink(target: np.ndarray, kappa: float, anisotropic: bool = False) -> np.ndarray:
    """Proximal map of kappa*|.|: isotropic (vector) soft threshold.

    Rows with |w| <= kappa collapse to zero; the anisotropic variant
    thresholds each component independently.
    """
    w = np.asarray(target, dtype=np.float64)
    if kappa < 0:
        raise ConfigError(f"shrink threshold must be >= 0, got {kappa!r}")
    if anisotropic:
        return np.sign(w) * np.maximum(np.abs(w) - kappa, 0.0)
    norms = np.linalg.norm(w, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > 0.0, np.maximum(1.0 - kappa / norms, 0.0), 0.0)
    return w * scale


def project_box(v: np.ndarray, bounds: BoxBounds) -> np.ndarray:
    """Clip interior nodal values to the bounds (boundary stays zero)."""
    return np.clip(np.asarray(v, dtype=np.float64), bounds.lower, bounds.upper)


def s_objective(s: np.ndarray, sigma: np.ndarray, y_dual: np.ndarray,
                alpha: float, beta: float, grad_op: CellGradient,
                anisotropic: bool = False) -> float:
    """The s-dependent part of the augmented Lagrangian."""
    diff = grad_op.apply(s) - grad_op.apply(sigma)
    quad = 0.5 * beta * float(grad_op.vols @ np.einsum("tc,tc->t", diff, diff))
    return tv_seminorm(s, grad_op, anisotropic) * alpha + float(y_dual @ s) + quad


@dataclass
class SSubproblemResult:
    s: np.ndarray
    d: np.ndarray
    u: np.ndarray
    primal_residual: float
    objective: float
    warm_objective: float
    reverted: bool
    cg_iterations: int
    cg_converged: bool


def s_subproblem(sigma_next: np.ndarray, y_dual: np.ndarray, grad_op: CellGradient,
                 alpha: float, beta: float, bounds: BoxBounds,
                 cfg: InnerAdmmConfig = InnerAdmmConfig(),
                 warm: tuple | None = None) -> SSubproblemResult:
    """Inner ADMM for the surrogate field; never worse than the warm start.

    ``warm`` is the previous (s, d, u) triple. The returned objective is
    the exact s-objective; when the fixed iteration budget ends above
    the warm start's value, the warm triple is returned instead, so the
    outer augmented Lagrangian cannot increase in this half-step.
    """
    cfg.validate()
    bounds.validate()
    rho = beta if cfg.rho is None else float(cfg.rho)
    sigma_next = np.asarray(sigma_next, dtype=np.float64)
    n = len(sigma_next)
    if warm is None:
        s = np.zeros(n)
        d = np.zeros((grad_op.n_cells, 3))
        u = np.zeros((grad_op.n_cells, 3))
    else:
        s, d, u = (np.array(a, dtype=np.float64) for a in warm)

    warm_triple = (s.copy(), d.copy(), u.copy())
    warm_obj = s_objective(s, sigma_next, y_dual, alpha, beta, grad_op, cfg.anisotropic)

    g_sigma = grad_op.apply(sigma_next)
    w3 = grad_op.weights3()
    stiff = grad_op.stiffness()
    kappa = alpha / (beta + rho)
    gtw = grad_op.matrix.T.multiply(w3[None, :]).tocsr()  # G^T W, reused every sweep

    cg_total, cg_ok = 0, True
    for _ in range(cfg.iterations):
        gs = grad_op.apply(s)
        w = (beta * g_sigma + rho * (gs - u)) / (beta + rho)
        d = shrink(w, kappa, cfg.anisotropic)
        rhs = rho * (gtw @ (d + u).reshape(-1)) - y_dual
        s, rep = cg_solve(rho * stiff, rhs, tol=cfg.cg_tol,
                          max_iter=cfg.cg_max_iter, x0=s)
        cg_total += rep.iterations
        cg_ok = cg_ok and rep.converged
        s = project_box(s, bounds)
        u = u + d - grad_op.apply(s)

    obj = s_objective(s, sigma_next, y_dual, alpha, beta, grad_op, cfg.anisotropic)
    reverted = False
    if not obj <= warm_obj:
        s, d, u = warm_triple
        obj = warm_obj
        reverted = True

    resid = d - grad_op.apply(s)
    primal = float(np.sqrt(grad_op.vols @ np.einsum("tc,tc->t", resid, resid)))
    return SSubproblemResult(s, d, u, primal, obj, warm_obj, reverted,
                             cg_total, cg_ok)
