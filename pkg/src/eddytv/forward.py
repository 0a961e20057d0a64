"""State and adjoint solves, misfit, gradient, augmented Lagrangian.

The misfit is half the squared L2 distance between the tangential trace
of the computed field and the observed trace on the top boundary. Its
gradient with respect to the nodal conductivity comes from one adjoint
solve: because the saddle matrix is complex symmetric, the adjoint
reuses the factorization of the state solve, and

    dG[sigma_dir] = omega * int_conductor Im(E . F) sigma_dir dx

with the unconjugated product of state E and adjoint F. The adjoint
load conjugates the data mismatch at the boundary quadrature points;
this sign/conjugation convention is pinned by the finite-difference
consistency tests.

Gradients are returned as dual (load) vectors: pairings with nodal
fields are plain dot products, no mass solve involved.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import assembly, tv
from .assembly import Discretization, cell_gradient_operator
from .errors import ConfigError
from .linalg import Factorization, factorize
from .mesh import OMEGA_0, Mesh


@dataclass(frozen=True)
class PhysicalParams:
    """Material constants; the conductivity background sigma0 is uniform."""

    mu: float = 1.0
    eps: float = 1.0
    sigma0: float = 1.0


@dataclass(frozen=True)
class SourceSpec:
    """Magnetic dipole line-up: curl of point sources along a direction.

    Positions must lie strictly inside the insulating region.
    """

    positions: tuple
    direction: tuple = (1.0, 0.0, 0.0)
    omega: float = 1.0

    def position_array(self) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.positions, dtype=np.float64))


@dataclass
class StateSolution:
    edge_values: np.ndarray  # full per-edge coefficients, zeros on GammaD
    phi: np.ndarray  # multiplier coefficients
    residual_norm: float
    div_residual: float
    hcurl_norm: float


@dataclass
class AdjointSolution:
    edge_values: np.ndarray
    psi: np.ndarray
    residual_norm: float
    div_residual: float


class EddyProblem:
    """Bundles mesh, source, constants, and observed data for inversion.

    Caches the assembly tables once and the factorization/state for the
    most recent conductivities, so a line search followed by a gradient
    at the accepted point never refactorizes.

    With ``primary_edges`` the problem runs in scattered-field form: the
    state solve returns the conductivity-induced secondary field driven
    by the frozen background field, E_s with A(sigma) E_s = i omega
    N(sigma) E_p, and observations must then hold the response-only
    trace (measurement minus background trace). The physical field is
    E_p + E_s; the misfit gradient uses it, so the adjoint identity is
    unchanged. Splitting off the background removes the cross-mesh
    baseline bias that otherwise drowns the response at coarse
    resolution: the sources are point dipoles, and their near fields
    converge far too slowly for absolute traces to be comparable
    between meshes.
    """

    def __init__(self, mesh: Mesh, source: SourceSpec,
                 params: PhysicalParams = PhysicalParams(),
                 obs_values: np.ndarray | None = None,
                 cache_size: int = 3,
                 primary_edges: np.ndarray | None = None):
        self.mesh = mesh
        self.source = source
        self.params = params
        self.disc = Discretization(mesh, mu=params.mu, eps=params.eps)
        self.grad_op = cell_gradient_operator(mesh)
        self.load = self._checked_load(source)
        self.obs_values = None if obs_values is None else np.asarray(obs_values)
        self.primary_edges = self._checked_primary(primary_edges)
        self._cache_size = cache_size
        self._states: OrderedDict[bytes, tuple[Factorization, StateSolution]] = OrderedDict()
        self._grads: OrderedDict[bytes, tuple[float, np.ndarray]] = OrderedDict()
        self._nodal_mass = None

    def _checked_primary(self, primary: np.ndarray | None) -> np.ndarray | None:
        if primary is None:
            return None
        primary = np.asarray(primary, dtype=np.complex128)
        if primary.shape != (self.mesh.n_edges,):
            raise ConfigError(
                f"primary field has shape {primary.shape}, expected "
                f"({self.mesh.n_edges},)")
        dm = self.disc.dofs
        fixed = np.delete(np.arange(self.mesh.n_edges), dm.free_edges)
        worst = float(np.abs(primary[fixed]).max()) if len(fixed) else 0.0
        if worst > 1e-9 * max(1.0, float(np.abs(primary).max())):
            raise ConfigError(
                "primary field violates the boundary constraint by %g" % worst)
        return primary

    def _checked_load(self, source: SourceSpec) -> np.ndarray:
        from .mesh import locate_points

        pts = source.position_array()
        owners = locate_points(self.mesh, pts)
        if (owners < 0).any():
            raise ConfigError("source position outside the mesh")
        if (self.mesh.cell_tags[owners] != OMEGA_0).any():
            bad = pts[self.mesh.cell_tags[owners] != OMEGA_0][0]
            raise ConfigError(f"source position {bad} is not inside the insulator")
        return self.disc.dipole_load(source)

    @property
    def n_sigma(self) -> int:
        return self.disc.dofs.n_vh

    # -- solves --

    def _solved(self, sigma: np.ndarray) -> tuple[Factorization, StateSolution]:
        key = np.asarray(sigma, dtype=np.float64).tobytes()
        hit = self._states.get(key)
        if hit is not None:
            self._states.move_to_end(key)
            return hit
        fact, state = self._solve_state(np.asarray(sigma, dtype=np.float64))
        self._states[key] = (fact, state)
        while len(self._states) > self._cache_size:
            self._states.popitem(last=False)
        return fact, state

    def _state_load(self, sigma: np.ndarray) -> np.ndarray:
        if self.primary_edges is None:
            return self.load
        dm = self.disc.dofs
        load = np.zeros(dm.n_total, dtype=np.complex128)
        ep_free = self.primary_edges[dm.free_edges]
        load[:dm.n_edge] = (1j * self.source.omega
                            * (self.disc.sigma_edge_mass(sigma) @ ep_free))
        return load

    def _solve_state(self, sigma: np.ndarray) -> tuple[Factorization, StateSolution]:
        disc, dm = self.disc, self.disc.dofs
        m = disc.assemble_saddle(sigma, self.params.sigma0, self.source.omega)
        fact = factorize(m)
        load = self._state_load(sigma)
        x = fact.solve(load)
        res = fact.residual(x, load)
        e_free, phi = x[:dm.n_edge], x[dm.n_edge:]
        edge_values = disc.expand_edges(e_free)
        div = self._div_residual(e_free)
        mass, curl = disc.edge_norm_matrices()
        h2 = (e_free.conj() @ (mass @ e_free) + e_free.conj() @ (curl @ e_free)).real
        state = StateSolution(edge_values, phi, res, div, float(np.sqrt(max(h2, 0.0))))
        return fact, state

    def _div_residual(self, e_free: np.ndarray) -> float:
        if self.disc.coupling is None:
            return 0.0
        en = np.linalg.norm(e_free)
        if en == 0.0:
            return 0.0
        return float(np.linalg.norm(self.disc.coupling.T @ e_free) / en)

    def solve_state(self, sigma: np.ndarray) -> StateSolution:
        return self._solved(sigma)[1]

    def solve_adjoint(self, sigma: np.ndarray, state: StateSolution,
                      obs_values: np.ndarray | None = None) -> AdjointSolution:
        obs = self.obs_values if obs_values is None else np.asarray(obs_values)
        if obs is None:
            raise ConfigError("no observed trace attached to this problem")
        disc, dm = self.disc, self.disc.dofs
        fact, _ = self._solved(sigma)
        rhs = disc.adjoint_load(state.edge_values, obs)
        x = fact.solve(rhs)
        res = fact.residual(x, rhs)
        f_free, psi = x[:dm.n_edge], x[dm.n_edge:]
        return AdjointSolution(disc.expand_edges(f_free), psi, res,
                               self._div_residual(f_free))

    # -- objective pieces --

    def misfit(self, state: StateSolution, obs_values: np.ndarray | None = None) -> float:
        obs = self.obs_values if obs_values is None else np.asarray(obs_values)
        if obs is None:
            raise ConfigError("no observed trace attached to this problem")
        return self.disc.misfit(state.edge_values, obs)

    def gradient(self, sigma: np.ndarray, state: StateSolution,
                 adjoint: AdjointSolution) -> np.ndarray:
        """Misfit gradient as a dual vector over interior conductor nodes."""
        e_tot = state.edge_values
        if self.primary_edges is not None:
            # the state carries the secondary field; sensitivity needs the
            # physical one, since the load is itself sigma-dependent
            e_tot = e_tot + self.primary_edges
        return self.disc.gradient_dual(e_tot, adjoint.edge_values,
                                       self.source.omega)

    def value(self, sigma: np.ndarray) -> float:
        """Misfit at sigma (one state solve, cached)."""
        return self.misfit(self.solve_state(sigma))

    def value_and_gradient(self, sigma: np.ndarray) -> tuple[float, np.ndarray]:
        key = np.asarray(sigma, dtype=np.float64).tobytes()
        hit = self._grads.get(key)
        if hit is not None:
            self._grads.move_to_end(key)
            return hit[0], hit[1].copy()
        state = self.solve_state(sigma)
        g_val = self.misfit(state)
        adj = self.solve_adjoint(sigma, state)
        grad = self.gradient(sigma, state, adj)
        self._grads[key] = (g_val, grad)
        while len(self._grads) > self._cache_size:
            self._grads.popitem(last=False)
        return g_val, grad.copy()

    # -- augmented Lagrangian --

    def augmented_lagrangian(self, sigma: np.ndarray, s: np.ndarray,
                             y_dual: np.ndarray, alpha: float, beta: float,
                             misfit_value: float | None = None) -> float:
        """G(sigma) + alpha*TV(s) + y.(s - sigma) + (beta/2)|grad(s - sigma)|^2.

        ``misfit_value`` skips the state solve when G(sigma) is already
        known (the ADMM driver always knows it).
        """
        g_val = self.value(sigma) if misfit_value is None else float(misfit_value)
        return g_val + self.lagrangian_tail(sigma, s, y_dual, alpha, beta)

    def lagrangian_tail(self, sigma, s, y_dual, alpha, beta) -> float:
        gop = self.grad_op
        tv_term = alpha * tv.tv_seminorm(s, gop)
        couple = float(np.dot(y_dual, s - sigma))
        diff = gop.apply(s) - gop.apply(sigma)
        quad = 0.5 * beta * float(gop.vols @ np.einsum("tc,tc->t", diff, diff))
        return tv_term + couple + quad

    def augmented_lagrangian_sigma_part(self, sigma, s_grad_flat, y_dual,
                                        beta) -> float:
        """Terms of L that move with sigma: G - y.sigma + the tether.

        ``s_grad_flat`` is the flattened cell gradient of the frozen s
        iterate. Needs a state solve but no adjoint, so line searches
        stay at one factorization per trial point.
        """
        gop = self.grad_op
        diff = gop.matrix @ sigma - s_grad_flat
        quad = 0.5 * beta * float(diff @ (gop.weights3() * diff))
        return self.value(sigma) - float(y_dual @ sigma) + quad

    def nodal_mass(self):
        """Mass matrix on the conductivity space, cached."""
        if self._nodal_mass is None:
            self._nodal_mass = assembly.nodal_mass_matrix(self.mesh)
        return self._nodal_mass


# ---- spec-surface wrappers ----


def solve_state(mesh: Mesh, sigma, params: PhysicalParams, src: SourceSpec) -> StateSolution:
    return EddyProblem(mesh, src, params).solve_state(np.asarray(sigma, dtype=np.float64))


def solve_adjoint(mesh: Mesh, sigma, state: StateSolution, obs_values,
                  params: PhysicalParams = PhysicalParams(),
                  src: SourceSpec | None = None) -> AdjointSolution:
    if src is None:
        raise ConfigError("solve_adjoint needs the source to rebuild the system")
    p = EddyProblem(mesh, src, params, obs_values=np.asarray(obs_values))
    return p.solve_adjoint(np.asarray(sigma, dtype=np.float64), state)
