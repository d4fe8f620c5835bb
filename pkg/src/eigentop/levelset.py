"""Level-set gradient flow for two-phase first-eigenvalue optimization.

A nodal level-set function phi splits the domain into S = {phi > 0}, where
the coefficient takes the value c, and its complement, where it is 1.  Each
step solves the eigenproblem for the current two-phase coefficient, builds
an interface velocity from the first eigenfunction (or the first two when
the eigenvalue is nearly double), and advances phi by one implicit step of

    phi_t = eps * lap(phi) - (v0 + nu) * |grad phi|,

where the scalar nu is chosen so the area of S stays at m0 * |Omega|.

Numerical realization notes (all orthogonal to the model itself):
  * the velocity is rescaled so the interface moves about one mesh cell per
    step (an advective CFL normalization — a pure time reparametrization);
  * phi is divided by max|phi| after every step; the flow map is invariant
    under this rescaling (v0 does not depend on phi's amplitude and both
    remaining terms are 1-homogeneous), and it pins dt = 1/sup|phi| at 1;
  * the diffusion coefficient used inside the implicit operator is floored
    at a fixed fraction of h^2 so the smoothing length per step tracks the
    mesh; with the raw eps = 1e-4 on coarse meshes the regularization is
    sub-element and the interface develops single-element speckle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .eig import EigenSet, multiplicity_ratio, solve_smallest
from .fem import BoundaryCondition
from .geometry import Mesh

# diffusion number: smoothing coefficient >= _DIFF_NUM * (median edge)^2,
# i.e. diffusion length per step stays a fixed sub-element fraction
_DIFF_NUM = 0.05


# ---------------------------------------------------------------------------
# configuration and state
# ---------------------------------------------------------------------------

@dataclass
class PhaseConfig:
    problem: str                       # "conductivity" | "density"
    objective: str                     # "min" | "max"
    c: float
    m0: float
    bc: BoundaryCondition
    epsilon: float = 1e-4
    max_steps: int = 500
    stop_tol: float = 1e-6
    multiplicity_threshold: float = 0.99
    snapshot_every: int = 0
    volume_tol: float = 1e-3           # |G| <= volume_tol * |Omega|
    exponent_s: float = 2.0            # recorded knob; only 2 is exercised
    reinit: bool = False               # optional redistancing, off by default
    reinit_every: int = 50

    def __post_init__(self):
        if self.problem not in ("conductivity", "density"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.objective not in ("min", "max"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not (self.c > 0 and self.c != 1):
            raise ValueError("c must be positive and != 1")
        if not 0 < self.m0 < 1:
            raise ValueError("m0 must be in (0,1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class OptState:
    step: int
    phi: np.ndarray
    rho_or_sigma: np.ndarray
    eigs: EigenSet
    nu: float
    dt: float
    volume_residual: float             # G(phi) / |Omega|
    history: list = field(default_factory=list)
    # rows: (step, lam1, lam2, lam3, G, nu, dt)


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def init_phi(mesh: Mesh) -> np.ndarray:
    """Initial level-set function phi(x, y) = x."""
    return mesh.vertices[:, 0].copy()


def phase_from_phi(mesh: Mesh, phi: np.ndarray, c: float) -> np.ndarray:
    """Two-valued element coefficient: c where the centroid value of phi > 0."""
    return np.where(fem.element_mean(mesh, phi) > 0.0, c, 1.0)


def volume_mismatch(mesh: Mesh, phi: np.ndarray, m0: float) -> float:
    """G(phi) = area({phi > 0}) - m0 |Omega|, with elements classified by centroid."""
    in_s = fem.element_mean(mesh, phi) > 0.0
    return float(mesh.element_areas[in_s].sum() - m0 * mesh.element_areas.sum())


def time_step(phi: np.ndarray) -> float:
    """dt = 1 / sup|phi|."""
    m = float(np.abs(phi).max())
    if m == 0.0:
        raise ValueError("phi is identically zero")
    return 1.0 / m


def _mode_velocity(problem: str, mesh: Mesh, lam: float, u: np.ndarray,
                   c: float, mass) -> np.ndarray:
    """Unsigned single-mode speed, normalized by the mode's own mass norm."""
    nrm = float(u @ (mass @ u))
    if problem == "conductivity":
        g = fem.element_gradient(mesh, u)
        return (c - 1.0) * (g ** 2).sum(1) / nrm
    return lam * (c - 1.0) * fem.element_mean(mesh, u ** 2) / nrm


def _signed(problem: str, objective: str, base: np.ndarray) -> np.ndarray:
    # Descent direction for lambda_1 in the conductivity problem is +base
    # when minimizing; in the density problem the shape derivative carries
    # the opposite sign (raising sigma where u^2 is large lowers mu), so the
    # roles flip: minimization uses -base, maximization +base.
    sgn = 1.0 if objective == "min" else -1.0
    return sgn * base if problem == "conductivity" else -sgn * base


def velocity_simple(problem: str, eigs: EigenSet, rho_or_sigma: np.ndarray,
                    mesh: Mesh, objective: str, mass=None) -> np.ndarray:
    """Interface speed from the first eigenpair (elementwise)."""
    if len(eigs.values) < 1:
        raise ValueError("need at least one eigenpair")
    c = float(rho_or_sigma.max())
    if mass is None:
        mass = (fem.assemble_mass(mesh) if problem == "conductivity"
                else fem.assemble_mass(mesh, rho_or_sigma))
    base = _mode_velocity(problem, mesh, eigs.values[0], eigs.vectors[:, 0], c, mass)
    return _signed(problem, objective, base)


def velocity_multiplicity2(problem: str, eigs: EigenSet, mesh: Mesh,
                           rho_or_sigma: np.ndarray, objective: str,
                           threshold: float = 0.99, mass=None) -> np.ndarray:
    """Two-mode speed for a (nearly) double first eigenvalue: the sum of the
    two normalized single-mode speeds, invariant under rotating the basis of
    the eigenspace."""
    if len(eigs.values) < 2:
        raise ValueError("need two eigenpairs")
    if multiplicity_ratio(eigs) < threshold:
        raise ValueError(
            f"multiplicity branch called at ratio {multiplicity_ratio(eigs):.4f}"
            f" < {threshold}")
    c = float(rho_or_sigma.max())
    if mass is None:
        mass = (fem.assemble_mass(mesh) if problem == "conductivity"
                else fem.assemble_mass(mesh, rho_or_sigma))
    base = sum(
        _mode_velocity(problem, mesh, eigs.values[i], eigs.vectors[:, i], c, mass)
        for i in (0, 1))
    return _signed(problem, objective, base)


# ---------------------------------------------------------------------------
# implicit transport step and volume projection
# ---------------------------------------------------------------------------

def _grad_norm(mesh: Mesh, phi: np.ndarray) -> np.ndarray:
    g = fem.element_gradient(mesh, phi)
    return np.sqrt((g ** 2).sum(1))


def _source_load(mesh: Mesh, elem_field: np.ndarray) -> np.ndarray:
    """Load vector of an elementwise source against P1 test functions."""
    load = np.zeros(mesh.n_vertices)
    np.add.at(load, mesh.triangles.ravel(),
              np.repeat(elem_field * mesh.element_areas / 3.0, 3))
    return load


class _StepContext:
    """Factorization of (M/dt + eps K) plus the pieces reused every step."""

    def __init__(self, mesh: Mesh, dt: float, epsilon: float):
        self.mesh = mesh
        self.dt = dt
        self.epsilon = epsilon
        self.M = fem.assemble_mass(mesh)
        K = fem.assemble_stiffness(mesh)       # natural bc for phi
        self.lu = spla.splu((self.M / dt + epsilon * K).tocsc())

    def matches(self, dt: float, epsilon: float) -> bool:
        return abs(dt - self.dt) <= 1e-12 * self.dt and self.epsilon == epsilon


def implicit_step(mesh: Mesh, phi_prev: np.ndarray, v0: np.ndarray, nu: float,
                  dt: float, epsilon: float, bc_phi: str = "natural",
                  _ctx: _StepContext | None = None) -> np.ndarray:
    """One implicit step of phi_t = eps lap(phi) - (v0 + nu) |grad phi|.

    Solves (M/dt + eps K) phi_new = M phi_prev / dt - b with b the load of
    (v0 + nu) |grad phi_prev|; K and M carry no essential conditions (the
    phi-diffusion is natural on all of the boundary).
    """
    if bc_phi != "natural":
        raise ValueError("phi evolution supports only natural boundary treatment")
    if dt <= 0 or epsilon <= 0:
        raise ValueError("dt and epsilon must be positive")
    ctx = _ctx if _ctx is not None and _ctx.matches(dt, epsilon) else \
        _StepContext(mesh, dt, epsilon)
    gphi = _grad_norm(mesh, phi_prev)
    rhs = ctx.M @ phi_prev / dt - _source_load(mesh, (v0 + nu) * gphi)
    return ctx.lu.solve(rhs)


def find_multiplier(mesh: Mesh, phi_prev: np.ndarray, v0: np.ndarray,
                    dt: float, epsilon: float, m0: float,
                    volume_tol: float = 1e-3,
                    _ctx: _StepContext | None = None) -> tuple:
    """Bisection for the volume multiplier nu.

    phi_new depends on nu affinely: phi_new(nu) = phi0 - nu * w with
    phi0 the nu = 0 step and w the response to a unit constant speed, so a
    single factorization serves the whole root find.  Returns (nu, phi_next)
    with |G(phi_next)| <= volume_tol * |Omega|.
    """
    ctx = _ctx if _ctx is not None and _ctx.matches(dt, epsilon) else \
        _StepContext(mesh, dt, epsilon)
    gphi = _grad_norm(mesh, phi_prev)
    phi0 = ctx.lu.solve(ctx.M @ phi_prev / dt - _source_load(mesh, v0 * gphi))
    w = ctx.lu.solve(_source_load(mesh, gphi))

    areas = mesh.element_areas
    omega = areas.sum()
    target = m0 * omega
    tol = volume_tol * omega
    e0 = fem.element_mean(mesh, phi0)
    ew = fem.element_mean(mesh, w)

    def mismatch(nu: float) -> float:
        return float(areas[(e0 - nu * ew) > 0.0].sum() - target)

    # G is nonincreasing in nu (larger nu pushes phi down everywhere w > 0)
    lo, hi = -1.0, 1.0
    budget = 60
    while mismatch(lo) < -tol and budget:
        lo *= 2.0
        budget -= 1
    while mismatch(hi) > tol and budget:
        hi *= 2.0
        budget -= 1
    if budget == 0:
        raise RuntimeError(
            f"volume bracket failed: G({lo})={mismatch(lo):.3e}, "
            f"G({hi})={mismatch(hi):.3e}, tol={tol:.3e}")
    nu = 0.0
    g = mismatch(nu)
    if abs(g) > tol:
        for _ in range(200):
            nu = 0.5 * (lo + hi)
            g = mismatch(nu)
            if abs(g) <= tol:
                break
            if g > 0.0:
                lo = nu
            else:
                hi = nu
        else:
            raise RuntimeError(
                f"volume bisection stalled: G({nu})={g:.3e}, tol={tol:.3e}")
    return float(nu), phi0 - nu * w


def reinitialize(mesh: Mesh, phi: np.ndarray) -> np.ndarray:
    """Approximate redistancing: signed distance to the zero level set,
    sampled from the edge crossings of phi."""
    tri = mesh.triangles
    edges = np.unique(np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]],
                                         tri[:, [2, 0]]]), axis=1), axis=0)
    pa, pb = phi[edges[:, 0]], phi[edges[:, 1]]
    cut = (pa > 0) != (pb > 0)
    if not cut.any():
        return phi.copy()
    t = pa[cut] / (pa[cut] - pb[cut])
    pts = mesh.vertices[edges[cut, 0]] + t[:, None] * (
        mesh.vertices[edges[cut, 1]] - mesh.vertices[edges[cut, 0]])
    from scipy.spatial import cKDTree
    d, _ = cKDTree(pts).query(mesh.vertices)
    return np.where(phi > 0, d, -d)


# ---------------------------------------------------------------------------
# outer optimization loop
# ---------------------------------------------------------------------------

def _mesh_scale(mesh: Mesh) -> float:
    tri = mesh.triangles
    edges = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    vec = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    return float(np.median(np.hypot(vec[:, 0], vec[:, 1])))


def _eig_operators(cfg: PhaseConfig, mesh: Mesh, coeff: np.ndarray,
                   base_K, base_M, robin_block):
    """Reduced (K, M) pencil for the current coefficient field."""
    if cfg.problem == "conductivity":
        K = fem.assemble_stiffness(mesh, coeff)
        if robin_block is not None:
            # Robin term inherits the conductivity of the adjacent element
            K = K + robin_block(coeff)
        M = base_M
    else:
        K = base_K if robin_block is None else base_K + robin_block(None)
        M = fem.assemble_mass(mesh, coeff)
    return K, M


def _robin_block_factory(cfg: PhaseConfig, mesh: Mesh):
    """None when no robin tag; else a callable coeff -> boundary matrix."""
    tags = cfg.bc.robin_tags()
    if not tags:
        return None
    if len(tags) > 1:
        raise ValueError("at most one robin tag is supported")
    tag = next(iter(tags))
    # adjacency: boundary edge -> the unique element containing it
    edge_to_elem = {}
    tri = mesh.triangles
    for e in range(len(tri)):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edge_to_elem[tuple(sorted((tri[e, a], tri[e, b])))] = e
    tagged = [(i, j, edge_to_elem[tuple(sorted((i, j)))])
              for i, j, t in mesh.boundary_edges if t == tag]
    if not tagged:
        raise ValueError(f"no boundary edges tagged {tag!r}")

    def block(coeff):
        rows, cols, vals = [], [], []
        ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        for i, j, e in tagged:
            w = cfg.bc.eta * float(np.hypot(*(mesh.vertices[j] - mesh.vertices[i])))
            if coeff is not None:
                w *= float(coeff[e])
            for a, va in enumerate((i, j)):
                for b, vb in enumerate((i, j)):
                    rows.append(va)
                    cols.append(vb)
                    vals.append(w * ref[a, b])
        mat = sp.coo_matrix((vals, (rows, cols)),
                            shape=(mesh.n_vertices, mesh.n_vertices)).tocsr()
        return ((mat + mat.T) * 0.5).tocsr()

    return block


def optimize(cfg: PhaseConfig, mesh: Mesh, on_step=None) -> OptState:
    """Run the constrained gradient flow; returns the best accepted state.

    Each iteration: classify the phases, solve for three eigenpairs, pick
    the single- or two-mode velocity by the multiplicity ratio, advance phi
    one implicit step with the volume multiplier, rescale phi, and record a
    history row.  The loop stops when the relative spread of the objective
    over the last 20 accepted steps falls below stop_tol, or at max_steps.
    A monotone worsening of the objective for 50 consecutive steps raises.

    The returned OptState is the accepted iterate with the best objective
    (the flow dithers around optima by single-element flips once the
    interface reaches the mesh scale; the best visited state is the
    meaningful result, and the full history is attached).
    """
    # the pencil is singular (constant nullvector) only with no essential
    # conditions anywhere and no positive robin term
    deflate = not cfg.bc.dirichlet_tags() and (
        not cfg.bc.robin_tags() or cfg.bc.eta == 0.0)
    fixed = fem.dirichlet_vertices(mesh, cfg.bc.dirichlet_tags())
    keep = np.setdiff1d(np.arange(mesh.n_vertices), fixed)
    base_K = fem.assemble_stiffness(mesh)
    base_M = fem.assemble_mass(mesh)
    robin_block = _robin_block_factory(cfg, mesh)

    omega = float(mesh.element_areas.sum())
    h = _mesh_scale(mesh)
    eps_eff = max(cfg.epsilon, _DIFF_NUM * h * h)

    # uniform-medium references for the eigenvalue bounds invariant
    K0, M0 = _eig_operators(cfg, mesh, np.ones(mesh.n_triangles), base_K,
                            base_M, robin_block)
    ref = solve_smallest(K0[keep][:, keep].tocsr(), M0[keep][:, keep].tocsr(),
                         k=1, deflate_constants=deflate)
    lam_uniform = ref.values[0]
    cmin, cmax = min(1.0, cfg.c), max(1.0, cfg.c)
    if cfg.problem == "conductivity":
        lam_lo, lam_hi = lam_uniform * cmin, lam_uniform * cmax
    else:
        lam_lo, lam_hi = lam_uniform / cmax, lam_uniform / cmin
    slack = 1e-8 * abs(lam_uniform)

    phi = init_phi(mesh)
    phi = phi / np.abs(phi).max()
    dt = time_step(phi)                      # = 1 after the rescale
    ctx = _StepContext(mesh, dt, eps_eff)

    history = []
    better = (lambda a, b: a < b) if cfg.objective == "min" else (lambda a, b: a > b)
    best = None
    worsening = 0
    warm = None
    nu_used = float("nan")
    dt_used = float("nan")

    for step in range(cfg.max_steps + 1):
        coeff = phase_from_phi(mesh, phi, cfg.c)
        K, M = _eig_operators(cfg, mesh, coeff, base_K, base_M, robin_block)
        Kr = K[keep][:, keep].tocsr()
        Mr = M[keep][:, keep].tocsr()
        eigs_red = solve_smallest(Kr, Mr, k=3, deflate_constants=deflate,
                                  x0=warm)
        warm = eigs_red.vectors
        vecs = np.zeros((mesh.n_vertices, 3))
        vecs[keep] = eigs_red.vectors
        eigs = EigenSet(eigs_red.values.copy(), vecs)

        lam1 = float(eigs.values[0])
        if not (lam_lo - slack <= lam1 <= lam_hi + slack):
            raise RuntimeError(
                f"step {step}: lambda1={lam1} outside uniform-medium bounds "
                f"[{lam_lo}, {lam_hi}]")

        G = volume_mismatch(mesh, phi, cfg.m0)
        history.append((step, lam1, float(eigs.values[1]), float(eigs.values[2]),
                        G, nu_used, dt_used))

        state = OptState(step, phi.copy(), coeff, eigs, nu_used, dt_used,
                         G / omega, history)
        if step >= 1 and (best is None or better(lam1, best.eigs.values[0])):
            best = OptState(step, phi.copy(), coeff, eigs, nu_used, dt_used,
                            G / omega)
        if on_step is not None:
            on_step(state)

        # stop/divergence bookkeeping on the accepted-objective sequence
        lams = [row[1] for row in history]
        if len(lams) >= 2:
            worsening = worsening + 1 if better(lams[-2], lams[-1]) else 0
        if worsening >= 50:
            err = RuntimeError(
                f"objective worsened for {worsening} consecutive steps")
            err.history = history
            raise err
        if step >= 20:
            window = lams[-20:]
            spread = (max(window) - min(window)) / max(abs(window[-1]), 1e-300)
            if spread < cfg.stop_tol:
                break
        if step == cfg.max_steps:
            break

        # velocity (signed descent direction for the chosen objective)
        mass_norm = base_M if cfg.problem == "conductivity" else M
        if multiplicity_ratio(eigs) >= cfg.multiplicity_threshold:
            v0 = velocity_multiplicity2(cfg.problem, eigs, mesh, coeff,
                                        cfg.objective,
                                        cfg.multiplicity_threshold, mass_norm)
        else:
            v0 = velocity_simple(cfg.problem, eigs, coeff, mesh,
                                 cfg.objective, mass_norm)

        # advective normalization: one mesh cell of interface motion per
        # step.  A velocity below 1e-6 cells/step is a genuinely flat
        # derivative (e.g. c ~ 1); amplifying it would manufacture motion
        # out of roundoff, so leave it un-normalized instead.
        vmax = float(np.abs(v0).max())
        if vmax > 1e-6 * h:
            v0 = v0 * (h / vmax)

        dt_used = time_step(phi)
        nu_used, phi_next = find_multiplier(mesh, phi, v0, dt_used, eps_eff,
                                            cfg.m0, cfg.volume_tol, ctx)
        phi = phi_next / np.abs(phi_next).max()
        if cfg.reinit and cfg.reinit_every > 0 and (step + 1) % cfg.reinit_every == 0:
            phi = reinitialize(mesh, phi)
            phi = phi / np.abs(phi).max()

    if best is None:          # max_steps = 0: only the initial state exists
        best = OptState(0, phi.copy(), phase_from_phi(mesh, phi, cfg.c), eigs,
                        nu_used, dt_used, volume_mismatch(mesh, phi, cfg.m0) / omega)
    best.history = history
    return best
