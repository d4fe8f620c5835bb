import math

import numpy as np
import pytest

from eigentop import levelset
from eigentop.eig import EigenSet, solve_smallest
from eigentop.fem import (all_dirichlet, all_neumann, apply_dirichlet,
                          assemble_mass, assemble_stiffness, element_mean,
                          expand_field)
from eigentop.levelset import (OptState, PhaseConfig, find_multiplier,
                               implicit_step, init_phi, phase_from_phi,
                               reinitialize, time_step, velocity_multiplicity2,
                               velocity_simple, volume_mismatch)


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def test_init_phi_is_first_coordinate(square_coarse):
    assert (init_phi(square_coarse) == square_coarse.vertices[:, 0]).all()


def test_phase_from_phi(square_coarse):
    m = square_coarse
    rho = phase_from_phi(m, init_phi(m), 1.5)
    right = m.centroids()[:, 0] > 0
    assert (rho[right] == 1.5).all()
    assert (rho[~right] == 1.0).all()


def test_volume_mismatch_half_plane(square_coarse):
    # phi = x on (-pi,pi)^2: area({phi>0}) ~ half, so G ~ (0.5 - m0)|Omega|
    m = square_coarse
    omega = m.element_areas.sum()
    g = volume_mismatch(m, init_phi(m), 0.3)
    assert abs(g - 0.2 * omega) < 0.03 * omega
    ghalf = volume_mismatch(m, init_phi(m), 0.5)
    assert abs(ghalf) < 0.03 * omega


def test_time_step():
    assert time_step(np.array([0.5, -2.0, 1.0])) == 0.5
    with pytest.raises(ValueError):
        time_step(np.zeros(4))


# ---------------------------------------------------------------------------
# velocities
# ---------------------------------------------------------------------------

def linear_mode(mesh, coef=(1.0, 0.0)):
    """Synthetic eigenpair with u = a x + b y (not a real eigenfunction;
    used because its element gradient and mass norm are exact)."""
    u = coef[0] * mesh.vertices[:, 0] + coef[1] * mesh.vertices[:, 1]
    return EigenSet(np.array([1.0]), u[:, None])


def test_velocity_conductivity_linear_mode(square_coarse):
    m = square_coarse
    c = 1.5
    rho = np.full(m.n_triangles, c)
    eigs = linear_mode(m)                      # |grad u|^2 = 1 everywhere
    M = assemble_mass(m)
    u = eigs.vectors[:, 0]
    nrm = float(u @ (M @ u))
    v_min = velocity_simple("conductivity", eigs, rho, m, "min", M)
    v_max = velocity_simple("conductivity", eigs, rho, m, "max", M)
    assert np.allclose(v_min, (c - 1.0) / nrm, rtol=1e-12)
    assert np.allclose(v_max, -v_min, rtol=1e-12)


def test_velocity_density_sign_opposite(square_coarse):
    # raising sigma where u^2 is large lowers mu: minimization must push the
    # c-phase toward large |u|, the opposite signing of the conductivity case
    m = square_coarse
    sigma = np.full(m.n_triangles, 2.0)
    eigs = linear_mode(m)
    M = assemble_mass(m, sigma)
    v_min = velocity_simple("density", eigs, sigma, m, "min", M)
    u2 = element_mean(m, eigs.vectors[:, 0] ** 2)
    assert (v_min[u2 > 1e-12] < 0).all()
    v_max = velocity_simple("density", eigs, sigma, m, "max", M)
    assert np.allclose(v_max, -v_min, rtol=1e-12)


def test_velocity_degenerate_contrast(square_coarse):
    # c - 1 ~ 1e-12: the speed must stay at roundoff scale, not be inflated
    m = square_coarse
    c = 1.0 + 1e-12
    K = assemble_stiffness(m)
    M = assemble_mass(m)
    Kr, Mr, dof = apply_dirichlet(K, M, m, {"boundary"})
    es = solve_smallest(Kr, Mr, k=1)
    u = expand_field(es.vectors[:, 0], dof, m.n_vertices)
    eigs = EigenSet(es.values, u[:, None])
    v = velocity_simple("conductivity", eigs, np.full(m.n_triangles, c), m,
                        "min", M)
    assert np.abs(v).max() < 1e-10


def test_velocity_matches_analytic_ground_mode(square_fine):
    # uniform rho = 1.1 on (-pi,pi)^2 Dirichlet: u = cos(x/2)cos(y/2)/pi,
    # |grad u|^2 = (sin^2(x/2)cos^2(y/2) + cos^2(x/2)sin^2(y/2)) / (4 pi^2)
    m = square_fine
    c = 1.1
    rho = np.full(m.n_triangles, c)
    K = assemble_stiffness(m, rho)
    M = assemble_mass(m)
    Kr, Mr, dof = apply_dirichlet(K, M, m, {"boundary"})
    es = solve_smallest(Kr, Mr, k=1)
    u = expand_field(es.vectors[:, 0], dof, m.n_vertices)
    eigs = EigenSet(es.values, u[:, None])
    v = velocity_simple("conductivity", eigs, rho, m, "min", M)
    cx, cy = m.centroids().T
    want = (c - 1.0) / (4 * math.pi ** 2) * (
        np.sin(cx / 2) ** 2 * np.cos(cy / 2) ** 2
        + np.cos(cx / 2) ** 2 * np.sin(cy / 2) ** 2)
    rel = np.linalg.norm(v - want) / np.linalg.norm(want)
    assert rel < 0.2


def test_two_mode_velocity_equals_double_for_repeated_mode(square_coarse):
    m = square_coarse
    rho = np.full(m.n_triangles, 1.5)
    u = m.vertices[:, 0]
    eigs2 = EigenSet(np.array([1.0, 1.0]), np.stack([u, u], axis=1))
    eigs1 = EigenSet(np.array([1.0]), u[:, None])
    M = assemble_mass(m)
    v2 = velocity_multiplicity2("conductivity", eigs2, m, rho, "min", 0.99, M)
    v1 = velocity_simple("conductivity", eigs1, rho, m, "min", M)
    assert np.allclose(v2, 2 * v1, rtol=1e-12)


def test_two_mode_velocity_basis_invariance(square_coarse):
    # (x, y) and the rotated pair ((x+y)/sqrt2, (x-y)/sqrt2) span the same
    # space; the two-mode speed must agree
    m = square_coarse
    rho = np.full(m.n_triangles, 1.5)
    x = m.vertices[:, 0].copy()
    y = m.vertices[:, 1].copy()
    a = (x + y) / math.sqrt(2)
    b = (x - y) / math.sqrt(2)
    M = assemble_mass(m)
    va = velocity_multiplicity2("conductivity",
                                EigenSet(np.array([1.0, 1.0]),
                                         np.stack([x, y], axis=1)),
                                m, rho, "min", 0.99, M)
    vb = velocity_multiplicity2("conductivity",
                                EigenSet(np.array([1.0, 1.0]),
                                         np.stack([a, b], axis=1)),
                                m, rho, "min", 0.99, M)
    assert np.allclose(va, vb, rtol=1e-9, atol=1e-14)


def test_two_mode_velocity_refuses_simple_spectrum(square_coarse):
    m = square_coarse
    u = m.vertices[:, 0]
    eigs = EigenSet(np.array([1.0, 2.0]), np.stack([u, u], axis=1))
    with pytest.raises(ValueError):
        velocity_multiplicity2("conductivity", eigs, m,
                               np.full(m.n_triangles, 1.5), "min")


# ---------------------------------------------------------------------------
# transport step and volume projection
# ---------------------------------------------------------------------------

def test_implicit_step_constant_fixed_point(square_coarse):
    m = square_coarse
    phi = np.ones(m.n_vertices)
    out = implicit_step(m, phi, np.zeros(m.n_triangles), 0.0, 1.0, 1e-3)
    assert np.allclose(out, phi, atol=1e-11)


def test_implicit_step_diffusion_contracts_and_conserves(square_coarse):
    m = square_coarse
    phi = init_phi(m)
    out = implicit_step(m, phi, np.zeros(m.n_triangles), 0.0, 1.0, 1e-2)
    assert np.abs(out).max() < np.abs(phi).max()
    M = assemble_mass(m)
    ones = np.ones(m.n_vertices)
    assert math.isclose(ones @ (M @ out), ones @ (M @ phi),
                        rel_tol=0, abs_tol=1e-9)


def test_implicit_step_constant_speed_cancels_multiplier(square_coarse):
    # v0 = k with nu = -k is exactly the sourceless diffusion step
    m = square_coarse
    phi = init_phi(m)
    k = 0.37
    a = implicit_step(m, phi, np.full(m.n_triangles, k), -k, 1.0, 1e-3)
    b = implicit_step(m, phi, np.zeros(m.n_triangles), 0.0, 1.0, 1e-3)
    assert np.allclose(a, b, atol=1e-13)


def test_implicit_step_argument_validation(square_coarse):
    m = square_coarse
    phi = init_phi(m)
    v = np.zeros(m.n_triangles)
    with pytest.raises(ValueError):
        implicit_step(m, phi, v, 0.0, -1.0, 1e-3)
    with pytest.raises(ValueError):
        implicit_step(m, phi, v, 0.0, 1.0, 1e-3, bc_phi="dirichlet")


def test_find_multiplier_enforces_volume(square_coarse):
    m = square_coarse
    omega = m.element_areas.sum()
    phi = init_phi(m)
    rng = np.random.default_rng(5)
    v0 = rng.standard_normal(m.n_triangles) * 0.1
    nu, phi_next = find_multiplier(m, phi, v0, 1.0, 1e-3, 0.4)
    assert abs(volume_mismatch(m, phi_next, 0.4)) <= 1e-3 * omega


def test_find_multiplier_agrees_with_implicit_step(square_coarse):
    # the affine shortcut phi0 - nu*w must equal a direct step at that nu
    m = square_coarse
    phi = init_phi(m)
    v0 = np.full(m.n_triangles, 0.2)
    nu, phi_next = find_multiplier(m, phi, v0, 1.0, 1e-3, 0.5)
    direct = implicit_step(m, phi, v0, nu, 1.0, 1e-3)
    assert np.allclose(phi_next, direct, atol=1e-11)


def test_reinitialize_preserves_sign_and_approximates_distance(square_coarse):
    m = square_coarse
    phi = init_phi(m)
    d = reinitialize(m, phi)
    assert ((d > 0) == (phi > 0)).all()
    # the zero set is the x = 0 line, so the signed distance is ~ x itself
    h = 0.35
    assert np.abs(d - m.vertices[:, 0]).max() < 0.75 * h


def test_reinitialize_no_crossings_is_identity(square_coarse):
    phi = np.ones(square_coarse.n_vertices)
    out = reinitialize(square_coarse, phi)
    assert (out == phi).all()


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------

def test_phase_config_rejects_bad_values():
    bc = all_dirichlet()
    with pytest.raises(ValueError):
        PhaseConfig("conductivity", "min", 1.0, 0.5, bc)     # c = 1
    with pytest.raises(ValueError):
        PhaseConfig("conductivity", "min", -2.0, 0.5, bc)    # c < 0
    with pytest.raises(ValueError):
        PhaseConfig("conductivity", "min", 1.1, 1.5, bc)     # m0 out of range
    with pytest.raises(ValueError):
        PhaseConfig("conductivity", "both", 1.1, 0.5, bc)
    with pytest.raises(ValueError):
        PhaseConfig("elasticity", "min", 1.1, 0.5, bc)
    with pytest.raises(ValueError):
        PhaseConfig("conductivity", "min", 1.1, 0.5, bc, epsilon=0.0)


# ---------------------------------------------------------------------------
# optimization loop
# ---------------------------------------------------------------------------

def test_optimize_degenerate_contrast_leaves_phase_alone(square_coarse):
    # c - 1 = 1e-12: the derivative is flat, the flow must terminate with the
    # two-phase layout essentially unchanged rather than amplify roundoff
    m = square_coarse
    cfg = PhaseConfig("conductivity", "min", 1.0 + 1e-12, 0.5, all_dirichlet(),
                      max_steps=30, stop_tol=1e-9)
    best = levelset.optimize(cfg, m)
    initial = phase_from_phi(m, init_phi(m), cfg.c)
    changed = m.element_areas[best.rho_or_sigma != initial].sum()
    assert changed <= 0.02 * m.element_areas.sum()


def test_optimize_descends_and_respects_volume(square_coarse):
    m = square_coarse
    omega = m.element_areas.sum()
    cfg = PhaseConfig("density", "min", 2.0, 0.5, all_dirichlet(),
                      max_steps=40, stop_tol=0.0)
    best = levelset.optimize(cfg, m)
    hist = best.history
    assert best.eigs.values[0] < hist[0][1]          # objective improved
    assert best.step >= 1
    for row in hist[1:]:                             # accepted steps only
        assert abs(row[4]) <= 1e-3 * omega
    # uniform-medium pinch: mu in [lam_u / c, lam_u]
    lam_u = solve_smallest(*apply_dirichlet(assemble_stiffness(m),
                                            assemble_mass(m), m,
                                            {"boundary"})[:2], k=1).values[0]
    for row in hist:
        assert lam_u / 2.0 - 1e-8 <= row[1] <= lam_u + 1e-8


def test_optimize_history_layout(square_coarse):
    cfg = PhaseConfig("conductivity", "max", 1.1, 0.5, all_dirichlet(),
                      max_steps=5, stop_tol=0.0)
    best = levelset.optimize(cfg, square_coarse)
    hist = best.history
    assert [row[0] for row in hist] == list(range(len(hist)))
    assert math.isnan(hist[0][5]) and math.isnan(hist[0][6])
    for row in hist[1:]:
        assert math.isfinite(row[5]) and row[6] > 0
    assert all(row[1] <= row[2] <= row[3] for row in hist)


def test_optimize_is_deterministic(square_coarse):
    cfg = PhaseConfig("density", "max", 2.0, 0.5, all_neumann(),
                      max_steps=8, stop_tol=0.0)
    a = levelset.optimize(cfg, square_coarse)
    b = levelset.optimize(cfg, square_coarse)
    assert a.step == b.step
    assert (a.phi == b.phi).all()
    assert np.array_equal(np.array(a.history), np.array(b.history),
                          equal_nan=True)


def test_optimize_zero_steps_returns_initial_state(square_coarse):
    cfg = PhaseConfig("conductivity", "min", 1.1, 0.5, all_dirichlet(),
                      max_steps=0)
    best = levelset.optimize(cfg, square_coarse)
    assert best.step == 0
    assert len(best.history) == 1
    x = init_phi(square_coarse)
    assert np.allclose(best.phi * np.abs(x).max(), x, atol=1e-12)
