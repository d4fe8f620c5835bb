"""Post-hoc checks of the optimality criteria and geometric structure.

The central check: at an optimizer of the two-phase problem, the material
set S must coincide (up to the interface band) with a sub- or super-level
set of a scalar element field q derived from the first eigenfunction —
rho^2 |grad u|^2 for the conductivity problem, |u|^2 for the density
problem, and their two-mode sums when the eigenvalue is (nearly) double.
The threshold tau is not free: it is pinned by the area constraint, so the
check is a quantile comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import fem
from .eig import EigenSet, multiplicity_ratio
from .geometry import Mesh


@dataclass
class CriterionReport:
    problem: str
    objective: str
    multiplicity: bool
    quantity: str                 # name of the field compared against
    violation_fraction: float     # area(S symdiff matched) / |Omega|
    tau: float
    passed: bool
    indeterminate: bool = False   # q had no usable level structure (ties)

    def __post_init__(self):
        if not 0.0 <= self.violation_fraction <= 1.0:
            raise ValueError("violation fraction outside [0,1]")


@dataclass
class SymmetryReport:
    transform: str
    fraction: float               # symmetric-difference area fraction

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction outside [0,1]")


def _indicator(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S)
    if S.dtype == bool:
        return S
    # two-valued coefficient field: the background phase is exactly 1
    return S != 1.0


def matched_level_set(mesh: Mesh, q: np.ndarray, area_fraction: float,
                      side: str):
    """The level set of q with the prescribed area, and its threshold.

    side="sub" returns the sub-level set {q <= tau}, side="super" the
    super-level set {q >= tau}; in both cases |set| matches area_fraction
    within one element.  Ties resolve by stable element order.
    """
    areas = mesh.element_areas
    omega = areas.sum()
    target = area_fraction * omega
    if side == "sub":
        order = np.argsort(q, kind="stable")
    elif side == "super":
        order = np.argsort(-q, kind="stable")
    else:
        raise ValueError(f"side must be 'sub' or 'super', got {side!r}")
    cum = np.cumsum(areas[order])
    k = int(np.searchsorted(cum, target))
    # include the element that crosses the target area
    k = min(k, len(order) - 1)
    matched = np.zeros(len(q), dtype=bool)
    matched[order[:k + 1]] = True
    tau = float(q[order[k]])
    return matched, tau


def level_set_match(mesh: Mesh, q: np.ndarray, S: np.ndarray, side: str,
                    band_tol: float = 0.05, problem: str = "",
                    objective: str = "", multiplicity: bool = False,
                    quantity: str = "q") -> CriterionReport:
    """Does S agree with the area-matched sub/super-level set of q?"""
    in_s = _indicator(S)
    areas = mesh.element_areas
    omega = areas.sum()
    m = float(areas[in_s].sum() / omega)
    matched, tau = matched_level_set(mesh, q, m, side)
    violation = float(areas[in_s ^ matched].sum() / omega)
    spread = float(q.max() - q.min())
    indeterminate = spread == 0.0
    return CriterionReport(problem, objective, multiplicity, quantity,
                           violation, tau, passed=violation <= band_tol,
                           indeterminate=indeterminate)


def criterion_side(problem: str, objective: str) -> str:
    """Which side of the level set S must occupy at an optimizer.

    Conductivity: a minimizer concentrates the high phase where the flux is
    weak (S is a sub-level set of rho^2|grad u|^2), a maximizer where it is
    strong.  Density: the roles reverse — a minimizer loads the heavy phase
    where |u|^2 is large (super-level set), a maximizer where it is small.
    """
    if problem == "conductivity":
        return "sub" if objective == "min" else "super"
    return "super" if objective == "min" else "sub"


def criterion_quantity(problem: str, mesh: Mesh, eigs: EigenSet,
                       rho_or_sigma: np.ndarray,
                       multiplicity_threshold: float = 0.99):
    """The scalar field the criterion compares against, with its name.

    Uses the two-mode sum when the first eigenvalue is (nearly) double.
    """
    double = (len(eigs.values) >= 2 and
              multiplicity_ratio(eigs) >= multiplicity_threshold)
    if double:
        q = two_mode_quantity(problem, eigs, rho_or_sigma, mesh,
                              multiplicity_threshold)
        name = ("rho^2(|grad u1|^2+|grad u2|^2)" if problem == "conductivity"
                else "|u1|^2+|u2|^2")
        return q, name, True
    u = eigs.vectors[:, 0]
    if problem == "conductivity":
        M = fem.assemble_mass(mesh)
        nrm = float(u @ (M @ u))
        q = fem.flux_magnitude_sq(mesh, u, rho_or_sigma) / nrm
        return q, "rho^2|grad u|^2", False
    Ms = fem.assemble_mass(mesh, rho_or_sigma)
    nrm = float(u @ (Ms @ u))
    q = fem.element_mean(mesh, u ** 2) / nrm
    return q, "|u|^2", False


def two_mode_quantity(problem: str, eigs: EigenSet, rho_or_sigma: np.ndarray,
                      mesh: Mesh, threshold: float = 0.99) -> np.ndarray:
    """Basis-invariant criterion field for a double first eigenvalue:
    the sum over the two modes after normalizing each to unit (weighted)
    mass."""
    if len(eigs.values) < 2:
        raise ValueError("need two eigenpairs")
    ratio = multiplicity_ratio(eigs)
    if ratio < threshold:
        raise ValueError(f"two-mode quantity at ratio {ratio:.4f} < {threshold}")
    if problem == "conductivity":
        M = fem.assemble_mass(mesh)
        out = np.zeros(mesh.n_triangles)
        for i in (0, 1):
            u = eigs.vectors[:, i]
            out += fem.flux_magnitude_sq(mesh, u, rho_or_sigma) / float(u @ (M @ u))
        return out
    Ms = fem.assemble_mass(mesh, rho_or_sigma)
    out = np.zeros(mesh.n_triangles)
    for i in (0, 1):
        u = eigs.vectors[:, i]
        out += fem.element_mean(mesh, u ** 2) / float(u @ (Ms @ u))
    return out


# ---------------------------------------------------------------------------
# geometric symmetry
# ---------------------------------------------------------------------------

_TRANSFORMS = {
    "identity": lambda p: p,
    "mirror_x": lambda p: np.column_stack([-p[:, 0], p[:, 1]]),
    "mirror_y": lambda p: np.column_stack([p[:, 0], -p[:, 1]]),
}


def _rotation(angle_deg: float):
    a = np.deg2rad(angle_deg)
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return lambda p: p @ R.T


def symmetry_check(mesh: Mesh, S: np.ndarray, transform: str) -> SymmetryReport:
    """Area fraction of S symdiff T(S) for a rigid symmetry T of the domain.

    transform: "identity", "mirror_x", "mirror_y", or "rot<angle>" (degrees,
    about the origin).  The indicator is resampled at the transformed
    centroids by nearest-centroid lookup; if transformed points land outside
    the mesh the transform is not a symmetry and an error is raised.
    """
    if transform in _TRANSFORMS:
        T = _TRANSFORMS[transform]
    elif transform.startswith("rot"):
        T = _rotation(float(transform[3:]))
    else:
        raise ValueError(f"unknown transform {transform!r}")
    if transform == "identity":
        return SymmetryReport(transform, 0.0)

    in_s = _indicator(S)
    cent = mesh.centroids()
    mapped = T(cent)
    tree = cKDTree(cent)
    dist, idx = tree.query(mapped)
    scale = np.sqrt(np.median(mesh.element_areas))
    if dist.max() > 4.0 * scale:
        raise ValueError(
            f"transform {transform!r} maps centroids outside the domain "
            f"(max stray distance {dist.max():.3g})")
    mismatch = in_s != in_s[idx]
    frac = float(mesh.element_areas[mismatch].sum() / mesh.element_areas.sum())
    return SymmetryReport(transform, frac)


def radial_symmetry_deviation(mesh: Mesh, S: np.ndarray) -> float:
    """Worst symmetric-difference fraction over the 8-fold rotation group."""
    worst = 0.0
    for k in range(1, 8):
        worst = max(worst, symmetry_check(mesh, S, f"rot{45 * k}").fraction)
    return worst


# ---------------------------------------------------------------------------
# multiplicity table
# ---------------------------------------------------------------------------

def multiplicity_table(runs: dict) -> list:
    """Rows of eigenvalue ratios per completed run.

    runs maps a row label to an OptState (or None for a run that was not
    performed).  Returns [{"label", "ratio12", "ratio23"}] preserving order;
    absent runs get None ratios.
    """
    rows = []
    for label, state in runs.items():
        if state is None:
            rows.append({"label": label, "ratio12": None, "ratio23": None})
            continue
        vals = state.eigs.values
        rows.append({
            "label": label,
            "ratio12": float(vals[0] / vals[1]) if len(vals) > 1 else None,
            "ratio23": float(vals[1] / vals[2]) if len(vals) > 2 else None,
        })
    return rows


def format_multiplicity_table(rows: list) -> str:
    out = [f"{'run':32s} {'lam1/lam2':>10s} {'lam2/lam3':>10s}"]
    for r in rows:
        r12 = "absent" if r["ratio12"] is None else f"{r['ratio12']:.6f}"
        r23 = "absent" if r["ratio23"] is None else f"{r['ratio23']:.6f}"
        out.append(f"{r['label']:32s} {r12:>10s} {r23:>10s}")
    return "\n".join(out)
