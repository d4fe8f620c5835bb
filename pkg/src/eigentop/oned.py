"""Exact 1-D spectra for -(rho u')' = lambda u on (0,1), rho piecewise constant.

Inside each constant piece the solution is trigonometric; at a breakpoint u
and the co-normal derivative rho u' are continuous (u' itself jumps).  The
eigenvalue condition is a scalar determinant of the propagated state, found
by bracketed bisection — exact up to root tolerance, so this module serves
as an oracle for the 2-D finite element machinery.

An optional shift beta generalizes the piece equation to
-(rho u')' + beta rho u = lambda u, which is what a separable 2-D mode with
transverse wavenumber sqrt(beta) satisfies in the striped-coefficient case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

_GRID = math.pi ** 2 / 20          # bracket scan step in lambda
_REL_TOL = 1e-12


@dataclass(frozen=True)
class PiecewiseProfile:
    """Two-valued coefficient on (0,1): values[j] on (breakpoints[j], breakpoints[j+1])."""

    breakpoints: tuple       # 0 = x0 < x1 < ... < xK = 1
    values: tuple            # one of {1, c} per piece, adjacent distinct

    def __post_init__(self):
        b = self.breakpoints
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("breakpoints must run from 0 to 1")
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.values) != len(b) - 1:
            raise ValueError("need one value per subinterval")
        if any(u == v for u, v in zip(self.values, self.values[1:])):
            raise ValueError("adjacent values must differ")

    def measure_of(self, value: float) -> float:
        return sum(b1 - b0 for b0, b1, v in
                   zip(self.breakpoints, self.breakpoints[1:], self.values)
                   if v == value)


def _cs(q: float, ell: float):
    """C = cos(sqrt(q) l), S = sin(sqrt(q) l)/sqrt(q), continued through q <= 0."""
    if q > 0:
        r = math.sqrt(q)
        return math.cos(r * ell), math.sin(r * ell) / r
    if q < 0:
        r = math.sqrt(-q)
        return math.cosh(r * ell), math.sinh(r * ell) / r
    return 1.0, ell


def _det(lam: float, profile: PiecewiseProfile, bc: str, shift: float) -> float:
    # propagate the state (u, rho u'); both components are continuous
    if bc == "dirichlet":
        u, v = 0.0, 1.0
    else:
        u, v = 1.0, 0.0
    b = profile.breakpoints
    for j, rho in enumerate(profile.values):
        ell = b[j + 1] - b[j]
        q = lam / rho - shift
        C, S = _cs(q, ell)
        u, v = u * C + v * (S / rho), -rho * q * S * u + C * v
    return u if bc == "dirichlet" else v


def eigen_1d(profile: PiecewiseProfile, bc: str, k: int = 1,
             shift: float = 0.0, lam_max: float = 5000.0) -> float:
    """k-th positive eigenvalue (Neumann skips the zero mode automatically
    when shift = 0, since the scan starts above lambda = 0)."""
    if bc not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown bc {bc!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    lam = 1e-9
    f0 = _det(lam, profile, bc, shift)
    found = 0
    while lam < lam_max:
        lam2 = lam + _GRID
        f1 = _det(lam2, profile, bc, shift)
        if f0 == 0.0 or math.copysign(1, f0) != math.copysign(1, f1):
            found += 1
            if found == k:
                a, fa, bb = lam, f0, lam2
                for _ in range(200):
                    m = 0.5 * (a + bb)
                    fm = _det(m, profile, bc, shift)
                    if fm == 0.0:
                        return m
                    if math.copysign(1, fm) == math.copysign(1, fa):
                        a, fa = m, fm
                    else:
                        bb = m
                    if bb - a <= _REL_TOL * max(1.0, bb):
                        break
                return 0.5 * (a + bb)
        lam, f0 = lam2, f1
    raise RuntimeError(f"no sign change bracketing eigenvalue {k} below {lam_max}")


def eigenfunction_1d(profile: PiecewiseProfile, bc: str, lam: float,
                     n_grid: int = 4000, shift: float = 0.0):
    """Sample (x, u, rho u') of the eigenfunction on a uniform grid."""
    xs = np.linspace(0.0, 1.0, n_grid + 1)
    u = np.empty_like(xs)
    w = np.empty_like(xs)        # w = rho u'
    if bc == "dirichlet":
        cur = (0.0, 1.0)
    else:
        cur = (1.0, 0.0)
    b = profile.breakpoints
    piece = 0
    start = 0.0
    for i, x in enumerate(xs):
        while piece < len(profile.values) - 1 and x > b[piece + 1] + 1e-15:
            # push the state to the next breakpoint, then continue inside it
            rho = profile.values[piece]
            q = lam / rho - shift
            C, S = _cs(q, b[piece + 1] - start)
            cur = (cur[0] * C + cur[1] * S / rho,
                   -rho * q * S * cur[0] + C * cur[1])
            start = b[piece + 1]
            piece += 1
        rho = profile.values[piece]
        q = lam / rho - shift
        C, S = _cs(q, x - start)
        u[i] = cur[0] * C + cur[1] * S / rho
        w[i] = -rho * q * S * cur[0] + C * cur[1]
    return xs, u, w


# ---------------------------------------------------------------------------
# exhaustive optimizer
# ---------------------------------------------------------------------------

def _alternating_candidates(m0: float, n_grid: int, k_max: int):
    """All alternating profiles with |{rho=c}| = m0 and up to k_max interfaces.

    Interfaces live on the uniform grid i/n_grid except the last one, which
    is solved from the measure constraint; ordered so ties in the objective
    resolve to the lexicographically smallest breakpoint vector.
    """
    cands = []
    for start_c in (True, False):
        # one interface: position fixed by the constraint alone
        x1 = m0 if start_c else 1.0 - m0
        if 0.0 < x1 < 1.0:
            cands.append(((0.0, x1, 1.0), start_c))
        for k in range(2, k_max + 1):
            for combo in combinations(range(1, n_grid), k - 1):
                xs = [i / n_grid for i in combo]
                pts = [0.0] + xs
                fixed = coef = const = 0.0
                for j in range(k + 1):
                    if ((j % 2 == 0) != start_c):
                        continue          # piece j is rho = 1
                    if j < k - 1:
                        fixed += pts[j + 1] - pts[j]
                    elif j == k - 1:
                        coef += 1.0
                        const -= pts[k - 1]
                    else:
                        coef -= 1.0
                        const += 1.0
                if coef == 0.0:
                    continue
                xk = (m0 - fixed - const) / coef
                if not xs[-1] + 1e-9 < xk < 1.0 - 1e-9:
                    continue
                cands.append((tuple([0.0] + xs + [xk, 1.0]), start_c))
    cands.sort(key=lambda t: t[0])
    return cands


def brute_force_optimum(c: float, m0: float, bc: str, objective: str,
                        k_max: int = 4, n_grid: int = 40):
    """Global grid optimum of lambda_1 over alternating two-phase profiles.

    Returns (PiecewiseProfile, lambda_1).  Exhaustive over interface
    placements, so the result is the true optimum at this grid resolution.
    """
    if objective not in ("min", "max"):
        raise ValueError(f"unknown objective {objective!r}")
    if not 1 <= k_max <= 4:
        raise ValueError("k_max must be between 1 and 4")
    best = None
    for breaks, start_c in _alternating_candidates(m0, n_grid, k_max):
        vals = tuple(c if ((j % 2 == 0) == start_c) else 1.0
                     for j in range(len(breaks) - 1))
        profile = PiecewiseProfile(breaks, vals)
        lam = eigen_1d(profile, bc, 1)
        key = lam if objective == "min" else -lam
        if best is None or key < best[0] - 1e-12:
            best = (key, lam, profile)
    return best[2], best[1]


def criterion_check_1d(profile: PiecewiseProfile, bc: str,
                       n_grid: int = 4000) -> dict:
    """Does S = {rho = c} match a level set of |rho u'| for the first mode?

    Evaluates q = |rho u'| on a fine grid and splits it at the quantile
    matching |S|.  Reports which split (S below the threshold, or S above)
    holds up to a small exceptional set, with the mismatched fraction.
    """
    if len(profile.values) == 1:
        return {"match": "trivial", "mismatch_sub": 0.0, "mismatch_super": 0.0}
    lam = eigen_1d(profile, bc, 1)
    xs, _u, w = eigenfunction_1d(profile, bc, lam, n_grid)
    q = np.abs(w)
    # midpoint sampling: classify grid cells by their centers
    xm = 0.5 * (xs[:-1] + xs[1:])
    qm = 0.5 * (q[:-1] + q[1:])
    in_s = np.zeros(len(xm), dtype=bool)
    for b0, b1, v in zip(profile.breakpoints, profile.breakpoints[1:], profile.values):
        if v != 1.0:
            in_s |= (xm >= b0) & (xm < b1)
    frac = in_s.mean()
    order = np.argsort(qm, kind="stable")
    k = int(round(frac * len(xm)))
    sub = np.zeros(len(xm), dtype=bool)
    sub[order[:k]] = True               # the |S|-sized sub-level set of q
    mismatch_sub = float(np.mean(sub != in_s))
    mismatch_super = float(np.mean(~sub != in_s))
    tol = 0.01
    if mismatch_sub <= tol:
        match = "sublevel"
    elif mismatch_super <= tol:
        match = "superlevel"
    else:
        match = "none"
    return {"match": match, "mismatch_sub": mismatch_sub,
            "mismatch_super": mismatch_super}
