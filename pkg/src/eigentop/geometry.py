"""Domain definitions and triangular mesh construction.

The nine built-in domains are closed polygons or ellipses (optionally with
elliptical holes).  Meshing samples every boundary loop at arclength ~h,
seeds the interior with a jittered hexagonal lattice, triangulates with
Delaunay, and splits the few edges that exceed the target length.  The
result is a conforming triangulation with max edge <= 1.5 h and decent
minimum angles on all built-in shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

_JITTER_SEED = 12345  # fixed: meshes must be reproducible run to run


# ---------------------------------------------------------------------------
# domain specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """A 2-D computational domain.

    kind is one of the built-in names or "custom_polygon".  loops holds the
    outer boundary first, then holes; each loop is either ("polygon", [(x,y),...])
    or ("ellipse", (cx, cy, a, b)).  boundary_pieces maps tags to predicates
    over edge midpoints; by default the whole boundary is tagged "boundary".
    """

    kind: str
    loops: tuple = ()
    boundary_pieces: tuple = ()   # ((tag, predicate), ...) checked in order

    @property
    def diameter(self) -> float:
        """Largest distance between two points of the closure (outer loop
        only; holes cannot increase it)."""
        typ, data = self.loops[0]
        if typ == "polygon":
            arr = np.asarray(data, dtype=float)
        else:
            cx, cy, a, b = data
            t = np.linspace(0.0, 2.0 * np.pi, 128, endpoint=False)
            arr = np.column_stack([cx + a * np.cos(t), cy + b * np.sin(t)])
        d2 = ((arr[:, None, :] - arr[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Vectorized point-in-domain test (outer loop minus holes)."""
        inside = _loop_contains(self.loops[0], xy)
        for hole in self.loops[1:]:
            inside &= ~_loop_contains(hole, xy)
        return inside


def _loop_contains(loop, xy: np.ndarray) -> np.ndarray:
    typ, data = loop
    if typ == "ellipse":
        cx, cy, a, b = data
        return ((xy[:, 0] - cx) / a) ** 2 + ((xy[:, 1] - cy) / b) ** 2 < 1.0
    poly = np.asarray(data)
    # even-odd rule
    x, y = xy[:, 0], xy[:, 1]
    inside = np.zeros(len(xy), dtype=bool)
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        cross = ((y0 > y) != (y1 > y)) & (x < x0 + (y - y0) * (x1 - x0) / (y1 - y0 + 1e-300))
        inside ^= cross
        x0, y0 = x1, y1
    return inside


def square() -> DomainSpec:
    p = math.pi
    return DomainSpec("square", (("polygon", ((-p, -p), (p, -p), (p, p), (-p, p))),))


def cross() -> DomainSpec:
    p = math.pi
    # (-pi,pi)^2 with the four pi/2-corner squares removed
    q = p / 2
    verts = ((-q, -p), (q, -p), (q, -q), (p, -q), (p, q), (q, q),
             (q, p), (-q, p), (-q, q), (-p, q), (-p, -q), (-q, -q))
    return DomainSpec("cross", (("polygon", verts),))


def disk() -> DomainSpec:
    return DomainSpec("disk", (("ellipse", (0.0, 0.0, 1.0, 1.0)),))


def disk_two_holes() -> DomainSpec:
    return DomainSpec(
        "disk_two_holes",
        (("ellipse", (0.0, 0.0, 1.0, 1.0)),
         ("ellipse", (0.5, 0.0, 0.2, 0.2)),
         ("ellipse", (-0.5, 0.0, 0.2, 0.2))),
    )


def rectangle() -> DomainSpec:
    p = math.pi
    return DomainSpec(
        "rectangle",
        (("polygon", ((-p, -2 * p), (p, -2 * p), (p, 2 * p), (-p, 2 * p))),),
    )


def rect_cross() -> DomainSpec:
    # (0,5)x(0,3) minus four 2x1 corner rectangles
    verts = ((2.0, 0.0), (3.0, 0.0), (3.0, 1.0), (5.0, 1.0), (5.0, 2.0),
             (3.0, 2.0), (3.0, 3.0), (2.0, 3.0), (2.0, 2.0), (0.0, 2.0),
             (0.0, 1.0), (2.0, 1.0))
    return DomainSpec("rect_cross", (("polygon", verts),))


def ellipse() -> DomainSpec:
    return DomainSpec("ellipse", (("ellipse", (0.0, 0.0, 1.0, 2.0)),))


def ellipse_two_holes() -> DomainSpec:
    return DomainSpec(
        "ellipse_two_holes",
        (("ellipse", (0.0, 0.0, 1.0, 2.0)),
         ("ellipse", (0.5, 0.0, 0.2, 0.8)),
         ("ellipse", (-0.5, 0.0, 0.2, 0.8))),
    )


def custom_polygon(outer, holes=()) -> DomainSpec:
    loops = [("polygon", tuple(map(tuple, outer)))]
    for hline in holes:
        loops.append(("polygon", tuple(map(tuple, hline))))
    return DomainSpec("custom_polygon", tuple(loops))


BUILTIN_DOMAINS = {
    "square": square,
    "cross": cross,
    "disk": disk,
    "disk_two_holes": disk_two_holes,
    "rectangle": rectangle,
    "rect_cross": rect_cross,
    "ellipse": ellipse,
    "ellipse_two_holes": ellipse_two_holes,
}


def domain_area(spec: DomainSpec) -> float:
    """Exact area of the spec (holes subtracted); curved loops analytic."""
    total = 0.0
    for i, (typ, data) in enumerate(spec.loops):
        if typ == "ellipse":
            _, _, a, b = data
            area = math.pi * a * b
        else:
            poly = np.asarray(data)
            x, y = poly[:, 0], poly[:, 1]
            area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        total += area if i == 0 else -area
    return total


# ---------------------------------------------------------------------------
# mesh container
# ---------------------------------------------------------------------------

@dataclass
class Mesh:
    vertices: np.ndarray          # (n, 2) float
    triangles: np.ndarray         # (m, 3) int, CCW
    boundary_edges: list          # [(i, j, tag), ...]
    element_areas: np.ndarray = field(default=None)  # (m,) cached

    def __post_init__(self):
        if self.element_areas is None:
            self.element_areas = _signed_areas(self.vertices, self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)


def _signed_areas(pts: np.ndarray, tri: np.ndarray) -> np.ndarray:
    p0, p1, p2 = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


# ---------------------------------------------------------------------------
# boundary sampling
# ---------------------------------------------------------------------------

def _sample_polygon(verts, h: float) -> np.ndarray:
    """Points along a closed polygon at spacing ~h, corners kept exactly."""
    out = []
    v = np.asarray(verts, dtype=float)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        seg = np.hypot(*(b - a))
        k = max(1, int(round(seg / h)))
        for t in range(k):
            out.append(a + (b - a) * (t / k))
    return np.asarray(out)


def _sample_ellipse(cx, cy, a, b, h: float) -> np.ndarray:
    """Equal-arclength samples on an ellipse, via fine polyline resampling."""
    t = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
    ring = np.column_stack([cx + a * np.cos(t), cy + b * np.sin(t)])
    seg = np.hypot(*np.diff(np.vstack([ring, ring[:1]]), axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    k = max(8, int(round(total / h)))
    want = np.linspace(0, total, k, endpoint=False)
    idx = np.searchsorted(arc, want, side="right") - 1
    idx = np.clip(idx, 0, len(ring) - 1)
    frac = (want - arc[idx]) / np.maximum(seg[np.minimum(idx, len(seg) - 1)], 1e-300)
    nxt = (idx + 1) % len(ring)
    return ring[idx] + (ring[nxt] - ring[idx]) * frac[:, None]


def _sample_loop(loop, h: float) -> np.ndarray:
    typ, data = loop
    if typ == "polygon":
        return _sample_polygon(data, h)
    return _sample_ellipse(*data, h)


def _min_dist_to_polyline(points: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Distance from each point to a closed polyline (vectorized, chunked)."""
    a = ring
    b = np.roll(ring, -1, axis=0)
    ab = b - a
    len2 = (ab ** 2).sum(1)
    out = np.full(len(points), np.inf)
    chunk = 2_000_000 // max(len(a), 1) + 1
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip((ap * ab[None]).sum(-1) / np.maximum(len2[None], 1e-300), 0, 1)
        d2 = ((ap - t[..., None] * ab[None]) ** 2).sum(-1)
        out[s:s + chunk] = np.sqrt(d2.min(1))
    return out


# ---------------------------------------------------------------------------
# mesh generation
# ---------------------------------------------------------------------------

def build_mesh(spec: DomainSpec, h: float) -> Mesh:
    """Triangulate spec with target edge length h (max edge <= 1.5 h)."""
    if h <= 0:
        raise ValueError("h must be positive")
    # feature-resolution check: every hole must be wider than 2h
    for typ, data in spec.loops[1:]:
        if typ == "ellipse":
            width = 2 * min(data[2], data[3])
        else:
            poly = np.asarray(data)
            width = min(poly[:, 0].ptp(), poly[:, 1].ptp())
        if width < 2 * h:
            raise ValueError(
                f"h={h} too coarse to resolve a hole of width {width}")

    rings = [_sample_loop(loop, h) for loop in spec.loops]
    bpts = np.vstack(rings)

    # hexagonal interior lattice, lightly jittered for Delaunay robustness
    allb = bpts
    lo = allb.min(0) - h
    hi = allb.max(0) + h
    dx = 0.95 * h
    dy = dx * math.sqrt(3) / 2
    ys = np.arange(lo[1], hi[1] + dy, dy)
    rows = []
    for r, y in enumerate(ys):
        xs = np.arange(lo[0] + (0.5 * dx if r % 2 else 0.0), hi[0] + dx, dx)
        rows.append(np.column_stack([xs, np.full(len(xs), y)]))
    lattice = np.vstack(rows)
    rng = np.random.default_rng(_JITTER_SEED)
    lattice = lattice + (rng.random(lattice.shape) - 0.5) * (2e-3 * h)

    inside = spec.contains(lattice)
    lattice = lattice[inside]
    # keep lattice points clear of every boundary ring
    keep = np.ones(len(lattice), dtype=bool)
    for ring in rings:
        keep &= _min_dist_to_polyline(lattice, ring) >= 0.5 * h
    pts = np.vstack([bpts, lattice[keep]])

    tri = Delaunay(pts)
    simplices = tri.simplices.copy()

    # drop triangles whose centroid is outside (concavities, holes)
    cent = pts[simplices].mean(1)
    simplices = simplices[spec.contains(cent)]

    # refinement: split edges longer than 1.45 h by midpoint insertion
    for _ in range(2):
        new_pts = _long_edge_midpoints(pts, simplices, 1.45 * h, spec, rings, h)
        if not len(new_pts):
            break
        pts = np.vstack([pts, new_pts])
        tri = Delaunay(pts)
        simplices = tri.simplices.copy()
        cent = pts[simplices].mean(1)
        simplices = simplices[spec.contains(cent)]

    # orient CCW
    areas = _signed_areas(pts, simplices)
    flip = areas < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]

    # drop unused vertices
    used = np.unique(simplices)
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    pts = pts[used]
    simplices = remap[simplices]

    bedges = _boundary_edges(simplices)
    tags = _assign_tags(spec, pts, bedges)
    mesh = Mesh(pts, simplices, [(i, j, t) for (i, j), t in zip(bedges, tags)])
    _validate(mesh, spec, h)
    return mesh


def _long_edge_midpoints(pts, simplices, maxlen, spec, rings, h):
    edges = np.vstack([simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [2, 0]]])
    edges.sort(1)
    edges = np.unique(edges, axis=0)
    vec = pts[edges[:, 1]] - pts[edges[:, 0]]
    ln = np.hypot(vec[:, 0], vec[:, 1])
    mids = (pts[edges[:, 0]] + pts[edges[:, 1]]) / 2
    cand = mids[ln > maxlen]
    if not len(cand):
        return cand
    ok = spec.contains(cand)
    for ring in rings:
        ok &= _min_dist_to_polyline(cand, ring) >= 0.4 * h
    return cand[ok]


def _boundary_edges(simplices) -> list:
    """Edges that belong to exactly one triangle, as (i, j) pairs."""
    edges = np.vstack([simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    return [tuple(edges[i]) for i, c in zip(idx, counts) if c == 1]


def _assign_tags(spec: DomainSpec, pts, bedges) -> list:
    tol = 1e-9 * spec.diameter
    tags = []
    for i, j in bedges:
        mid = (pts[i] + pts[j]) / 2
        tag = "boundary"
        for name, predicate in spec.boundary_pieces:
            if predicate(mid[0], mid[1], tol):
                tag = name
                break
        tags.append(tag)
    return tags


def _validate(mesh: Mesh, spec: DomainSpec, h: float) -> None:
    if (mesh.element_areas <= 0).any():
        raise RuntimeError("mesh has non-positive triangle areas")
    exact = domain_area(spec)
    got = mesh.element_areas.sum()
    if h <= 0.1 * spec.diameter and abs(got - exact) > 0.01 * exact:
        raise RuntimeError(f"mesh area {got} deviates from |Omega|={exact}")
    edges = mesh.vertices[mesh.triangles] - np.roll(mesh.vertices[mesh.triangles], 1, axis=1)
    maxlen = np.hypot(edges[..., 0], edges[..., 1]).max()
    if maxlen > 1.5 * h + 1e-12:
        raise RuntimeError(f"max edge {maxlen} exceeds 1.5h = {1.5 * h}")


def tag_robin_side(mesh: Mesh, predicate) -> Mesh:
    """Retag boundary edges: predicate(midx, midy, tol) -> robin, else dirichlet."""
    tol = 1e-9 * (mesh.vertices.max() - mesh.vertices.min())
    new_edges = []
    n_robin = 0
    for i, j, _tag in mesh.boundary_edges:
        mid = (mesh.vertices[i] + mesh.vertices[j]) / 2
        if predicate(mid[0], mid[1], tol):
            new_edges.append((i, j, "robin"))
            n_robin += 1
        else:
            new_edges.append((i, j, "dirichlet"))
    if n_robin == 0:
        raise ValueError("robin predicate matched no boundary edge")
    return Mesh(mesh.vertices, mesh.triangles, new_edges, mesh.element_areas)


def bottom_edge_predicate(y0: float):
    """Predicate matching horizontal boundary segments at y = y0."""
    def pred(x, y, tol):
        return abs(y - y0) <= max(tol, 1e-9)
    return pred


# ---------------------------------------------------------------------------
# plain-text mesh I/O
# ---------------------------------------------------------------------------

def write_mesh(mesh: Mesh) -> str:
    lines = ["mesh 2d", f"vertices {mesh.n_vertices}"]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g}")
    lines.append(f"triangles {mesh.n_triangles}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    for i, j, tag in mesh.boundary_edges:
        lines.append(f"{i} {j} {tag}")
    return "\n".join(lines) + "\n"


def read_mesh(text: str) -> Mesh:
    lines = text.strip().splitlines()
    pos = 0

    def expect(prefix):
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(prefix):
            raise ValueError(f"line {pos + 1}: expected '{prefix}'")
        val = lines[pos][len(prefix):].strip()
        pos += 1
        return val

    if expect("mesh") != "2d":
        raise ValueError("line 1: not a 2-D mesh file")
    nv = int(expect("vertices"))
    verts = np.empty((nv, 2))
    for k in range(nv):
        try:
            x, y = lines[pos].split()
            verts[k] = float(x), float(y)
        except Exception as exc:
            raise ValueError(f"line {pos + 1}: bad vertex ({exc})") from exc
        pos += 1
    nt = int(expect("triangles"))
    tris = np.empty((nt, 3), dtype=int)
    for k in range(nt):
        try:
            tris[k] = [int(t) for t in lines[pos].split()]
        except Exception as exc:
            raise ValueError(f"line {pos + 1}: bad triangle ({exc})") from exc
        if (tris[k] < 0).any() or (tris[k] >= nv).any():
            raise ValueError(f"line {pos + 1}: vertex index out of range")
        pos += 1
    nb = int(expect("boundary_edges"))
    bedges = []
    for k in range(nb):
        parts = lines[pos].split()
        if len(parts) != 3:
            raise ValueError(f"line {pos + 1}: bad boundary edge")
        i, j, tag = int(parts[0]), int(parts[1]), parts[2]
        if not (0 <= i < nv and 0 <= j < nv):
            raise ValueError(f"line {pos + 1}: edge vertex out of range")
        bedges.append((i, j, tag))
        pos += 1

    mesh = Mesh(verts, tris, bedges)
    if (mesh.element_areas <= 0).any():
        raise ValueError("mesh file contains a non-CCW or degenerate triangle")
    # conformity: computed boundary must match the listed edges as sets
    listed = {tuple(sorted((i, j))) for i, j, _ in bedges}
    actual = {tuple(sorted(e)) for e in _boundary_edges(tris)}
    if listed != actual:
        raise ValueError("boundary_edges do not match the triangulation hull")
    return mesh
