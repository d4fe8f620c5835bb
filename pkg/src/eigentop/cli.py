"""Command-line front end: run / verify / sweep / oned.

Plain key=value configs, CSV history, legacy-VTK snapshots, and SVG
quicklooks.  Exit codes: 0 success, 1 configuration error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields as dc_fields

import numpy as np

from . import criteria, fem, geometry, levelset, oned
from .eig import solve_smallest
from .fem import BoundaryCondition
from .geometry import BUILTIN_DOMAINS, Mesh, bottom_edge_predicate

_THREAD_ENV = "EIGENTOP_THREADS"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    problem: str = "conductivity"
    objective: str = "min"
    c: float = None                  # None -> problem default (1.1 / 2)
    m0: float = 0.5
    epsilon: float = 1e-4
    max_steps: int = 500
    stop_tol: float = 1e-6
    multiplicity_threshold: float = 0.99
    snapshot_every: int = 0
    volume_tol: float = 1e-3
    domain: str = "square"
    h: float = None                  # None -> diameter / 60
    bc: str = "dirichlet"            # dirichlet | neumann | robin
    eta: float = 0.0
    outdir: str = "run_out"
    seed: int = 777

    def resolved_c(self) -> float:
        if self.c is not None:
            return self.c
        return 1.1 if self.problem == "conductivity" else 2.0

    def resolved_h(self, spec) -> float:
        return self.h if self.h is not None else spec.diameter / 60.0


_BOOLS = ()
_INTS = ("max_steps", "snapshot_every", "seed")
_FLOATS = ("c", "m0", "epsilon", "stop_tol", "multiplicity_threshold",
           "volume_tol", "h", "eta")


def parse_config(text: str) -> RunConfig:
    """key = value per line; # starts a comment; unknown keys rejected."""
    cfg = RunConfig()
    known = {f.name for f in dc_fields(RunConfig)}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {ln}: unknown key {key!r}")
        try:
            if key in _INTS:
                setattr(cfg, key, int(val))
            elif key in _FLOATS:
                setattr(cfg, key, float(val))
            else:
                setattr(cfg, key, val)
        except ValueError as exc:
            raise ValueError(f"line {ln}: bad value for {key!r}: {exc}") from exc
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    if cfg.problem not in ("conductivity", "density"):
        raise ValueError(f"problem must be conductivity or density, got {cfg.problem!r}")
    if cfg.objective not in ("min", "max"):
        raise ValueError(f"objective must be min or max, got {cfg.objective!r}")
    c = cfg.resolved_c()
    if not (c > 0 and c != 1):
        raise ValueError("c must be positive and != 1")
    if not 0 < cfg.m0 < 1:
        raise ValueError("m0 must be inside (0,1)")
    if cfg.epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if cfg.domain not in BUILTIN_DOMAINS:
        raise ValueError(f"domain must be one of {sorted(BUILTIN_DOMAINS)}")
    if cfg.bc not in ("dirichlet", "neumann", "robin"):
        raise ValueError(f"bc must be dirichlet, neumann or robin, got {cfg.bc!r}")
    if cfg.eta < 0:
        raise ValueError("eta must be >= 0")


def config_echo(cfg: RunConfig) -> str:
    spec = BUILTIN_DOMAINS[cfg.domain]()
    lines = []
    for f in dc_fields(RunConfig):
        val = getattr(cfg, f.name)
        if f.name == "c":
            val = cfg.resolved_c()
        if f.name == "h":
            val = cfg.resolved_h(spec)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def _boundary_condition(cfg: RunConfig, mesh: Mesh, spec) -> tuple:
    """(BoundaryCondition, possibly retagged mesh) for the configured bc."""
    if cfg.bc == "dirichlet":
        return BoundaryCondition({"boundary": "dirichlet"}), mesh
    if cfg.bc == "neumann":
        return BoundaryCondition({"boundary": "neumann"}), mesh
    ymin = mesh.vertices[:, 1].min()
    mesh = geometry.tag_robin_side(mesh, bottom_edge_predicate(ymin))
    return BoundaryCondition({"dirichlet": "dirichlet", "robin": "robin"},
                             eta=cfg.eta), mesh


def phase_config(cfg: RunConfig, bc: BoundaryCondition) -> levelset.PhaseConfig:
    return levelset.PhaseConfig(
        problem=cfg.problem, objective=cfg.objective, c=cfg.resolved_c(),
        m0=cfg.m0, bc=bc, epsilon=cfg.epsilon, max_steps=cfg.max_steps,
        stop_tol=cfg.stop_tol,
        multiplicity_threshold=cfg.multiplicity_threshold,
        snapshot_every=cfg.snapshot_every, volume_tol=cfg.volume_tol)


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float) and np.isnan(x):
        return "nan"
    return f"{x:.17g}" if isinstance(x, float) else str(x)


HISTORY_COLUMNS = ("step", "lambda1", "lambda2", "lambda3", "ratio12",
                   "ratio23", "G", "nu", "dt", "wallclock")


def write_history_csv(history: list, path: str) -> None:
    # wallclock is pinned to 0.000 so identical configs produce identical
    # bytes; real timings go to summary.txt
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for step, l1, l2, l3, G, nu, dt in history:
            row = (str(step), _fmt(l1), _fmt(l2), _fmt(l3),
                   _fmt(l1 / l2 if l2 else float("nan")),
                   _fmt(l2 / l3 if l3 else float("nan")),
                   _fmt(G), _fmt(float(nu)), _fmt(float(dt)), "0.000")
            fh.write(",".join(row) + "\n")


def write_vtk(mesh: Mesh, path: str, point_data: dict | None = None,
              cell_data: dict | None = None) -> None:
    """Legacy-VTK (2.0) ASCII unstructured grid with the given fields."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    for name, arr in point_data.items():
        if len(arr) != mesh.n_vertices:
            raise ValueError(f"point field {name!r} has wrong length")
    for name, arr in cell_data.items():
        if len(arr) != mesh.n_triangles:
            raise ValueError(f"cell field {name!r} has wrong length")
    out = ["# vtk DataFile Version 2.0", "two-phase eigenvalue fields",
           "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_vertices} double"]
    for x, y in mesh.vertices:
        out.append(f"{x:.17g} {y:.17g} 0")
    out.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    for i, j, k in mesh.triangles:
        out.append(f"3 {i} {j} {k}")
    out.append(f"CELL_TYPES {mesh.n_triangles}")
    out.extend(["5"] * mesh.n_triangles)
    if point_data:
        out.append(f"POINT_DATA {mesh.n_vertices}")
        for name, arr in point_data.items():
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(f"{v:.17g}" for v in np.asarray(arr, dtype=float))
    if cell_data:
        out.append(f"CELL_DATA {mesh.n_triangles}")
        for name, arr in cell_data.items():
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(f"{v:.17g}" for v in np.asarray(arr, dtype=float))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def _colormap(t: float) -> str:
    """Sequential dark-blue -> yellow ramp, t in [0,1]."""
    stops = [(0.0, (68, 1, 84)), (0.33, (49, 104, 142)),
             (0.66, (53, 183, 121)), (1.0, (253, 231, 37))]
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if t <= t1:
            f = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            rgb = tuple(round(a + f * (b - a)) for a, b in zip(c0, c1))
            return f"rgb{rgb}"
    return f"rgb{stops[-1][1]}"


def write_svg_quicklook(mesh: Mesh, field: np.ndarray, path: str,
                        size: int = 640) -> None:
    """One polygon per triangle; red/gray for indicators, colormap for scalars."""
    field = np.asarray(field)
    lo = mesh.vertices.min(0)
    hi = mesh.vertices.max(0)
    span = hi - lo
    scale = size / max(span)
    w, hgt = span * scale

    def pt(p):
        return f"{(p[0] - lo[0]) * scale:.2f},{(hi[1] - p[1]) * scale:.2f}"

    is_indicator = field.dtype == bool
    if is_indicator:
        colors = np.where(field, "#cc2222", "#d9d9d9")
    else:
        fmin, fmax = float(field.min()), float(field.max())
        rng = fmax - fmin
        tvals = np.zeros(len(field)) if rng == 0 else (field - fmin) / rng
        colors = [_colormap(float(t)) for t in tvals]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" '
           f'height="{hgt:.0f}" viewBox="0 0 {w:.2f} {hgt:.2f}">']
    for e, (i, j, k) in enumerate(mesh.triangles):
        pts = " ".join(pt(mesh.vertices[v]) for v in (i, j, k))
        out.append(f'<polygon points="{pts}" fill="{colors[e]}" '
                   f'stroke="{colors[e]}" stroke-width="0.4"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# run orchestration
# ---------------------------------------------------------------------------

def _snapshot(mesh: Mesh, state, c: float, outdir: str) -> None:
    u = state.eigs.vectors[:, 0]
    write_vtk(mesh, os.path.join(outdir, f"snap_{state.step:06d}.vtk"),
              point_data={"u": u, "phi": state.phi},
              cell_data={"rho": state.rho_or_sigma,
                         "flux_sq": fem.flux_magnitude_sq(
                             mesh, u, state.rho_or_sigma)})
    write_svg_quicklook(mesh, state.rho_or_sigma == c,
                        os.path.join(outdir, f"snap_{state.step:06d}.svg"))


def run(cfg: RunConfig) -> int:
    os.makedirs(cfg.outdir, exist_ok=True)
    with open(os.path.join(cfg.outdir, "config-echo.txt"), "w") as fh:
        fh.write(config_echo(cfg))

    spec = BUILTIN_DOMAINS[cfg.domain]()
    h = cfg.resolved_h(spec)
    mesh = geometry.build_mesh(spec, h)
    bc, mesh = _boundary_condition(cfg, mesh, spec)
    with open(os.path.join(cfg.outdir, "mesh.txt"), "w") as fh:
        fh.write(geometry.write_mesh(mesh))

    pcfg = phase_config(cfg, bc)
    t0 = time.perf_counter()

    def on_step(state):
        if cfg.snapshot_every > 0 and state.step % cfg.snapshot_every == 0:
            _snapshot(mesh, state, pcfg.c, cfg.outdir)

    try:
        best = levelset.optimize(pcfg, mesh, on_step=on_step)
    except (RuntimeError, ValueError) as exc:
        history = getattr(exc, "history", None)
        if history:
            write_history_csv(history, os.path.join(cfg.outdir, "history.csv"))
        with open(os.path.join(cfg.outdir, "summary.txt"), "w") as fh:
            fh.write(f"status = failed\nerror = {exc}\n")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - t0

    write_history_csv(best.history, os.path.join(cfg.outdir, "history.csv"))
    np.savetxt(os.path.join(cfg.outdir, "phi.txt"), best.phi, fmt="%.17g")
    u1 = best.eigs.vectors[:, 0]
    write_vtk(mesh, os.path.join(cfg.outdir, "final.vtk"),
              point_data={"u": u1, "phi": best.phi},
              cell_data={"rho": best.rho_or_sigma,
                         "flux_sq": fem.flux_magnitude_sq(mesh, u1,
                                                          best.rho_or_sigma)})
    write_svg_quicklook(mesh, best.rho_or_sigma == pcfg.c,
                        os.path.join(cfg.outdir, "final.svg"))

    report = _criterion_report(mesh, best, pcfg)
    vals = best.eigs.values
    with open(os.path.join(cfg.outdir, "summary.txt"), "w") as fh:
        fh.write("status = ok\n")
        fh.write(f"best_step = {best.step}\n")
        fh.write(f"steps_total = {best.history[-1][0]}\n")
        fh.write(f"lambda1 = {vals[0]:.12g}\n")
        fh.write(f"lambda2 = {vals[1]:.12g}\n")
        fh.write(f"lambda3 = {vals[2]:.12g}\n")
        fh.write(f"ratio12 = {vals[0] / vals[1]:.6f}\n")
        fh.write(f"ratio23 = {vals[1] / vals[2]:.6f}\n")
        fh.write(f"volume_residual = {best.volume_residual:.3e}\n")
        fh.write(f"criterion_quantity = {report.quantity}\n")
        fh.write(f"criterion_side = {criteria.criterion_side(pcfg.problem, pcfg.objective)}\n")
        fh.write(f"criterion_violation = {report.violation_fraction:.4f}\n")
        fh.write(f"criterion_pass = {report.passed}\n")
        fh.write(f"multiplicity_branch = {report.multiplicity}\n")
        fh.write(f"wallclock_seconds = {elapsed:.1f}\n")
    return 0


def _criterion_report(mesh: Mesh, state, pcfg) -> criteria.CriterionReport:
    q, name, double = criteria.criterion_quantity(
        pcfg.problem, mesh, state.eigs, state.rho_or_sigma,
        pcfg.multiplicity_threshold)
    side = criteria.criterion_side(pcfg.problem, pcfg.objective)
    return criteria.level_set_match(
        mesh, q, state.rho_or_sigma, side, problem=pcfg.problem,
        objective=pcfg.objective, multiplicity=double, quantity=name)


def verify(run_dir: str) -> int:
    """Recheck a finished run from its own files: volume invariant from
    history.csv, then the optimality criterion from mesh + phi via a fresh
    eigensolve."""
    try:
        mesh = geometry.read_mesh(open(os.path.join(run_dir, "mesh.txt")).read())
        phi = np.loadtxt(os.path.join(run_dir, "phi.txt"))
        echo = dict(
            line.split(" = ", 1) for line in
            open(os.path.join(run_dir, "config-echo.txt")).read().splitlines())
        rows = open(os.path.join(run_dir, "history.csv")).read().splitlines()
    except OSError as exc:
        print(f"cannot read run directory: {exc}", file=sys.stderr)
        return 1

    c = float(echo["c"])
    m0 = float(echo["m0"])
    problem = echo["problem"]
    objective = echo["objective"]
    omega = mesh.element_areas.sum()

    ok = True
    lines = []
    g_col = [float(r.split(",")[6]) for r in rows[1:]]
    worst_g = max((abs(g) for g in g_col[1:]), default=0.0)
    vol_ok = worst_g <= 1e-3 * omega
    ok &= vol_ok
    lines.append(f"volume_invariant = {'pass' if vol_ok else 'FAIL'} "
                 f"(worst |G| = {worst_g:.3e}, bound {1e-3 * omega:.3e})")

    coeff = levelset.phase_from_phi(mesh, phi, c)
    bc_kind = echo["bc"]
    eta = float(echo["eta"])
    deflate = bc_kind == "neumann" or (bc_kind == "robin" and eta == 0.0)
    fixed = (np.array([], dtype=int) if bc_kind == "neumann"
             else fem.dirichlet_vertices(mesh, {"boundary", "dirichlet"}))
    keep = np.setdiff1d(np.arange(mesh.n_vertices), fixed)
    # rebuild the pencil exactly as the optimizer assembled it (including the
    # coefficient weighting of the robin term in the conductivity problem)
    if bc_kind == "robin":
        bc_obj = fem.BoundaryCondition(
            {"dirichlet": "dirichlet", "robin": "robin"}, eta=eta)
    elif bc_kind == "neumann":
        bc_obj = fem.all_neumann()
    else:
        bc_obj = fem.all_dirichlet()
    pcfg = levelset.PhaseConfig(problem, objective, c, m0, bc_obj)
    robin_block = levelset._robin_block_factory(pcfg, mesh)
    K, M = levelset._eig_operators(pcfg, mesh, coeff,
                                   fem.assemble_stiffness(mesh),
                                   fem.assemble_mass(mesh), robin_block)
    es = solve_smallest(K[keep][:, keep].tocsr(), M[keep][:, keep].tocsr(),
                        k=3, deflate_constants=deflate)
    vecs = np.zeros((mesh.n_vertices, 3))
    vecs[keep] = es.vectors
    es.vectors = vecs

    q, name, double = criteria.criterion_quantity(problem, mesh, es, coeff)
    side = criteria.criterion_side(problem, objective)
    rep = criteria.level_set_match(mesh, q, coeff, side)
    ok &= rep.passed
    lines.append(f"criterion({name}, {side}) = "
                 f"{'pass' if rep.passed else 'FAIL'} "
                 f"(violation {rep.violation_fraction:.4f})")
    lines.append(f"lambda1 = {es.values[0]:.12g}")

    text = "\n".join(lines) + "\n"
    with open(os.path.join(run_dir, "verify.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0 if ok else 2


def sweep(cfg: RunConfig, etas: list) -> int:
    """Robin continuation: one run per eta, then consecutive-set distances."""
    os.makedirs(cfg.outdir, exist_ok=True)
    n_threads = int(os.environ.get(_THREAD_ENV, "1"))

    def one(eta: float) -> tuple:
        sub = RunConfig(**{f.name: getattr(cfg, f.name)
                           for f in dc_fields(RunConfig)})
        sub.bc = "robin"
        sub.eta = eta
        sub.outdir = os.path.join(cfg.outdir, f"eta_{eta:g}")
        code = run(sub)
        return eta, code, sub.outdir

    results = []
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one, etas))
    else:
        results = [one(eta) for eta in etas]
    if any(code != 0 for _, code, _ in results):
        return 2

    # mesh is identical across runs (same domain/h/tagging)
    sets = {}
    mesh = None
    for eta, _, outdir in results:
        m = geometry.read_mesh(open(os.path.join(outdir, "mesh.txt")).read())
        mesh = mesh or m
        phi = np.loadtxt(os.path.join(outdir, "phi.txt"))
        sets[eta] = fem.element_mean(m, phi) > 0
    omega = mesh.element_areas.sum()
    lines = []
    for e0, e1 in zip(etas, etas[1:]):
        d = mesh.element_areas[sets[e0] ^ sets[e1]].sum() / omega
        lines.append(f"symdiff(eta={e0:g}, eta={e1:g}) = {d:.4f}")
    with open(os.path.join(cfg.outdir, "sweep_summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="eigentop",
                                description="two-phase eigenvalue optimization")
    sub = p.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run one optimization from a config file")
    p_run.add_argument("config")

    p_ver = sub.add_parser("verify", help="recheck invariants of a finished run")
    p_ver.add_argument("run_dir")

    p_sw = sub.add_parser("sweep", help="Robin continuation over eta values")
    p_sw.add_argument("config")
    p_sw.add_argument("--eta", default="0,0.2,0.5,1,5",
                      help="comma-separated eta list")

    p_1d = sub.add_parser("oned", help="1-D exhaustive optimum and criterion")
    p_1d.add_argument("--c", type=float, default=5.0)
    p_1d.add_argument("--m0", type=float, default=0.5)
    p_1d.add_argument("--bc", choices=("dirichlet", "neumann"),
                      default="dirichlet")
    p_1d.add_argument("--objective", choices=("min", "max"), default="min")
    p_1d.add_argument("--kmax", type=int, default=3)
    p_1d.add_argument("--grid", type=int, default=40)

    args = p.parse_args(argv)

    if args.cmd == "run":
        try:
            cfg = parse_config(open(args.config).read())
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        return run(cfg)

    if args.cmd == "verify":
        return verify(args.run_dir)

    if args.cmd == "sweep":
        try:
            cfg = parse_config(open(args.config).read())
            etas = [float(s) for s in args.eta.split(",")]
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        return sweep(cfg, etas)

    if args.cmd == "oned":
        try:
            profile, lam = oned.brute_force_optimum(
                args.c, args.m0, args.bc, args.objective,
                k_max=args.kmax, n_grid=args.grid)
        except (ValueError, RuntimeError) as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return 2
        rep = oned.criterion_check_1d(profile, args.bc)
        print(f"lambda1 = {lam:.6f}")
        print(f"breakpoints = {', '.join(f'{b:.6f}' for b in profile.breakpoints)}")
        print(f"values = {', '.join(f'{v:g}' for v in profile.values)}")
        print(f"criterion = {rep['match']} "
              f"(sub {rep['mismatch_sub']:.4f}, super {rep['mismatch_super']:.4f})")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
