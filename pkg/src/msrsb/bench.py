"""Configuration-driven benchmark runner.

A case file (YAML) describes mesh, physics, coarsening, basis, and solver;
``run_case`` builds the pipeline deterministically, solves, and writes a
convergence-history CSV named like
``{case}_{METHOD}_{multiscale|smoother}_{SMOOTHER}x{sweeps}.csv``.
``run_sweep`` drives refinement or coarsening studies and tabulates iteration
counts with and without the multiscale stage.
"""

from __future__ import annotations

import importlib.resources
import json
import os
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla
import yaml

from .basis import (BasisConfig, BasisDivergenceError, Prolongation,
                    build_basis, build_basis_vector, build_coarse_system,
                    initial_multiscale_solution, make_restriction)
from .elasticity import (ElasticBoundarySpec, ElasticMaterial,
                         apply_dirichlet_symmetric, assemble_elasticity,
                         reservoir_load, young_profile)
from .flow import DiffusionField, FlowBoundarySpec, assemble_mpfa_o, assemble_tpfa
from .mesh import GridDistortion, Mesh, build_structured_mesh, write_vtk
from .partition import (build_support_regions, partition_agglomerate,
                        partition_structured, partition_structured_nodes)
from .smoothers import Smoother, SmootherSpec
from .solvers import ConvergenceHistory, SolverSpec, TwoLevelPreconditioner, solve

PHYSICS = ("flow-tpfa", "flow-mpfa", "elasticity")
SMOOTHER_NAMES = {"ilu0": "ILU0", "ic0": "IC0", "sgs": "SGS",
                  "l1_jacobi": "JAC", "jacobi": "WJAC", "none": "NONE"}
METHOD_NAMES = {"richardson": "RICHARDSON", "gmres": "GMRES_right",
                "cg": "CG", "bicgstab": "BICGSTAB"}
OUT_DIR_ENV = "MSRSB_OUT_DIR"


def bundled_case_names() -> list[str]:
    root = importlib.resources.files("msrsb") / "cases"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(name_or_path) -> dict:
    """Load a case config from a path or a bundled case name."""
    path = Path(name_or_path)
    if not path.exists():
        resource = importlib.resources.files("msrsb") / "cases" / f"{name_or_path}.yaml"
        if not resource.is_file():
            raise FileNotFoundError(
                f"no config file {name_or_path!r}; bundled cases: "
                + ", ".join(bundled_case_names())
            )
        text = resource.read_text()
    else:
        text = path.read_text()
    cfg = yaml.safe_load(text)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Cheap pre-compute validation of a case tree."""
    case = cfg.get("case")
    try:
        if not case:
            raise ValueError("config needs a 'case' name")
        if cfg.get("physics") not in PHYSICS:
            raise ValueError(f"physics must be one of {PHYSICS}")
        mesh = cfg.get("mesh", {})
        dims = mesh.get("dims")
        if not dims or any(int(d) < 1 for d in dims):
            raise ValueError("mesh.dims must be positive")
        coarse = cfg.get("coarsening", {})
        if "ratios" in coarse:
            ratios = coarse["ratios"]
            ratios = [ratios] * len(dims) if np.isscalar(ratios) else ratios
            if any(int(r) < 2 for r in ratios):
                raise ValueError("coarsening ratio below 2 is rejected")
        elif "target_blocks" not in coarse and "sweep" not in cfg:
            raise ValueError("coarsening needs 'ratios' or 'target_blocks'")
        solver = cfg.get("solver", {})
        if solver.get("method", "gmres") not in METHOD_NAMES:
            raise ValueError(f"unknown solver method {solver.get('method')!r}")
        for stage in ("pre", "post"):
            kind = cfg.get("precond", {}).get(stage, {}).get("kind", "none")
            if kind not in SMOOTHER_NAMES:
                raise ValueError(f"unknown smoother kind {kind!r}")
    except (ValueError, TypeError) as err:
        raise ValueError(f"case {case!r}: {err}") from err


def _build_mesh(cfg: dict) -> Mesh:
    mcfg = cfg["mesh"]
    dims = [int(d) for d in mcfg["dims"]]
    extents = mcfg.get("extents")
    dcfg = mcfg.get("distortion")
    distortion = None
    if dcfg:
        distortion = GridDistortion(
            amplitude=float(dcfg.get("amplitude", 0.0)),
            stretch=tuple(dcfg["stretch"]) if "stretch" in dcfg else (),
            skew=tuple(tuple(s) for s in dcfg.get("skew", ())),
            seed=int(dcfg.get("seed", cfg.get("seed", 0))),
            topography_amplitude=float(dcfg.get("topography_amplitude", 0.0)),
        )
    nz = dims[2] if len(dims) == 3 else None
    return build_structured_mesh(dims[0], dims[1], nz, extents=extents,
                                 distortion=distortion)


def _build_field(cfg: dict, mesh: Mesh) -> DiffusionField:
    fcfg = cfg["field"]
    kind = fcfg.get("kind", "isotropic")
    unit = fcfg.get("unit", "si")
    if kind == "isotropic":
        return DiffusionField.isotropic(mesh, float(fcfg["value"]), unit=unit)
    if kind == "constant-tensor":
        t = fcfg["tensor"]
        dim = mesh.dim
        mat = np.zeros((dim, dim))
        names = ("x", "y", "z")
        for i in range(dim):
            for j in range(dim):
                key = names[i] + names[j]
                alt = names[j] + names[i]
                if key in t:
                    mat[i, j] = float(t[key])
                elif alt in t:
                    mat[i, j] = float(t[alt])
        return DiffusionField.constant_tensor(mesh, mat, unit=unit)
    if kind == "layered-lognormal":
        means = np.asarray(fcfg["means"], dtype=float)
        sigma = float(fcfg.get("sigma_log10", 0.5))
        axis = int(fcfg.get("axis", mesh.dim - 1))
        n_layers = means.size
        ijk = mesh.cell_ijk(np.arange(mesh.n_cells))
        per = mesh.cart_dims[axis] / n_layers
        region = np.minimum((ijk[:, axis] / per).astype(int), n_layers - 1)
        rng = np.random.default_rng([int(cfg.get("seed", 0)), 101])
        noise = rng.standard_normal(mesh.n_cells)
        values = means[region] * 10.0 ** (sigma * noise)
        return DiffusionField.isotropic(mesh, values, unit=unit)
    raise ValueError(f"unknown field kind {kind!r}")


def _build_material(cfg: dict, mesh: Mesh) -> ElasticMaterial:
    mcfg = cfg["material"]
    kind = mcfg.get("kind", "uniform")
    if kind == "uniform":
        return ElasticMaterial.uniform(mesh, float(mcfg["E"]), float(mcfg["nu"]))
    if kind == "depth-profile":
        nu = float(mcfg.get("nu", 0.3))
        z = mesh.cell_centroids[:, mesh.dim - 1]
        # mesh z runs 0 (bottom) .. height (surface); profile wants elevation < 0
        z_top = float(mcfg.get("surface_elevation",
                               np.max(mesh.nodes[:, mesh.dim - 1])))
        elev = np.minimum(z - z_top, -1.0)
        E = young_profile(elev, nu=nu)
        layers = mcfg.get("layers")
        if layers:
            coeffs = np.asarray(layers["coefficients"], dtype=float)
            n_layers = coeffs.size
            lo, hi = elev.min(), elev.max()
            edges = np.linspace(lo, hi, n_layers + 1)[1:-1]
            band = np.searchsorted(edges, elev)
            for b in range(n_layers):
                sel = band == b
                if sel.any():
                    E[sel] += coeffs[b] * E[sel].mean()
        return ElasticMaterial(E, np.full(mesh.n_cells, nu))
    raise ValueError(f"unknown material kind {kind!r}")


def _build_flow_bc(cfg: dict, mesh: Mesh) -> FlowBoundarySpec:
    sides = {}
    for name, spec in cfg.get("bc", {}).get("flow", {}).items():
        sides[name] = (spec[0], float(spec[1]))
    return FlowBoundarySpec.from_sides(mesh, sides)


def _build_elastic_bc(cfg: dict, mesh: Mesh) -> ElasticBoundarySpec:
    rollers = cfg.get("bc", {}).get("elasticity", {}).get("rollers", [])
    return ElasticBoundarySpec.rollers(mesh, rollers)


def _build_loads(cfg: dict, mesh: Mesh) -> np.ndarray:
    f = np.zeros(mesh.dim * mesh.n_nodes)
    for zone in cfg.get("load", {}).get("zones", []):
        lo, hi = zone["box"]
        cells = mesh.cells_in_box(lo, hi)
        f += reservoir_load(mesh, cells, float(zone["dp_bar"]))
    return f


def _basis_config(cfg: dict, **overrides) -> BasisConfig:
    bcfg = dict(cfg.get("basis", {}))
    bcfg.pop("compare_filter_off", None)
    bcfg.update(overrides)
    return BasisConfig(
        omega=float(bcfg.get("omega", 2.0 / 3.0)),
        tol=float(bcfg.get("tol", 1e-3)),
        n_it=int(bcfg.get("n_it", 5)),
        max_iters=int(bcfg.get("max_iters", 1000)),
        filter=bool(bcfg.get("filter", True)),
        track_invariants=bool(bcfg.get("track_invariants", False)),
    )


def _smoother_spec(scfg: dict | None) -> SmootherSpec:
    scfg = scfg or {}
    return SmootherSpec(
        kind=scfg.get("kind", "none"),
        sweeps=int(scfg.get("sweeps", 1)),
        damping=float(scfg.get("damping", 1.0)),
        pivot_shift=bool(scfg.get("pivot_shift", False)),
    )


def _solver_spec(cfg: dict, **overrides) -> SolverSpec:
    scfg = dict(cfg.get("solver", {}))
    scfg.update({k: v for k, v in overrides.items() if v is not None})
    return SolverSpec(
        method=scfg.get("method", "gmres"),
        tol=float(scfg.get("tol", 1e-8)),
        max_iters=int(scfg.get("max_iters", 200)),
        restart=scfg.get("restart"),
    )


@dataclass
class CaseArtifacts:
    cfg: dict
    mesh: Mesh
    A: "object"
    f: np.ndarray
    partition: "object"
    prolongation: Prolongation | None
    n_sd: int
    filter_off_report: "object" = None
    timings: dict = dc_field(default_factory=dict)
    _coarse_cache: dict = dc_field(default_factory=dict)

    def coarse(self, restriction: str):
        if restriction not in self._coarse_cache:
            R = make_restriction(self.prolongation, restriction)
            self._coarse_cache[restriction] = build_coarse_system(
                self.A, self.prolongation.P, R
            )
        return self._coarse_cache[restriction]


def build_case(cfg: dict, basis_overrides: dict | None = None) -> CaseArtifacts:
    """Assemble a case end to end: mesh, system, partition, basis."""
    validate_config(cfg)
    timings = {}
    t0 = time.perf_counter()
    mesh = _build_mesh(cfg)
    timings["mesh"] = time.perf_counter() - t0

    physics = cfg["physics"]
    t0 = time.perf_counter()
    if physics == "elasticity":
        material = _build_material(cfg, mesh)
        bc = _build_elastic_bc(cfg, mesh)
        A, f = assemble_elasticity(mesh, material, bc)
        f = f + _build_loads(cfg, mesh)
        A, f = apply_dirichlet_symmetric(A, f, bc)
        n_sd = mesh.dim
    else:
        field = _build_field(cfg, mesh)
        bc = _build_flow_bc(cfg, mesh)
        assemble = assemble_tpfa if physics == "flow-tpfa" else assemble_mpfa_o
        A, f = assemble(mesh, field, bc)
        n_sd = 1
    timings["assembly"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ccfg = cfg["coarsening"]
    if ccfg.get("agglomerate"):
        part = partition_agglomerate(mesh, int(ccfg["target_blocks"]))
    elif physics == "elasticity":
        part = partition_structured_nodes(mesh, ccfg["ratios"])
    else:
        part = partition_structured(mesh, ccfg["ratios"])
    part = build_support_regions(mesh, part)
    timings["partition"] = time.perf_counter() - t0

    bconf = _basis_config(cfg, **(basis_overrides or {}))
    filter_off_report = None
    if cfg.get("basis", {}).get("compare_filter_off"):
        off_conf = _basis_config(cfg, filter=False)
        try:
            if n_sd == 1:
                off = build_basis(A, part, off_conf)
            else:
                off = build_basis_vector(A, part, off_conf, n_sd)
            filter_off_report = off.reports[0]
        except BasisDivergenceError as err:
            filter_off_report = err.report

    t0 = time.perf_counter()
    if n_sd == 1:
        prol = build_basis(A, part, bconf)
    else:
        prol = build_basis_vector(A, part, bconf, n_sd)
    timings["basis"] = time.perf_counter() - t0
    return CaseArtifacts(cfg, mesh, A, f, part, prol, n_sd,
                         filter_off_report, timings)


def run_variant(art: CaseArtifacts, solver: SolverSpec, pre: SmootherSpec,
                post: SmootherSpec, multiscale: bool = True,
                restriction: str = "galerkin"):
    """Solve one (solver, smoother, multiscale) combination on built artifacts."""
    pre_s = Smoother(pre, art.A, n_sd=art.n_sd) if pre.kind != "none" else None
    post_s = Smoother(post, art.A, n_sd=art.n_sd) if post.kind != "none" else None
    coarse = art.coarse(restriction) if multiscale else None
    prol = art.prolongation if multiscale else None
    M = TwoLevelPreconditioner(art.A, pre_s, coarse, prol, post_s)
    return solve(art.A, art.f, M, solver)


@dataclass
class RunReport:
    case: str
    method: str
    smoother: str
    multiscale: bool
    n_dof: int
    n_coarse: int
    basis_iterations: list
    basis_converged: bool
    solver_iterations: int
    solver_converged: bool
    final_residual: float
    wall_times: dict
    csv_path: str | None = None
    rel_l1_error: float | None = None
    max_cell_error: float | None = None
    filter_off_diverged: bool | None = None
    filter_off_max_update: float | None = None
    status: str = ""

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    def summary(self) -> str:
        tag = "multiscale" if self.multiscale else "smoother"
        state = "converged" if self.solver_converged else "NOT converged"
        return (f"[{self.case}] {self.method}+{self.smoother} ({tag}): "
                f"{state} in {self.solver_iterations} iterations "
                f"(final relres {self.final_residual:.3e})")


def csv_name(case: str, method: str, multiscale: bool, smoother: SmootherSpec) -> str:
    mname = METHOD_NAMES[method]
    sname = SMOOTHER_NAMES[smoother.kind]
    stage = "multiscale" if multiscale else "smoother"
    sweeps = smoother.sweeps if smoother.kind != "none" else 1
    return f"{case}_{mname}_{stage}_{sname}x{sweeps}.csv"


def _resolve_out_dir(out_dir) -> Path:
    out = out_dir or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_case(cfg: dict, out_dir=None, seed=None, tol=None) -> RunReport:
    """Run a case as configured and write its convergence CSV and report."""
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    art = build_case(cfg)
    pcfg = cfg.get("precond", {})
    pre = _smoother_spec(pcfg.get("pre"))
    post = _smoother_spec(pcfg.get("post"))
    multiscale = bool(pcfg.get("multiscale", True))
    restriction = pcfg.get("restriction", "galerkin")
    solver = _solver_spec(cfg, tol=tol)

    t0 = time.perf_counter()
    x, hist = run_variant(art, solver, pre, post, multiscale, restriction)
    art.timings["solve"] = time.perf_counter() - t0

    out = _resolve_out_dir(out_dir)
    name = csv_name(cfg["case"], solver.method, multiscale, post)
    hist.write_csv(out / name)

    report = RunReport(
        case=cfg["case"],
        method=solver.method,
        smoother=post.kind,
        multiscale=multiscale,
        n_dof=art.A.shape[0],
        n_coarse=art.prolongation.P.shape[1],
        basis_iterations=[r.iterations for r in art.prolongation.reports],
        basis_converged=art.prolongation.converged,
        solver_iterations=hist.iterations,
        solver_converged=hist.converged,
        final_residual=hist.residuals[-1],
        wall_times=art.timings,
        csv_path=str(out / name),
        status=hist.status,
    )
    if art.filter_off_report is not None:
        report.filter_off_diverged = art.filter_off_report.diverged
        hist_off = art.filter_off_report.update_max_history
        report.filter_off_max_update = max(hist_off) if hist_off else None
    if cfg.get("reference", {}).get("compute_error"):
        rel_l1, max_err = _initial_ms_errors(art, restriction)
        report.rel_l1_error = rel_l1
        report.max_cell_error = max_err
    with open(out / f"{cfg['case']}_report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, default=str)
    return report


def _initial_ms_errors(art: CaseArtifacts, restriction: str):
    ref = _reference_solution(art, restriction)
    p_ms = initial_multiscale_solution(art.A, art.f, art.prolongation, restriction)
    rel_l1 = float(np.abs(ref - p_ms).sum() / np.abs(ref).sum())
    max_err = float(np.abs(ref - p_ms).max())
    return rel_l1, max_err


def _reference_solution(art: CaseArtifacts, restriction: str) -> np.ndarray:
    """Fine-scale reference: sparse direct at desk scale, else a multiscale-
    preconditioned GMRES solve to 1e-12."""
    if art.A.shape[0] <= 20000:
        return spla.spsolve(art.A.tocsc(), art.f)
    spec = SolverSpec(method="gmres", tol=1e-12, max_iters=400)
    post = SmootherSpec(kind="ilu0")
    x, hist = run_variant(art, spec, SmootherSpec("none"), post, True, restriction)
    if not hist.converged:
        return spla.spsolve(art.A.tocsc(), art.f)
    return x


def compute_initial_ms_error(cfg: dict):
    """Relative l1 and max cell-wise error of the uniterated multiscale
    solution against a direct fine-scale solve."""
    if cfg["physics"] == "elasticity":
        raise ValueError("initial-solution error is defined for flow cases")
    art = build_case(cfg)
    restriction = cfg.get("precond", {}).get("restriction", "galerkin")
    return _initial_ms_errors(art, restriction)


def run_sweep(cfg: dict, out_dir=None) -> dict:
    """Run a refinement or coarsening sweep and tabulate iteration counts.

    Returns {"rows": [...], "table": markdown_string}; also writes
    ``{case}_sweep.md`` and ``.csv``. Non-converged entries show a dash.
    """
    sweep = cfg.get("sweep")
    if not sweep:
        raise ValueError("config has no 'sweep' section")
    smoothers = sweep.get("smoothers", ["ic0"])
    include_no_ms = bool(sweep.get("include_no_ms", True))
    solver = SolverSpec(
        method=sweep.get("solver", {}).get("method", "cg"),
        tol=float(sweep.get("solver", {}).get("tol", 1e-8)),
        max_iters=int(sweep.get("solver", {}).get("max_iters", 1000)),
    )
    vary = sweep.get("vary", "refinement")
    if vary == "refinement":
        variants = [("level " + str(i), {"mesh": {**cfg["mesh"], "dims": dims},
                                         "coarsening": {"ratios": sweep["ratio"]}})
                    for i, dims in enumerate(sweep["dims_per_level"])]
    elif vary == "coarsening":
        variants = [(f"ratio {r}", {"coarsening": {"ratios": r}})
                    for r in sweep["ratios"]]
    else:
        raise ValueError(f"unknown sweep variation {vary!r}")

    specs = [_sweep_smoother(entry) for entry in smoothers]
    rows = []
    for label, patch in variants:
        sub = dict(cfg)
        sub.pop("sweep", None)
        for key, val in patch.items():
            base = dict(sub.get(key, {}))
            base.update(val)
            sub[key] = base
        art = build_case(sub)
        row = {"label": label, "n_dof": art.A.shape[0],
               "n_coarse": art.prolongation.P.shape[1]}
        for spec in specs:
            pre = spec if solver.method == "cg" else SmootherSpec("none")
            _, hist = run_variant(art, solver, pre, spec, multiscale=True)
            row[f"{spec.kind}_ms"] = hist.iterations if hist.converged else None
            if include_no_ms:
                _, hist0 = run_variant(art, solver, pre, spec, multiscale=False)
                row[f"{spec.kind}_no_ms"] = hist0.iterations if hist0.converged else None
        rows.append(row)

    table = _sweep_table(rows, [s.kind for s in specs], include_no_ms)
    out = _resolve_out_dir(out_dir)
    (out / f"{cfg['case']}_sweep.md").write_text(table)
    with open(out / f"{cfg['case']}_sweep.csv", "w") as fh:
        keys = list(rows[0].keys())
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join("-" if row[k] is None else str(row[k])
                              for k in keys) + "\n")
    return {"rows": rows, "table": table}


def _sweep_smoother(entry) -> SmootherSpec:
    if isinstance(entry, str):
        return SmootherSpec(kind=entry, sweeps=2 if entry == "l1_jacobi" else 1)
    return _smoother_spec(entry)


def _sweep_table(rows, smoothers, include_no_ms) -> str:
    headers = ["case", "n_dof", "n_coarse"]
    for sk in smoothers:
        headers.append(f"{SMOOTHER_NAMES[sk]} MsRSB")
        if include_no_ms:
            headers.append(f"{SMOOTHER_NAMES[sk]} no MS")
    lines = ["| " + " | ".join(headers) + " |",
             "|" + "|".join("---" for _ in headers) + "|"]
    for row in rows:
        cells = [row["label"], str(row["n_dof"]), str(row["n_coarse"])]
        for sk in smoothers:
            ms = row.get(f"{sk}_ms")
            cells.append("-" if ms is None else str(ms))
            if include_no_ms:
                no = row.get(f"{sk}_no_ms")
                cells.append("-" if no is None else str(no))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def export_basis(cfg: dict, coarse_index: int, out_path, direction: int = 0) -> str:
    """Write one basis function as VTK cell data (flow) or point data
    (elasticity)."""
    art = build_case(cfg)
    P = art.prolongation.P
    part = art.partition
    if art.n_sd > 1:
        col = direction * part.n_blocks + coarse_index
        values = np.asarray(P[:, col].todense()).ravel()
        n = part.n_entities
        comp = values[direction * n:(direction + 1) * n]
        write_vtk(art.mesh, out_path, point_data={"basis": comp})
    else:
        values = np.asarray(P[:, coarse_index].todense()).ravel()
        write_vtk(art.mesh, out_path, cell_data={"basis": values})
    return str(out_path)
