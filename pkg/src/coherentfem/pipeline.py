"""Configuration-driven pipeline: nodes and trajectories, assembly, solve, extraction.

Configurations are INI files with one section per stage::

    [dynamics]    field, params, trajectory_file, periods, origin
    [nodes]       kind (grid | scattered | file), grid, count, file
    [time]        times
    [assembly]    method (cg | to | to-adaptive), boundary, quadrature_degree,
                  density (uniform | builtin), triangulation, alpha_radius
    [solver]      k, tol
    [extraction]  partition (kmeans | level_set), num_vectors, clusters, restarts
    [run]         seed, output, degrade_fraction, dump_mesh, dump_trajectories

All randomness derives from ``run.seed`` through a :class:`numpy.random.SeedSequence`
split into one child per consumer (scattered nodes, deletion, eigensolver
start vector, k-means).
"""
import configparser
import json
import os
import time
from importlib import resources
from dataclasses import asdict, dataclass
from dataclasses import field as _field

import numpy as np

from . import dynlap, extraction, fem, flows, mesh, spectral, trajectories
from .exceptions import CoherentFEMError, ConfigError

METHODS = ("cg", "to", "to-adaptive")
BOUNDARIES = ("neumann", "dirichlet")
PARTITIONS = ("kmeans", "level_set")

_SCHEMA = {
    "dynamics": {"field": None, "params": "", "trajectory_file": None,
                 "periods": None, "origin": None},
    "nodes": {"kind": "grid", "grid": None, "count": None, "file": None},
    "time": {"times": None},
    "assembly": {"method": "to-adaptive", "boundary": "neumann", "quadrature_degree": "1",
                 "density": "uniform", "triangulation": "delaunay", "alpha_radius": None},
    "solver": {"k": str(spectral.DEFAULT_K), "tol": str(spectral.DEFAULT_TOL)},
    "extraction": {"partition": "kmeans", "num_vectors": None, "clusters": None,
                   "restarts": str(extraction.DEFAULT_RESTARTS)},
    "run": {"seed": "0", "output": "output", "degrade_fraction": "0",
            "dump_mesh": "false", "dump_trajectories": "false"},
}


@dataclass
class PipelineConfig:
    """Validated, fully defaulted pipeline configuration."""

    field: str = None
    params: dict = _field(default_factory=dict)
    trajectory_file: str = None
    periods: tuple = None
    origin: tuple = None
    node_kind: str = "grid"
    grid: tuple = None
    count: int = None
    node_file: str = None
    times: tuple = None
    method: str = "to-adaptive"
    boundary: str = "neumann"
    quadrature_degree: int = 1
    density: str = "uniform"
    triangulation: str = "delaunay"
    alpha_radius: float = None
    k: int = spectral.DEFAULT_K
    tol: float = spectral.DEFAULT_TOL
    partition: str = "kmeans"
    num_vectors: int = None
    clusters: int = None
    restarts: int = extraction.DEFAULT_RESTARTS
    seed: int = 0
    output: str = "output"
    degrade_fraction: float = 0.0
    dump_mesh: bool = False
    dump_trajectories: bool = False

    def to_ini(self):
        """Normalized configuration as INI text."""
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, dict):
                return ", ".join(f"{k}={v[k]!r}" for k in sorted(v))
            if isinstance(v, (tuple, list)):
                return ", ".join("none" if x is None else repr(x) for x in v)
            return str(v)

        d = asdict(self)
        sections = {
            "dynamics": [("field", "field"), ("params", "params"), ("trajectory_file", "trajectory_file"),
                         ("periods", "periods"), ("origin", "origin")],
            "nodes": [("kind", "node_kind"), ("grid", "grid"), ("count", "count"), ("file", "node_file")],
            "time": [("times", "times")],
            "assembly": [(k, k) for k in ("method", "boundary", "quadrature_degree", "density",
                                          "triangulation", "alpha_radius")],
            "solver": [("k", "k"), ("tol", "tol")],
            "extraction": [(k, k) for k in ("partition", "num_vectors", "clusters", "restarts")],
            "run": [(k, k) for k in ("seed", "output", "degrade_fraction", "dump_mesh",
                                     "dump_trajectories")],
        }
        lines = []
        for sec, keys in sections.items():
            lines.append(f"[{sec}]")
            lines.extend(f"{key} = {fmt(d[attr])}".rstrip() for key, attr in keys)
            lines.append("")
        return "\n".join(lines)


class ConfigErrors(ConfigError):
    """Several configuration errors, each prefixed with its field path."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


# -- parsing -----------------------------------------------------------------

def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _optional_floats(text):
    return tuple(None if v.lower() == "none" else float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _params(text):
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {item!r}")
        out[key.strip()] = float(val)
    return out


def preset_names():
    """Names of the configurations shipped with the package."""
    files = resources.files(__package__).joinpath("presets").iterdir()
    return sorted(f.name[:-4] for f in files if f.name.endswith(".ini"))


def resolve_config_path(source):
    """Path of a config file, accepting preset names such as ``presets/bickley``."""
    if os.path.exists(source):
        return source
    name = os.path.basename(source)
    name = name[:-4] if name.endswith(".ini") else name
    if name in preset_names():
        return str(resources.files(__package__).joinpath("presets", name + ".ini"))
    return source


def _read(source):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if isinstance(source, dict):
            parser.read_dict(source)
        elif os.path.exists(resolve_config_path(str(source))):
            with open(resolve_config_path(str(source))) as fh:
                parser.read_file(fh)
        else:
            raise ConfigErrors([f"config: file not found: {source}"])
    except configparser.Error as exc:
        raise ConfigErrors([f"config: {exc}"]) from None
    return parser


def load_config(source):
    """Parse and validate a configuration.

    Parameters
    ----------
    source : str or dict
        INI file path, or a mapping ``{section: {key: value}}``.

    Returns
    -------
    PipelineConfig

    Raises
    ------
    ConfigErrors
        Every problem found, each as ``section.key: message``.
    """
    parser = _read(source)
    errors = []
    raw = {}
    for sec in parser.sections():
        if sec not in _SCHEMA:
            errors.append(f"{sec}: unknown section")
            continue
        for key, val in parser.items(sec):
            if key not in _SCHEMA[sec]:
                errors.append(f"{sec}.{key}: unknown key")
            raw[(sec, key)] = str(val).strip()

    def get(sec, key):
        val = raw.get((sec, key))
        if val is None or val == "":
            return _SCHEMA[sec][key]
        return val

    cfg = PipelineConfig()

    def conv(sec, key, fn, attr):
        val = get(sec, key)
        if val is None:
            return
        try:
            setattr(cfg, attr, fn(val))
        except (ValueError, TypeError) as exc:
            errors.append(f"{sec}.{key}: {exc}")

    conv("dynamics", "field", str, "field")
    conv("dynamics", "params", _params, "params")
    conv("dynamics", "trajectory_file", str, "trajectory_file")
    conv("dynamics", "periods", _optional_floats, "periods")
    conv("dynamics", "origin", _floats, "origin")
    conv("nodes", "kind", str, "node_kind")
    conv("nodes", "grid", _ints, "grid")
    conv("nodes", "count", int, "count")
    conv("nodes", "file", str, "node_file")
    conv("time", "times", _floats, "times")
    conv("assembly", "method", str, "method")
    conv("assembly", "boundary", str, "boundary")
    conv("assembly", "quadrature_degree", int, "quadrature_degree")
    conv("assembly", "density", str, "density")
    conv("assembly", "triangulation", str, "triangulation")
    conv("assembly", "alpha_radius", float, "alpha_radius")
    conv("solver", "k", int, "k")
    conv("solver", "tol", float, "tol")
    conv("extraction", "partition", str, "partition")
    conv("extraction", "num_vectors", int, "num_vectors")
    conv("extraction", "clusters", int, "clusters")
    conv("extraction", "restarts", int, "restarts")
    conv("run", "seed", int, "seed")
    conv("run", "output", str, "output")
    conv("run", "degrade_fraction", float, "degrade_fraction")
    conv("run", "dump_mesh", _bool, "dump_mesh")
    conv("run", "dump_trajectories", _bool, "dump_trajectories")

    errors.extend(_check(cfg))
    if errors:
        raise ConfigErrors(errors)
    return cfg


def _check(cfg):
    errors = []
    model = cfg.field is not None
    if model == (cfg.trajectory_file is not None):
        errors.append("dynamics: give exactly one of field and trajectory_file")
    dim = None
    if model:
        try:
            dyn = flows.builtin_field(cfg.field, cfg.params)
            dim = dyn.dim
        except ConfigError as exc:
            errors.append(f"dynamics.field: {exc}")
            dyn = None
        if cfg.periods is not None or cfg.origin is not None:
            errors.append("dynamics.periods: domain geometry comes from the built-in field")
    else:
        dyn = None
        if cfg.params:
            errors.append("dynamics.params: parameters apply to built-in fields only")
        if cfg.origin is not None and cfg.periods is not None and len(cfg.origin) != len(cfg.periods):
            errors.append("dynamics.origin: length differs from dynamics.periods")
    if cfg.times is None:
        if model:
            errors.append("time.times: required")
    else:
        t = np.asarray(cfg.times)
        if t.size < 2 or np.any(np.diff(t) <= 0):
            errors.append("time.times: need at least 2 strictly increasing times")
        if not model:
            errors.append("time.times: times come from the trajectory file")
    if model:
        if cfg.node_kind == "grid":
            if cfg.grid is None:
                errors.append("nodes.grid: required for grid nodes")
            elif dim is not None and (len(cfg.grid) != dim or min(cfg.grid) < 2):
                errors.append(f"nodes.grid: need {dim} sizes, each >= 2")
        elif cfg.node_kind == "scattered":
            if cfg.count is None or cfg.count < 3:
                errors.append("nodes.count: scattered nodes need count >= 3")
        elif cfg.node_kind == "file":
            if cfg.node_file is None:
                errors.append("nodes.file: required for file nodes")
        else:
            errors.append("nodes.kind: choose grid, scattered or file")
    if cfg.method not in METHODS:
        errors.append(f"assembly.method: choose from {', '.join(METHODS)}")
    elif cfg.method in ("cg", "to") and not model:
        errors.append(f"assembly.method: {cfg.method} requires model dynamics")
    if cfg.boundary not in BOUNDARIES:
        errors.append("assembly.boundary: choose neumann or dirichlet")
    elif cfg.boundary == "dirichlet":
        periods = dyn.periods if dyn is not None else cfg.periods
        if periods and all(p is not None for p in periods):
            errors.append("assembly.boundary: no boundary nodes on a fully periodic domain")
    if cfg.quadrature_degree < 1:
        errors.append("assembly.quadrature_degree: must be >= 1")
    elif cfg.method != "cg" and cfg.quadrature_degree != 1:
        errors.append("assembly.quadrature_degree: only the cg method uses quadrature")
    if cfg.density not in ("uniform", "builtin"):
        errors.append("assembly.density: choose uniform or builtin")
    elif cfg.density == "builtin":
        if dyn is None or dyn.density is None:
            errors.append("assembly.density: the dynamics provide no built-in density")
        if cfg.method == "to":
            errors.append("assembly.density: weighted dynamics are unsupported with method to")
    if cfg.triangulation not in ("delaunay", "alpha"):
        errors.append("assembly.triangulation: choose delaunay or alpha")
    elif cfg.triangulation == "alpha":
        if cfg.method != "to-adaptive":
            errors.append("assembly.triangulation: alpha complexes apply to to-adaptive only")
        if cfg.alpha_radius is None or cfg.alpha_radius <= 0:
            errors.append("assembly.alpha_radius: required and positive for alpha triangulation")
    if cfg.k < 1:
        errors.append("solver.k: must be >= 1")
    if not cfg.tol > 0:
        errors.append("solver.tol: must be positive")
    if cfg.partition not in PARTITIONS:
        errors.append("extraction.partition: choose kmeans or level_set")
    if cfg.partition == "level_set" and cfg.clusters not in (None, 2):
        errors.append("extraction.clusters: level-set partitions have 2 sets")
    if cfg.clusters is not None and cfg.clusters < 1:
        errors.append("extraction.clusters: must be >= 1")
    if cfg.num_vectors is not None and not 1 <= cfg.num_vectors <= cfg.k:
        errors.append("extraction.num_vectors: must lie in [1, solver.k]")
    if cfg.restarts < 1:
        errors.append("extraction.restarts: must be >= 1")
    if not 0.0 <= cfg.degrade_fraction < 1.0:
        errors.append("run.degrade_fraction: must lie in [0, 1)")
    elif cfg.degrade_fraction > 0 and cfg.method != "to-adaptive":
        errors.append("run.degrade_fraction: missing data is supported by to-adaptive only")
    return errors


# -- running -----------------------------------------------------------------

def seed_streams(seed):
    """Independent integer seeds for each random consumer, split from one seed."""
    names = ("nodes", "deletion", "solver", "kmeans")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(c.generate_state(1, dtype=np.uint32)[0]) for n, c in zip(names, children)}


def _nodes(cfg, dyn, seed):
    lo, hi = dyn.bounds[:, 0], dyn.bounds[:, 1]
    if cfg.node_kind == "grid":
        return mesh.regular_grid(cfg.grid, dyn.bounds, periods=dyn.periods)
    if cfg.node_kind == "scattered":
        rng = np.random.default_rng(seed)
        return lo + (hi - lo) * rng.random((cfg.count, dyn.dim))
    pts = np.loadtxt(cfg.node_file, ndmin=2)
    if pts.shape[1] != dyn.dim:
        raise ConfigError(f"nodes.file: points have dimension {pts.shape[1]}, expected {dyn.dim}")
    return pts


class _Stages:
    def __init__(self):
        self.timings = {}

    def run(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except CoherentFEMError as exc:
            raise PipelineError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - start


class PipelineError(CoherentFEMError):
    """Runtime failure in a pipeline stage; names the stage and the original error."""

    def __init__(self, stage, error):
        super().__init__(f"{stage}: {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


def build_problem(cfg, stages=None, mesh_only=False):
    """Dynamics, dataset and initial mesh for a validated configuration.

    With ``mesh_only``, model trajectories are not integrated.

    Returns
    -------
    dict with keys ``dynamics``, ``dataset``, ``mesh0``, ``node_weights``, ``times``.
    """
    stages = stages or _Stages()
    seeds = seed_streams(cfg.seed)
    if cfg.field is not None:
        dyn = flows.builtin_field(cfg.field, cfg.params)
        nodes = stages.run("nodes", _nodes, cfg, dyn, seeds["nodes"])
        times = np.asarray(cfg.times)
        mesh0 = stages.run("mesh", mesh.triangulate, nodes, dyn.periods, dyn.origin)
        dataset = None
        if not mesh_only and (cfg.method == "to-adaptive" or cfg.dump_trajectories):
            dataset = stages.run("trajectories", trajectories.generate_trajectories,
                                 dyn, nodes, times)
    else:
        dyn = None
        dataset = stages.run("trajectories", trajectories.load_trajectories, cfg.trajectory_file,
                             cfg.periods, cfg.origin)
        times = dataset.times
        idx0, pts0 = dataset.points_at(0)
        if idx0.size != dataset.n_particles:
            raise PipelineError("mesh", ConfigError("every particle must be observed at the initial time"))
        mesh0 = stages.run("mesh", mesh.triangulate, pts0, dataset.periods, dataset.origin)
    if dataset is not None and cfg.degrade_fraction > 0:
        dataset = stages.run("deletion", trajectories.delete_random, dataset,
                             cfg.degrade_fraction, seeds["deletion"])
    weights = None
    if cfg.density == "builtin":
        weights = stages.run("density", fem.compute_node_weights, mesh0, dyn.density)
    return {"dynamics": dyn, "dataset": dataset, "mesh0": mesh0, "node_weights": weights,
            "times": times, "seeds": seeds}


def assemble(cfg, problem, stages=None):
    """Averaged stiffness and mass matrices for the configured method."""
    stages = stages or _Stages()
    dyn, ds, mesh0 = problem["dynamics"], problem["dataset"], problem["mesh0"]
    w, times = problem["node_weights"], problem["times"]
    if cfg.method == "cg":
        return stages.run("assembly", dynlap.assemble_cg, mesh0, dyn, times,
                          cfg.quadrature_degree, w)
    if cfg.method == "to":
        return stages.run("assembly", dynlap.assemble_to_nonadapted, mesh0, dyn, times)
    fn = dynlap.assemble_to_adaptive if ds.is_complete else dynlap.assemble_missing
    return stages.run("assembly", fn, ds, w, cfg.triangulation, cfg.alpha_radius)


def _cheeger(cfg, problem, result, spec, partition):
    ds = problem["dataset"]
    kwargs = {"mode": cfg.boundary, "node_weights": problem["node_weights"]}
    if ds is not None and ds.is_complete:
        kwargs["dataset"] = ds
    elif problem["dynamics"] is not None:
        kwargs.update(dynamics=problem["dynamics"], times=problem["times"])
    else:
        return {"evaluated": False, "reason": "incomplete trajectory data and no model"}
    try:
        h = extraction.cheeger_ratio(partition, result.mesh0, **kwargs)
    except CoherentFEMError as exc:
        return {"evaluated": False, "reason": str(exc)}
    out = extraction.check_cheeger_bounds(spec, h, cfg.boundary)
    out["evaluated"] = True
    return out


def _extract(cfg, problem, result, spec, seed):
    clusters = cfg.clusters
    if cfg.partition == "level_set":
        col = 1 if cfg.boundary == "neumann" else 0
        ds = problem["dataset"]
        kwargs = {"mode": cfg.boundary, "node_weights": problem["node_weights"]}
        if ds is not None and ds.is_complete:
            kwargs["dataset"] = ds
        elif problem["dynamics"] is not None:
            kwargs.update(dynamics=problem["dynamics"], times=problem["times"])
        part, _ = extraction.optimal_level_set(spec.eigenvectors[:, col], result.mesh0, **kwargs)
        return part
    if clusters is None:
        clusters = spectral.eigengap(spec.eigenvalues, cfg.boundary)[0]
    num = cfg.num_vectors or min(max(clusters, 1), spec.k)
    return extraction.kmeans_partition(spec, num, clusters, cfg.restarts, seed)


def _fmt(x):
    return f"{x:.17g}"


def _json_floats(obj):
    # 17 significant digits, stored as JSON numbers
    if isinstance(obj, dict):
        return {k: _json_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_floats(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(_fmt(float(obj))) if np.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_pipeline(cfg, output=None):
    """Run all stages and write the artifact files.

    Writes ``spectrum.json``, ``eigenvectors.txt``, ``partition.txt`` and
    ``report.json`` into the output directory (plus ``mesh0.txt`` and
    ``trajectories.txt`` on request).

    Returns
    -------
    dict
        The report, also written to ``report.json``.
    """
    out = output or cfg.output
    os.makedirs(out, exist_ok=True)
    stages = _Stages()
    problem = build_problem(cfg, stages)
    result = assemble(cfg, problem, stages)
    seeds = problem["seeds"]
    spec = stages.run("solve", spectral.solve_assembly, result, min(cfg.k, result.n - 1),
                      cfg.tol, cfg.boundary, seeds["solver"])
    part = stages.run("extraction", _extract, cfg, problem, result, spec, seeds["kmeans"])
    gap_count, gap_j = spectral.eigengap(spec.eigenvalues, cfg.boundary) if spec.k >= 3 else (None, None)

    report = {
        "method": cfg.method,
        "boundary": cfg.boundary,
        "n_nodes": result.n,
        "n_times": int(len(problem["times"])),
        "sign_convention": dynlap.SIGN_CONVENTION,
        "eigengap": {"suggested_sets": gap_count, "gap_after": gap_j},
        "partition": {"sets": int(part.k), "source": part.source,
                      "sizes": np.bincount(part.labels).tolist()},
        "nnz": {"stiffness": int(result.Dbar.nnz), "mass": int(result.Mbar.nnz)},
        "assembly": {k: v for k, v in result.metadata.items()
                     if isinstance(v, (int, float, str, bool, list, tuple))},
        "seeds": seeds,
    }
    if part.k == 2:
        report["cheeger"] = stages.run("cheeger", _cheeger, cfg, problem, result, spec, part)
    report["timings"] = dict(stages.timings)

    with open(os.path.join(out, "spectrum.json"), "w") as fh:
        json.dump(_json_floats({"eigenvalues": spec.eigenvalues.tolist(),
                                "residuals": spec.residuals.tolist(),
                                "boundary": spec.boundary}), fh, indent=2)
        fh.write("\n")
    np.savetxt(os.path.join(out, "eigenvectors.txt"), spec.eigenvectors, fmt="%.17g")
    ids = problem["dataset"].particle_ids if problem["dataset"] is not None else None
    extraction.write_partition(part, os.path.join(out, "partition.txt"), ids)
    if cfg.dump_mesh:
        mesh.write_mesh(result.mesh0, os.path.join(out, "mesh0.txt"))
    if cfg.dump_trajectories and problem["dataset"] is not None:
        trajectories.save_trajectories(problem["dataset"], os.path.join(out, "trajectories.txt"))
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(_json_floats(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
