"""Batch driver: ``levelopt {run,check-grad,trace,state-only} CONFIG``.

A run configuration is a JSON object; every key is optional and defaults to
the single-point disk setting (unit square, nx = 150, f = -100, phi = -0.5, disk of
radius 0.25 centred at (0.5, 0.5), one observation point at (0.25, 0.5)).
The output directory may be overridden with ``LEVELOPT_OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .levelset import (
    NodalLevel,
    TraceError,
    admissibility_check,
    circle_level,
    disk_level,
    extract_contour,
    hamiltonian_trace,
    observation_points,
    pin_zero,
)
from .mesh import MeshError, generate_structured, load_mesh
from .optimize import DescentConfig, descend
from .regfun import RegParams
from .sensitivity import (
    ObservationSpec,
    check_gradient,
    eval_cost,
    grad_cost,
    normal_derivatives,
    point_geometry,
    select_I0,
)
from .state import ProblemData, solve_state

logger = logging.getLogger("levelopt")

OUTPUT_ENV = "LEVELOPT_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


_SAFE_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "minimum", "maximum",
                 "where", "hypot", "arctan2", "tanh")
}


def expression(text: str, what: str):
    """Callable of (m, 2) points evaluating a numpy expression in ``x`` and ``y``."""
    try:
        code = compile(text, f"<{what}>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"{what}: cannot parse expression {text!r}: {exc.msg}") from exc

    def fn(pts):
        pts = np.asarray(pts, dtype=float)
        env = dict(_SAFE_NAMES, x=pts[..., 0], y=pts[..., 1])
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), pts.shape[:-1]).copy()

    return fn


@dataclass
class RunConfig:
    mesh_nx: int = 150
    mesh_rect: tuple = (0.0, 0.0, 1.0, 1.0)
    mesh_file: str | None = None
    params: RegParams = field(default_factory=RegParams)
    obstacle: object = -0.5
    source: object = -100.0
    level_disk: dict | None = field(default_factory=lambda: {"center": [0.5, 0.5], "radius": 0.25})
    level_file: str | None = None
    level_expression: str | None = None
    points: list | None = field(default_factory=lambda: [[0.25, 0.5]])
    targets: list | float = 0.0
    trace_points: dict | None = None
    i0_mode: str = "ball"
    state_form: str = "vi"
    descent: DescentConfig = field(default_factory=DescentConfig)
    output: str = "output"
    trace: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def output_dir(self) -> Path:
        out = os.environ.get(OUTPUT_ENV) or self.output
        p = Path(out)
        return p if p.is_absolute() else self.base_dir / p


def _take(d: dict, key: str, kind, where: str, default=None):
    if key not in d:
        return default
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def parse_config(raw: dict, base_dir=None) -> RunConfig:
    """Validate a decoded JSON configuration before any solve."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {"mesh", "params", "obstacle", "source", "level", "observation", "i0_mode",
             "state_form", "descent", "output", "trace", "description"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    cfg = RunConfig(base_dir=Path(base_dir) if base_dir else Path.cwd())

    mesh = raw.get("mesh", {})
    if "file" in mesh:
        cfg.mesh_file = _take(mesh, "file", str, "mesh")
    else:
        cfg.mesh_nx = _take(mesh, "nx", int, "mesh", cfg.mesh_nx)
        if cfg.mesh_nx < 2:
            raise ConfigError(f"mesh.nx: must be at least 2, got {cfg.mesh_nx}")
        rect = mesh.get("rect", list(cfg.mesh_rect))
        if not (isinstance(rect, list) and len(rect) == 4):
            raise ConfigError("mesh.rect: expected [x0, y0, x1, y1]")
        cfg.mesh_rect = tuple(float(v) for v in rect)

    p = raw.get("params", {})
    names = ("eps", "eta", "eps2", "eps1", "C", "tol")
    bad = set(p) - set(names)
    if bad:
        raise ConfigError(f"params: unknown key(s) {sorted(bad)}")
    kw = {k: _take(p, k, float, "params") for k in names if k in p}
    eps = kw.get("eps", RegParams.eps)
    if "eta" in kw or "eps" in kw:
        eta = kw.get("eta", RegParams.eta)
        if not eta > eps:
            raise ConfigError(f"params.eta: need eta > eps to avoid numerical difficulties "
                              f"(eta={eta}, eps={eps})")
    if "eps2" in kw or "eps" in kw:
        eps2 = kw.get("eps2", RegParams.eps2)
        if not eps2 > eps:
            raise ConfigError(f"params.eps2: need eps2 > eps to avoid numerical difficulties "
                              f"(eps2={eps2}, eps={eps})")
    try:
        cfg.params = RegParams(**kw)
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from exc

    for key, attr in (("obstacle", "obstacle"), ("source", "source")):
        if key in raw:
            v = raw[key]
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                setattr(cfg, attr, float(v))
            elif isinstance(v, str):
                setattr(cfg, attr, expression(v, key))
            else:
                raise ConfigError(f"{key}: expected a number or an expression string")

    level = raw.get("level")
    if level is not None:
        cfg.level_disk = None
        if "disk" in level:
            disk = level["disk"]
            cfg.level_disk = {"center": [float(c) for c in disk.get("center", [0.5, 0.5])],
                              "radius": float(disk.get("radius", 0.25))}
            if cfg.level_disk["radius"] <= 0:
                raise ConfigError("level.disk.radius: must be positive")
        elif "file" in level:
            cfg.level_file = _take(level, "file", str, "level")
        elif "expression" in level:
            cfg.level_expression = _take(level, "expression", str, "level")
            expression(cfg.level_expression, "level.expression")
        else:
            raise ConfigError("level: expected one of 'disk', 'file', 'expression'")

    obs = raw.get("observation")
    if obs is not None:
        if "points" in obs:
            pts = obs["points"]
            try:
                arr = np.asarray(pts, dtype=float).reshape(-1, 2)
            except ValueError as exc:
                raise ConfigError("observation.points: expected a list of [x, y] pairs") from exc
            if len(arr) < 1:
                raise ConfigError("observation.points: need at least one point")
            cfg.points = arr.tolist()
            cfg.trace_points = None
        elif "trace" in obs:
            tp = dict(obs["trace"])
            if int(tp.get("l", 0)) < 1:
                raise ConfigError("observation.trace.l: must be at least 1")
            cfg.trace_points = tp
            cfg.points = None
        else:
            raise ConfigError("observation: expected 'points' or 'trace'")
        cfg.targets = obs.get("targets", 0.0)

    cfg.i0_mode = raw.get("i0_mode", cfg.i0_mode)
    if cfg.i0_mode not in ("ball", "triangle"):
        raise ConfigError(f"i0_mode: expected 'ball' or 'triangle', got {cfg.i0_mode!r}")
    cfg.state_form = raw.get("state_form", cfg.state_form)
    if cfg.state_form not in ("vi", "regularized"):
        raise ConfigError(f"state_form: expected 'vi' or 'regularized', got {cfg.state_form!r}")

    desc = dict(raw.get("descent", {}))
    desc.setdefault("tol", cfg.params.tol)
    try:
        cfg.descent = DescentConfig(**desc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"descent: {exc}") from exc

    cfg.output = raw.get("output", cfg.output)
    cfg.trace = dict(raw.get("trace", {}))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw, base_dir=path.parent)


# ---------------------------------------------------------------- problem setup


@dataclass
class Setup:
    data: ProblemData
    obs: ObservationSpec
    I0: np.ndarray


def _resolve(cfg: RunConfig, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else cfg.base_dir / p


def build_mesh(cfg: RunConfig):
    if cfg.mesh_file:
        path = _resolve(cfg, cfg.mesh_file)
        if not path.exists():
            raise FileNotFoundError(f"mesh file not found: {path}")
        return load_mesh(path)
    return generate_structured(cfg.mesh_nx, cfg.mesh_rect)


def _raw_level(cfg: RunConfig, mesh):
    if cfg.level_disk is not None:
        return disk_level(mesh, cfg.level_disk["center"], cfg.level_disk["radius"])
    if cfg.level_file:
        path = _resolve(cfg, cfg.level_file)
        if not path.exists():
            raise FileNotFoundError(f"level file not found: {path}")
        G = io.read_nodal(path)
        if G.shape != (mesh.n,):
            raise ConfigError(f"level.file: {G.size} values for a mesh of {mesh.n} vertices")
        return G
    return expression(cfg.level_expression, "level.expression")(mesh.vertices)


def _trace_level(cfg: RunConfig, mesh, G):
    if cfg.level_disk is not None and cfg.trace.get("analytic", True):
        return circle_level(cfg.level_disk["center"], cfg.level_disk["radius"])
    return NodalLevel(mesh, G)


def build_setup(cfg: RunConfig) -> Setup:
    mesh = build_mesh(cfg)
    G = _raw_level(cfg, mesh)
    if cfg.points is not None:
        pts = np.asarray(cfg.points, dtype=float)
    else:
        tp = cfg.trace_points
        x0 = tp.get("x0")
        level = _trace_level(cfg, mesh, G)
        if x0 is None:
            raise ConfigError("observation.trace.x0: starting point required")
        tr = hamiltonian_trace(level, x0, float(tp.get("dt", 1e-3)), level_tol=None)
        window = tp.get("window")
        pts = observation_points(tr, int(tp["l"]), tuple(window) if window else None)
    for x in pts:
        if not mesh.contains(x):
            raise ConfigError(f"observation point {tuple(x)} lies outside the mesh")
    G = pin_zero(mesh, G, pts)
    obs = ObservationSpec(pts, cfg.targets)
    data = ProblemData(mesh, G, cfg.obstacle, cfg.source, cfg.params, cfg.state_form)
    I0 = select_I0(mesh, obs, cfg.i0_mode, cfg.params.C)
    report = admissibility_check(G, mesh, pts)
    if not report.ok:
        logger.warning("initial level function is not admissible: %s", report)
    return Setup(data, obs, I0)


# ---------------------------------------------------------------- commands


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def cmd_run(cfg: RunConfig) -> dict:
    setup = build_setup(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    mesh = setup.data.mesh

    def on_iterate(rec, data, state):
        io.write_polylines_csv(out / f"contour_{rec.iteration:03d}.csv",
                               extract_contour(mesh, data.g))

    t0 = time.perf_counter()
    history = descend(setup.data, setup.obs, cfg.descent, I0=setup.I0, callback=on_iterate)
    elapsed = time.perf_counter() - t0
    final = history.records[-1]
    io.write_history_csv(out / "history.csv", history)
    io.write_vtk(out / "final_state.vtk", mesh, {"y": history.final_state})
    io.write_vtk(out / "final_level.vtk", mesh, {"g": history.final_level})
    report = {
        "initial_cost": history.records[0].cost,
        "final_cost": final.cost,
        "iterations": history.iterations,
        "stop_reason": history.stop_reason,
        "costs": history.costs,
        "observation_points": setup.obs.points,
        "targets": setup.obs.targets,
        "normal_at_points": final.normals,
        "normal_derivative_at_points": final.normal_derivatives,
        "I0_size": int(len(setup.I0)),
        "direction": cfg.descent.direction,
        "state_form": cfg.state_form,
        "runtime_seconds": elapsed,
    }
    _write_json(out / "report.json", report)
    return report


def cmd_state_only(cfg: RunConfig) -> dict:
    setup = build_setup(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    data = setup.data
    st = solve_state(data)
    mesh = data.mesh
    io.write_vtk(out / "state.vtk", mesh, {"y": st.values})
    io.write_vtk(out / "level.vtk", mesh, {"g": data.g})
    io.write_polylines_csv(out / "contour_000.csv", extract_contour(mesh, data.g))
    report = {
        "cost": eval_cost(mesh, st, data.g, setup.obs),
        "normal_derivative_at_points": normal_derivatives(mesh, st, data.g, setup.obs),
        "normal_at_points": [point_geometry(mesh, data.g, x).normal for x in setup.obs.points],
        "min_state": float(st.values.min()),
        "max_state": float(st.values.max()),
        "solver_iterations": st.newton_iterations,
        "residual": st.residual,
    }
    _write_json(out / "report.json", report)
    return report


def cmd_check_grad(cfg: RunConfig, n=20, delta=1e-5, indices=None, seed=0) -> dict:
    if not delta > 0:
        raise ConfigError(f"--delta: must be positive, got {delta}")
    setup = build_setup(cfg)
    data = setup.data
    st = solve_state(data)
    if indices is None:
        report = grad_cost(data, st, setup.obs, setup.I0)
        # skip partials that vanish to rounding (no H' support): relative error is meaningless there
        big = np.abs(report.partials) >= 1e-6 * np.abs(report.partials).max(initial=0.0)
        pool = report.free[big & (report.partials != 0)]
        rng = np.random.default_rng(seed)
        indices = np.sort(rng.choice(pool, size=min(n, len(pool)), replace=False))
    else:
        frozen = np.intersect1d(indices, setup.I0)
        for i in frozen:
            logger.warning("index %d lies in I0 and is skipped", i)
        indices = np.setdiff1d(np.asarray(indices, dtype=int), setup.I0)
    analytic, fd = check_gradient(data, setup.obs, setup.I0, indices, delta, state=st)
    rel = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-300)
    rows = [{"index": int(i), "analytic": a, "fd": f, "rel_err": r}
            for i, a, f, r in zip(indices, analytic, fd, rel)]
    for r in rows:
        print(f"{r['index']:8d} {r['analytic']: .10e} {r['fd']: .10e} {r['rel_err']:.3e}")
    result = {"rows": rows, "max_rel_err": float(rel.max(initial=0.0)), "delta": delta}
    print(f"max rel. err = {result['max_rel_err']:.3e}")
    return result


def cmd_trace(cfg: RunConfig) -> dict:
    mesh = build_mesh(cfg)
    G = _raw_level(cfg, mesh)
    tc = cfg.trace
    level = _trace_level(cfg, mesh, G)
    x0 = tc.get("x0") or (cfg.points[0] if cfg.points else None)
    if x0 is None:
        raise ConfigError("trace.x0: starting point required")
    dt = float(tc.get("dt", 1e-4))
    t_max = tc.get("t_max")
    tr = hamiltonian_trace(level, x0, dt, t_max=t_max, level_tol=tc.get("level_tol", 1e-10))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    io.write_trajectory_csv(out / "trajectory.csv", tr.times, tr.points)
    result = {"period": tr.period, "closure_defect": tr.closure_defect, "dt": dt,
              "samples": len(tr.points)}
    if "l" in tc:
        window = tc.get("window")
        pts = observation_points(tr, int(tc["l"]), tuple(window) if window else None)
        io.write_polylines_csv(out / "observation_points.csv", [pts])
        result["observation_points"] = pts
    _write_json(out / "trace.json", result)
    print(f"T_g = {tr.period!r}, closure defect = {tr.closure_defect:.3e}")
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="levelopt", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "trace", "state-only"):
        sp = sub.add_parser(name)
        sp.add_argument("config")
    cg = sub.add_parser("check-grad")
    cg.add_argument("config")
    cg.add_argument("--n", type=int, default=20)
    cg.add_argument("--delta", type=float, default=1e-5)
    cg.add_argument("--indices", type=int, nargs="*")
    cg.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    stage = "config"
    try:
        cfg = load_config(args.config)
        stage = args.command
        if args.command == "run":
            rep = cmd_run(cfg)
            print(f"J: {rep['initial_cost']:.6g} -> {rep['final_cost']:.6g} "
                  f"in {rep['iterations']} iterations ({rep['stop_reason']})")
        elif args.command == "state-only":
            rep = cmd_state_only(cfg)
            print(f"J = {rep['cost']:.6g}, min y = {rep['min_state']:.6g}, "
                  f"max y = {rep['max_state']:.6g}")
        elif args.command == "check-grad":
            cmd_check_grad(cfg, args.n, args.delta, args.indices, args.seed)
        else:
            cmd_trace(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, MeshError) as exc:
        print(f"I/O error ({stage}): {exc}", file=sys.stderr)
        return 3
    except (TraceError, RuntimeError, ValueError) as exc:
        print(f"{stage} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
