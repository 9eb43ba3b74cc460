"""Run configuration, output writers and the command-line interface."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .assembly import ConstantMobility, DegenerateMobility, Discretization, EnergyRecord, PfcParams, State
from .fembasis import TABLE3_METHODS, table3
from .mesh import CartesianMesh
from .stepper import NewtonConfig, NewtonDivergence, advance, step_sizes

log = logging.getLogger(__name__)

CSV_HEADER = "step,time,energy,scaled_energy,mass,dissipation,newton_iters"


# --------------------------------------------------------------------------
# configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Taus(_Strict):
    tau1: float = 10.0
    tau2: float = 10.0
    tau3: float = 10.0
    tau4: float = 20.0


class MobilityConfig(_Strict):
    kind: Literal["constant", "degenerate"] = "constant"
    m: float = Field(1.0, ge=0.0)


class NewtonSettings(_Strict):
    tol: float = Field(1e-8, gt=0.0)
    max_iters: int = Field(30, ge=1)


class MeshConfig(_Strict):
    nx: int = Field(ge=1)
    ny: int = Field(ge=1)
    domain: Optional[tuple[float, float, float, float]] = None
    periodic: Optional[bool] = None


class OutputConfig(_Strict):
    directory: str = "."
    csv: Optional[str] = "energy.csv"
    snapshot_every: int = Field(0, ge=0)
    formats: list[Literal["vtk", "ppm"]] = Field(default_factory=lambda: ["vtk"])
    raster: tuple[int, int] = (256, 256)
    vmin: Optional[float] = None
    vmax: Optional[float] = None


class ICConfig(_Strict):
    mean: Optional[float] = None
    amplitude: Optional[float] = None
    literal_parenthesization: bool = False


class RunConfig(_Strict):
    scenario: Literal["mms", "monocrystal", "benchmark32", "polycrystal", "phase_transition", "taustudy"]
    # manufactured-solution runs
    N: Optional[int] = Field(None, ge=1)
    levels: Optional[list[int]] = None
    ratio: Optional[float] = Field(None, gt=0.0)
    # generic runs
    mesh: Optional[MeshConfig] = None
    k: Optional[int] = Field(None, ge=1, le=4)
    dt: Optional[float] = Field(None, gt=0.0)
    t_final: Optional[float] = Field(None, gt=0.0)
    nsteps: Optional[int] = Field(None, ge=1)
    eps: Optional[float] = Field(None, lt=1.0)
    taus: Taus = Field(default_factory=Taus)
    allow_unstable_taus: bool = False
    mobility: MobilityConfig = Field(default_factory=MobilityConfig)
    coupling: Optional[Literal["edg", "hdg"]] = None  # None: scenario default
    newton: NewtonSettings = Field(default_factory=NewtonSettings)
    outputs: OutputConfig = Field(default_factory=OutputConfig)
    ic: ICConfig = Field(default_factory=ICConfig)
    seed: int = 0
    tau_config: Optional[int] = Field(None, ge=0, le=3)

    @model_validator(mode="after")
    def _check(self):
        t = self.taus
        if not self.allow_unstable_taus:
            bad = []
            if not t.tau1 > 0:
                bad.append("taus.tau1: must be > 0")
            if not t.tau3 > 0:
                bad.append("taus.tau3: must be > 0")
            if t.tau2 != t.tau1:
                bad.append("taus.tau2: must equal tau1")
            if t.tau4 != 2 * t.tau1:
                bad.append("taus.tau4: must equal 2*tau1")
            if bad:
                raise ValueError("; ".join(bad) + " (set allow_unstable_taus to override)")
        if self.scenario == "mms" and (self.N is None and self.levels is None):
            raise ValueError("N: required for scenario 'mms' (or give levels)")
        if self.t_final is not None and self.nsteps is not None:
            raise ValueError("t_final, nsteps: give at most one")
        return self

    def mobility_model(self):
        if self.mobility.kind == "degenerate":
            return DegenerateMobility()
        return ConstantMobility(self.mobility.m)


class ConfigError(ValueError):
    pass


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        msg = e["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def serialize_config(cfg: RunConfig) -> str:
    return cfg.model_dump_json(indent=2)


# --------------------------------------------------------------------------
# writers


def write_energy_csv(records: Sequence[EnergyRecord], path) -> None:
    if not records:
        raise ValueError("no records to write")
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join([str(int(r.step)), f"{r.time:.17g}", f"{r.energy:.17g}",
                               f"{r.scaled_energy:.17g}", f"{r.mass:.17g}",
                               f"{r.dissipation:.17g}", str(int(r.newton_iters))]))
    Path(path).write_text("\n".join(lines) + "\n")


def _node_coords(mesh: CartesianMesh, k: int) -> np.ndarray:
    nodes1d = np.linspace(0.0, 1.0, k + 1)
    a, b = np.meshgrid(nodes1d, nodes1d)
    ref = np.stack([a.ravel(), b.ravel()], axis=1)
    c = mesh.element_corners()
    h = np.array([mesh.hx, mesh.hy])
    return c[:, None, :] + ref[None] * h  # (ne, nb, 2)


def write_vtk(state: State, mesh: CartesianMesh, k: int, path) -> None:
    """Legacy ASCII VTK with per-element (duplicated) nodes and k^2 sub-quads each."""
    nb = (k + 1) ** 2
    ne = mesh.n_elements
    pts = _node_coords(mesh, k).reshape(-1, 2)
    cells = []
    for b in range(k):
        for a in range(k):
            ll = a + (k + 1) * b
            cells.append([ll, ll + 1, ll + k + 2, ll + k + 1])
    cells = np.array(cells)
    conn = (np.arange(ne)[:, None, None] * nb + cells[None]).reshape(-1, 4)
    out = ["# vtk DataFile Version 3.0", "hdgpfc state t=%.17g" % state.t, "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {len(pts)} double"]
    out += [f"{x:.17g} {y:.17g} 0" for x, y in pts]
    out.append(f"CELLS {len(conn)} {5 * len(conn)}")
    out += ["4 " + " ".join(map(str, c)) for c in conn]
    out.append(f"CELL_TYPES {len(conn)}")
    out += ["9"] * len(conn)
    out.append(f"POINT_DATA {len(pts)}")
    for name in ("phi", "psi", "mu"):
        vals = getattr(state, name).reshape(-1)
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [f"{v:.17g}" for v in vals]
    Path(path).write_text("\n".join(out) + "\n")


def _colormap() -> np.ndarray:
    """256-entry blue-to-yellow map, monotone in luminance (viridis anchor colors)."""
    anchors = np.array([
        [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
    ], dtype=float)
    t = np.linspace(0.0, 1.0, len(anchors))
    s = np.linspace(0.0, 1.0, 256)
    return np.stack([np.interp(s, t, anchors[:, c]) for c in range(3)], axis=1).round().astype(np.uint8)


COLORMAP = _colormap()


def raster_values(state: State, mesh: CartesianMesh, k: int, width: int, height: int) -> np.ndarray:
    """phi at pixel centers, evaluated with the polynomial of the containing element."""
    from .fembasis import _tensor_eval

    xs = mesh.x0 + (np.arange(width) + 0.5) / width * (mesh.x1 - mesh.x0)
    ys = mesh.y1 - (np.arange(height) + 0.5) / height * (mesh.y1 - mesh.y0)
    X, Y = np.meshgrid(xs, ys)
    i = np.clip(((X - mesh.x0) / mesh.hx).astype(int), 0, mesh.nx - 1)
    j = np.clip(((Y - mesh.y0) / mesh.hy).astype(int), 0, mesh.ny - 1)
    xi = (X - mesh.x0) / mesh.hx - i
    eta = (Y - mesh.y0) / mesh.hy - j
    basis = _tensor_eval(np.linspace(0.0, 1.0, k + 1), xi.ravel(), eta.ravel())
    e = (j * mesh.nx + i).ravel()
    return np.einsum("pi,pi->p", basis, state.phi[e]).reshape(height, width)


def write_ppm(state: State, mesh: CartesianMesh, k: int, path, width: int, height: int,
              vmin: float, vmax: float) -> None:
    if width < 1 or height < 1:
        raise ValueError("image size must be positive")
    if not vmax > vmin:
        raise ValueError("vmax must exceed vmin")
    vals = raster_values(state, mesh, k, width, height)
    s = np.clip((vals - vmin) / (vmax - vmin), 0.0, 1.0)
    idx = np.minimum((s * 256).astype(int), 255)
    rgb = COLORMAP[idx]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(rgb.astype(np.uint8).tobytes())


# --------------------------------------------------------------------------
# run driver


def build_run(cfg: RunConfig):
    """Discretization, parameters and initial state of a non-manufactured run."""
    from .scenarios import PhaseTransitionParams, PolycrystalParams, ic_polycrystal, scenario_preset

    name = "taustudy" if cfg.scenario == "taustudy" else cfg.scenario
    sc = scenario_preset(name)
    if cfg.mesh is not None:
        sc.nx, sc.ny = cfg.mesh.nx, cfg.mesh.ny
        if cfg.mesh.domain is not None:
            sc.domain = tuple(cfg.mesh.domain)
        if cfg.mesh.periodic is not None:
            sc.periodic = cfg.mesh.periodic
    if cfg.k is not None:
        sc.k = cfg.k
    if cfg.dt is not None:
        sc.dt = cfg.dt
    if cfg.eps is not None:
        sc.eps = cfg.eps
    if sc.random is not None:
        r = sc.random
        sc.random = PhaseTransitionParams(r.mean if cfg.ic.mean is None else cfg.ic.mean,
                                          r.amplitude if cfg.ic.amplitude is None else cfg.ic.amplitude,
                                          cfg.seed)
    if cfg.scenario == "polycrystal" and cfg.ic.literal_parenthesization:
        p = PolycrystalParams(literal_parenthesization=True)
        sc.ic = lambda x, y: ic_polycrystal(x, y, p)
    coupling = cfg.coupling or sc.coupling
    taus = cfg.taus
    if cfg.scenario == "taustudy" and cfg.tau_config is not None:
        from .scenarios import TAU_CONFIGS
        taus = Taus(**dict(zip(("tau1", "tau2", "tau3", "tau4"), TAU_CONFIGS[cfg.tau_config])))
    params = PfcParams(sc.eps, taus.tau1, taus.tau2, taus.tau3, taus.tau4, sc.dt,
                       cfg.mobility_model(), coupling, sc.k,
                       cfg.allow_unstable_taus or (cfg.tau_config or 0) != 0)
    disc = Discretization(sc.mesh(), sc.k, coupling)
    return disc, params, sc.initial_state(disc)


DEFAULT_RANGES = {
    "monocrystal": (-0.67, 0.72),
    "benchmark32": (0.04, 0.096),
    "polycrystal": (-0.47, 0.63),
    "phase_transition": (-0.2, 0.23),
}


def run_simulation(cfg: RunConfig) -> list[EnergyRecord]:
    disc, params, st = build_run(cfg)
    outdir = Path(cfg.outputs.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    if cfg.nsteps is not None:
        dts = [params.dt] * cfg.nsteps
    elif cfg.t_final is not None:
        dts = step_sizes(params.dt, cfg.t_final)
    else:
        dts = [params.dt] * 10
    vmin, vmax = DEFAULT_RANGES.get(cfg.scenario, (-1.0, 1.0))
    vmin = cfg.outputs.vmin if cfg.outputs.vmin is not None else vmin
    vmax = cfg.outputs.vmax if cfg.outputs.vmax is not None else vmax

    def snapshot(state: State):
        stem = outdir / f"{cfg.scenario}_{state.step:06d}"
        if "vtk" in cfg.outputs.formats:
            write_vtk(state, disc.mesh, disc.k, stem.with_suffix(".vtk"))
        if "ppm" in cfg.outputs.formats:
            w, h = cfg.outputs.raster
            write_ppm(state, disc.mesh, disc.k, stem.with_suffix(".ppm"), w, h, vmin, vmax)

    every = cfg.outputs.snapshot_every

    def hook(new, old, stats):
        log.info("step %d t=%.4g E=%.10g iters=%d", new.step, new.t, stats.record.energy, stats.newton_iters)
        if every and new.step % every == 0:
            snapshot(new)

    if every:
        snapshot(st)
    newton = NewtonConfig(cfg.newton.tol, cfg.newton.max_iters)
    traj = advance(disc, st, params, len(dts), config=newton, hooks=[hook], dts=dts)
    if cfg.outputs.csv:
        write_energy_csv(traj.records, outdir / cfg.outputs.csv)
    write_vtk(traj.state, disc.mesh, disc.k, outdir / f"{cfg.scenario}_final.vtk")
    return traj.records


# --------------------------------------------------------------------------
# CLI


def _levels(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdgpfc", description="HDG/EDG phase field crystal solver")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a simulation from a JSON config")
    r.add_argument("config")
    m = sub.add_parser("mms", help="manufactured-solution convergence table")
    m.add_argument("--levels", type=_levels, default=[48, 96])
    m.add_argument("--ratio", type=float, default=0.95)
    m.add_argument("--mobility", choices=["constant", "degenerate"], default="constant")
    m.add_argument("--coupling", choices=["edg", "hdg"], default="edg")
    m.add_argument("--eps", type=float, default=0.5)
    m.add_argument("--k", type=int, default=1)
    d = sub.add_parser("dofs", help="degree-of-freedom counts")
    d.add_argument("--table3", action="store_true", help="globally coupled DoFs on triangulated meshes")
    d.add_argument("--n", type=int, help="skeleton unknowns of an n x n periodic quad mesh")
    d.add_argument("--k", type=int, default=1)
    t = sub.add_parser("taustudy", help="energy behaviour for one stabilization set")
    t.add_argument("--config", type=int, choices=range(4), required=True)
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--csv", help="write the energy series here")
    t.add_argument("--coupling", choices=["edg", "hdg"], default="hdg")
    t.add_argument("--mean", type=float, default=0.285, help="mean of the random initial density")
    t.add_argument("--seed", type=int, default=1)
    return ap


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "dofs":
            return _cmd_dofs(args, ap)
        if args.cmd == "mms":
            from .scenarios import convergence_csv, run_convergence

            mob = DegenerateMobility() if args.mobility == "degenerate" else ConstantMobility(1.0)
            rows = run_convergence(sorted(args.levels), args.ratio, mob, args.eps, args.k, args.coupling)
            sys.stdout.write(convergence_csv(rows, args.coupling))
            return 0
        if args.cmd == "taustudy":
            from .scenarios import run_tau_study

            res = run_tau_study(args.config, nsteps=args.steps, seed=args.seed, mean=args.mean,
                                coupling=args.coupling)
            if args.csv:
                Path(args.csv).write_text("step,energy\n" + "".join(
                    f"{i},{e:.17g}\n" for i, e in enumerate(res.energies)))
            print(f"config {res.config} taus={res.taus}: {res.verdict}")
            return 0
        if args.cmd == "run":
            if not os.path.isfile(args.config):
                ap.print_usage(sys.stderr)
                print(f"error: config file not found: {args.config}", file=sys.stderr)
                return 2
            cfg = parse_config(Path(args.config).read_text())
            if cfg.scenario == "mms":
                from .scenarios import convergence_csv, run_convergence

                rows = run_convergence(cfg.levels or [cfg.N], cfg.ratio or 0.95, cfg.mobility_model(),
                                       0.5 if cfg.eps is None else cfg.eps, cfg.k or 1, cfg.coupling or "edg")
                sys.stdout.write(convergence_csv(rows, cfg.coupling or "edg"))
                return 0
            recs = run_simulation(cfg)
            print(f"{len(recs) - 1} steps, final energy {recs[-1].energy:.10g}")
            return 0
    except (ConfigError, ValueError, NewtonDivergence, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def _cmd_dofs(args, ap) -> int:
    if args.table3:
        print("mesh," + ",".join(TABLE3_METHODS))
        for label, counts in table3():
            print(label + "," + ",".join(str(c) for c in counts))
        return 0
    if args.n:
        from .scenarios import skeleton_dofs

        e = skeleton_dofs(args.n, args.k, "edg")
        h = skeleton_dofs(args.n, args.k, "hdg")
        print(f"N,EDG,HDG,ratio\n{args.n},{e},{h},{h / e:.4f}")
        return 0
    ap.print_usage(sys.stderr)
    print("error: dofs needs --table3 or --n", file=sys.stderr)
    return 2


def main() -> None:
    sys.exit(cli_main())
