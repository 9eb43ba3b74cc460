"""Initial conditions, the manufactured solution and study drivers."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assembly import (
    ConstantMobility,
    Discretization,
    Mobility,
    PfcParams,
    f_prime,
)
from .fembasis import build_dofmap, skeleton_kind
from .mesh import build_cartesian_mesh
from .stepper import (
    Analytic,
    NewtonConfig,
    NewtonDivergence,
    Zero,
    advance,
    l2_error,
    project_initial,
    run_to,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


# --------------------------------------------------------------------------
# manufactured solution


@dataclass(frozen=True)
class MmsCase:
    mobility: Mobility = ConstantMobility(1.0)
    eps: float = 0.5

    def exact(self, x, y, t):
        return np.exp(-2.0 * t) * np.sin(x) * np.sin(y)

    def psi0(self, x, y):
        return -2.0 * self.exact(x, y, 0.0)

    def source(self, x, y, t):
        return mms_source(self, x, y, t)


def mms_source(case: MmsCase, x, y, t):
    """g = dphi/dt - div(M(phi) grad mu) for the exact solution.

    For phi = e^{-2t} sin x sin y one has 2 lap(phi) + lap^2(phi) = 0, so
    mu = f(phi) and div(M grad f(phi)) = (M' f' + M f'')|grad phi|^2 + M f' lap(phi).
    """
    e = np.exp(-2.0 * t)
    phi = e * np.sin(x) * np.sin(y)
    g2 = e**2 * ((np.cos(x) * np.sin(y)) ** 2 + (np.sin(x) * np.cos(y)) ** 2)
    fp = f_prime(phi, case.eps)
    fpp = 6.0 * phi
    lap = -2.0 * phi
    if isinstance(case.mobility, ConstantMobility):
        m = case.mobility.m
        div = m * (fpp * g2 + fp * lap)
    else:
        # the exact solution stays in [-1, 1] so no clamping occurs
        m, dm = 1.0 - phi**2, -2.0 * phi
        div = (dm * fp + m * fpp) * g2 + m * fp * lap
    return -2.0 * phi - div


# --------------------------------------------------------------------------
# initial conditions


@dataclass(frozen=True)
class MonocrystalParams:
    eps: float = 0.325
    q: float = math.sqrt(3.0) / 2.0
    lx: float = 36.0 * math.pi / math.sqrt(3.0)
    ly: float = 24.0 * math.pi
    phi_a: Optional[float] = None  # defaults to sqrt(eps)/2
    phi_bar: Optional[float] = None  # symbol inside the amplitude radical; defaults to phi_a

    @property
    def liquid(self) -> float:
        return math.sqrt(self.eps) / 2.0 if self.phi_a is None else self.phi_a

    @property
    def amplitude(self) -> float:
        pb = self.liquid if self.phi_bar is None else self.phi_bar
        return 0.8 * (self.liquid + math.sqrt(15.0 * self.eps - 36.0 * pb**2) / 3.0)

    @property
    def d0(self) -> float:
        return self.lx / 6.0

    @property
    def center(self) -> tuple[float, float]:
        return self.lx / 2.0, self.ly / 2.0


def crystal(x, y, q):
    return np.cos(q * y / math.sqrt(3.0)) * np.cos(q * x) - 0.5 * np.cos(2.0 * q * y / math.sqrt(3.0))


def ic_monocrystal(x, y, params: MonocrystalParams = MonocrystalParams()):
    x0, y0 = params.center
    d = np.hypot(np.asarray(x) - x0, np.asarray(y) - y0)
    w = np.where(d <= params.d0, (1.0 - (d / params.d0) ** 2) ** 2, 0.0)
    return params.liquid + w * params.amplitude * crystal(x, y, params.q)


def ic_benchmark32(x, y):
    pi = np.pi
    return (0.07
            - 0.02 * np.cos(2 * pi * (x - 12) / 32) * np.sin(2 * pi * (y - 1) / 32)
            + 0.02 * np.cos(pi * (x + 10) / 32) ** 2 * np.cos(pi * (y + 3) / 32) ** 2
            - 0.01 * np.sin(4 * pi * x / 32) ** 2 * np.sin(4 * pi * (y - 6) / 32) ** 2)


@dataclass(frozen=True)
class Grain:
    x0: float
    x1: float
    y0: float
    y1: float
    alpha: float

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)

    def contains(self, x, y):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


DEFAULT_GRAINS = (
    Grain(25, 40, 25, 40, math.pi / 4),
    Grain(60, 75, 60, 75, 0.0),
    Grain(85, 100, 25, 40, -math.pi / 4),
)


@dataclass(frozen=True)
class PolycrystalParams:
    phi_bar: float = 0.285
    C: float = 0.446
    q: float = 0.66
    eps: float = 0.25
    length: float = 201.0
    grains: tuple = DEFAULT_GRAINS
    # literal reading: C scales only the first cosine product
    literal_parenthesization: bool = False


def grain_local_coords(x, y, g: Grain):
    cx, cy = g.center
    dx, dy = np.asarray(x) - cx, np.asarray(y) - cy
    c, s = math.cos(g.alpha), math.sin(g.alpha)
    return c * dx + s * dy, -s * dx + c * dy


def ic_polycrystal(x, y, params: PolycrystalParams = PolycrystalParams()):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.full(np.broadcast(x, y).shape, params.phi_bar)
    for g in params.grains:
        xl, yl = grain_local_coords(x, y, g)
        if params.literal_parenthesization:
            val = (params.C * np.cos(params.q * yl / math.sqrt(3.0)) * np.cos(params.q * xl)
                   - 0.5 * np.cos(2.0 * params.q * yl / math.sqrt(3.0)))
        else:
            val = params.C * crystal(xl, yl, params.q)
        out = np.where(g.contains(x, y), params.phi_bar + val, out)
    return out


@dataclass(frozen=True)
class PhaseTransitionParams:
    mean: float = 0.7
    amplitude: float = 0.7
    seed: int = 0


def ic_phase_transition(n: int, rng: np.random.Generator, mean: float = 0.7, amplitude: float = 0.7):
    """``n`` i.i.d. samples of mean + U(-amplitude, amplitude)."""
    return mean + rng.uniform(-amplitude, amplitude, size=n)


def random_state(disc: Discretization, params: PhaseTransitionParams):
    """Random nodal phi (one sample per element DoF) with psi0 = 0."""
    from .stepper import project_skeleton

    rng = np.random.default_rng(params.seed)
    st = disc.zero_state(0.0)
    st.phi = ic_phase_transition(disc.n_elements * disc.nb, rng, params.mean,
                                 params.amplitude).reshape(disc.n_elements, disc.nb)
    st.phibar = project_skeleton(disc, st.phi)
    return st


# --------------------------------------------------------------------------
# scenario presets


@dataclass
class Scenario:
    name: str
    domain: tuple[float, float, float, float]
    nx: int
    ny: int
    periodic: bool
    eps: float
    dt: float
    k: int = 1
    ic: Optional[callable] = None
    psi_rule: object = field(default_factory=Zero)
    random: Optional[PhaseTransitionParams] = None
    coupling: str = "edg"

    def mesh(self):
        x0, x1, y0, y1 = self.domain
        return build_cartesian_mesh(x0, x1, y0, y1, self.nx, self.ny, self.periodic, self.periodic)

    def initial_state(self, disc: Discretization):
        if self.random is not None:
            return random_state(disc, self.random)
        from .stepper import LaplacianOfPhi0
        rule = self.psi_rule if self.psi_rule is not None else LaplacianOfPhi0()
        return project_initial(disc, self.ic, rule)


def scenario_preset(name: str, **overrides) -> Scenario:
    """Default parameters of the named experiment (full scale unless overridden)."""
    from .stepper import LaplacianOfPhi0

    name = name.lower()
    if name == "monocrystal":
        p = MonocrystalParams()
        sc = Scenario(name, (0.0, p.lx, 0.0, p.ly), 460, 532, True, p.eps, 0.01,
                      ic=lambda x, y: ic_monocrystal(x, y, p), psi_rule=LaplacianOfPhi0())
    elif name == "benchmark32":
        sc = Scenario(name, (0.0, 32.0, 0.0, 32.0), 256, 256, False, 0.025, 0.005,
                      ic=ic_benchmark32, psi_rule=LaplacianOfPhi0())
    elif name == "polycrystal":
        p = PolycrystalParams()
        sc = Scenario(name, (0.0, p.length, 0.0, p.length), 402, 402, False, p.eps, 1.0,
                      ic=lambda x, y: ic_polycrystal(x, y, p), psi_rule=LaplacianOfPhi0())
    elif name == "phase_transition":
        sc = Scenario(name, (0.0, 128.0, 0.0, 128.0), 256, 256, True, 0.025, 0.01, k=2,
                      random=PhaseTransitionParams())
    elif name == "taustudy":
        sc = Scenario(name, (0.0, TWO_PI, 0.0, TWO_PI), 24, 24, True, 0.5, 1.0,
                      random=PhaseTransitionParams(mean=0.285, amplitude=0.7, seed=1), coupling="hdg")
    else:
        raise ValueError(f"unknown scenario {name!r}")
    for key, val in overrides.items():
        if not hasattr(sc, key):
            raise ValueError(f"unknown scenario field {key!r}")
        setattr(sc, key, val)
    return sc


# --------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceRow:
    N: int
    h: float
    dt: float
    error: float
    rate: Optional[float]
    dofs: int
    newton_iters: list = field(default_factory=list)


def skeleton_dofs(N: int, k: int, coupling: str, periodic: bool = True) -> int:
    mesh = build_cartesian_mesh(0, 1, 0, 1, N, N, periodic, periodic)
    return 3 * build_dofmap(mesh, k, skeleton_kind(coupling)).size


def run_mms(N: int, ratio: float, mobility: Mobility = ConstantMobility(1.0), eps: float = 0.5,
            k: int = 1, coupling: str = "edg", T: float = 1.0,
            newton: NewtonConfig = NewtonConfig()) -> ConvergenceRow:
    case = MmsCase(mobility, eps)
    mesh = build_cartesian_mesh(0.0, TWO_PI, 0.0, TWO_PI, N, N, True, True)
    disc = Discretization(mesh, k, coupling)
    h = TWO_PI / N
    params = PfcParams(eps=eps, dt=ratio * h, mobility=mobility, coupling=coupling, k=k)
    st0 = project_initial(disc, lambda x, y: case.exact(x, y, 0.0), Analytic(case.psi0))
    traj = run_to(disc, st0, params, T, config=newton, source=case.source)
    err = l2_error(disc, traj.state, case.exact, T)
    return ConvergenceRow(N, h, params.dt, err, None, 3 * disc.n_skeleton,
                          [s.newton_iters for s in traj.stats])


def run_convergence(levels: Sequence[int], ratio: float, mobility: Mobility = ConstantMobility(1.0),
                    eps: float = 0.5, k: int = 1, coupling: str = "edg", T: float = 1.0) -> list[ConvergenceRow]:
    if list(levels) != sorted(levels):
        raise ValueError("levels must be ascending")
    rows = []
    for N in levels:
        row = run_mms(N, ratio, mobility, eps, k, coupling, T)
        if rows:
            row.rate = math.log2(rows[-1].error / row.error)
        log.info("N=%d error=%.4e", N, row.error)
        rows.append(row)
    return rows


def convergence_csv(rows: Sequence[ConvergenceRow], coupling: str = "edg") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "h", "dt", "error", "rate", f"dofs_{coupling.lower()}"])
    for r in rows:
        w.writerow([r.N, f"{r.h:.10g}", f"{r.dt:.10g}", f"{r.error:.6e}",
                    "" if r.rate is None else f"{r.rate:.4f}", r.dofs])
    return buf.getvalue()


# --------------------------------------------------------------------------
# stabilization-parameter study

TAU_CONFIGS = (
    (10.0, 10.0, 10.0, 20.0),
    (1.0, 1.0, -10.0, -30.0),
    (1.0, 1.0, 1.0, 3000.0),
    (10.0, 10.0, 10.0, 3000.0),
)


@dataclass
class TauStudyResult:
    config: int
    taus: tuple
    energies: list
    verdict: str
    increased_at: Optional[int] = None
    diverged_at: Optional[int] = None
    message: str = ""


def energy_verdict(energies: Sequence[float], rel: float = 1e-8) -> Optional[int]:
    """First step n with E^n > E^{n-1} + rel (1 + |E^{n-1}|), else None."""
    for n in range(1, len(energies)):
        if energies[n] > energies[n - 1] + rel * (1.0 + abs(energies[n - 1])):
            return n
    return None


def run_tau_study(config_index: int, nsteps: int = 200, n: int = 24, dt: float = 1.0, seed: int = 1,
                  mean: float = 0.285, amplitude: float = 0.7, coupling: str = "hdg",
                  newton: NewtonConfig = NewtonConfig()) -> TauStudyResult:
    if not 0 <= config_index < len(TAU_CONFIGS):
        raise ValueError("config index must be in 0..3")
    taus = TAU_CONFIGS[config_index]
    mesh = build_cartesian_mesh(0.0, TWO_PI, 0.0, TWO_PI, n, n, True, True)
    disc = Discretization(mesh, 1, coupling)
    params = PfcParams(0.5, *taus, dt=dt, coupling=coupling, allow_unstable_taus=config_index != 0)
    st = random_state(disc, PhaseTransitionParams(mean, amplitude, seed))
    energies = [disc.energy(st, params.eps)]
    res = TauStudyResult(config_index, taus, energies, "monotone")

    def hook(new, old, stats):
        energies.append(stats.record.energy)

    try:
        advance(disc, st, params, nsteps, config=newton, hooks=[hook])
    except NewtonDivergence as exc:
        res.diverged_at = exc.step
        res.message = str(exc)
    res.increased_at = energy_verdict(energies)
    if res.increased_at is not None:
        res.verdict = f"increased-at-step-{res.increased_at}"
    elif res.diverged_at is not None:
        res.verdict = f"diverged-at-step-{res.diverged_at}"
    return res
