"""Newton iteration, the convex-splitting time loop and initial projections."""
from __future__ import annotations

import dataclasses
import logging
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import linalg
from .assembly import (
    Discretization,
    EnergyRecord,
    PfcParams,
    Source,
    State,
)
from .fembasis import build_ref_element

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-8
    max_iters: int = 30

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class StepStats:
    newton_iters: int = 0
    residuals: list = field(default_factory=list)
    record: Optional[EnergyRecord] = None
    wallclock: float = 0.0
    clamped_points: int = 0


class NewtonDivergence(RuntimeError):
    def __init__(self, msg: str, best: State, stats: StepStats, step: int | None = None):
        super().__init__(msg)
        self.best = best
        self.stats = stats
        self.step = step


# --------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class Analytic:
    """psi0 given in closed form (normally the Laplacian of phi0)."""
    psi0: Field


@dataclass(frozen=True)
class LaplacianOfPhi0:
    """psi0 = elementwise Laplacian of the projected phi0."""


@dataclass(frozen=True)
class Zero:
    pass


PsiRule = Union[Analytic, LaplacianOfPhi0, Zero]


def _project(disc: Discretization, fn: Field) -> np.ndarray:
    xq, yq = disc.quad_points()
    vals = np.asarray(fn(xq, yq), dtype=float) * np.ones_like(xq)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("initial field has non-finite values at quadrature points")
    return disc.load(vals) @ disc.Minv


def _second_derivs_1d(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.empty((len(x), len(nodes)))
    for i in range(len(nodes)):
        e = np.zeros(len(nodes))
        e[i] = 1.0
        c = np.polyfit(nodes, e, len(nodes) - 1)
        out[:, i] = np.polyval(np.polyder(c, 2), x)
    return out


def elementwise_laplacian(disc: Discretization, coeffs: np.ndarray) -> np.ndarray:
    """L2 projection of the broken Laplacian of an element field."""
    from .fembasis import lagrange_1d

    ref = disc.ref
    qx, qy = ref.qpts[:, 0], ref.qpts[:, 1]
    vx, _ = lagrange_1d(ref.nodes1d, qx)
    vy, _ = lagrange_1d(ref.nodes1d, qy)
    ddx = _second_derivs_1d(ref.nodes1d, qx)
    ddy = _second_derivs_1d(ref.nodes1d, qy)
    n = len(qx)
    lap = ((vy[:, :, None] * ddx[:, None, :]).reshape(n, -1) / disc.mesh.hx**2
           + (ddy[:, :, None] * vx[:, None, :]).reshape(n, -1) / disc.mesh.hy**2)
    return disc.load(coeffs @ lap.T) @ disc.Minv


def skeleton_mass(disc: Discretization) -> sp.csr_matrix:
    """Global mass matrix of one skeleton field."""
    ref, mesh = disc.ref, disc.mesh
    lam = ref.face_lam
    fd = disc.skeleton.face_dofs
    nvf = mesh.n_vertical_faces
    lengths = np.where(np.arange(mesh.n_faces) < nvf, mesh.hy, mesh.hx)
    F = (lam * ref.quad.weights[:, None]).T @ lam
    rows = np.repeat(fd, fd.shape[1], axis=1).ravel()
    cols = np.tile(fd, (1, fd.shape[1])).ravel()
    data = (lengths[:, None, None] * F[None]).ravel()
    n = disc.n_skeleton
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def project_skeleton(disc: Discretization, coeffs: np.ndarray) -> np.ndarray:
    """Facet L2 projection of the (averaged) element traces onto the skeleton space."""
    ref, mesh = disc.ref, disc.mesh
    lam = ref.face_lam
    w = ref.quad.weights
    fd = disc.skeleton.face_dofs
    n = disc.n_skeleton
    load = np.zeros(n)
    for lf in range(4):
        length = mesh.hy if lf < 2 else mesh.hx
        faces = mesh.element_faces[:, lf]
        nadj = (mesh.face_elements[faces] >= 0).sum(axis=1)
        tr = coeffs @ ref.face_phi[lf].T  # (ne, nq)
        contrib = ((tr * w) @ lam) * length / nadj[:, None]
        np.add.at(load, fd[faces], contrib)
    return linalg.sparse_lu_solve(skeleton_mass(disc), load) if np.any(load) else load


def project_initial(disc: Discretization, phi0: Field, psi0_rule: PsiRule = LaplacianOfPhi0()) -> State:
    st = disc.zero_state(0.0)
    st.phi = _project(disc, phi0)
    if isinstance(psi0_rule, Analytic):
        st.psi = _project(disc, psi0_rule.psi0)
    elif isinstance(psi0_rule, LaplacianOfPhi0):
        st.psi = elementwise_laplacian(disc, st.phi)
    elif not isinstance(psi0_rule, Zero):
        raise TypeError(f"unknown psi0 rule {psi0_rule!r}")
    st.phibar = project_skeleton(disc, st.phi)
    st.psibar = project_skeleton(disc, st.psi)
    return st


# --------------------------------------------------------------------------
# Newton


def newton_solve(disc: Discretization, prev: State, params: PfcParams,
                 config: NewtonConfig = NewtonConfig(), source: Optional[Source] = None):
    t0 = _time.perf_counter()
    stats = StepStats(clamped_points=disc.clamped_points(prev, params))
    guess = dataclasses.replace(prev.copy(), t=prev.t + params.dt, step=prev.step + 1)
    best, best_res = guess, np.inf
    while True:
        cs = disc.assemble_skeleton_system(guess, prev, params, source)
        res = cs.residual_norm
        stats.residuals.append(res)
        if not np.isfinite(res):
            break
        if res < best_res:
            best, best_res = guess, res
        if res <= config.abs_tol:
            guess.s = disc.reconstruct_s(guess, prev, params)
            stats.wallclock = _time.perf_counter() - t0
            return guess, stats
        if stats.newton_iters >= config.max_iters:
            break
        try:
            dskel = linalg.sparse_lu_solve(cs.matrix, cs.rhs)
        except (linalg.SingularMatrixError, linalg.ResidualContractError) as exc:
            stats.wallclock = _time.perf_counter() - t0
            raise NewtonDivergence(f"linear solve failed: {exc}", best, stats) from exc
        dint = disc.recover_interior(cs, dskel)
        guess = disc.apply_update(guess, dint, dskel)
        stats.newton_iters += 1
        log.debug("newton %d: |R| = %.3e", stats.newton_iters, res)
    stats.wallclock = _time.perf_counter() - t0
    raise NewtonDivergence(
        f"Newton did not converge in {stats.newton_iters} iterations (last |R| = {stats.residuals[-1]:.3e})",
        best, stats)


def energy_record(disc: Discretization, st: State, prev: Optional[State], params: PfcParams,
                  iters: int = 0) -> EnergyRecord:
    E = disc.energy(st, params.eps)
    diss = disc.dissipation(st, prev, params) if prev is not None else 0.0
    return EnergyRecord(st.step, st.t, E, E / disc.mesh.area, disc.mass(st), diss, iters)


@dataclass
class Trajectory:
    state: State
    records: list
    stats: list


Hook = Callable[[State, State, StepStats], None]


def advance(disc: Discretization, state0: State, params: PfcParams, nsteps: int,
            config: NewtonConfig = NewtonConfig(), source: Optional[Source] = None,
            hooks: Sequence[Hook] = (), dts: Optional[Sequence[float]] = None,
            check_energy: bool = False) -> Trajectory:
    """Take ``nsteps`` convex-splitting steps (step sizes ``dts`` if given)."""
    if nsteps < 1:
        raise ValueError("nsteps must be >= 1")
    if dts is not None and len(dts) != nsteps:
        raise ValueError("dts must have nsteps entries")
    st = state0
    records = [energy_record(disc, st, None, params)]
    stats_all = []
    for n in range(nsteps):
        p = params if dts is None or dts[n] == params.dt else params.with_dt(dts[n])
        try:
            new, stats = newton_solve(disc, st, p, config, source)
        except NewtonDivergence as exc:
            exc.step = st.step + 1
            raise
        rec = energy_record(disc, new, st, p, stats.newton_iters)
        stats.record = rec
        if check_energy:
            slack = 10 * config.abs_tol * (1 + abs(records[-1].energy))
            if rec.energy + p.dt * rec.dissipation > records[-1].energy + slack:
                raise AssertionError(f"energy increased at step {rec.step}")
        for h in hooks:
            h(new, st, stats)
        records.append(rec)
        stats_all.append(stats)
        st = new
    return Trajectory(st, records, stats_all)


def step_sizes(dt: float, T: float) -> list[float]:
    """Uniform steps of size dt up to T, the last one truncated to land on T."""
    n = int(np.floor(T / dt + 1e-10))
    steps = [dt] * n
    rest = T - n * dt
    if rest > 1e-10 * max(T, 1.0):
        steps.append(rest)
    return steps


def run_to(disc: Discretization, state0: State, params: PfcParams, T: float, **kw) -> Trajectory:
    dts = step_sizes(params.dt, T)
    return advance(disc, state0, params, len(dts), dts=dts, **kw)


def l2_error(disc: Discretization, st: State, exact: Callable, t: float) -> float:
    """L2 norm of exact(x, y, t) - phi_h with nq+2 Gauss points per direction."""
    ref = build_ref_element(disc.k, disc.ref.nq + 2)
    c = disc.mesh.element_corners()
    xq = c[:, 0:1] + disc.mesh.hx * ref.qpts[None, :, 0]
    yq = c[:, 1:2] + disc.mesh.hy * ref.qpts[None, :, 1]
    diff = exact(xq, yq, t) - st.phi @ ref.phi.T
    return float(np.sqrt(np.sum(diff**2 * ref.wq) * disc.detj))
