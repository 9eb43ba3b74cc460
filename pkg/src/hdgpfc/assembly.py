"""Element forms, static condensation and diagnostics for the HDG/EDG scheme.

Per element the interior unknowns are ordered

    [r_x, r_y, q_x, q_y, p_x, p_y, phi, psi, mu]      (9 * nb values)

followed by the element's skeleton slots for [phibar, psibar, mubar]
(3 * ns values).  Interior rows use the matching test functions: the
r-, q-, p-rows are the three gradient definitions, the phi-row carries the
psi equation (tested with phi~), the psi-row the mu equation and the mu-row
the time-evolution equation.  The skeleton rows are the flux-continuity
equations.  The flux s = M(phi_old) p is the L2 projection of M p and is
eliminated: s = S p with S = Mass^-1 Mass_M per element.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from . import linalg
from .fembasis import (
    build_dofmap,
    build_ref_element,
    element_skeleton_dofs,
    element_skeleton_layout,
    skeleton_kind,
)
from .mesh import LOCAL_NORMALS, CartesianMesh

RX, RY, QX, QY, PX, PY, PHI, PSI, MU = range(9)
PHIBAR, PSIBAR, MUBAR = range(3)

Source = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


# --------------------------------------------------------------------------
# model functions


def f_eval(phi, eps):
    return phi**3 + (1.0 - eps) * phi


def f_prime(phi, eps):
    return 3.0 * phi**2 + (1.0 - eps)


@dataclass(frozen=True)
class ConstantMobility:
    m: float = 1.0

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("mobility must be non-negative")


@dataclass(frozen=True)
class DegenerateMobility:
    """M(phi) = 1 - phi^2, clamped at zero."""


Mobility = Union[ConstantMobility, DegenerateMobility]


def mobility_eval(model: Mobility, phi):
    if isinstance(model, ConstantMobility):
        return np.full_like(np.asarray(phi, dtype=float), model.m)
    return np.maximum(1.0 - np.asarray(phi, dtype=float) ** 2, 0.0)


class TauRuleError(ValueError):
    pass


@dataclass(frozen=True)
class PfcParams:
    eps: float = 0.5
    tau1: float = 10.0
    tau2: float = 10.0
    tau3: float = 10.0
    tau4: float = 20.0
    dt: float = 0.01
    mobility: Mobility = ConstantMobility(1.0)
    coupling: str = "edg"
    k: int = 1
    allow_unstable_taus: bool = False

    def __post_init__(self):
        if not self.eps < 1:
            raise ValueError(f"eps must be < 1, got {self.eps}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        skeleton_kind(self.coupling)
        if not self.allow_unstable_taus:
            problems = []
            if not self.tau1 > 0:
                problems.append("tau1 must be > 0")
            if not self.tau3 > 0:
                problems.append("tau3 must be > 0")
            if self.tau2 != self.tau1:
                problems.append("tau2 must equal tau1")
            if self.tau4 != 2 * self.tau1:
                problems.append("tau4 must equal 2*tau1")
            if problems:
                raise TauRuleError("; ".join(problems) + " (set allow_unstable_taus to override)")

    def with_dt(self, dt: float) -> "PfcParams":
        return dataclasses.replace(self, dt=dt)


@dataclass
class State:
    phi: np.ndarray  # (ne, nb)
    psi: np.ndarray
    mu: np.ndarray
    r: np.ndarray  # (ne, 2, nb)
    q: np.ndarray
    p: np.ndarray
    s: np.ndarray
    phibar: np.ndarray  # (n_skeleton,)
    psibar: np.ndarray
    mubar: np.ndarray
    t: float = 0.0
    step: int = 0

    def copy(self) -> "State":
        return dataclasses.replace(self, **{f.name: getattr(self, f.name).copy()
                                            for f in dataclasses.fields(self)
                                            if isinstance(getattr(self, f.name), np.ndarray)})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, n)))
                   for n in ("phi", "psi", "mu", "r", "q", "p", "s", "phibar", "psibar", "mubar"))


@dataclass
class CondensedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    # per element: A_ii^-1 A_is and A_ii^-1 R_i, used for recovery
    coupling: np.ndarray = field(repr=False)
    interior_rhs: np.ndarray = field(repr=False)
    residual_norm: float = 0.0


class SingularInteriorBlock(np.linalg.LinAlgError):
    def __init__(self, element: int):
        super().__init__(f"interior block of element {element} is singular")
        self.element = element


@dataclass
class EnergyRecord:
    step: int
    time: float
    energy: float
    scaled_energy: float
    mass: float
    dissipation: float
    newton_iters: int


# --------------------------------------------------------------------------


class Discretization:
    """Mesh, reference element and skeleton space for one coupling mode."""

    def __init__(self, mesh: CartesianMesh, k: int = 1, coupling: str = "edg", nq: int | None = None,
                 chunk: int = 2048):
        self.mesh = mesh
        self.k = k
        self.coupling = coupling.lower()
        self.ref = build_ref_element(k, nq)
        self.chunk = chunk
        self.skeleton = build_dofmap(mesh, k, skeleton_kind(coupling))
        self.ns, self.slot_of = element_skeleton_layout(k, coupling)
        self.skel_dofs = element_skeleton_dofs(mesh, self.skeleton)
        self.nb = self.ref.nb
        self.ni = 9 * self.nb
        self.nl = self.ni + 3 * self.ns
        nsk = self.skeleton.size
        self.global_skel = np.concatenate([self.skel_dofs + fld * nsk for fld in range(3)], axis=1)
        self._build_local_matrices()
        self._pattern = None
        self._ops = {}
        self._lowrank = {}
        # Woodbury update around a reference interior block instead of a
        # dense solve per element
        self.fast = True

    @property
    def n_skeleton(self) -> int:
        return self.skeleton.size

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    @property
    def detj(self) -> float:
        return self.mesh.hx * self.mesh.hy

    # ------------------------------------------------------------------
    def _build_local_matrices(self):
        ref, hx, hy = self.ref, self.mesh.hx, self.mesh.hy
        w = ref.wq * hx * hy
        phi = ref.phi
        gx = ref.dphi[0] / hx
        gy = ref.dphi[1] / hy
        self.M = (phi * w[:, None]).T @ phi
        self.Minv = np.linalg.inv(self.M)
        # D[i, j] = int d(phi_i) phi_j
        self.Dx = (gx * w[:, None]).T @ phi
        self.Dy = (gy * w[:, None]).T @ phi
        nb, ns, k = self.nb, self.ns, self.k
        self.Tvv = np.zeros((nb, nb))
        self.Tvs = np.zeros((nb, ns))
        self.Tss = np.zeros((ns, ns))
        self.Nx = np.zeros((nb, ns))
        self.Ny = np.zeros((nb, ns))
        lam = ref.face_lam
        for f in range(4):
            length = hy if f < 2 else hx
            wf = ref.quad.weights * length
            fp = ref.face_phi[f]
            Eff = (fp * wf[:, None]).T @ fp
            Efm = (fp * wf[:, None]).T @ lam
            Fmm = (lam * wf[:, None]).T @ lam
            C = np.zeros((nb, ns))
            Css = np.zeros((ns, ns))
            sl = self.slot_of[f]
            np.add.at(C.T, sl, Efm.T)
            for a in range(k + 1):
                for b in range(k + 1):
                    Css[sl[a], sl[b]] += Fmm[a, b]
            self.Tvv += Eff
            self.Tvs += C
            self.Tss += Css
            self.Nx += LOCAL_NORMALS[f, 0] * C
            self.Ny += LOCAL_NORMALS[f, 1] * C

    def _blk(self, b: int) -> slice:
        return slice(b * self.nb, (b + 1) * self.nb)

    def _sblk(self, b: int) -> slice:
        return slice(self.ni + b * self.ns, self.ni + (b + 1) * self.ns)

    def linear_operator(self, params: PfcParams) -> np.ndarray:
        """State-independent part of the element Jacobian (shared by all elements)."""
        key = (params.tau1, params.tau2, params.tau3, params.tau4, params.dt, params.mobility)
        if key in self._ops:
            return self._ops[key]
        K = np.zeros((self.nl, self.nl))
        b, s = self._blk, self._sblk
        M, Dx, Dy, Nx, Ny = self.M, self.Dx, self.Dy, self.Nx, self.Ny
        Tvv, Tvs, Tss = self.Tvv, self.Tvs, self.Tss
        t1, t2, t3, t4 = params.tau1, params.tau2, params.tau3, params.tau4
        # r = -grad phi
        K[b(RX), b(RX)] = M
        K[b(RX), b(PHI)] = -Dx
        K[b(RX), s(PHIBAR)] = Nx
        K[b(RY), b(RY)] = M
        K[b(RY), b(PHI)] = -Dy
        K[b(RY), s(PHIBAR)] = Ny
        # psi = -div r with flux r.n + tau1 (phi - phibar)
        K[b(PHI), b(PSI)] = M
        K[b(PHI), b(RX)] = Dx.T
        K[b(PHI), b(RY)] = Dy.T
        K[b(PHI), b(PHI)] = t1 * Tvv
        K[b(PHI), s(PHIBAR)] = -t1 * Tvs
        # q = -grad psi
        K[b(QX), b(QX)] = M
        K[b(QX), b(PSI)] = -Dx
        K[b(QX), s(PSIBAR)] = Nx
        K[b(QY), b(QY)] = M
        K[b(QY), b(PSI)] = -Dy
        K[b(QY), s(PSIBAR)] = Ny
        # mu = f(phi) + 2 psi_old - div q (f term added per element)
        K[b(PSI), b(MU)] = M
        K[b(PSI), b(QX)] = Dx.T
        K[b(PSI), b(QY)] = Dy.T
        K[b(PSI), b(PSI)] = t2 * Tvv
        K[b(PSI), s(PSIBAR)] = -t2 * Tvs
        K[b(PSI), b(PHI)] = -t4 * Tvv
        K[b(PSI), s(PHIBAR)] = t4 * Tvs
        # p = -grad mu
        K[b(PX), b(PX)] = M
        K[b(PX), b(MU)] = -Dx
        K[b(PX), s(MUBAR)] = Nx
        K[b(PY), b(PY)] = M
        K[b(PY), b(MU)] = -Dy
        K[b(PY), s(MUBAR)] = Ny
        # (phi - phi_old)/dt = -div s
        K[b(MU), b(PHI)] = M / params.dt
        K[b(MU), b(MU)] = t3 * Tvv
        K[b(MU), s(MUBAR)] = -t3 * Tvs
        # flux continuity
        K[s(PHIBAR), b(RX)] = Nx.T
        K[s(PHIBAR), b(RY)] = Ny.T
        K[s(PHIBAR), b(PHI)] = t1 * Tvs.T
        K[s(PHIBAR), s(PHIBAR)] = -t1 * Tss
        K[s(PSIBAR), b(QX)] = Nx.T
        K[s(PSIBAR), b(QY)] = Ny.T
        K[s(PSIBAR), b(PSI)] = t2 * Tvs.T
        K[s(PSIBAR), s(PSIBAR)] = -t2 * Tss
        K[s(PSIBAR), b(PHI)] = -t4 * Tvs.T
        K[s(PSIBAR), s(PHIBAR)] = t4 * Tss
        K[s(MUBAR), b(MU)] = t3 * Tvs.T
        K[s(MUBAR), s(MUBAR)] = -t3 * Tss
        if isinstance(params.mobility, ConstantMobility):
            m = params.mobility.m
            K[b(MU), b(PX)] = m * Dx.T
            K[b(MU), b(PY)] = m * Dy.T
            K[s(MUBAR), b(PX)] = m * Nx.T
            K[s(MUBAR), b(PY)] = m * Ny.T
        K.setflags(write=False)
        self._ops[key] = K
        return K

    # ------------------------------------------------------------------
    # element data at quadrature points

    def quad_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical volume quadrature points of every element, (ne, nqv) each."""
        c = self.mesh.element_corners()
        qp = self.ref.qpts
        return (c[:, 0:1] + self.mesh.hx * qp[None, :, 0],
                c[:, 1:2] + self.mesh.hy * qp[None, :, 1])

    def at_quad(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs @ self.ref.phi.T

    def weighted_mass(self, values_q: np.ndarray) -> np.ndarray:
        """int c phi_i phi_j for per-element quadrature values c, (ne, nb, nb)."""
        w = self.ref.wq * self.detj
        return np.einsum("eq,qi,qj->eij", values_q * w, self.ref.phi, self.ref.phi, optimize=True)

    def load(self, values_q: np.ndarray) -> np.ndarray:
        """int c phi_i, shape (ne, nb)."""
        return (values_q * (self.ref.wq * self.detj)) @ self.ref.phi

    def mobility_projector(self, prev: State, params: PfcParams) -> Optional[np.ndarray]:
        """S = Mass^-1 Mass_M(phi_old) per element; None for constant mobility."""
        if isinstance(params.mobility, ConstantMobility):
            return None
        mq = mobility_eval(params.mobility, self.at_quad(prev.phi))
        return self.Minv[None] @ self.weighted_mass(mq)

    def clamped_points(self, prev: State, params: PfcParams) -> int:
        if isinstance(params.mobility, ConstantMobility):
            return 0
        return int(np.count_nonzero(1.0 - self.at_quad(prev.phi) ** 2 < 0.0))

    # ------------------------------------------------------------------
    # packing

    def gather(self, st: State) -> np.ndarray:
        """Element-local unknown vectors, shape (ne, nl)."""
        sk = np.concatenate([st.phibar, st.psibar, st.mubar])
        return np.concatenate([st.r[:, 0], st.r[:, 1], st.q[:, 0], st.q[:, 1], st.p[:, 0], st.p[:, 1],
                               st.phi, st.psi, st.mu, sk[self.global_skel]], axis=1)

    def unpack_interior(self, xi: np.ndarray):
        nb = self.nb
        blocks = [xi[:, i * nb:(i + 1) * nb] for i in range(9)]
        r = np.stack(blocks[0:2], axis=1)
        q = np.stack(blocks[2:4], axis=1)
        p = np.stack(blocks[4:6], axis=1)
        return r, q, p, blocks[6], blocks[7], blocks[8]

    def split_skeleton(self, v: np.ndarray):
        n = self.n_skeleton
        return v[:n], v[n:2 * n], v[2 * n:]

    def zero_state(self, t: float = 0.0) -> State:
        ne, nb, n = self.n_elements, self.nb, self.n_skeleton
        z = lambda *s: np.zeros(s)  # noqa: E731
        return State(z(ne, nb), z(ne, nb), z(ne, nb), z(ne, 2, nb), z(ne, 2, nb), z(ne, 2, nb),
                     z(ne, 2, nb), z(n), z(n), z(n), t=t)

    def reconstruct_s(self, st: State, prev: State, params: PfcParams) -> np.ndarray:
        S = self.mobility_projector(prev, params)
        if S is None:
            return params.mobility.m * st.p
        return np.einsum("eij,ecj->eci", S, st.p)

    # ------------------------------------------------------------------
    # residual and Jacobian

    def element_residuals(self, guess: State, prev: State, params: PfcParams,
                          source: Optional[Source] = None, S: Optional[np.ndarray] = None) -> np.ndarray:
        """Residual of every element's equations, skeleton rows unassembled."""
        K = self.linear_operator(params)
        X = self.gather(guess)
        R = X @ K.T
        b = self._blk
        phq = self.at_quad(guess.phi)
        R[:, b(PSI)] -= self.load(f_eval(phq, params.eps)) + 2.0 * (prev.psi @ self.M)
        R[:, b(MU)] -= (prev.phi @ self.M) / params.dt
        if source is not None:
            xq, yq = self.quad_points()
            R[:, b(MU)] -= self.load(source(xq, yq, guess.t))
        if not isinstance(params.mobility, ConstantMobility):
            if S is None:
                S = self.mobility_projector(prev, params)
            sx = np.einsum("eij,ej->ei", S, guess.p[:, 0])
            sy = np.einsum("eij,ej->ei", S, guess.p[:, 1])
            R[:, b(MU)] += sx @ self.Dx + sy @ self.Dy
            R[:, self._sblk(MUBAR)] += sx @ self.Nx + sy @ self.Ny
        return R

    def assemble_skeleton_rows(self, R: np.ndarray) -> np.ndarray:
        return np.bincount(self.global_skel.ravel(), weights=R[:, self.ni:].ravel(),
                           minlength=3 * self.n_skeleton)

    def residual_vector(self, guess: State, prev: State, params: PfcParams,
                        source: Optional[Source] = None) -> np.ndarray:
        """Full discrete residual: all interior equations then skeleton equations."""
        R = self.element_residuals(guess, prev, params, source)
        return np.concatenate([R[:, :self.ni].ravel(), self.assemble_skeleton_rows(R)])

    def element_jacobians(self, guess: State, params: PfcParams, elems: np.ndarray,
                          S: Optional[np.ndarray] = None) -> np.ndarray:
        K = self.linear_operator(params)
        J = np.repeat(K[None], len(elems), axis=0)
        b = self._blk
        phq = self.at_quad(guess.phi[elems])
        w = self.ref.wq * self.detj
        Mf = np.einsum("eq,qi,qj->eij", f_prime(phq, params.eps) * w, self.ref.phi, self.ref.phi,
                       optimize=True)
        J[:, b(PSI), b(PHI)] -= Mf
        if S is not None:
            Se = S[elems]
            J[:, b(MU), b(PX)] = np.einsum("ji,ejk->eik", self.Dx, Se)
            J[:, b(MU), b(PY)] = np.einsum("ji,ejk->eik", self.Dy, Se)
            J[:, self._sblk(MUBAR), b(PX)] = np.einsum("ji,ejk->eik", self.Nx, Se)
            J[:, self._sblk(MUBAR), b(PY)] = np.einsum("ji,ejk->eik", self.Ny, Se)
        return J

    # ------------------------------------------------------------------
    # static condensation

    def _sparsity(self):
        if self._pattern is None:
            G = self.global_skel
            n = 3 * self.n_skeleton
            rows = np.repeat(G, G.shape[1], axis=1).ravel()
            cols = np.tile(G, (1, G.shape[1])).ravel()
            keys, inv = np.unique(rows * n + cols, return_inverse=True)
            r, c = np.divmod(keys, n)
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.add.at(indptr, r + 1, 1)
            self._pattern = (np.cumsum(indptr), c, inv)
        return self._pattern

    def _low_rank(self, params: PfcParams):
        """Reference interior inverse for the Woodbury update, or None if ill-conditioned.

        Element interior blocks differ from a fixed reference only in the f'
        mass block (psi-rows, phi-columns) and, for degenerate mobility, in
        the projected-mobility blocks (mu-rows, p-columns).
        """
        key = (params.tau1, params.tau2, params.tau3, params.tau4, params.dt, params.mobility, params.eps)
        if key in self._lowrank:
            return self._lowrank[key]
        ni, b = self.ni, self._blk
        Kref = self.linear_operator(params).copy()
        fref = 1.0 - params.eps
        Kref[b(PSI), b(PHI)] -= fref * self.M
        degenerate = not isinstance(params.mobility, ConstantMobility)
        rows = [b(PSI)]
        cols = [b(PHI)]
        if degenerate:
            Kref[b(MU), b(PX)] = self.Dx.T
            Kref[b(MU), b(PY)] = self.Dy.T
            rows.append(b(MU))
            cols += [b(PX), b(PY)]
        rows = np.concatenate([np.arange(ni)[r] for r in rows])
        cols = np.concatenate([np.arange(ni)[c] for c in cols])
        A0 = Kref[:ni, :ni]
        lr = None
        if np.linalg.cond(A0) < 1e10:
            A0inv = np.linalg.inv(A0)
            W = A0inv[:, rows]
            lr = dict(A0inv=A0inv, W=W, G=W[cols], X0=A0inv @ Kref[:ni, ni:], rows=rows, cols=cols,
                      fref=fref, degenerate=degenerate, Ass=Kref[ni:, ni:], Asi=Kref[ni:, :ni])
        self._lowrank[key] = lr
        return lr

    def _condense_low_rank(self, lr, guess: State, params: PfcParams, el: np.ndarray, R: np.ndarray,
                           S: Optional[np.ndarray]):
        ni, nb = self.ni, self.nb
        w = self.ref.wq * self.detj
        phq = self.at_quad(guess.phi[el])
        Mf = np.einsum("eq,qi,qj->eij", (f_prime(phq, params.eps) - lr["fref"]) * w, self.ref.phi,
                       self.ref.phi, optimize=True)
        ne = len(el)
        if lr["degenerate"]:
            dS = S[el] - np.eye(nb)[None]
            B = np.zeros((ne, 2 * nb, 3 * nb))
            B[:, nb:, nb:2 * nb] = np.einsum("ji,ejk->eik", self.Dx, dS)
            B[:, nb:, 2 * nb:] = np.einsum("ji,ejk->eik", self.Dy, dS)
            B[:, :nb, :nb] = -Mf
        else:
            B = -Mf
        Yr = R[:, :ni] @ lr["A0inv"].T
        cols = lr["cols"]
        Zc = np.concatenate([np.broadcast_to(lr["X0"][cols], (ne,) + lr["X0"][cols].shape),
                             Yr[:, cols, None]], axis=2)
        cap = np.eye(B.shape[1])[None] + B @ lr["G"]
        try:
            T = np.linalg.solve(cap, B @ Zc)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(T)):
            return None
        WT = lr["W"] @ T
        X = lr["X0"][None] - WT[:, :, :-1]
        y = Yr - WT[:, :, -1]
        if lr["degenerate"]:
            Asi = np.repeat(lr["Asi"][None], ne, axis=0)
            sm = self._sblk(MUBAR)
            sm = slice(sm.start - ni, sm.stop - ni)
            Asi[:, sm, self._blk(PX)] = np.einsum("ji,ejk->eik", self.Nx, S[el])
            Asi[:, sm, self._blk(PY)] = np.einsum("ji,ejk->eik", self.Ny, S[el])
            schur = lr["Ass"][None] - Asi @ X
            corr = np.einsum("eij,ej->ei", Asi, y)
        else:
            Asi = lr["Asi"]
            schur = lr["Ass"][None] - np.einsum("ij,ejk->eik", Asi, X)
            corr = y @ Asi.T
        return schur, X, y, corr

    def assemble_skeleton_system(self, guess: State, prev: State, params: PfcParams,
                                 source: Optional[Source] = None) -> CondensedSystem:
        """Condensed Newton system on the skeleton unknowns."""
        S = self.mobility_projector(prev, params)
        R = self.element_residuals(guess, prev, params, source, S=S)
        Rs = self.assemble_skeleton_rows(R)
        ni, ne = self.ni, self.n_elements
        nsl = 3 * self.ns
        schur = np.empty((ne, nsl, nsl))
        Xc = np.empty((ne, ni, nsl))
        yc = np.empty((ne, ni))
        corr = np.empty((ne, nsl))
        lr = self._low_rank(params) if self.fast else None
        for start in range(0, ne, self.chunk):
            el = np.arange(start, min(start + self.chunk, ne))
            out = None
            if lr is not None:
                out = self._condense_low_rank(lr, guess, params, el, R[el], S)
            if out is None:
                J = self.element_jacobians(guess, params, el, S)
                sch, X, y = condense_batch(J, R[el], ni, first_element=start)
                out = sch, X, y, np.einsum("eij,ej->ei", J[:, ni:, :ni], y)
            schur[el], Xc[el], yc[el], corr[el] = out
        rhs = -Rs + np.bincount(self.global_skel.ravel(), weights=corr.ravel(), minlength=3 * self.n_skeleton)
        indptr, indices, inv = self._sparsity()
        data = np.bincount(inv, weights=schur.ravel(), minlength=len(indices))
        n = 3 * self.n_skeleton
        A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
        rnorm = float(np.sqrt(np.sum(R[:, :ni] ** 2) + np.sum(Rs ** 2)))
        return CondensedSystem(A, rhs, Xc, yc, rnorm)

    def recover_interior(self, cs: CondensedSystem, dskel: np.ndarray) -> np.ndarray:
        """Interior Newton update of every element from the skeleton update."""
        local = dskel[self.global_skel]
        return -cs.interior_rhs - np.einsum("eij,ej->ei", cs.coupling, local)

    def apply_update(self, st: State, dint: np.ndarray, dskel: np.ndarray) -> State:
        r, q, p, phi, psi, mu = self.unpack_interior(dint)
        pb, sb, mb = self.split_skeleton(dskel)
        return dataclasses.replace(st, r=st.r + r, q=st.q + q, p=st.p + p, phi=st.phi + phi,
                                   psi=st.psi + psi, mu=st.mu + mu, phibar=st.phibar + pb,
                                   psibar=st.psibar + sb, mubar=st.mubar + mb)

    # ------------------------------------------------------------------
    # diagnostics

    def energy(self, st: State, eps: float) -> float:
        ph = self.at_quad(st.phi)
        ps = self.at_quad(st.psi)
        rx = self.at_quad(st.r[:, 0])
        ry = self.at_quad(st.r[:, 1])
        dens = 0.25 * ph**4 + 0.5 * (1.0 - eps) * ph**2 - (rx**2 + ry**2) + 0.5 * ps**2
        return float(np.sum(dens * (self.ref.wq * self.detj)))

    def mass(self, st: State) -> float:
        return float(np.sum(self.at_quad(st.phi) * (self.ref.wq * self.detj)))

    def dissipation(self, st: State, prev: State, params: PfcParams) -> float:
        mq = mobility_eval(params.mobility, self.at_quad(prev.phi))
        px = self.at_quad(st.p[:, 0])
        py = self.at_quad(st.p[:, 1])
        return float(np.sum(mq * (px**2 + py**2) * (self.ref.wq * self.detj)))


def condense_batch(J: np.ndarray, R: np.ndarray, ni: int, first_element: int = 0):
    """Schur complements of a batch of element systems ``J dx = -R``.

    Returns (S, X, y) with S = A_ss - A_si A_ii^-1 A_is, X = A_ii^-1 A_is and
    y = A_ii^-1 R_i.
    """
    Aii, Ais = J[:, :ni, :ni], J[:, :ni, ni:]
    Asi, Ass = J[:, ni:, :ni], J[:, ni:, ni:]
    rhs = np.concatenate([Ais, R[:, :ni, None]], axis=2)
    try:
        sol = np.linalg.solve(Aii, rhs)
    except np.linalg.LinAlgError:
        for e in range(len(J)):
            try:
                linalg.dense_lu(Aii[e])
            except linalg.SingularMatrixError:
                raise SingularInteriorBlock(first_element + e) from None
        raise
    if not np.all(np.isfinite(sol)):
        bad = int(np.argmax(~np.all(np.isfinite(sol), axis=(1, 2))))
        raise SingularInteriorBlock(first_element + bad)
    X, y = sol[:, :, :-1], sol[:, :, -1]
    return Ass - Asi @ X, X, y


# --------------------------------------------------------------------------
# single-element entry points


def local_residual(disc: Discretization, e: int, guess: State, prev: State, params: PfcParams,
                   source: Optional[Source] = None) -> np.ndarray:
    """Residual of element ``e`` over its interior and incident skeleton DoFs."""
    return disc.element_residuals(guess, prev, params, source)[e]


def local_jacobian(disc: Discretization, e: int, guess: State, prev: State, params: PfcParams) -> np.ndarray:
    S = disc.mobility_projector(prev, params)
    return disc.element_jacobians(guess, params, np.array([e]), S)[0]


def condense(jac: np.ndarray, res: np.ndarray, ni: int):
    """Schur block, reduced right-hand side and stored interior solves of one element."""
    S, X, y = condense_batch(jac[None], res[None], ni)
    reduced = -res[ni:] + jac[ni:, :ni] @ y[0]
    return S[0], reduced, (X[0], y[0])


def recover_interior(dskel_local: np.ndarray, stored) -> np.ndarray:
    X, y = stored
    return -y - X @ dskel_local


def compute_energy(disc: Discretization, st: State, eps: float) -> tuple[float, float]:
    E = disc.energy(st, eps)
    return E, E / disc.mesh.area


def compute_mass(disc: Discretization, st: State) -> float:
    return disc.mass(st)


def dissipation(disc: Discretization, st: State, prev: State, params: PfcParams) -> float:
    return disc.dissipation(st, prev, params)
