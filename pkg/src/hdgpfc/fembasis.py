"""Reference-square machinery and degree-of-freedom maps.

The reference element is the unit square with a tensor-product Lagrange
basis on equispaced nodes.  Local node ``(a, b)`` (x-index ``a``, y-index
``b``) has local number ``a + (k + 1) * b``.  Facet nodes run along the
facet in the direction of increasing coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .mesh import BOTTOM, LEFT, RIGHT, TOP, CartesianMesh


@dataclass(frozen=True)
class QuadRule1D:
    points: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.points)


def gauss_legendre(n: int) -> QuadRule1D:
    """n-point Gauss-Legendre rule mapped to [0, 1] (exact to degree 2n-1)."""
    if not 1 <= n <= 32:
        raise ValueError(f"number of Gauss points must be in [1, 32], got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadRule1D(0.5 * (x + 1.0), 0.5 * w)


def lagrange_1d(nodes: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the Lagrange polynomials on ``nodes`` at ``x``.

    Returns arrays of shape (len(x), len(nodes)).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = len(nodes)
    val = np.ones((len(x), m))
    der = np.zeros((len(x), m))
    for i in range(m):
        others = [j for j in range(m) if j != i]
        denom = np.prod([nodes[i] - nodes[j] for j in others])
        for j in others:
            val[:, i] *= x - nodes[j]
        for l in others:
            term = np.ones_like(x)
            for j in others:
                if j != l:
                    term *= x - nodes[j]
            der[:, i] += term
        val[:, i] /= denom
        der[:, i] /= denom
    return val, der


# facet parametrisation of the unit square: facet -> (fixed axis, fixed value)
_FACETS = {LEFT: (0, 0.0), RIGHT: (0, 1.0), BOTTOM: (1, 0.0), TOP: (1, 1.0)}


@dataclass(frozen=True)
class RefElement:
    """Tabulated tensor-product nodal basis of degree ``k`` on [0, 1]^2.

    Volume quantities live at the ``nq**2`` tensor Gauss points (x index
    fastest).  ``face_phi[f]`` holds the volume basis restricted to facet
    ``f`` at the ``nq`` facet Gauss points and ``face_lam`` the 1D facet
    basis at the same points.
    """

    k: int
    nq: int
    nodes1d: np.ndarray = field(repr=False)
    quad: QuadRule1D = field(repr=False)
    phi: np.ndarray = field(repr=False)  # (nqv, nb)
    dphi: np.ndarray = field(repr=False)  # (2, nqv, nb) reference gradients
    wq: np.ndarray = field(repr=False)  # (nqv,) weights on the unit square
    qpts: np.ndarray = field(repr=False)  # (nqv, 2)
    face_phi: np.ndarray = field(repr=False)  # (4, nq, nb)
    face_lam: np.ndarray = field(repr=False)  # (nq, k+1)

    @property
    def nb(self) -> int:
        return (self.k + 1) ** 2

    @property
    def nodes(self) -> np.ndarray:
        """Reference node coordinates, shape (nb, 2)."""
        a, b = np.meshgrid(self.nodes1d, self.nodes1d)
        return np.stack([a.ravel(), b.ravel()], axis=1)

    def eval(self, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Basis values at arbitrary reference points, shape (npts, nb)."""
        return _tensor_eval(self.nodes1d, xi, eta)

    def eval_grad(self, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        return _tensor_grad(self.nodes1d, xi, eta)


def _tensor_eval(nodes1d, xi, eta):
    vx, _ = lagrange_1d(nodes1d, xi)
    vy, _ = lagrange_1d(nodes1d, eta)
    return (vy[:, :, None] * vx[:, None, :]).reshape(len(vx), -1)


def _tensor_grad(nodes1d, xi, eta):
    vx, dx = lagrange_1d(nodes1d, xi)
    vy, dy = lagrange_1d(nodes1d, eta)
    gx = (vy[:, :, None] * dx[:, None, :]).reshape(len(vx), -1)
    gy = (dy[:, :, None] * vx[:, None, :]).reshape(len(vx), -1)
    return np.stack([gx, gy])


def build_ref_element(k: int, nq: int | None = None) -> RefElement:
    if k < 1 or k > 4:
        raise ValueError(f"polynomial degree must be in [1, 4], got {k}")
    if nq is None:
        # 2k+1 points integrate phi^4 exactly
        nq = 2 * k + 1
    if nq < k + 1:
        raise ValueError(f"need at least k+1={k + 1} quadrature points, got {nq}")
    nodes1d = np.linspace(0.0, 1.0, k + 1)
    quad = gauss_legendre(nq)
    qx, qy = np.meshgrid(quad.points, quad.points)
    qpts = np.stack([qx.ravel(), qy.ravel()], axis=1)
    wq = np.outer(quad.weights, quad.weights).ravel()

    phi = _tensor_eval(nodes1d, qpts[:, 0], qpts[:, 1])
    dphi = _tensor_grad(nodes1d, qpts[:, 0], qpts[:, 1])
    face_phi = np.empty((4, nq, (k + 1) ** 2))
    for f, (axis, val) in _FACETS.items():
        fixed = np.full(nq, val)
        if axis == 0:
            face_phi[f] = _tensor_eval(nodes1d, fixed, quad.points)
        else:
            face_phi[f] = _tensor_eval(nodes1d, quad.points, fixed)
    face_lam, _ = lagrange_1d(nodes1d, quad.points)
    return RefElement(k, nq, nodes1d, quad, phi, dphi, wq, qpts, face_phi, face_lam)


# --------------------------------------------------------------------------
# DoF maps


class SpaceKind(Enum):
    ELEMENT_SCALAR = "W_h"
    ELEMENT_VECTOR = "V_h"
    SKELETON_EDG = "M_h"
    SKELETON_HDG = "M_h*"


@dataclass(frozen=True)
class DofMap:
    """Global numbering for one discrete space.

    For element spaces ``cell_dofs`` has shape (n_elements, ncomp * nb).
    For skeleton spaces ``face_dofs`` has shape (n_faces, k + 1), one global
    index per facet node; EDG facets share their endpoint (vertex) DoFs.
    """

    kind: SpaceKind
    k: int
    size: int
    cell_dofs: np.ndarray | None = field(default=None, repr=False)
    face_dofs: np.ndarray | None = field(default=None, repr=False)

    def lookup(self, entity: int, local: int) -> int:
        table = self.cell_dofs if self.cell_dofs is not None else self.face_dofs
        return int(table[entity, local])


def build_dofmap(mesh: CartesianMesh, k: int, kind: SpaceKind) -> DofMap:
    if k < 1:
        raise ValueError("polynomial degree must be >= 1")
    nb = (k + 1) ** 2
    ne = mesh.n_elements
    if kind is SpaceKind.ELEMENT_SCALAR:
        return DofMap(kind, k, ne * nb, cell_dofs=np.arange(ne * nb).reshape(ne, nb))
    if kind is SpaceKind.ELEMENT_VECTOR:
        return DofMap(kind, k, 2 * ne * nb, cell_dofs=np.arange(2 * ne * nb).reshape(ne, 2 * nb))
    nf = mesh.n_faces
    if kind is SpaceKind.SKELETON_HDG:
        return DofMap(kind, k, nf * (k + 1), face_dofs=np.arange(nf * (k + 1)).reshape(nf, k + 1))
    if kind is SpaceKind.SKELETON_EDG:
        nv = mesh.n_vertices
        fd = np.empty((nf, k + 1), dtype=np.int64)
        fd[:, 0] = mesh.face_vertices[:, 0]
        fd[:, k] = mesh.face_vertices[:, 1]
        if k > 1:
            fd[:, 1:k] = nv + np.arange(nf * (k - 1)).reshape(nf, k - 1)
        return DofMap(kind, k, nv + (k - 1) * nf, face_dofs=fd)
    raise ValueError(f"unknown space kind {kind!r}")


def skeleton_kind(coupling: str) -> SpaceKind:
    c = coupling.lower()
    if c == "edg":
        return SpaceKind.SKELETON_EDG
    if c == "hdg":
        return SpaceKind.SKELETON_HDG
    raise ValueError(f"coupling must be 'edg' or 'hdg', got {coupling!r}")


def element_skeleton_layout(k: int, coupling: str) -> tuple[int, np.ndarray]:
    """Element-local skeleton slots.

    Returns ``(nslots, slot_of)`` where ``slot_of[f, a]`` is the slot of node
    ``a`` on local facet ``f``.  HDG gives every facet node its own slot; EDG
    merges the corner nodes shared by two facets of the element.
    """
    slot = np.empty((4, k + 1), dtype=np.int64)
    if skeleton_kind(coupling) is SpaceKind.SKELETON_HDG:
        slot[:] = np.arange(4 * (k + 1)).reshape(4, k + 1)
        return 4 * (k + 1), slot
    # corners: 0 lower-left, 1 lower-right, 2 upper-left, 3 upper-right
    ends = {LEFT: (0, 2), RIGHT: (1, 3), BOTTOM: (0, 1), TOP: (2, 3)}
    for f, (c0, c1) in ends.items():
        slot[f, 0], slot[f, k] = c0, c1
        slot[f, 1:k] = 4 + f * (k - 1) + np.arange(k - 1)
    return 4 * k, slot


def element_skeleton_dofs(mesh: CartesianMesh, dm: DofMap) -> np.ndarray:
    """Global skeleton index of every element slot, shape (n_elements, nslots)."""
    coupling = "edg" if dm.kind is SpaceKind.SKELETON_EDG else "hdg"
    nslots, slot = element_skeleton_layout(dm.k, coupling)
    out = np.empty((mesh.n_elements, nslots), dtype=np.int64)
    for f in range(4):
        out[:, slot[f]] = dm.face_dofs[mesh.element_faces[:, f]]
    return out


# --------------------------------------------------------------------------
# closed-form DoF counts on triangulated meshes


def _tri_counts(nx: int, ny: int, periodic: bool) -> tuple[int, int, int]:
    """Vertex, edge and triangle counts after splitting each quad in two."""
    ntri = 2 * nx * ny
    if periodic:
        nv = nx * ny
        ne = 3 * ntri // 2
    else:
        nv = (nx + 1) * (ny + 1)
        ne = nv + ntri - 1
    return nv, ne, ntri


def count_dofs_table3(method: str, nx: int, ny: int, k: int = 1, periodic: bool = False) -> int:
    """Globally coupled DoFs of C0-IPDG, LDG, HDG and EDG on triangles.

    The LDG count is 4 scalar fields times dim P_k per triangle, which is
    what the published comparison tabulates (its vector unknowns are not
    counted).
    """
    m = method.upper()
    nv, ne, ntri = _tri_counts(nx, ny, periodic)
    if m in ("C0IPDG", "C0-IPDG"):
        if k != 1:
            raise ValueError("C0IPDG counts are only defined for k=1 (P1/P2 pair)")
        return nv + (nv + ne)
    if m == "LDG":
        return 4 * ((k + 1) * (k + 2) // 2) * ntri
    if m == "HDG":
        return 3 * (k + 1) * ne
    if m == "EDG":
        return 3 * (nv + (k - 1) * ne)
    raise ValueError(f"unknown method {method!r}")


# (label, nx, ny, periodic) of the published comparison rows
TABLE3_ROWS = [
    ("convergence level 1", 48, 48, True),
    ("convergence level 2", 96, 96, True),
    ("convergence level 3", 192, 192, True),
    ("convergence level 4", 384, 384, True),
    ("convergence level 5", 768, 768, True),
    ("monocrystal", 460, 532, True),
    ("benchmark32", 256, 256, False),
    ("polycrystal", 402, 402, True),
]
TABLE3_METHODS = ("C0IPDG", "LDG", "HDG", "EDG")


def table3() -> list[tuple[str, list[int]]]:
    return [(label, [count_dofs_table3(m, nx, ny, 1, per) for m in TABLE3_METHODS])
            for label, nx, ny, per in TABLE3_ROWS]
