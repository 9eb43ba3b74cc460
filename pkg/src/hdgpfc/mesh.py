"""Structured quadrilateral meshes of a rectangle.

Numbering conventions (all ids are dense integers):

* elements: ``e = j * nx + i`` for column ``i`` and row ``j``;
* faces: vertical faces first, ``j * nvx + i`` where face ``i`` is the left
  side of column ``i``; then horizontal faces, ``nvert_faces + j * nx + i``
  where face ``(i, j)`` is the bottom side of row ``j``;
* vertices: ``j * nvx + i`` with ``nvx = nx`` when periodic in x and
  ``nx + 1`` otherwise (likewise in y).

Local faces of an element are ordered (left, right, bottom, top).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3
# outward unit normals of the local faces
LOCAL_NORMALS = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
LOCAL_SIGNS = np.array([-1, 1, -1, 1])


@dataclass(frozen=True)
class Face:
    id: int
    orientation: str  # "vertical" | "horizontal"
    incidences: tuple[tuple[int, int, int], ...]  # (element, local face, normal sign)
    vertices: tuple[int, int]

    @property
    def is_boundary(self) -> bool:
        return len(self.incidences) == 1


@dataclass(frozen=True)
class CartesianMesh:
    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int
    periodic_x: bool = False
    periodic_y: bool = False
    # derived connectivity, filled in __post_init__
    element_faces: np.ndarray = field(init=False, repr=False, compare=False)
    element_vertices: np.ndarray = field(init=False, repr=False, compare=False)
    face_vertices: np.ndarray = field(init=False, repr=False, compare=False)
    face_elements: np.ndarray = field(init=False, repr=False, compare=False)
    face_local: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("domain must have positive extent in both directions")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("element counts must be positive")
        if self.periodic_x and self.nx < 2:
            raise ValueError("periodic x-direction needs at least 2 elements")
        if self.periodic_y and self.ny < 2:
            raise ValueError("periodic y-direction needs at least 2 elements")
        nx, ny = self.nx, self.ny
        nvx, nvy = self.nvx, self.nvy
        i, j = np.meshgrid(np.arange(nx), np.arange(ny))
        i, j = i.ravel(), j.ravel()
        ip = (i + 1) % nvx
        jp = (j + 1) % nvy

        def vface(ii, jj):
            return jj * nvx + ii

        def hface(ii, jj):
            return self.n_vertical_faces + jj * nx + ii

        def vert(ii, jj):
            return jj * nvx + ii

        ef = np.stack([vface(i, j), vface(ip, j), hface(i, j), hface(i, jp)], axis=1)
        ev = np.stack([vert(i, j), vert(ip, j), vert(i, jp), vert(ip, jp)], axis=1)

        nf = self.n_faces
        fe = -np.ones((nf, 2), dtype=np.int64)
        fl = -np.ones((nf, 2), dtype=np.int64)
        # slot 0 holds the element on the low side (normal sign +1),
        # slot 1 the element on the high side (normal sign -1)
        for lf, slot in ((RIGHT, 0), (TOP, 0), (LEFT, 1), (BOTTOM, 1)):
            fe[ef[:, lf], slot] = np.arange(nx * ny)
            fl[ef[:, lf], slot] = lf

        fv = np.empty((nf, 2), dtype=np.int64)
        jv, iv = np.divmod(np.arange(self.n_vertical_faces), nvx)
        fv[: self.n_vertical_faces] = np.stack([vert(iv % nvx, jv), vert(iv % nvx, (jv + 1) % nvy)], 1)
        jh, ih = np.divmod(np.arange(self.n_faces - self.n_vertical_faces), nx)
        fv[self.n_vertical_faces:] = np.stack([vert(ih, jh % nvy), vert((ih + 1) % nvx, jh % nvy)], 1)

        for name, arr in (("element_faces", ef), ("element_vertices", ev), ("face_vertices", fv),
                          ("face_elements", fe), ("face_local", fl)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # sizes ---------------------------------------------------------------
    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / self.nx

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / self.ny

    @property
    def nvx(self) -> int:
        return self.nx if self.periodic_x else self.nx + 1

    @property
    def nvy(self) -> int:
        return self.ny if self.periodic_y else self.ny + 1

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertices(self) -> int:
        return self.nvx * self.nvy

    @property
    def n_vertical_faces(self) -> int:
        return self.nvx * self.ny

    @property
    def n_faces(self) -> int:
        return self.nvx * self.ny + self.nx * self.nvy

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def is_periodic(self) -> bool:
        return self.periodic_x and self.periodic_y

    # queries -------------------------------------------------------------
    def _check_element(self, e: int):
        if not 0 <= e < self.n_elements:
            raise IndexError(f"element id {e} out of range [0, {self.n_elements})")

    def element_index(self, e: int) -> tuple[int, int]:
        self._check_element(e)
        j, i = divmod(e, self.nx)
        return i, j

    def element_id(self, i: int, j: int) -> int:
        return j * self.nx + i

    def element_corners(self) -> np.ndarray:
        """Lower-left corners of all elements, shape (n_elements, 2)."""
        j, i = np.divmod(np.arange(self.n_elements), self.nx)
        return np.stack([self.x0 + i * self.hx, self.y0 + j * self.hy], axis=1)

    def face(self, f: int) -> Face:
        if not 0 <= f < self.n_faces:
            raise IndexError(f"face id {f} out of range [0, {self.n_faces})")
        inc = tuple(
            (int(self.face_elements[f, s]), int(self.face_local[f, s]), int(LOCAL_SIGNS[self.face_local[f, s]]))
            for s in (0, 1)
            if self.face_elements[f, s] >= 0
        )
        orient = "vertical" if f < self.n_vertical_faces else "horizontal"
        return Face(f, orient, inc, (int(self.face_vertices[f, 0]), int(self.face_vertices[f, 1])))

    @property
    def faces(self) -> list[Face]:
        return [self.face(f) for f in range(self.n_faces)]

    def vertex_coordinates(self) -> np.ndarray:
        j, i = np.divmod(np.arange(self.n_vertices), self.nvx)
        return np.stack([self.x0 + i * self.hx, self.y0 + j * self.hy], axis=1)


def build_cartesian_mesh(x0: float, x1: float, y0: float, y1: float, nx: int, ny: int,
                         periodic_x: bool = False, periodic_y: bool = False) -> CartesianMesh:
    return CartesianMesh(float(x0), float(x1), float(y0), float(y1), int(nx), int(ny),
                         bool(periodic_x), bool(periodic_y))


def element_geometry(mesh: CartesianMesh, e: int) -> tuple[tuple[float, float], float, float]:
    """Affine map data of element ``e``: lower-left corner, hx, hy."""
    i, j = mesh.element_index(e)
    return (mesh.x0 + i * mesh.hx, mesh.y0 + j * mesh.hy), mesh.hx, mesh.hy


def faces_of_element(mesh: CartesianMesh, e: int) -> list[tuple[int, int, int]]:
    """(face id, local index, outward-normal sign) for left, right, bottom, top."""
    mesh._check_element(e)
    return [(int(mesh.element_faces[e, lf]), lf, int(LOCAL_SIGNS[lf])) for lf in range(4)]
