"""Conforming P1 triangulations of the hold-all rectangle and point queries."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# barycentric slack when deciding whether a point lies in a triangle
_BARY_TOL = 1e-12


class MeshError(ValueError):
    """Raised for invalid mesh input or queries outside the domain."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with P1 bookkeeping.

    Attributes
    ----------
    vertices : (n, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    boundary : (n,) bool array, True on vertices of the outer boundary
    h : characteristic edge length
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    h: float

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    @cached_property
    def interior(self) -> np.ndarray:
        """Indices of the degrees of freedom of V_h (vertices off the boundary)."""
        return np.flatnonzero(~self.boundary)

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * _signed_double_area(self.vertices, self.triangles)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """(nt, 3, 2) gradients of the three local hat functions per triangle."""
        p = self.vertices[self.triangles]
        # the gradient of the hat at local vertex k is rot90(opposite edge) / (2 area)
        e0 = p[:, 2] - p[:, 1]
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        edges = np.stack([e0, e1, e2], axis=1)
        grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1)
        return grads / (2.0 * self.areas)[:, None, None]

    @cached_property
    def vertex_to_triangles(self) -> list[np.ndarray]:
        order = np.argsort(self.triangles.ravel(), kind="stable")
        owners = order // 3
        counts = np.bincount(self.triangles.ravel(), minlength=self.n)
        return np.split(owners, np.cumsum(counts)[:-1])

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @cached_property
    def _buckets(self):
        # uniform grid of buckets over triangle bounding boxes
        x0, y0, x1, y1 = self.bbox
        size = max(self.h, 1e-12)
        nbx = max(1, int(np.ceil((x1 - x0) / size)))
        nby = max(1, int(np.ceil((y1 - y0) / size)))
        p = self.vertices[self.triangles]
        lo = p.min(axis=1)
        hi = p.max(axis=1)
        ilo = np.clip(((lo[:, 0] - x0) / size - 1e-9).astype(int), 0, nbx - 1)
        ihi = np.clip(((hi[:, 0] - x0) / size + 1e-9).astype(int), 0, nbx - 1)
        jlo = np.clip(((lo[:, 1] - y0) / size - 1e-9).astype(int), 0, nby - 1)
        jhi = np.clip(((hi[:, 1] - y0) / size + 1e-9).astype(int), 0, nby - 1)
        cells: list[list[int]] = [[] for _ in range(nbx * nby)]
        for t in range(self.nt):
            for i in range(ilo[t], ihi[t] + 1):
                for j in range(jlo[t], jhi[t] + 1):
                    cells[j * nbx + i].append(t)
        return size, nbx, nby, [np.array(c, dtype=int) for c in cells]

    def contains(self, x) -> bool:
        """Whether x lies in the closure of the meshed region."""
        try:
            self.locate(x)
        except MeshError:
            return False
        return True

    def locate(self, x) -> tuple[int, np.ndarray]:
        """Return (triangle index, barycentric coordinates) of the point x.

        Points on shared edges or vertices go to the lowest-indexed candidate
        triangle.
        """
        x = np.asarray(x, dtype=float)
        x0, y0, _, _ = self.bbox
        size, nbx, nby, cells = self._buckets
        i = int(np.floor((x[0] - x0) / size))
        j = int(np.floor((x[1] - y0) / size))
        candidates = set()
        # neighbouring buckets cover points exactly on bucket seams
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ii, jj = i + di, j + dj
                if 0 <= ii < nbx and 0 <= jj < nby:
                    candidates.update(cells[jj * nbx + ii].tolist())
        for t in sorted(candidates):
            lam = self.barycentric(t, x)
            if lam.min() >= -_BARY_TOL:
                lam = np.clip(lam, 0.0, None)
                return t, lam / lam.sum()
        raise MeshError(f"point {tuple(x)} lies outside the mesh")

    def barycentric(self, t: int, x) -> np.ndarray:
        a, b, c = self.vertices[self.triangles[t]]
        x = np.asarray(x, dtype=float)
        m = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
        l1, l2 = np.linalg.solve(m, x - a)
        return np.array([1.0 - l1 - l2, l1, l2])

    def gradient(self, nodal, t: int) -> np.ndarray:
        """Constant gradient of the P1 interpolant of ``nodal`` on triangle t."""
        nodal = np.asarray(nodal, dtype=float)
        if nodal.shape[0] != self.n:
            raise MeshError(f"nodal vector has length {nodal.shape[0]}, expected {self.n}")
        if not 0 <= t < self.nt:
            raise IndexError(f"triangle index {t} out of range")
        return nodal[self.triangles[t]] @ self.basis_gradients[t]

    def element_gradients(self, nodal) -> np.ndarray:
        """(nt, 2) gradients of the P1 interpolant on every triangle."""
        nodal = np.asarray(nodal, dtype=float)
        return np.einsum("tk,tkd->td", nodal[self.triangles], self.basis_gradients)

    def evaluate(self, nodal, x) -> float:
        t, lam = self.locate(x)
        return float(np.asarray(nodal)[self.triangles[t]] @ lam)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges (m, 2) and the number of triangles sharing each."""
        e = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts


def _signed_double_area(vertices, triangles):
    p = vertices[triangles]
    return (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])


def _topological_boundary(n, triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")
    flags = np.zeros(n, dtype=bool)
    flags[uniq[counts == 1].ravel()] = True
    return flags


def generate_structured(nx: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Uniform nx-by-nx grid, each cell cut by its lower-left to upper-right diagonal."""
    if nx < 2:
        raise MeshError(f"nx must be at least 2, got {nx}")
    xa, ya, xb, yb = map(float, rect)
    if not (xb > xa and yb > ya):
        raise MeshError(f"degenerate rectangle {rect}")
    xs = np.linspace(xa, xb, nx + 1)
    ys = np.linspace(ya, yb, nx + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(nx))
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * nx, 3), dtype=int)
    triangles[0::2] = lower
    triangles[1::2] = upper

    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(nx + 1))
    boundary = ((ii == 0) | (ii == nx) | (jj == 0) | (jj == nx)).ravel()
    h = max(xb - xa, yb - ya) / nx
    return Mesh(vertices, triangles, boundary, h)


def _mean_edge_length(vertices, triangles):
    p = vertices[triangles]
    lengths = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
    return float(lengths.max(axis=1).mean())


def mesh_from_arrays(vertices, triangles, boundary=None, h=None) -> Mesh:
    """Validate raw arrays and build a Mesh, fixing clockwise triangles."""
    vertices = np.array(vertices, dtype=float).reshape(-1, 2)
    triangles = np.array(triangles, dtype=int).reshape(-1, 3)
    n = len(vertices)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= n):
        raise MeshError("triangle references a vertex index outside [0, nv)")
    area2 = _signed_double_area(vertices, triangles)
    if np.any(area2 == 0.0):
        raise MeshError("degenerate triangle with zero area")
    cw = area2 < 0
    if cw.any():
        logger.warning("reoriented %d clockwise triangle(s)", int(cw.sum()))
        triangles[cw] = triangles[cw][:, [0, 2, 1]]
    topo = _topological_boundary(n, triangles)
    if boundary is not None:
        boundary = np.asarray(boundary, dtype=bool)
        if np.any(topo & ~boundary):
            raise MeshError(
                "non-conforming mesh: interior-flagged vertices lie on single-triangle edges"
            )
        if np.any(boundary & ~topo):
            logger.warning("boundary flags disagree with topology; using topological flags")
    if h is None:
        h = _mean_edge_length(vertices, triangles)
    return Mesh(vertices, triangles, topo, float(h))


def load_mesh(path) -> Mesh:
    """Read the ASCII format: ``nv nt``, nv lines ``x y b``, nt lines ``i j k``."""
    text = Path(path).read_text()
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(re.split(r"\s+", line))
    if not rows:
        raise MeshError(f"{path}: empty mesh file")
    try:
        nv, nt = int(rows[0][0]), int(rows[0][1])
        if len(rows) != 1 + nv + nt:
            raise MeshError(f"{path}: expected {1 + nv + nt} data lines, found {len(rows)}")
        vrows = rows[1 : 1 + nv]
        trows = rows[1 + nv :]
        vertices = np.array([[float(r[0]), float(r[1])] for r in vrows])
        flags = np.array([int(r[2]) != 0 for r in vrows])
        triangles = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in trows])
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: parse error: {exc}") from exc
    return mesh_from_arrays(vertices, triangles, flags)


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{mesh.n} {mesh.nt}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary):
            fh.write(f"{float(x)!r} {float(y)!r} {int(b)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def locate_point(mesh: Mesh, x) -> tuple[int, np.ndarray]:
    return mesh.locate(x)


def p1_gradient(mesh: Mesh, nodal, t: int) -> np.ndarray:
    return mesh.gradient(nodal, t)


def ball_indices(mesh: Mesh, centers, radius: float) -> np.ndarray:
    """Sorted vertex indices at distance strictly below ``radius`` from any center."""
    if radius <= 0:
        raise MeshError("radius must be positive")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    d2 = ((mesh.vertices[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.flatnonzero((d2 < radius * radius).any(axis=1))
