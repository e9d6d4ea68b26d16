"""Structured triangulations of rectangles, barycentric refinement and point location."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

# boundary tags
BOTTOM, RIGHT, TOP, LEFT = 0, 1, 2, 3


class PointOutsideDomain(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CellIndex:
    """Uniform background grid of bins, each listing the triangles whose bounding box touches it."""

    nx: int
    ny: int
    x0: float
    y0: float
    dx: float
    dy: float
    offsets: np.ndarray
    triangles: np.ndarray

    def bin_of(self, pts: np.ndarray) -> np.ndarray:
        ix = np.clip(np.floor((pts[:, 0] - self.x0) / self.dx).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(np.floor((pts[:, 1] - self.y0) / self.dy).astype(np.int64), 0, self.ny - 1)
        return ix + self.nx * iy


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable 2D triangulation.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    boundary_edges : (nb, 2) int array of vertex pairs
    boundary_tags : (nb,) int array, one of BOTTOM/RIGHT/TOP/LEFT
    domain_box : (x_min, x_max, y_min, y_max)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    domain_box: tuple
    bins_per_side: tuple = (1, 1)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def diameter(self) -> float:
        x0, x1, y0, y1 = self.domain_box
        return float(np.hypot(x1 - x0, y1 - y0))

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edges(self):
        """Unique edges and the triangle-to-edge map.

        Local edge k of a triangle joins local vertices (k, k+1 mod 3).
        Returns ``(edges, tri_edges)`` with edges sorted by vertex pair.
        """
        if "edges" not in self._cache:
            t = self.triangles
            local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
            local = np.sort(local, axis=1)
            edges, inverse = np.unique(local, axis=0, return_inverse=True)
            self._cache["edges"] = (edges, inverse.reshape(-1, 3))
        return self._cache["edges"]

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def cell_index(self) -> CellIndex:
        if "cell_index" not in self._cache:
            self._cache["cell_index"] = _build_cell_index(self)
        return self._cache["cell_index"]

    def check(self, rtol: float = 1e-12) -> None:
        """Raise ``ValueError`` if any structural invariant is violated."""
        areas = self.signed_areas()
        if np.any(areas <= 0):
            raise ValueError("non-positive triangle area")
        x0, x1, y0, y1 = self.domain_box
        box_area = (x1 - x0) * (y1 - y0)
        if abs(areas.sum() - box_area) > rtol * box_area:
            raise ValueError("triangle areas do not tile the domain box")
        edges, tri_edges = self.edges()
        counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
        if np.any(counts > 2) or np.any(counts < 1):
            raise ValueError("edge shared by more than two triangles")
        single = np.sort(edges[counts == 1], axis=1)
        bnd = np.sort(self.boundary_edges, axis=1)
        if len(single) != len(bnd) or not np.array_equal(
            single[np.lexsort(single.T[::-1])], bnd[np.lexsort(bnd.T[::-1])]
        ):
            raise ValueError("boundary edges do not match the one-sided edges")
        # every boundary vertex has exactly two boundary edges -> closed loops
        deg = np.bincount(self.boundary_edges.ravel(), minlength=self.n_vertices)
        if np.any(deg[self.boundary_vertices()] != 2):
            raise ValueError("boundary edges do not form closed loops")

    def locate(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Locate points; returns triangle ids and clamped barycentric coordinates.

        Points on shared edges resolve to the first triangle found in the bin list.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x0, x1, y0, y1 = self.domain_box
        slack = 1e-12 * self.diameter
        outside = (
            (pts[:, 0] < x0 - slack) | (pts[:, 0] > x1 + slack)
            | (pts[:, 1] < y0 - slack) | (pts[:, 1] > y1 + slack)
        )
        if np.any(outside):
            raise PointOutsideDomain(f"point {pts[np.argmax(outside)]} outside {self.domain_box}")
        idx = self.cell_index()
        tri, bary = kernels.locate_points(
            pts, self.vertices, self.triangles, idx.bin_of(pts), idx.offsets, idx.triangles
        )
        if np.any(tri < 0):
            bad = pts[np.argmax(tri < 0)]
            raise PointOutsideDomain(f"point {bad} not covered by any triangle")
        return tri, bary


def locate_point(mesh: TriMesh, x) -> tuple[int, np.ndarray]:
    tri, bary = mesh.locate(np.asarray(x, dtype=float).reshape(1, 2))
    return int(tri[0]), bary[0]


def locate_brute_force(mesh: TriMesh, x, tol: float = 1e-12) -> tuple[int, np.ndarray]:
    """O(N) scan over all triangles; the reference path for point location."""
    x = np.asarray(x, dtype=float)
    p = mesh.vertices[mesh.triangles]
    lam = _barycentric(p, np.broadcast_to(x, (len(p), 2)))
    ok = np.all(lam >= -tol, axis=1)
    if not ok.any():
        raise PointOutsideDomain(f"point {x} not covered by any triangle")
    k = int(np.argmax(ok))
    b = np.clip(lam[k], 0.0, 1.0)
    return k, b / b.sum()


def _barycentric(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = x - p[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def build_structured(n: int, box=(0.0, 1.0, 0.0, 1.0)) -> TriMesh:
    """n x n squares, each split along its lower-left to upper-right diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    x0, x1, y0, y1 = map(float, box)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate or inverted box {box}")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = i + (n + 1) * j
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    k = np.arange(n)
    bottom = np.column_stack([k, k + 1])
    right = np.column_stack([n + (n + 1) * k, n + (n + 1) * (k + 1)])
    top = np.column_stack([(n + 1) * n + k + 1, (n + 1) * n + k])
    left = np.column_stack([(n + 1) * (k + 1), (n + 1) * k])
    bedges = np.vstack([bottom, right, top, left])
    btags = np.repeat([BOTTOM, RIGHT, TOP, LEFT], n)
    return TriMesh(vertices, triangles.astype(np.int64), bedges.astype(np.int64), btags,
                   (x0, x1, y0, y1), bins_per_side=(n, n))


def barycentric_refine(m: TriMesh) -> TriMesh:
    """Alfeld split: join each triangle's barycenter to its three vertices."""
    nv = m.n_vertices
    centers = m.centroids()
    g = nv + np.arange(m.n_triangles)
    a, b, c = m.triangles.T
    tris = np.stack(
        [np.column_stack([a, b, g]), np.column_stack([b, c, g]), np.column_stack([c, a, g])], axis=1
    ).reshape(-1, 3)
    return TriMesh(np.vstack([m.vertices, centers]), tris, m.boundary_edges.copy(),
                   m.boundary_tags.copy(), m.domain_box, bins_per_side=m.bins_per_side)


def _build_cell_index(m: TriMesh) -> CellIndex:
    x0, x1, y0, y1 = m.domain_box
    nx, ny = m.bins_per_side
    if nx * ny == 1 and m.n_triangles > 64:
        nx = ny = max(1, int(np.sqrt(m.n_triangles / 2)))
    dx, dy = (x1 - x0) / nx, (y1 - y0) / ny
    p = m.vertices[m.triangles]
    eps = 1e-9
    ix0 = np.clip(np.floor((p[:, :, 0].min(1) - x0) / dx - eps).astype(int), 0, nx - 1)
    ix1 = np.clip(np.floor((p[:, :, 0].max(1) - x0) / dx + eps).astype(int), 0, nx - 1)
    iy0 = np.clip(np.floor((p[:, :, 1].min(1) - y0) / dy - eps).astype(int), 0, ny - 1)
    iy1 = np.clip(np.floor((p[:, :, 1].max(1) - y0) / dy + eps).astype(int), 0, ny - 1)
    wx = ix1 - ix0 + 1
    wy = iy1 - iy0 + 1
    count = wx * wy
    tris = np.repeat(np.arange(m.n_triangles), count)
    start = np.repeat(np.cumsum(count) - count, count)
    k = np.arange(len(tris)) - start
    wxr = wx[tris]
    bins = (ix0[tris] + k % wxr) + nx * (iy0[tris] + k // wxr)
    order = np.lexsort((tris, bins))
    offsets = np.zeros(nx * ny + 1, dtype=np.int64)
    np.cumsum(np.bincount(bins, minlength=nx * ny), out=offsets[1:])
    return CellIndex(nx, ny, x0, y0, dx, dy, offsets, tris[order].astype(np.int64))
