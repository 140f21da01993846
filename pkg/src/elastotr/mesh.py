"""Structured triangulation of the rectangle and Lagrange dof management."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import FLUID, SceneSpec

# boundary edge tags
GAMMA_F = 0
GAMMA_S_H = 1
GAMMA_S_V = 2
GAMMA_I = 3
EDGE_TAG_NAMES = {GAMMA_F: "GammaF", GAMMA_S_H: "GammaS_horizontal",
                  GAMMA_S_V: "GammaS_vertical", GAMMA_I: "GammaI"}


@dataclass
class Mesh:
    """Conforming triangle mesh with region and boundary tags.

    ``boundary_tri`` holds, for every tagged edge, the triangle the outward
    normal is taken from (the solid one for interface edges).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    boundary_tri: np.ndarray
    sra_nodes: list[np.ndarray] = field(default_factory=list)
    xs: np.ndarray | None = None
    ys: np.ndarray | None = None
    cell_diag: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def is_fluid(self) -> np.ndarray:
        return self.regions == FLUID

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def h_min(self) -> float:
        v = self.vertices
        t = self.triangles
        lens = [np.linalg.norm(v[t[:, i]] - v[t[:, (i + 1) % 3]], axis=1) for i in range(3)]
        return float(np.min(lens))

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edge_lengths(self, tag: int | None = None) -> np.ndarray:
        e = self.boundary_edges if tag is None else self.boundary_edges[self.edge_tags == tag]
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def locate(self, pts: np.ndarray, solid_only: bool = False) -> np.ndarray:
        """Index of a triangle containing each point (structured meshes only).

        With ``solid_only`` points on the fluid/solid interface are assigned
        to the solid triangle below it.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        nx = len(self.xs) - 1
        ny = len(self.ys) - 1
        i = np.clip(np.searchsorted(self.xs, pts[:, 0], side="right") - 1, 0, nx - 1)
        j = np.clip(np.searchsorted(self.ys, pts[:, 1], side="right") - 1, 0, ny - 1)
        if solid_only:
            # rows whose triangles are solid
            row_solid = self.regions[2 * nx * np.arange(ny)] != FLUID
            top_solid = np.max(np.nonzero(row_solid)[0])
            j = np.minimum(j, top_solid)
        cell = j * nx + i
        tri = 2 * cell
        lam = barycentric(self.vertices[self.triangles[tri]], pts)
        outside = lam.min(axis=1) < -1e-12
        tri = np.where(outside, tri + 1, tri)
        return tri


def barycentric(tri_xy: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``pts`` (n, 2) in triangles ``tri_xy`` (n, 3, 2)."""
    a, b, c = tri_xy[:, 0], tri_xy[:, 1], tri_xy[:, 2]
    v0 = b - a
    v1 = c - a
    v2 = pts - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def _graded_lines(breaks: list[float], h: float) -> np.ndarray:
    breaks = sorted(set(breaks))
    lines = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        lines.extend(np.linspace(a, b, n + 1)[1:])
    return np.asarray(lines)


def rectangle_mesh(xs, ys, region_fn=None, interface_y=None) -> Mesh:
    """Split every grid cell into two triangles.

    Cells left of the vertical mid-line use the ``/`` diagonal, the others
    ``\\``, so a symmetric grid yields a mirror-symmetric mesh.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I = I.ravel()
    J = J.ravel()
    v00, v10, v01, v11 = vid(I, J), vid(I + 1, J), vid(I, J + 1), vid(I + 1, J + 1)
    xmid = 0.5 * (xs[0] + xs[-1])
    cx = 0.5 * (xs[I] + xs[I + 1])
    slash = cx < xmid
    col = np.column_stack
    t1 = np.where(slash[:, None], col([v00, v10, v11]), col([v00, v10, v01]))
    t2 = np.where(slash[:, None], col([v00, v11, v01]), col([v10, v11, v01]))
    tris = np.empty((2 * len(I), 3), dtype=np.int64)
    tris[0::2] = t1
    tris[1::2] = t2

    cent = vertices[tris].mean(axis=1)
    if region_fn is None:
        regions = np.full(len(tris), FLUID + 2, dtype=np.int64)
    else:
        regions = np.asarray(region_fn(cent[:, 0], cent[:, 1]), dtype=np.int64)

    bedges, tags, btri = _tag_edges(vertices, tris, regions, xs, ys)
    return Mesh(vertices, tris, regions, bedges, tags, btri, xs=xs, ys=ys,
                cell_diag=slash.reshape(ny, nx))


def _tag_edges(vertices, tris, regions, xs, ys):
    nt = len(tris)
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    owner = np.tile(np.arange(nt), 3)
    es = np.sort(e, axis=1)
    key = es[:, 0] * len(vertices) + es[:, 1]
    order = np.argsort(key, kind="stable")
    key_s = key[order]
    uniq, start, counts = np.unique(key_s, return_index=True, return_counts=True)

    out_edges, out_tags, out_tri = [], [], []
    # outer boundary edges
    single = counts == 1
    idx = order[start[single]]
    for k in idx:
        a, b = es[k]
        t = owner[k]
        fluid = regions[t] == FLUID
        if fluid:
            tag = GAMMA_F
        else:
            horizontal = abs(vertices[a, 1] - vertices[b, 1]) < 1e-14 * max(1.0, abs(ys[-1]))
            tag = GAMMA_S_H if horizontal else GAMMA_S_V
        out_edges.append((a, b))
        out_tags.append(tag)
        out_tri.append(t)
    # interior edges separating fluid from solid
    pair = counts == 2
    i0 = order[start[pair]]
    i1 = order[start[pair] + 1]
    t0, t1 = owner[i0], owner[i1]
    f0 = regions[t0] == FLUID
    f1 = regions[t1] == FLUID
    mixed = f0 != f1
    for k0, a_t, b_t, a_f in zip(i0[mixed], t0[mixed], t1[mixed], f0[mixed]):
        a, b = es[k0]
        out_edges.append((a, b))
        out_tags.append(GAMMA_I)
        out_tri.append(b_t if a_f else a_t)
    return (np.asarray(out_edges, dtype=np.int64).reshape(-1, 2),
            np.asarray(out_tags, dtype=np.int64),
            np.asarray(out_tri, dtype=np.int64))


def generate_mesh(scene: SceneSpec, h_target: float) -> Mesh:
    """Structured mesh aligned with the interface, skin band and SRA lines.

    Regions are decided at triangle centroids, so inclusion boundaries are
    staircased.  Receivers are snapped to the nearest vertex of their SRA
    line.
    """
    if h_target <= 0:
        raise ValueError("h_target must be positive")
    x0, y0, x1, y1 = scene.domain
    ybreaks = [y0, y1, scene.interface_y]
    if scene.skin_band is not None:
        top, bot = scene.skin_band
        if h_target > top - bot + 1e-15:
            raise ValueError(
                f"h_target={h_target:g} exceeds the skin thickness {top - bot:g}"
            )
        ybreaks += [top, bot]
    for sra in scene.sras:
        if abs(sra.start[1] - sra.end[1]) < 1e-15:
            ybreaks.append(sra.start[1])
    xs = _graded_lines([x0, x1], h_target)
    ys = _graded_lines(ybreaks, h_target)
    mesh = rectangle_mesh(xs, ys, lambda x, y: scene.region_codes(x, y, True))
    for sra in scene.sras:
        pts = sra.receiver_points()
        d = np.linalg.norm(mesh.vertices[None, :, :] - pts[:, None, :], axis=2)
        mesh.sra_nodes.append(np.argmin(d, axis=1))
    return mesh


@dataclass
class DofMap:
    """Lagrange nodes and the fluid/solid unknown numbering.

    Unknown vector layout: fluid pressures first, then interleaved solid
    velocities ``(u1, u2)`` per solid node.  ``fluid_index``/``solid_index``
    map a global node to its dof (or -1).
    """

    degree: int
    nodes: np.ndarray
    elem_nodes: np.ndarray
    fluid_index: np.ndarray
    solid_index: np.ndarray
    edge_keys: np.ndarray
    edge_mid: np.ndarray
    n_vertices: int

    @property
    def n_fluid(self) -> int:
        return int((self.fluid_index >= 0).sum())

    @property
    def n_solid_nodes(self) -> int:
        return int((self.solid_index >= 0).sum())

    @property
    def n_solid(self) -> int:
        return 2 * self.n_solid_nodes

    @property
    def n_dofs(self) -> int:
        return self.n_fluid + self.n_solid

    @property
    def interface_nodes(self) -> np.ndarray:
        return np.nonzero((self.fluid_index >= 0) & (self.solid_index >= 0))[0]

    def edge_node(self, a, b) -> np.ndarray:
        """Midpoint node of edge(s) ``(a, b)``; only meaningful for degree 2."""
        a = np.asarray(a)
        b = np.asarray(b)
        k = np.minimum(a, b) * self.n_vertices + np.maximum(a, b)
        pos = np.searchsorted(self.edge_keys, k)
        return self.edge_mid[pos]

    def edge_nodes(self, edges: np.ndarray) -> np.ndarray:
        """Lagrange nodes along each edge: ``(a, b)`` or ``(a, b, mid)``."""
        if self.degree == 1:
            return edges.copy()
        return np.column_stack([edges, self.edge_node(edges[:, 0], edges[:, 1])])

    def solid_dofs(self, nodes) -> np.ndarray:
        """Global (u1, u2) unknown indices of solid nodes, shape (n, 2)."""
        base = self.n_fluid + 2 * self.solid_index[np.asarray(nodes)]
        return np.stack([base, base + 1], axis=-1)


def build_dofmap(mesh: Mesh, degree: int = 2) -> DofMap:
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    nv = mesh.n_vertices
    tris = mesh.triangles
    edges = mesh.edges()
    keys = edges[:, 0] * nv + edges[:, 1]
    if degree == 2:
        mid = nv + np.arange(len(edges))
        mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
        nodes = np.vstack([mesh.vertices, mids])
        local = [(0, 1), (1, 2), (2, 0)]
        cols = [tris]
        for a, b in local:
            ea, eb = tris[:, a], tris[:, b]
            k = np.minimum(ea, eb) * nv + np.maximum(ea, eb)
            cols.append(mid[np.searchsorted(keys, k)][:, None])
        elem_nodes = np.hstack(cols)
    else:
        mid = np.full(len(edges), -1)
        nodes = mesh.vertices.copy()
        elem_nodes = tris.copy()

    n_nodes = len(nodes)
    fluid = mesh.is_fluid()
    fluid_mark = np.zeros(n_nodes, bool)
    fluid_mark[elem_nodes[fluid].ravel()] = True
    solid_mark = np.zeros(n_nodes, bool)
    solid_mark[elem_nodes[~fluid].ravel()] = True
    fluid_index = np.full(n_nodes, -1, dtype=np.int64)
    fluid_index[fluid_mark] = np.arange(fluid_mark.sum())
    solid_index = np.full(n_nodes, -1, dtype=np.int64)
    solid_index[solid_mark] = np.arange(solid_mark.sum())
    return DofMap(degree, nodes, elem_nodes, fluid_index, solid_index, keys, mid, nv)


@dataclass
class SamplePoints:
    """Regular grid over the solid subdomain with barycentric locations."""

    x: np.ndarray
    y: np.ndarray
    points: np.ndarray
    triangles: np.ndarray
    bary: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.y), len(self.x)

    @property
    def origin(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.y[0])

    @property
    def spacing(self) -> tuple[float, float]:
        return float(self.x[1] - self.x[0]), float(self.y[1] - self.y[0])


def sample_points(mesh: Mesh, resolution: tuple[int, int], box=None) -> SamplePoints:
    """Regular ``nx x ny`` grid covering the solid part of the mesh.

    Points are ordered row by row, starting from the bottom-left corner.
    """
    nx, ny = resolution
    if nx < 2 or ny < 2:
        raise ValueError("sampling grid needs at least 2 points per direction")
    if box is None:
        solid = mesh.triangles[~mesh.is_fluid()]
        v = mesh.vertices[solid.ravel()]
        box = (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())
    gx = np.linspace(box[0], box[2], nx)
    gy = np.linspace(box[1], box[3], ny)
    X, Y = np.meshgrid(gx, gy)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    tri = mesh.locate(pts, solid_only=True)
    bary = barycentric(mesh.vertices[mesh.triangles[tri]], pts)
    return SamplePoints(gx, gy, pts, tri, bary)


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: one ``v``/``t``/``e``/``r`` record per line."""
    with open(path, "w") as fh:
        fh.write(f"# vertices {mesh.n_vertices} triangles {mesh.n_triangles} "
                 f"edges {len(mesh.boundary_edges)}\n")
        for x, y in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g}\n")
        for (a, b, c), r in zip(mesh.triangles, mesh.regions):
            fh.write(f"t {a} {b} {c} {r}\n")
        for (a, b), tag in zip(mesh.boundary_edges, mesh.edge_tags):
            fh.write(f"e {a} {b} {EDGE_TAG_NAMES[int(tag)]}\n")
        for k, nodes in enumerate(mesh.sra_nodes):
            fh.write(f"r {k} " + " ".join(str(n) for n in nodes) + "\n")
