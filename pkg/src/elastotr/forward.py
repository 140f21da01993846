"""Synthetic data: total and incident runs, scattered traces and noise.

Traces hold the pressure at the receiver nodes of one SRA at every time
level.  The incident run also records the solid velocity ``(u1, u2)`` and its
divergence on a regular imaging grid every ``frame_stride`` levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .assembly import OperatorSet, assemble_operators, assemble_sources, tri_basis
from .mesh import DofMap, Mesh, SamplePoints, build_dofmap, sample_points
from .scene import SceneSpec, derive_velocities
from .stepper import DEFAULT_TOL, Recorder, run

TRACE_KINDS = ("total", "incident", "scattered", "scattered_noisy", "total_noisy")
MOVIE_QUANTITIES = ("u1", "u2", "div")


def ricker(t, nu0: float):
    """Ricker wavelet ``(1 - 2 a) exp(-a)`` with ``a = (pi (nu0 t - 1))^2``."""
    a = (np.pi * (nu0 * np.asarray(t, dtype=float) - 1.0)) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


@dataclass(frozen=True)
class RickerSource:
    location: tuple[float, float]
    nu0: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.nu0 <= 0:
            raise ValueError("nu0 must be positive")

    def __call__(self, t: float) -> float:
        return float(self.amplitude * ricker(t, self.nu0))


@dataclass
class TraceRecord:
    """Pressure samples ``values[time, receiver]`` on a uniform time grid."""

    times: np.ndarray
    nodes: np.ndarray
    coords: np.ndarray
    values: np.ndarray
    kind: str = "total"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        if self.kind not in TRACE_KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if self.values.shape != (len(self.times), len(self.nodes)):
            raise ValueError(f"values shape {self.values.shape} does not match "
                             f"{len(self.times)} times x {len(self.nodes)} receivers")
        if len(self.coords) != len(self.nodes):
            raise ValueError("one coordinate pair per receiver is required")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace values must be finite")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def scaled(self, factor: float) -> "TraceRecord":
        return replace(self, values=self.values * factor)


@dataclass
class FieldMovie:
    """Solid-field snapshots on a regular grid.

    ``frames`` has shape ``(n_frames, 3, ny, nx)`` holding ``u1``, ``u2`` and
    ``div u``.  Frame ``k`` is taken at ``t = k * stride * dt``.
    """

    x: np.ndarray
    y: np.ndarray
    frames: np.ndarray
    stride: int
    dt: float
    t_final: float
    kind: str = "incident"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 4 or self.frames.shape[1:] != (3, len(self.y), len(self.x)):
            raise ValueError(f"frames of shape {self.frames.shape} do not match the "
                             f"({len(self.y)}, {len(self.x)}) grid")
        if self.stride < 1 or self.dt <= 0:
            raise ValueError("stride must be >= 1 and dt positive")
        if self.n_frames * self.frame_interval < self.t_final * (1 - 1e-9):
            raise ValueError("movie does not cover t_final")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_interval(self) -> float:
        return self.stride * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.frame_interval

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.y), len(self.x)

    def quantity(self, name: str) -> np.ndarray:
        """Frames of one stored quantity, shape ``(n_frames, ny, nx)``."""
        return self.frames[:, MOVIE_QUANTITIES.index(name)]

    def same_grid(self, other: "FieldMovie", rtol: float = 1e-9) -> bool:
        return (self.shape == other.shape
                and np.allclose(self.x, other.x, rtol=rtol, atol=0)
                and np.allclose(self.y, other.y, rtol=rtol, atol=0))


class FieldSampler:
    """Sparse evaluation of ``u1``, ``u2`` and ``div u`` at sample points.

    Values come from the P2 interpolant of the containing solid triangle, and
    the divergence from its exact basis gradients.
    """

    def __init__(self, mesh: Mesh, dofmap: DofMap, points: SamplePoints):
        self.points = points
        tri = points.triangles
        if np.any(mesh.is_fluid()[tri]):
            raise ValueError("sample points must lie in solid triangles")
        bary = points.bary
        phi, gref = tri_basis(dofmap.degree, bary[:, 1:])
        verts = mesh.vertices[mesh.triangles[tri]]
        J = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2)
        Jinv = np.linalg.inv(J)
        # physical gradients, (npts, nb, 2)
        grad = np.einsum("pbk,pkj->pbj", gref, Jinv)
        dofs = dofmap.solid_dofs(dofmap.elem_nodes[tri])  # (npts, nb, 2)
        n = dofmap.n_dofs
        npts = len(tri)
        rows = np.repeat(np.arange(npts), phi.shape[1])

        def mat(cols, vals):
            return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(npts, n))

        self.U1 = mat(dofs[..., 0], phi)
        self.U2 = mat(dofs[..., 1], phi)
        self.DIV = mat(dofs[..., 0], grad[..., 0]) + mat(dofs[..., 1], grad[..., 1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.points.shape

    def __call__(self, x: np.ndarray) -> np.ndarray:
        ny, nx = self.shape
        return np.stack([self.U1 @ x, self.U2 @ x, self.DIV @ x]).reshape(3, ny, nx)


def imaging_grid(scene: SceneSpec, spacing: float | None = None) -> tuple[tuple[int, int], tuple]:
    """Resolution and box of the sampling grid over the solid subdomain.

    The default spacing is a tenth of the fluid wavelength.
    """
    if spacing is None:
        spacing = scene.wavelength / 10.0
    if spacing <= 0:
        raise ValueError("grid spacing must be positive")
    box = scene.solid_box
    nx = max(2, int(round((box[2] - box[0]) / spacing)) + 1)
    ny = max(2, int(round((box[3] - box[1]) / spacing)) + 1)
    return (nx, ny), box


def _resolve_source(scene: SceneSpec, source) -> RickerSource:
    if isinstance(source, RickerSource):
        return source
    if not scene.sources:
        raise ValueError("scene defines no source")
    return RickerSource(tuple(scene.sources[int(source)]), scene.nu0)


def level_count(t_final: float, dt: float) -> int:
    """Number of steps needed for ``n * dt`` to reach ``t_final``."""
    return int(math.ceil(t_final / dt - 1e-9))


@dataclass
class ForwardRun:
    traces: TraceRecord
    movie: FieldMovie | None = None
    iterations: int = 0
    info: dict = field(default_factory=dict)


def simulate(scene: SceneSpec, mesh: Mesh, dt: float, *, with_inclusions: bool,
             source: RickerSource | int = 0, sra: int = 0, n_steps: int | None = None,
             frame_stride: int | None = None, grid: tuple[tuple[int, int], tuple] | None = None,
             dofmap: DofMap | None = None, ops: OperatorSet | None = None,
             tol: float = DEFAULT_TOL, kind: str | None = None) -> ForwardRun:
    """One forward run recording SRA pressures and, optionally, a solid movie."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not mesh.sra_nodes:
        raise ValueError("mesh has no SRA receivers")
    src = _resolve_source(scene, source)
    if dofmap is None:
        dofmap = build_dofmap(mesh, 2)
    if ops is None:
        ops = assemble_operators(mesh, dofmap, scene, with_inclusions)
    if n_steps is None:
        n_steps = level_count(scene.t_final, dt)
    load = assemble_sources(mesh, dofmap, src.location)
    nodes = np.asarray(mesh.sra_nodes[sra])
    pdofs = dofmap.fluid_index[nodes]
    if np.any(pdofs < 0):
        raise ValueError("SRA receivers must be fluid nodes")
    trace_rec = Recorder(lambda x: x[pdofs], 1)
    recorders = [trace_rec]
    movie_rec = None
    if frame_stride is not None:
        if grid is None:
            grid = imaging_grid(scene)
        sampler = FieldSampler(mesh, dofmap, sample_points(mesh, *grid))
        movie_rec = Recorder(sampler, frame_stride)
        recorders.append(movie_rec)
    result = run(ops, dt, n_steps, load=load, signal=src, recorders=recorders, tol=tol)
    if kind is None:
        kind = "total" if with_inclusions else "incident"
    traces = TraceRecord(np.array(trace_rec.times), nodes, mesh.vertices[nodes],
                         trace_rec.array(), kind)
    movie = None
    if movie_rec is not None:
        pts = sampler.points
        movie = FieldMovie(pts.x, pts.y, movie_rec.array(), frame_stride, dt,
                           t_final=n_steps * dt,
                           kind="total" if with_inclusions else "incident")
    info = {"dt": dt, "n_steps": n_steps, "n_dofs": ops.n_dofs, "source": src.location,
            "iterations": result.iterations}
    return ForwardRun(traces, movie, result.iterations, info)


def run_total(scene: SceneSpec, mesh: Mesh, dt: float, **kwargs) -> TraceRecord:
    """SRA pressure traces of the full run with inclusions.

    Without inclusions the result coincides with the incident run.
    """
    return simulate(scene, mesh, dt, with_inclusions=True, **kwargs).traces


def run_incident(scene: SceneSpec, mesh: Mesh, dt: float, *, frame_stride: int = 4,
                 **kwargs) -> tuple[TraceRecord, FieldMovie]:
    """Background run (no inclusions): SRA traces and the solid-field movie."""
    res = simulate(scene, mesh, dt, with_inclusions=False, frame_stride=frame_stride, **kwargs)
    return res.traces, res.movie


def _check_same_grid(a: TraceRecord, b: TraceRecord) -> None:
    if a.values.shape != b.values.shape:
        raise ValueError(f"trace shapes differ: {a.values.shape} vs {b.values.shape}")
    if not np.allclose(a.times, b.times, rtol=1e-12, atol=0):
        raise ValueError("trace time grids differ")
    if not np.array_equal(a.nodes, b.nodes):
        raise ValueError("traces were recorded at different receivers")


def scattered(total: TraceRecord, incident: TraceRecord) -> TraceRecord:
    """Scattered traces ``total - incident``."""
    _check_same_grid(total, incident)
    return TraceRecord(total.times.copy(), total.nodes.copy(), total.coords.copy(),
                       total.values - incident.values, "scattered")


def add_noise(traces: TraceRecord, coeff: float, seed: int | None) -> TraceRecord:
    """Multiplicative Gaussian noise ``(1 + coeff * g) * value`` per sample."""
    if coeff < 0:
        raise ValueError("noise coefficient must be non-negative")
    kind = "total_noisy" if traces.kind in ("total", "total_noisy") else "scattered_noisy"
    if coeff == 0:
        return replace(traces, values=traces.values.copy(), kind=kind)
    g = np.random.default_rng(seed).standard_normal(traces.values.shape)
    return replace(traces, values=(1.0 + coeff * g) * traces.values, kind=kind)


def first_arrival(scene: SceneSpec, source_point, receivers: np.ndarray) -> np.ndarray:
    """Direct fluid travel time from the source to each receiver."""
    vf = derive_velocities(scene.fluid)[0]
    d = np.hypot(*(np.asarray(receivers, float) - np.asarray(source_point, float)).T)
    return d / vf
