"""Back-propagation of time-reversed pressure traces through the background.

The reversed problem runs on inclusion-free operators assembled on its own
mesh and marches exactly the forward operators on the reversed clock
``t' = T_f - t``.  The pressure of the reversed wave is then ``p(T_f - t')``
and its solid unknown is the particle velocity of the back-propagating wave,
``-u(T_f - t')``: velocity is odd under time reversal, which is how the sign
flips of the reversed transmission conditions are absorbed.  The absorbing
terms stay dissipative on the reversed clock.  Traces enter as Dirichlet
values on the receiver nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import OperatorSet, assemble_operators
from .forward import FieldMovie, FieldSampler, TraceRecord, imaging_grid, level_count
from .mesh import DofMap, Mesh, build_dofmap, sample_points
from .scene import SceneSpec
from .stepper import DEFAULT_TOL, Recorder, run


@dataclass
class TRProblem:
    """Reversed run setup.

    ``schedule[n]`` holds the receiver values at reversed time ``n * dt``
    for ``n = 0 .. n_steps``; column ``j`` belongs to ``dofs[j]``.
    """

    scene: SceneSpec
    mesh: Mesh
    dofmap: DofMap
    ops: OperatorSet
    dofs: np.ndarray
    schedule: np.ndarray
    dt: float
    n_steps: int
    t_final: float

    def __post_init__(self):
        if self.schedule.shape != (self.n_steps + 1, len(self.dofs)):
            raise ValueError("schedule must hold one row per time level")
        if np.any(self.dofs >= self.ops.n_fluid) or np.any(self.dofs < 0):
            raise ValueError("Dirichlet dofs must be fluid pressures")


def resample_reversed(traces: TraceRecord, t_final: float, dt: float, n_steps: int) -> np.ndarray:
    """Values ``trace(t_final - n dt)`` for ``n = 0 .. n_steps`` by linear interpolation."""
    t0, t1 = traces.times[0], traces.times[-1]
    tol = 1e-9 * max(t_final, dt)
    if t0 > tol or t1 < t_final - tol:
        raise ValueError(f"traces cover [{t0:.6g}, {t1:.6g}] s but t_final is {t_final:.6g} s")
    tq = np.clip(t_final - dt * np.arange(n_steps + 1), t0, t1)
    # the trace grid is uniform, so interpolation is an index computation
    h = traces.dt if len(traces.times) > 1 else 1.0
    s = (tq - t0) / h
    i = np.clip(np.floor(s).astype(np.int64), 0, len(traces.times) - 2)
    w = (s - i)[:, None]
    v = traces.values
    return (1.0 - w) * v[i] + w * v[i + 1]


def build_tr_problem(scene: SceneSpec, mesh: Mesh, traces: TraceRecord, dt: float, *,
                     sra: int = 0, t_final: float | None = None, dofmap: DofMap | None = None,
                     ops: OperatorSet | None = None) -> TRProblem:
    """Background operators plus the reversed Dirichlet schedule.

    Receivers are matched to the reversed mesh's SRA nodes by index.  When
    several receivers snap to the same node their values are averaged.
    """
    if t_final is None:
        t_final = scene.t_final
    if dofmap is None:
        dofmap = build_dofmap(mesh, 2)
    if ops is None:
        ops = assemble_operators(mesh, dofmap, scene, with_inclusions=False)
    if ops.with_inclusions:
        raise ValueError("the reversed run must use background operators")
    nodes = np.asarray(mesh.sra_nodes[sra])
    if len(nodes) != traces.values.shape[1]:
        raise ValueError(f"{traces.values.shape[1]} traces for {len(nodes)} receivers")
    n_steps = level_count(t_final, dt)
    vals = resample_reversed(traces, t_final, dt, n_steps)
    all_dofs = dofmap.fluid_index[nodes]
    if np.any(all_dofs < 0):
        raise ValueError("SRA receivers must be fluid nodes")
    dofs, inverse, counts = np.unique(all_dofs, return_inverse=True, return_counts=True)
    sched = np.zeros((n_steps + 1, len(dofs)))
    np.add.at(sched.T, inverse, vals.T)
    sched /= counts
    return TRProblem(scene, mesh, dofmap, ops, dofs, sched, dt, n_steps, t_final)


def impose_dirichlet(A: sp.spmatrix, b: np.ndarray, dofs, values, n_fluid: int | None = None,
                     symmetric: bool = False) -> tuple[sp.csr_matrix, np.ndarray]:
    """Replace constrained rows by identity rows carrying the prescribed values.

    With ``symmetric`` the constrained columns are also moved to the
    right-hand side, which leaves the solution unchanged.  ``n_fluid``
    enables the check that every constrained unknown is a pressure.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    n = A.shape[0]
    if np.any(dofs < 0) or np.any(dofs >= n):
        raise ValueError("constrained index out of range")
    if n_fluid is not None and np.any(dofs >= n_fluid):
        raise ValueError("constrained unknowns must be fluid dofs")
    b = np.array(b, dtype=float)
    A = sp.csr_matrix(A, dtype=float, copy=True)
    keep = np.ones(n, dtype=float)
    keep[dofs] = 0.0
    if symmetric:
        xd = np.zeros(n)
        xd[dofs] = values
        b -= A @ xd
        A = sp.diags(keep) @ A @ sp.diags(keep)
    else:
        A = sp.diags(keep) @ A
    fix = np.zeros(n)
    fix[dofs] = 1.0
    A = (A + sp.diags(fix)).tocsr()
    A.eliminate_zeros()
    b[dofs] = values
    return A, b


def run_reversed(prob: TRProblem, *, frame_stride: int = 4,
                 grid: tuple[tuple[int, int], tuple] | None = None,
                 tol: float = DEFAULT_TOL, probes: np.ndarray | None = None) -> FieldMovie:
    """March the reversed problem and record the solid movie on the imaging grid.

    ``probes`` optionally lists unknown indices whose values are kept per
    level in ``movie.info['probe_values']``.
    """
    if grid is None:
        grid = imaging_grid(prob.scene)
    sampler = FieldSampler(prob.mesh, prob.dofmap, sample_points(prob.mesh, *grid))
    rec = Recorder(sampler, frame_stride)
    recorders = [rec]
    probe_rec = None
    if probes is not None:
        probe_rec = Recorder(lambda x: x[probes], 1)
        recorders.append(probe_rec)
    result = run(prob.ops, prob.dt, prob.n_steps, recorders=recorders,
                 dirichlet_dofs=prob.dofs, dirichlet_values=prob.schedule, tol=tol)
    pts = sampler.points
    movie = FieldMovie(pts.x, pts.y, rec.array(), frame_stride, prob.dt,
                       t_final=prob.t_final, kind="reversed")
    movie.info["iterations"] = result.iterations
    if probe_rec is not None:
        movie.info["probe_values"] = probe_rec.array()
    return movie
