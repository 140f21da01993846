"""End-to-end imaging experiments: forward data, noise, reversal, images.

Forward and reversed runs use different meshes and therefore different
stable time steps.  Both are chosen so that their movies share one frame
interval, and the final time is rounded up to a whole number of frames, so
reversed frame ``m`` pairs exactly with incident frame ``N - m``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import OperatorSet, assemble_operators
from .config import Experiment
from .forward import (FieldMovie, RickerSource, TraceRecord, add_noise, imaging_grid, scattered,
                      simulate)
from .imaging import ImageField, aggregate_probes, rtm, rtm_percentage, rtm_sum
from .mesh import Mesh, build_dofmap, generate_mesh
from .reversal import build_tr_problem, run_reversed
from .scene import SceneSpec, derive_velocities
from .stepper import DEFAULT_CFL, DEFAULT_TOL, stable_dt


@dataclass(frozen=True)
class TimingPlan:
    dt_forward: float
    stride_forward: int
    dt_reverse: float
    stride_reverse: int
    t_final: float

    @property
    def frame_interval(self) -> float:
        return self.stride_forward * self.dt_forward

    @property
    def n_frames(self) -> int:
        return int(round(self.t_final / self.frame_interval)) + 1

    @property
    def n_forward(self) -> int:
        return self.stride_forward * (self.n_frames - 1)

    @property
    def n_reverse(self) -> int:
        return self.stride_reverse * (self.n_frames - 1)


def plan_timing(scene: SceneSpec, mesh_forward: Mesh, mesh_reverse: Mesh, *,
                cfl: float = DEFAULT_CFL, frame_stride: int = 4,
                t_final: float | None = None) -> TimingPlan:
    """Stable time steps for both meshes with a common frame interval.

    The forward step is the CFL step of the forward mesh and fixes the frame
    interval ``frame_stride * dt``.  The reversed step is the largest
    divisor of that interval not exceeding the reversed mesh's CFL step.
    """
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")
    t_final = scene.t_final if t_final is None else t_final
    dt_f = stable_dt(mesh_forward, scene, cfl)
    frame = frame_stride * dt_f
    n_frames = int(math.ceil(t_final / frame - 1e-9))
    dt_r_max = stable_dt(mesh_reverse, scene, cfl)
    k_r = int(math.ceil(frame / dt_r_max - 1e-9))
    return TimingPlan(dt_f, frame_stride, frame / k_r, k_r, n_frames * frame)


@dataclass
class ForwardProducts:
    experiment: Experiment
    total: TraceRecord
    incident: TraceRecord
    movie: FieldMovie

    @property
    def scattered(self) -> TraceRecord:
        return scattered(self.total, self.incident)


@dataclass
class ExperimentResult:
    experiment: Experiment
    forward: ForwardProducts
    data: TraceRecord
    reversed_movie: FieldMovie
    raw: dict[str, ImageField]
    percentage: dict[str, ImageField]
    seed: object = None


@dataclass
class PipelineResult:
    experiments: list[ExperimentResult]
    per_sra: dict[str, dict[int, ImageField]] = field(default_factory=dict)
    aggregate: dict[str, ImageField] = field(default_factory=dict)

    def final_image(self, variant: str) -> ImageField:
        """Sum over sources, aggregated over SRA placements."""
        return self.aggregate[variant]


class Pipeline:
    """Meshes, operators and timing shared by the experiments of one scene.

    ``h_forward``, ``h_reverse`` and ``grid_spacing`` are in metres.
    ``incident_cache`` may be shared between pipelines whose scenes have the
    same background; incident runs are then computed once.
    """

    def __init__(self, scene: SceneSpec, *, h_forward: float, h_reverse: float,
                 cfl: float = DEFAULT_CFL, frame_stride: int = 4,
                 grid_spacing: float | None = None, t_final: float | None = None,
                 tol: float = DEFAULT_TOL, incident_cache: dict | None = None):
        self.scene = scene
        self.h_forward = h_forward
        self.h_reverse = h_reverse
        self.cfl = cfl
        self.tol = tol
        self.mesh_forward = generate_mesh(scene, h_forward)
        self.mesh_reverse = generate_mesh(scene, h_reverse)
        self.dof_forward = build_dofmap(self.mesh_forward, 2)
        self.dof_reverse = build_dofmap(self.mesh_reverse, 2)
        self.timing = plan_timing(scene, self.mesh_forward, self.mesh_reverse, cfl=cfl,
                                  frame_stride=frame_stride, t_final=t_final)
        self.grid = imaging_grid(scene, grid_spacing)
        self.incident_cache = incident_cache if incident_cache is not None else {}
        self._ops: dict[str, OperatorSet] = {}

    def operators(self, which: str) -> OperatorSet:
        """``total`` / ``incident`` on the forward mesh, ``reverse`` on the other."""
        if which not in self._ops:
            if which == "total":
                ops = assemble_operators(self.mesh_forward, self.dof_forward, self.scene, True)
            elif which == "incident":
                ops = assemble_operators(self.mesh_forward, self.dof_forward, self.scene, False)
            elif which == "reverse":
                ops = assemble_operators(self.mesh_reverse, self.dof_reverse, self.scene, False)
            else:
                raise ValueError(f"unknown operator set {which!r}")
            self._ops[which] = ops
        return self._ops[which]

    def _incident_key(self, exp: Experiment):
        return (self.scene.without_inclusions(), self.h_forward, self.cfl, self.timing,
                self.grid[0], tuple(self.grid[1]), exp.sra, tuple(exp.source), self.tol)

    def forward(self, exp: Experiment, amplitude: float = 1.0) -> ForwardProducts:
        src = RickerSource(tuple(exp.source), self.scene.nu0, amplitude)
        common = dict(dt=self.timing.dt_forward, source=src, sra=exp.sra,
                      n_steps=self.timing.n_forward, dofmap=self.dof_forward, tol=self.tol)
        key = self._incident_key(exp) + (amplitude,)
        if key in self.incident_cache:
            inc_traces, movie = self.incident_cache[key]
        else:
            res = simulate(self.scene, self.mesh_forward, with_inclusions=False,
                           ops=self.operators("incident"),
                           frame_stride=self.timing.stride_forward, grid=self.grid, **common)
            inc_traces, movie = res.traces, res.movie
            self.incident_cache[key] = (inc_traces, movie)
        if self.scene.inclusions:
            total = simulate(self.scene, self.mesh_forward, with_inclusions=True,
                             ops=self.operators("total"), **common).traces
        else:
            total = TraceRecord(inc_traces.times, inc_traces.nodes, inc_traces.coords,
                                inc_traces.values.copy(), "total")
        return ForwardProducts(exp, total, inc_traces, movie)

    @staticmethod
    def noisy_data(products: ForwardProducts, coeff: float, seed, target: str = "scattered"
                   ) -> TraceRecord:
        """Scattered traces with multiplicative noise on the scattered or total field."""
        if target == "scattered":
            return add_noise(products.scattered, coeff, seed)
        if target == "total":
            noisy_total = add_noise(products.total, coeff, seed)
            diff = scattered(noisy_total, products.incident)
            return TraceRecord(diff.times, diff.nodes, diff.coords, diff.values, "scattered_noisy")
        raise ValueError("noise target must be 'scattered' or 'total'")

    def reverse(self, data: TraceRecord, sra: int) -> FieldMovie:
        prob = build_tr_problem(self.scene, self.mesh_reverse, data, self.timing.dt_reverse,
                                sra=sra, t_final=self.timing.t_final, dofmap=self.dof_reverse,
                                ops=self.operators("reverse"))
        return run_reversed(prob, frame_stride=self.timing.stride_reverse, grid=self.grid,
                            tol=self.tol)

    @staticmethod
    def images(reversed_movie: FieldMovie, incident: FieldMovie, variants, provenance=None
               ) -> tuple[dict, dict]:
        raw, pct = {}, {}
        for v in variants:
            raw[v] = rtm(reversed_movie, incident, v, provenance)
            pct[v] = rtm_percentage(raw[v], incident)
        return raw, pct

    def run_experiment(self, exp: Experiment, *, coeff: float = 0.10, seed=None,
                       variants=("component_u2",), target: str = "scattered",
                       products: ForwardProducts | None = None) -> ExperimentResult:
        if products is None:
            products = self.forward(exp)
        data = self.noisy_data(products, coeff, seed, target)
        rev = self.reverse(data, exp.sra)
        prov = [{"sra": exp.sra, "source": tuple(exp.source), "seed": seed, "coeff": coeff}]
        raw, pct = self.images(rev, products.movie, variants, prov)
        return ExperimentResult(exp, products, data, rev, raw, pct, seed)

    def run(self, experiments: list[Experiment], *, coeff: float = 0.10, seed: int = 0,
            variants=("component_u2",), target: str = "scattered", threads: int = 1
            ) -> PipelineResult:
        """All experiments; experiment ``i`` draws its noise from ``(seed, i)``."""
        if not experiments:
            raise ValueError("no experiments to run")
        jobs = [(i, e) for i, e in enumerate(experiments)]

        def one(job):
            i, e = job
            return self.run_experiment(e, coeff=coeff, seed=[seed, i], variants=variants,
                                       target=target)

        if threads > 1:
            # build shared operators before fanning out
            for which in ("total", "incident", "reverse"):
                if which != "total" or self.scene.inclusions:
                    self.operators(which)
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(one, jobs))
        else:
            results = [one(j) for j in jobs]
        return combine(results, variants)


def combine(results: list[ExperimentResult], variants) -> PipelineResult:
    """Per-SRA source sums and their aggregate over SRA placements."""
    out = PipelineResult(results)
    for v in variants:
        by_sra: dict[int, list[ImageField]] = {}
        for r in results:
            by_sra.setdefault(r.experiment.sra, []).append(r.percentage[v])
        sums = {k: rtm_sum(ims) for k, ims in sorted(by_sra.items())}
        out.per_sra[v] = sums
        out.aggregate[v] = aggregate_probes(list(sums.values()))
    return out


def wavelength_pipeline(scene: SceneSpec, h_forward: float = 0.1, h_reverse: float = 0.08,
                        grid_spacing: float = 0.1, **kwargs) -> Pipeline:
    """:class:`Pipeline` with lengths given in fluid wavelengths."""
    lw = scene.wavelength
    return Pipeline(scene, h_forward=h_forward * lw, h_reverse=h_reverse * lw,
                    grid_spacing=grid_spacing * lw, **kwargs)


def imaging_horizon(scene: SceneSpec, periods: float = 3.0) -> float:
    """Imaging time window for a scene.

    Vertical two-way time from the SRA to the deepest inclusion bottom plus
    ``periods / nu0``.  The fluid leg uses the fluid speed and the solid leg
    the tissue speed.  Falls back to ``scene.t_final`` when the scene has no inclusions.
    """
    if not scene.inclusions:
        return scene.t_final
    y_sra = max(max(s.start[1], s.end[1]) for s in scene.sras)
    bottom = min(i.bounding_box()[1] for i in scene.inclusions)
    v_f = derive_velocities(scene.fluid)[0]
    v_s = derive_velocities(scene.tissue)[0]
    one_way = (y_sra - scene.interface_y) / v_f + (scene.interface_y - bottom) / v_s
    return 2.0 * one_way + periods / scene.nu0


def experiments_for(scene: SceneSpec, sra: int = 0) -> list[Experiment]:
    """One experiment per scene source, all recorded by the same SRA."""
    return [Experiment(sra, tuple(s)) for s in scene.sources]


def argmax_distance(image: ImageField, point) -> float:
    return float(np.hypot(*(np.asarray(image.argmax()) - np.asarray(point, float))))
