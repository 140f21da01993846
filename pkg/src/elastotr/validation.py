"""Self-checks of the discretisation: structure, reversibility, energy,
reflection at the fluid/solid interface and convergence order.

Each ``measure_*`` function runs one numerical experiment and returns the
measured quantities; :func:`run_suite` compares them with their targets.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import OperatorSet, assemble_fluid, assemble_operators, assemble_sources
from .forward import ricker
from .mesh import build_dofmap, generate_mesh, rectangle_mesh
from .scene import FLUID, FluidMaterial, SceneSpec, builtin_presets, derive_velocities, impedance
from .stepper import CenteredScheme, FieldState, energy, stable_dt


def _two_layer_scene(width: float, fluid_h: float, solid_h: float, nu0: float = 1.0e5,
                     skin: bool = False) -> SceneSpec:
    p = builtin_presets()
    y_int = solid_h
    band = None
    if skin:
        band = (y_int, y_int - 0.2 * solid_h)
    return SceneSpec(domain=(0.0, 0.0, width, solid_h + fluid_h), interface_y=y_int,
                     fluid=p["fluid"], tissue=p["tissue"], skin=p["skin"] if skin else None,
                     skin_band=band, nu0=nu0, t_final=1.0)


def coupled_test_problem(cells: int = 12, skin: bool = True):
    """Small coupled fluid-over-solid box with its mesh, dof map and operators."""
    lw = 1.5e-2
    scene = _two_layer_scene(2 * lw, lw, lw, skin=skin)
    mesh = generate_mesh(scene, lw / cells * 2)
    dm = build_dofmap(mesh, 2)
    ops = assemble_operators(mesh, dm, scene)
    return scene, mesh, dm, ops


def symmetry_defect(A: sp.spmatrix) -> float:
    """``max |A - A^T| / max |A|``."""
    A = sp.csr_matrix(A)
    scale = abs(A).max()
    if scale == 0:
        return 0.0
    d = abs(A - A.T)
    return float(d.max() / scale) if d.nnz else 0.0


def measure_symmetry(ops: OperatorSet) -> dict[str, float]:
    """Relative asymmetry of every block that must be symmetric."""
    names = ("M_f", "K_f", "B_f", "E_f", "M_s", "K_s", "B_s")
    return {n: symmetry_defect(getattr(ops, n)) for n in names}


def measure_coupling(ops: OperatorSet) -> dict[str, float]:
    """Antisymmetry defect and the size of each coupling channel.

    Channels: normal velocity ``u2`` into fluid rows, pressure into ``u2``
    rows and pressure into ``u1`` rows.
    """
    cf, cs = ops.coupling_blocks()
    antisym = abs(cs + cf.T)
    u1 = slice(0, None, 2)
    u2 = slice(1, None, 2)
    cf = cf.tocsc()
    return {
        "antisymmetry": float(antisym.max()) if antisym.nnz else 0.0,
        "u2_to_fluid": float(abs(cf[:, u2]).max()),
        "u1_to_fluid": float(abs(cf[:, u1]).max()) if cf[:, u1].nnz else 0.0,
        "p_to_u2": float(abs(cs[u2, :]).max()),
        "p_to_u1": float(abs(cs[u1, :]).max()) if cs[u1, :].nnz else 0.0,
    }


def _bump_state(mesh, dm, ops, center, width, dt) -> FieldState:
    nodes = dm.nodes
    fl = np.nonzero(dm.fluid_index >= 0)[0]
    x = np.zeros(ops.n_dofs)
    r2 = ((nodes[fl] - np.asarray(center)) ** 2).sum(axis=1)
    x[dm.fluid_index[fl]] = np.exp(-r2 / width**2)
    return FieldState(x.copy(), x.copy(), ops.n_fluid, dt)


def measure_reversibility(n_steps: int = 500, cells: int = 12, tol: float = 1e-14,
                          negate_velocity: bool = False) -> dict:
    """March a closed coupled box ``n_steps`` forward, swap the two levels and
    march back.

    By default the backward march uses the time-reversed operators.  With
    ``negate_velocity`` it reuses the forward operators and instead flips the
    sign of the solid velocities at the swap, the convention of the reversed
    imaging run; both recover the initial levels up to that sign.
    """
    scene, mesh, dm, ops = coupled_test_problem(cells)
    ops = ops.closed()
    dt = stable_dt(mesh, scene)
    lw = scene.wavelength
    x0 = scene.domain[2] / 2
    state0 = _bump_state(mesh, dm, ops, (x0, scene.interface_y + 0.3 * lw), 0.15 * lw, dt)
    fwd = CenteredScheme(ops, dt, tol=tol)
    bwd = fwd if negate_velocity else CenteredScheme(ops.time_reversed(), dt, tol=tol)
    flip = np.ones(ops.n_dofs)
    if negate_velocity:
        flip[ops.n_fluid:] = -1.0
    s = FieldState(state0.prev.copy(), state0.curr.copy(), ops.n_fluid, dt)
    t0 = time.perf_counter()
    for _ in range(n_steps):
        s = fwd.step(s)
    moved = float(np.linalg.norm(s.curr - state0.curr) / np.linalg.norm(state0.curr))
    solid_peak = float(np.abs(s.u_curr).max())
    s = s.swapped()
    s = FieldState(flip * s.prev, flip * s.curr, ops.n_fluid, dt)
    for _ in range(n_steps):
        s = bwd.step(s)
    s = s.swapped()
    s = FieldState(flip * s.prev, flip * s.curr, ops.n_fluid, dt)
    ref = np.concatenate([state0.prev, state0.curr])
    got = np.concatenate([s.prev, s.curr])
    err = float(np.linalg.norm(got - ref) / np.linalg.norm(ref))
    return {"error": err, "moved": moved, "solid_peak": solid_peak, "steps": n_steps,
            "seconds": time.perf_counter() - t0}


def measure_energy(n_steps: int = 1000, cells: int = 12, cfl: float = 0.3, absorbing: bool = True,
                   tol: float = 1e-13) -> dict:
    """Energy history of a Ricker-driven coupled box, source cut after ``3/nu0``."""
    scene, mesh, dm, ops = coupled_test_problem(cells)
    if not absorbing:
        ops = ops.closed()
    dt = stable_dt(mesh, scene, cfl)
    lw = scene.wavelength
    src = (scene.domain[2] / 2, scene.interface_y + 0.5 * lw)
    load = assemble_sources(mesh, dm, src)
    t_off = 3.0 / scene.nu0
    if n_steps * dt < t_off + 3 * dt:
        raise ValueError(f"{n_steps} steps of {dt:.3g} s end before the source is cut at "
                         f"{t_off:.3g} s")
    scheme = CenteredScheme(ops, dt, tol=tol)
    s = FieldState.zeros(ops, dt)
    hist, times = [], []
    for _ in range(n_steps):
        t = s.n * dt
        f = load * float(ricker(t, scene.nu0)) if t < t_off else None
        s = scheme.step(s, f)
        hist.append(energy(s, ops).total)
        # energy at level n+1/2 is fixed once the load of step n is applied
        times.append((s.n - 0.5) * dt)
    hist = np.array(hist)
    times = np.array(times)
    after = times > t_off + dt
    return {"energy": hist, "times": times, "after_source": after, "dt": dt, "t_off": t_off}


def energy_drift(report: dict) -> float:
    e = report["energy"][report["after_source"]]
    return float((e.max() - e.min()) / abs(e[0]))


def energy_worst_increase(report: dict) -> float:
    """Largest ``E(n+1) / E(n) - 1`` after the source is off."""
    e = report["energy"][report["after_source"]]
    return float(np.max(e[1:] / e[:-1] - 1.0))


def reflection_oracle() -> float:
    """Normal-incidence pressure reflection coefficient fluid -> tissue."""
    p = builtin_presets()
    zf, zs = impedance(p["fluid"]), impedance(p["tissue"])
    return (zs - zf) / (zs + zf)


def measure_reflection(h: float = 2.5e-4, sigma: float = 1.5e-3, cfl: float = 0.3,
                       tol: float = 1e-11) -> dict:
    """Plane Gaussian pulse hitting the interface at normal incidence.

    The column is closed (no absorbing terms) and long enough that boundary
    echoes arrive after the measurement window; the solid's vertical sides
    carry ``u1 = 0`` so the plane wave stays one-dimensional.  Returns the
    signed peaks of the incident and reflected pulses at a fluid probe.
    """
    width = 2 * h
    fluid_h, solid_h = 30e-3, 30e-3
    scene = _two_layer_scene(width, fluid_h, solid_h)
    mesh = generate_mesh(scene, h)
    dm = build_dofmap(mesh, 2)
    ops = assemble_operators(mesh, dm, scene).closed()
    cf = derive_velocities(scene.fluid)[0]
    dt = stable_dt(mesh, scene, cfl)
    y_int = scene.interface_y
    y_probe = y_int + 15e-3
    y_start = y_int + 22e-3
    nodes = dm.nodes
    fl = np.nonzero(dm.fluid_index >= 0)[0]

    def pulse(y, t):
        # downgoing pulse centred at y_start at t = 0
        return np.exp(-0.5 * ((y - y_start + cf * t) / sigma) ** 2)

    state = FieldState.zeros(ops, dt)
    state.curr[dm.fluid_index[fl]] = pulse(nodes[fl, 1], 0.0)
    state.prev[dm.fluid_index[fl]] = pulse(nodes[fl, 1], -dt)
    sol = np.nonzero(dm.solid_index >= 0)[0]
    side = sol[(np.abs(nodes[sol, 0]) < 1e-12) | (np.abs(nodes[sol, 0] - width) < 1e-12)]
    fixed = dm.solid_dofs(side)[:, 0]
    scheme = CenteredScheme(ops, dt, fixed, tol=tol)
    zeros = np.zeros(len(scheme.constrained))
    probe_node = fl[np.argmin(np.hypot(nodes[fl, 0] - width / 2, nodes[fl, 1] - y_probe))]
    probe = dm.fluid_index[probe_node]
    t_inc = (y_start - nodes[probe_node, 1]) / cf
    t_ref = (y_start - y_int + nodes[probe_node, 1] - y_int) / cf
    t_end = t_ref + 6 * sigma / cf
    n = int(math.ceil(t_end / dt))
    trace = np.empty(n + 1)
    trace[0] = state.curr[probe]
    for k in range(n):
        state = scheme.step(state, None, zeros)
        trace[k + 1] = state.curr[probe]
    t = dt * np.arange(n + 1)
    split = 0.5 * (t_inc + t_ref)
    inc = trace[t < split]
    ref = trace[t >= split]
    i_peak = inc[np.argmax(np.abs(inc))]
    r_peak = ref[np.argmax(np.abs(ref))]
    return {"incident_peak": float(i_peak), "reflected_peak": float(r_peak),
            "ratio": float(r_peak / i_peak), "oracle": reflection_oracle(),
            "times": t, "trace": trace, "t_incident": t_inc, "t_reflected": t_ref}


def _fluid_strip_ops(n_cells: int, length: float = 1.0):
    """Closed all-fluid strip ``[0, 2h] x [0, length]`` with unit material."""
    h = length / n_cells
    xs = np.array([0.0, h, 2 * h])
    ys = np.linspace(0.0, length, n_cells + 1)
    mesh = rectangle_mesh(xs, ys, lambda x, y: np.full(np.shape(x), FLUID))
    dm = build_dofmap(mesh, 2)
    fluid = FluidMaterial(1.0, 1.0)
    scene = SceneSpec(domain=(0.0, -1.0, 2 * h, length), interface_y=-0.5, fluid=fluid,
                      tissue=builtin_presets()["tissue"], t_final=1.0)
    blocks = assemble_fluid(mesh, dm, scene)
    nf = blocks["M_f"].shape[0]
    zs = sp.csr_matrix((0, 0))
    ops = OperatorSet(dofmap=dm, M_f=blocks["M_f"], K_f=blocks["K_f"],
                      B_f=sp.csr_matrix((nf, nf)), E_f=sp.csr_matrix((nf, nf)),
                      M_s=zs, K_s=zs, B_s=zs, C=sp.csr_matrix((nf, 0)))
    return mesh, dm, ops


def measure_convergence(levels=(16, 32, 64, 128), t_end: float = 0.5, sigma: float = 0.08,
                        cfl: float = 0.3, tol: float = 1e-13) -> dict:
    """L2 errors of a plane pulse in a closed unit-speed strip.

    ``h`` and ``dt`` are halved together.  The exact solution is
    d'Alembert's with even reflections at both ends (Neumann walls).
    """
    y0 = 0.5

    def exact(y, t):
        total = np.zeros_like(y)
        # the pulse only travels 0.5 + 0.5, two images each side suffice
        for shift in (-4.0, -2.0, 0.0, 2.0, 4.0):
            for c in (y0 + shift, -y0 + shift):
                for sgn in (1.0, -1.0):
                    total += 0.5 * np.exp(-0.5 * ((y - c - sgn * t) / sigma) ** 2)
        return total

    errors, hs = [], []
    for n_cells in levels:
        mesh, dm, ops = _fluid_strip_ops(n_cells)
        h = 1.0 / n_cells
        # same dt rule as stable_dt: cfl * (h / 2) / speed
        dt0 = cfl * h / 2
        n_steps = int(math.ceil(t_end / dt0))
        dt = t_end / n_steps
        y = dm.nodes[:, 1]
        x_prev = exact(y, -dt)
        x_curr = exact(y, 0.0)
        state = FieldState(x_prev, x_curr, ops.n_fluid, dt)
        scheme = CenteredScheme(ops, dt, tol=tol)
        for _ in range(n_steps):
            state = scheme.step(state)
        e = state.curr - exact(y, t_end)
        M = ops.M_f  # unit lambda, so this is the plain L2 mass matrix
        errors.append(float(np.sqrt(e @ (M @ e))))
        hs.append(h)
    errors = np.array(errors)
    orders = np.log2(errors[:-1] / errors[1:])
    return {"h": np.array(hs), "errors": errors, "orders": orders}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class SuiteReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in self.checks]


def run_suite(ops: OperatorSet | None = None, quick: bool = False) -> SuiteReport:
    """All checks; ``ops`` replaces the structural test operators (for mutation tests)."""
    rep = SuiteReport()
    if ops is None:
        ops = coupled_test_problem()[3]
    sym = measure_symmetry(ops)
    worst = max(sym, key=sym.get)
    rep.checks.append(CheckResult("operator symmetry", sym[worst] <= 1e-12,
                                  f"worst block {worst} defect {sym[worst]:.2e}"))
    cp = measure_coupling(ops)
    ok = cp["antisymmetry"] == 0.0 and cp["u2_to_fluid"] > 0 and cp["p_to_u2"] > 0
    detail = (f"defect {cp['antisymmetry']:.1e}, u2->p {cp['u2_to_fluid']:.3e}, "
              f"p->u2 {cp['p_to_u2']:.3e}, p->u1 {cp['p_to_u1']:.1e}")
    rep.checks.append(CheckResult("coupling antisymmetry", ok, detail))
    rv = measure_reversibility(n_steps=100 if quick else 500)
    detail = f"relative error {rv['error']:.2e} after {rv['steps']} steps each way"
    rep.checks.append(CheckResult("reversibility", rv["error"] < 1e-8, detail))
    en = measure_energy(n_steps=600 if quick else 1000, absorbing=True)
    inc = energy_worst_increase(en)
    rep.checks.append(CheckResult("energy decay with absorbing boundaries", inc <= 1e-10,
                                  f"largest relative increase {inc:.2e}"))
    enc = measure_energy(n_steps=600 if quick else 1000, absorbing=False)
    drift = energy_drift(enc)
    rep.checks.append(CheckResult("energy conservation (closed)", drift < 1e-3,
                                  f"relative drift {drift:.2e}"))
    rf = measure_reflection()
    err = abs(rf["ratio"] - rf["oracle"])
    detail = f"measured {rf['ratio']:.4f} vs impedance oracle {rf['oracle']:.4f}"
    rep.checks.append(CheckResult("reflection coefficient", err <= 0.01, detail))
    cv = measure_convergence(levels=(16, 32, 64) if quick else (16, 32, 64, 128))
    rep.checks.append(CheckResult("convergence order", bool(np.all(cv["orders"] >= 1.8)),
                                  "orders " + ", ".join(f"{o:.2f}" for o in cv["orders"])))
    return rep
