"""Centered second-order time marching of the monolithic coupled system.

With ``M`` the block mass, ``K`` the block stiffness and ``G`` every term
acting on first time derivatives (absorbing forms and the skew interface
coupling), one step solves

    M (x+ - 2 x0 + x-) / dt^2 + K x0 + G (x+ - x-) / (2 dt) = F(t_n)

for ``x+``.  The step matrix ``M / dt^2 + G / (2 dt)`` is constant, so it is
built, diagonally scaled and constrained once per scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .assembly import OperatorSet
from .linalg import SolverError, solve_general, solve_spd
from .mesh import Mesh
from .scene import SceneSpec

DEFAULT_TOL = 1e-10
# measured on the Lagrange node spacing; P2 consistent mass on right
# triangles goes unstable near 0.41
DEFAULT_CFL = 0.3


@dataclass
class FieldState:
    """Two consecutive time levels of the full unknown vector."""

    prev: np.ndarray
    curr: np.ndarray
    n_fluid: int
    dt: float
    n: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.prev.shape != self.curr.shape:
            raise ValueError("state vectors differ in length")

    @classmethod
    def zeros(cls, ops: OperatorSet, dt: float) -> "FieldState":
        return cls(np.zeros(ops.n_dofs), np.zeros(ops.n_dofs), ops.n_fluid, dt)

    @property
    def p_prev(self) -> np.ndarray:
        return self.prev[: self.n_fluid]

    @property
    def p_curr(self) -> np.ndarray:
        return self.curr[: self.n_fluid]

    @property
    def u_prev(self) -> np.ndarray:
        return self.prev[self.n_fluid:]

    @property
    def u_curr(self) -> np.ndarray:
        return self.curr[self.n_fluid:]

    def swapped(self) -> "FieldState":
        return FieldState(self.curr.copy(), self.prev.copy(), self.n_fluid, self.dt, self.n)


@dataclass
class EnergyReport:
    kinetic: float
    deformation: float
    total: float
    step: int


def stable_dt(mesh: Mesh, scene: SceneSpec, cfl: float = DEFAULT_CFL, degree: int = 2) -> float:
    """``cfl * (h_min / degree) / V_max`` with ``V_max`` the fastest P speed.

    ``h_min / degree`` is the smallest spacing between Lagrange nodes.
    """
    if not 0 < cfl <= 1:
        raise ValueError("cfl must lie in (0, 1]")
    return cfl * mesh.h_min() / degree / scene.max_p_speed()


def max_stable_dt(ops: OperatorSet) -> float:
    """Exact leapfrog limit ``2 / sqrt(lambda_max(M^-1 K))`` (diagnostic)."""
    lam = eigsh(ops.stiffness(), k=1, M=ops.mass(), which="LA", return_eigenvectors=False)[0]
    return 2.0 / math.sqrt(lam)


class CenteredScheme:
    """Precomputed step operator for fixed operators, dt and constrained dofs.

    The system is solved in symmetrically scaled form ``S A S y = S b`` with
    ``S = |diag A|^(-1/2)`` so that pressures and velocities, whose natural
    magnitudes differ by many orders, weigh equally in the residual.
    Constrained dofs are eliminated symmetrically (row and column), which
    keeps the matrix symmetric whenever the coupling is absent.
    """

    def __init__(self, ops: OperatorSet, dt: float, constrained: Sequence[int] | None = None,
                 tol: float = DEFAULT_TOL, maxit: int = 5000):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.ops = ops
        self.dt = dt
        self.tol = tol
        self.maxit = maxit
        self.iterations = 0
        M = ops.mass()
        K = ops.stiffness()
        G = ops.first_order()
        A = (M / dt**2 + G / (2 * dt)).tocsr()
        self.R0 = (2.0 * M / dt**2 - K).tocsr()
        self.R1 = (-M / dt**2 + G / (2 * dt)).tocsr()
        self.scale = 1.0 / np.sqrt(np.abs(A.diagonal()))
        S = sp.diags(self.scale)
        As = (S @ A @ S).tocsr()
        self.constrained = np.unique(np.asarray(constrained if constrained is not None else [],
                                                dtype=np.int64))
        if len(self.constrained):
            keep = np.ones(A.shape[0], bool)
            keep[self.constrained] = False
            self.col_block = As[:, self.constrained].tocsr()
            D = sp.diags(keep.astype(float))
            As = (D @ As @ D + sp.diags((~keep).astype(float))).tocsr()
        else:
            self.col_block = None
        As.eliminate_zeros()
        self.A = As
        asym = abs(As - As.T)
        self.symmetric = asym.nnz == 0 or asym.max() <= 1e-14 * abs(As).max()
        self.dinv = 1.0 / As.diagonal()

    def step(self, state: FieldState, load: np.ndarray | None = None,
             values: np.ndarray | None = None) -> FieldState:
        """Advance one step; ``values`` are imposed on the constrained dofs."""
        rhs = self.R0 @ state.curr + self.R1 @ state.prev
        if load is not None:
            rhs += load
        b = self.scale * rhs
        y0 = (2.0 * state.curr - state.prev) / self.scale
        if len(self.constrained):
            yd = np.asarray(values, dtype=float) / self.scale[self.constrained]
            b -= self.col_block @ yd
            b[self.constrained] = yd
            y0[self.constrained] = yd
        try:
            if self.symmetric:
                y = solve_spd(self.A, b, tol=self.tol, maxit=self.maxit, x0=y0)
            else:
                stats: dict = {}
                y = solve_general(self.A, b, tol=self.tol, maxit=self.maxit, x0=y0,
                                  precond=self.dinv, stats=stats)
                self.iterations += stats.get("iterations", 0)
        except SolverError as exc:
            raise SolverError(f"step {state.n}: {exc}", exc.residual, exc.iterations) from exc
        nxt = self.scale * y
        return FieldState(state.curr, nxt, state.n_fluid, state.dt, state.n + 1)


_SCHEMES: dict = {}


def step(state: FieldState, ops: OperatorSet, load: np.ndarray | None = None,
         dirichlet: tuple[np.ndarray, np.ndarray] | None = None,
         tol: float = DEFAULT_TOL) -> FieldState:
    """One centered step; ``dirichlet`` is ``(dofs, values)`` at the new level.

    Schemes are cached per operator set, time step and constraint pattern.
    """
    if dirichlet is None:
        dofs = np.zeros(0, np.int64)
    else:
        dofs = np.asarray(dirichlet[0], dtype=np.int64)
    key = (id(ops), state.dt, dofs.tobytes(), tol)
    scheme = _SCHEMES.get(key)
    if scheme is None or scheme.ops is not ops:
        if len(_SCHEMES) > 8:
            _SCHEMES.clear()
        scheme = CenteredScheme(ops, state.dt, dofs, tol=tol)
        _SCHEMES[key] = scheme
    values = None
    if len(dofs):
        order = np.argsort(dofs, kind="stable")
        uniq, first = np.unique(dofs[order], return_index=True)
        values = np.asarray(dirichlet[1], dtype=float)[order][first]
    return scheme.step(state, load, values)


def energy(state: FieldState, ops: OperatorSet) -> EnergyReport:
    """Discrete energy at the half level between ``prev`` and ``curr``.

    Rates are ``(curr - prev) / dt`` and the deformation term uses midpoint
    values.  The kinetic term is measured with ``M - dt^2 K / 4``, which
    makes the total exactly conserved by the scheme in a closed domain and
    non-increasing when absorbing terms are present.
    """
    dt = state.dt
    v = (state.curr - state.prev) / dt
    xm = 0.5 * (state.curr + state.prev)
    M = ops.mass()
    K = ops.stiffness()
    kin = 0.5 * (v @ (M @ v) - 0.25 * dt**2 * (v @ (K @ v)))
    deform = 0.5 * (xm @ (K @ xm))
    return EnergyReport(float(kin), float(deform), float(kin + deform), state.n)


class Recorder:
    """Samples ``extract(x)`` at every ``stride``-th time level (0, k, 2k, ...)."""

    def __init__(self, extract: Callable[[np.ndarray], np.ndarray], stride: int = 1):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.extract = extract
        self.stride = stride
        self.times: list[float] = []
        self.frames: list[np.ndarray] = []

    def __call__(self, n: int, t: float, x: np.ndarray) -> None:
        if n % self.stride == 0:
            self.times.append(t)
            self.frames.append(np.array(self.extract(x), dtype=float, copy=True))

    def array(self) -> np.ndarray:
        return np.array(self.frames)


@dataclass
class RunResult:
    state: FieldState
    recorders: list = field(default_factory=list)
    iterations: int = 0


def run(ops: OperatorSet, dt: float, n_steps: int, load: np.ndarray | None = None,
        signal: Callable[[float], float] | None = None, recorders: Sequence[Recorder] = (),
        state: FieldState | None = None, dirichlet_dofs: np.ndarray | None = None,
        dirichlet_values: Callable[[int], np.ndarray] | np.ndarray | None = None,
        tol: float = DEFAULT_TOL, scheme: CenteredScheme | None = None,
        t_final: float | None = None) -> RunResult:
    """March ``n_steps`` steps from ``state`` (zero by default).

    Recorders see every level from the starting one up to and including the
    level reached by the last step.  The load applied at step ``n`` is
    ``load * signal(t_n)``.  Dirichlet values for the level reached by step
    ``n`` are ``dirichlet_values[n+1]`` (array) or ``dirichlet_values(n+1)``
    (callable).
    """
    if t_final is not None and n_steps * dt < t_final * (1 - 1e-12):
        raise ValueError("n_steps * dt does not reach t_final")
    if state is None:
        state = FieldState.zeros(ops, dt)
    if scheme is None:
        scheme = CenteredScheme(ops, dt, dirichlet_dofs, tol=tol)
    for k in range(n_steps):
        t = state.n * dt
        for rec in recorders:
            rec(state.n, t, state.curr)
        f = None
        if load is not None and signal is not None:
            s = signal(t)
            if s != 0.0:
                f = load * s
        vals = None
        if len(scheme.constrained):
            nxt = state.n + 1
            vals = dirichlet_values(nxt) if callable(dirichlet_values) else dirichlet_values[nxt]
        state = scheme.step(state, f, vals)
    for rec in recorders:
        rec(state.n, state.n * dt, state.curr)
    return RunResult(state, list(recorders), scheme.iterations)
