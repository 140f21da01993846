import math

import numpy as np
import pytest
import scipy.sparse as sp

from elastotr.assembly import OperatorSet
from elastotr.mesh import rectangle_mesh
from elastotr.stepper import (CenteredScheme, FieldState, Recorder, energy, max_stable_dt, run,
                              stable_dt, step)


class _Speed:
    def __init__(self, v):
        self.v = v

    def max_p_speed(self):
        return self.v


def _scalar_ops(m, k, b=0.0):
    """One fluid unknown plus an inert solid pair: a damped oscillator."""
    d = lambda x: sp.csr_matrix([[x]])  # noqa: E731
    s = sp.identity(2, format="csr")
    z = sp.csr_matrix((2, 2))
    return OperatorSet(None, d(m), d(k), d(b), d(0.0), s, z, z, sp.csr_matrix((1, 2)))


@pytest.fixture(scope="module")
def dt(mesh, scene):
    return stable_dt(mesh, scene, 0.3)


def _random_state(ops, dt, rng, scale=1.0):
    x0 = rng.standard_normal(ops.n_dofs)
    x1 = x0 + 0.01 * rng.standard_normal(ops.n_dofs)
    # give pressures and velocities comparable energy
    w = np.concatenate([np.full(ops.n_fluid, 1e6), np.full(ops.n_solid, 1e-3)]) * scale
    return FieldState(w * x0, w * x1, ops.n_fluid, dt)


def test_stable_dt_examples():
    unit = rectangle_mesh([0.0, 1.0, 2.0], [0.0, 1.0])
    assert stable_dt(unit, _Speed(1.0), 0.5, degree=1) == pytest.approx(0.5)
    fine = rectangle_mesh([0.0, 1.2e-3], [0.0, 1.2e-3])
    assert stable_dt(fine, _Speed(1500.0), 0.5, degree=1) == pytest.approx(4e-7)
    assert stable_dt(unit, _Speed(1.0), 0.5) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        stable_dt(unit, _Speed(1.0), 1.5)


def test_default_dt_is_below_leapfrog_limit(ops, dt):
    assert dt < max_stable_dt(ops)


def test_scalar_recurrence():
    m, k, h = 2.0, 3.0, 0.1
    ops = _scalar_ops(m, k)
    s = FieldState(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]), 1, h)
    xs = [1.0, 1.0]
    for _ in range(20):
        s = step(s, ops, tol=1e-14)
        xs.append(2 * xs[-1] - xs[-2] - h * h * k / m * xs[-1])
        assert s.curr[0] == pytest.approx(xs[-1], rel=1e-12)


def test_damped_scalar_recurrence():
    m, k, b, h = 1.0, 4.0, 0.5, 0.05
    ops = _scalar_ops(m, k, b)
    s = FieldState(np.array([0.0, 0, 0]), np.array([h, 0, 0]), 1, h)
    x = [0.0, h]
    for _ in range(30):
        s = step(s, ops, tol=1e-14)
        x.append(((2 * m / h**2 - k) * x[-1] + (-m / h**2 + b / (2 * h)) * x[-2])
                 / (m / h**2 + b / (2 * h)))
        assert s.curr[0] == pytest.approx(x[-1], rel=1e-11, abs=1e-14)


def test_second_order_in_time():
    # x'' + w^2 x = 0 from the exact first two levels, compared where cos has
    # maximal slope so the phase error is not squared away
    w, T = 2.0 * math.pi, 1.25
    ops = _scalar_ops(1.0, w * w)
    errs = []
    for n in (50, 100, 200):
        h = T / n
        s = FieldState(np.array([math.cos(-w * h), 0, 0]), np.array([1.0, 0, 0]), 1, h)
        s = run(ops, h, n, state=s, tol=1e-14).state
        errs.append(abs(s.curr[0] - math.cos(w * T)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(o == pytest.approx(2.0, abs=0.1) for o in orders)


def test_zero_stays_zero(ops, dt):
    s = run(ops, dt, 20).state
    assert not np.any(s.curr) and not np.any(s.prev)


def test_linearity_in_load(ops, dt, rng):
    a = rng.standard_normal(ops.n_dofs)
    b = rng.standard_normal(ops.n_dofs)
    sig = lambda t: math.sin(1e5 * t)  # noqa: E731
    xa = run(ops, dt, 15, a, sig, tol=1e-13).state.curr
    xb = run(ops, dt, 15, b, sig, tol=1e-13).state.curr
    xab = run(ops, dt, 15, 2 * a - b, sig, tol=1e-13).state.curr
    assert np.allclose(xab, 2 * xa - xb, rtol=1e-8, atol=1e-8 * np.abs(xab).max())


def test_energy_conserved_closed(ops, dt, rng):
    c = ops.closed()
    s = _random_state(c, dt, rng)
    e0 = energy(s, c).total
    sch = CenteredScheme(c, dt, tol=1e-14)
    for _ in range(40):
        s = sch.step(s)
    assert energy(s, c).total == pytest.approx(e0, rel=1e-8)
    assert e0 > 0


def test_energy_non_increasing_with_abc(ops, dt, rng):
    s = _random_state(ops, dt, rng)
    sch = CenteredScheme(ops, dt, tol=1e-14)
    e = [energy(s, ops).total]
    for _ in range(40):
        s = sch.step(s)
        e.append(energy(s, ops).total)
    inc = np.diff(e)
    assert np.all(inc <= 1e-9 * e[0])
    assert e[-1] < e[0]


def test_swap_undoes_closed_march(ops, dt, rng):
    c = ops.closed()
    s0 = _random_state(c, dt, rng)
    s = run(c, dt, 30, state=s0, tol=1e-14).state
    back = run(c.time_reversed(), dt, 30, state=s.swapped(), tol=1e-14).state.swapped()
    scale = np.abs(s0.curr).max()
    assert np.max(np.abs(back.curr - s0.curr)) < 1e-8 * scale
    assert np.max(np.abs(back.prev - s0.prev)) < 1e-8 * scale


def test_recorder_levels(ops, dt):
    r3 = Recorder(lambda x: x[:2], 3)
    r5 = Recorder(lambda x: x[:2], 5)
    run(ops, dt, 10, recorders=[r3, r5])
    assert len(r3.frames) == 4 and len(r5.frames) == 3
    assert r5.times == pytest.approx([0.0, 5 * dt, 10 * dt])
    assert r3.array().shape == (4, 2)
    with pytest.raises(ValueError):
        Recorder(lambda x: x, 0)


def test_dirichlet_values_imposed(ops, dt, rng):
    dofs = np.array([3, 7, 11])
    vals = rng.standard_normal(3)
    s = step(FieldState.zeros(ops, dt), ops, dirichlet=(dofs, vals), tol=1e-13)
    assert np.allclose(s.curr[dofs], vals, rtol=1e-12)


def test_run_requires_reaching_t_final(ops, dt):
    with pytest.raises(ValueError):
        run(ops, dt, 5, t_final=10 * dt)


def test_field_state_validation():
    with pytest.raises(ValueError):
        FieldState(np.zeros(3), np.zeros(3), 1, 0.0)
    with pytest.raises(ValueError):
        FieldState(np.zeros(3), np.zeros(4), 1, 1.0)
    s = FieldState(np.arange(4.0), np.arange(4.0) + 10, 1, 1.0)
    assert np.array_equal(s.p_curr, [10.0]) and np.array_equal(s.u_prev, [1.0, 2.0, 3.0])
    assert np.array_equal(s.swapped().curr, np.arange(4.0))
