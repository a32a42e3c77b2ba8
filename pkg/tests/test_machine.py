import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from imdsr.machine import (
    DomainError, IntegrationDiverged, MachineInput, MachineParams, MachineState,
    _rhs, electrical_derivative, fo_current_derivative, magnetic_energy,
    mechanical_derivative, rk4_step, step, torque,
)

P = MachineParams()
# default parameters reduced by hand: Lsigma = 0.032 - 0.031**2/0.032 = 63/32000 H
LSIGMA = 63 / 32000
A_DIAG = 775.4991567460318   # Rs/Lsigma + Rr Lm^2/(Lr^2 Lsigma)
RR_LM_LR = 0.850853125       # Rr Lm / Lr


def _symbolic_matrix():
    """Eq.-1-style system matrix and input gain built with exact rationals."""
    Rs, Rr = sp.Rational("0.7025"), sp.Rational("0.8783")
    Ls, Lr, Lm = sp.Rational("0.032"), sp.Rational("0.032"), sp.Rational("0.031")
    Lsig = Ls - Lm ** 2 / Lr
    we, wr = sp.symbols("we wr")
    a = Rs / Lsig + Rr * Lm ** 2 / (Lr ** 2 * Lsig)
    b = Rr * Lm / (Lr ** 2 * Lsig)
    c = wr * Lm / (Lr * Lsig)
    A = sp.Matrix([
        [-a, we, b, c],
        [-we, -a, -c, b],
        [Rr * Lm / Lr, 0, -Rr / Lr, we - wr],
        [0, Rr * Lm / Lr, -(we - wr), -Rr / Lr],
    ])
    return A, 1 / Lsig, we, wr


def test_lsigma_default_is_total_leakage():
    assert P.Lsigma == pytest.approx(LSIGMA, rel=1e-12)
    assert P.Ts == pytest.approx(62.5e-6)


@pytest.mark.parametrize("bad", [
    {"Rs": 0.0}, {"J": -1.0}, {"B": -0.1}, {"P": 0}, {"Lm": 0.04}, {"Vdc": float("nan")},
])
def test_params_reject_invalid(bad):
    with pytest.raises(DomainError):
        MachineParams(**bad)


def test_params_reject_inconsistent_lsigma():
    with pytest.raises(DomainError):
        MachineParams(Lsigma=0.002)


def test_derivative_zero_at_origin():
    np.testing.assert_array_equal(electrical_derivative(MachineState(), MachineInput(), P), 0.0)


def test_derivative_unit_vds():
    d = electrical_derivative(MachineState(), MachineInput(vds=1.0), P)
    assert d[0] == pytest.approx(1 / LSIGMA, rel=1e-12)  # 507.936507...
    assert d[0] == pytest.approx(507.93650793650795, rel=1e-12)
    np.testing.assert_array_equal(d[1:], 0.0)


def test_derivative_first_column():
    d = electrical_derivative(MachineState(ids=1.0), MachineInput(), P)
    np.testing.assert_allclose(d, [-A_DIAG, 0.0, RR_LM_LR, 0.0], rtol=1e-12)


def test_derivative_matches_symbolic_oracle():
    A, g, we, wr = _symbolic_matrix()
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.uniform(-20, 20, 4) * [1, 1, 0.05, 0.05]
        u = rng.uniform(-200, 200, 2)
        w_e, w_r = rng.uniform(-400, 400, 2)
        num = np.array(A.subs({we: w_e, wr: w_r}).evalf(), dtype=float)
        expected = num @ x + float(g) * np.array([u[0], u[1], 0.0, 0.0])
        got = electrical_derivative(MachineState(*x, omega_r=w_r),
                                    MachineInput(u[0], u[1], w_e), P)
        np.testing.assert_allclose(got, expected, rtol=1e-11, atol=1e-9)


def test_derivative_rejects_nonfinite():
    with pytest.raises(DomainError):
        electrical_derivative(MachineState(ids=float("inf")), MachineInput(), P)
    with pytest.raises(DomainError):
        electrical_derivative(MachineState(), MachineInput(vqs=float("nan")), P)


def test_input_superposition():
    rng = np.random.default_rng(3)
    s = MachineState(3.0, -2.0, 0.3, 0.01, 50.0)
    zero = electrical_derivative(s, MachineInput(omega_e=80.0), P)

    def resp(vd, vq):
        return electrical_derivative(s, MachineInput(vd, vq, 80.0), P) - zero

    for _ in range(50):
        u1, u2 = rng.uniform(-100, 100, (2, 2))
        a, b = rng.uniform(-3, 3, 2)
        lhs = resp(*(a * u1 + b * u2))
        rhs = a * resp(*u1) + b * resp(*u2)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-8)


def test_fo_derivative_origin_and_equality():
    np.testing.assert_array_equal(fo_current_derivative(MachineState(), MachineInput(), P), 0.0)
    s = MachineState(4.0, 7.0, 0.4, 0.0, 120.0)
    u = MachineInput(12.0, 80.0, 125.0)
    np.testing.assert_allclose(fo_current_derivative(s, u, P),
                               electrical_derivative(s, u, P)[:2], rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-50, 50)] * 2, st.floats(-1, 1), st.floats(-500, 500),
                 st.floats(-300, 300), st.floats(-300, 300), st.floats(-600, 600)))
def test_fo_derivative_property(v):
    ids, iqs, ldr, wr, vd, vq, we = v
    s = MachineState(ids, iqs, ldr, 0.0, wr)
    u = MachineInput(vd, vq, we)
    full = electrical_derivative(s, u, P)[:2]
    fo = fo_current_derivative(s, u, P)
    scale = np.maximum(np.abs(full), 1e-300)
    assert np.all(np.abs(fo - full) <= 1e-12 * scale + 1e-9)


def test_torque_examples():
    assert torque(MachineState(lam_dr=0.8, iqs=0.0), P) == 0.0
    assert torque(MachineState(lam_dr=1.0, iqs=10.0), P) == pytest.approx(14.53125, rel=1e-12)
    assert torque(MachineState(lam_dr=1.0, iqs=-10.0), P) == pytest.approx(-14.53125, rel=1e-12)


def test_mechanical_derivative_examples():
    s = MachineState(omega_r=30.0)
    assert mechanical_derivative(s, 3.0, MachineInput(T_load=3.0), P) == 0.0
    assert mechanical_derivative(MachineState(), 14.53125, MachineInput(), P) == pytest.approx(4843.75)
    assert mechanical_derivative(MachineState(), -1.0, MachineInput(), P) < 0
    pb = P.with_overrides(B=0.01)
    # viscous friction term B * omega_m with omega_m = omega_r / P
    assert mechanical_derivative(MachineState(omega_r=100.0), 0.0, MachineInput(), pb) == \
        pytest.approx(2 * (-0.01 * 50.0) / 0.006)


def test_rk4_kernel_scalar_exponential():
    y1 = rk4_step(lambda y: -y, 1.0, 0.1)
    assert y1 == pytest.approx(0.90483750, abs=5e-9)
    assert abs(y1 - math.exp(-0.1)) < 1e-7


def test_step_equilibrium():
    s = MachineState(theta_e=1.25)
    out = step(s, MachineInput(), P, 1e-5, n=10)
    assert out == s


def test_fast_step_matches_generic_kernel():
    s = MachineState(2.0, 5.0, 0.2, -0.01, 40.0)
    u = MachineInput(20.0, 60.0, 70.0, 1.5)
    h = P.Ts / 16

    def f(y):
        return _rhs(y, u.vds, u.vqs, u.omega_e, u.T_load, P)

    y = s.as_array()
    for _ in range(16):
        y = rk4_step(f, y, h)
    got = step(s, u, P, h, n=16)
    np.testing.assert_allclose(got.as_array(), y, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("we", [0.0, 377.0, -377.0, 1e5])
def test_theta_wrapped(we):
    s = MachineState(theta_e=6.2)
    for _ in range(20):
        s = step(s, MachineInput(omega_e=we), P, 1e-3)
        assert 0.0 <= s.theta_e < 2 * math.pi


def test_step_divergence_names_state():
    bad = P.with_overrides(J=1e-300)
    with pytest.raises(IntegrationDiverged) as exc:
        step(MachineState(lam_dr=1.0, iqs=1e10), MachineInput(), bad, 1e-3, n=50, t=0.25)
    assert exc.value.state_name in ("ids", "iqs", "lam_dr", "lam_qr", "omega_r")
    assert "0.25" in str(exc.value)


def test_step_rejects_bad_h():
    with pytest.raises(DomainError):
        step(MachineState(), MachineInput(), P, 0.0)


def test_passive_decay_energy_non_increasing():
    s = MachineState(12.0, -7.0, 0.35, 0.1, 0.0)
    e_prev = magnetic_energy(s, P)
    for _ in range(1000):
        s = step(s, MachineInput(), P, 1e-4)
        s = MachineState(s.ids, s.iqs, s.lam_dr, s.lam_qr, 0.0, s.theta_e)
        e = magnetic_energy(s, P)
        assert e <= e_prev * (1 + 1e-12)
        e_prev = e
    assert e_prev < 0.5 * magnetic_energy(MachineState(12.0, -7.0, 0.35, 0.1), P)
