"""
Cascaded field-oriented control for the induction machine.

Outer loops turn a speed error into a torque-current reference and a flux
reference into a magnetising-current reference. The inner loop is either a
decoupled PI current controller or a symbolic law of the current errors and
their integrals (x1..x4). Controller state is passed in and returned, never
stored globally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources

from . import expr as E
from .machine import MachineParams, wrap_angle

SQRT3 = math.sqrt(3.0)
LAMBDA_FLOOR = 1e-3
X_INT_MAX = 50.0
DEFAULT_FLUX_REF = 0.45


# ---------------------------------------------------------------- transforms

def park(a, b, c, theta):
    """Amplitude-invariant abc -> dq projection at frame angle ``theta``."""
    k = 2.0 / 3.0
    s = 2.0 * math.pi / 3.0
    d = k * (a * math.cos(theta) + b * math.cos(theta - s) + c * math.cos(theta + s))
    q = -k * (a * math.sin(theta) + b * math.sin(theta - s) + c * math.sin(theta + s))
    return d, q


def inverse_park(d, q, theta):
    s = 2.0 * math.pi / 3.0
    a = d * math.cos(theta) - q * math.sin(theta)
    b = d * math.cos(theta - s) - q * math.sin(theta - s)
    c = d * math.cos(theta + s) - q * math.sin(theta + s)
    return a, b, c


def phase_a(d, q, theta):
    """Phase-a component of the inverse Park transform; works on arrays."""
    import numpy as np
    return d * np.cos(theta) - q * np.sin(theta)


# ------------------------------------------------------------------------ PI

@dataclass(frozen=True)
class PiGains:
    kp: float
    ki: float
    out_min: float
    out_max: float

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("PI gains must be non-negative")
        if not self.out_min < self.out_max:
            raise ValueError("out_min must be < out_max")


@dataclass(frozen=True)
class PiState:
    integ: float = 0.0


def pi_update(e, st, g, Ts, out_min=None, out_max=None):
    """
    One step of a discrete PI with conditional-integration anti-windup.

    The integrator only advances when the candidate output is not already
    saturated in the direction the error pushes it. ``out_min``/``out_max``
    override the bounds in ``g`` (used to shift the PI range by a
    feedforward term).

    Returns
    -------
    (output, PiState)
    """
    lo = g.out_min if out_min is None else out_min
    hi = g.out_max if out_max is None else out_max
    di = g.ki * Ts * e
    u = g.kp * e + st.integ + di
    if u > hi:
        out = hi
        integ = st.integ if e > 0 else st.integ + di
    elif u < lo:
        out = lo
        integ = st.integ if e < 0 else st.integ + di
    else:
        out = u
        integ = st.integ + di
    integ = min(max(integ, lo), hi)
    return out, PiState(integ)


# ------------------------------------------------------------ controller I/O

@dataclass(frozen=True)
class ControllerInput:
    x1: float = 0.0  # d-axis current error (A)
    x2: float = 0.0  # q-axis current error (A)
    x3: float = 0.0  # integral of x1 (A s)
    x4: float = 0.0  # integral of x2 (A s)

    def as_tuple(self):
        return (self.x1, self.x2, self.x3, self.x4)


@dataclass(frozen=True)
class ControllerOutput:
    vd_ref: float = 0.0
    vq_ref: float = 0.0


def error_integrator(prev, e_d, e_q, Ts, x_int_max=X_INT_MAX):
    """Rectangle-rule accumulation of the current errors, clamped to +-x_int_max."""
    x3 = min(max(prev.x3 + e_d * Ts, -x_int_max), x_int_max)
    x4 = min(max(prev.x4 + e_q * Ts, -x_int_max), x_int_max)
    return ControllerInput(e_d, e_q, x3, x4)


def voltage_limit(vd, vq, v_max):
    """Circle limiter: scale (vd, vq) onto radius ``v_max`` keeping its angle."""
    mag = math.hypot(vd, vq)
    if mag <= v_max:
        return ControllerOutput(vd, vq)
    k = v_max / mag
    return ControllerOutput(vd * k, vq * k)


def slip_and_angle(iqs_ref, lam_dr_est, omega_r, theta_prev, params, Ts, lam_floor=LAMBDA_FLOOR):
    """Indirect rotor-flux orientation: slip from the torque-current demand."""
    p = params
    if abs(lam_dr_est) > lam_floor:
        omega_slip = p.Lm * p.Rr / (p.Lr * lam_dr_est) * iqs_ref
    else:
        omega_slip = 0.0
    omega_e = omega_r + omega_slip
    return omega_e, wrap_angle(theta_prev + omega_e * Ts)


# --------------------------------------------------------- current controllers

def decoupling_feedforward(omega_e, ids, iqs, lam_dr, params):
    """Cross-coupling compensation (vd_ff, vq_ff) for the PI current loops."""
    p = params
    vd_ff = -omega_e * p.Lsigma * iqs
    vq_ff = omega_e * p.Lsigma * ids + omega_e * (p.Lm / p.Lr) * lam_dr
    return vd_ff, vq_ff


def pi_current_voltages(inp, states, gains, Ts, feedforward=None):
    """
    Unlimited PI voltages per axis plus optional feedforward.

    The PI range is shifted by the feedforward so that anti-windup acts on
    the total axis voltage.

    Returns
    -------
    ((vd, vq), (PiState, PiState))
    """
    ff = feedforward or (0.0, 0.0)
    out = []
    new_states = []
    for e, st, g, f in zip((inp.x1, inp.x2), states, gains, ff):
        u, s = pi_update(e, st, g, Ts, g.out_min - f, g.out_max - f)
        out.append(u + f)
        new_states.append(s)
    return tuple(out), tuple(new_states)


def pi_current_controller(inp, states, gains, Ts, v_max, feedforward=None):
    """PI current control followed by the circle voltage limiter."""
    (vd, vq), new_states = pi_current_voltages(inp, states, gains, Ts, feedforward)
    return voltage_limit(vd, vq, v_max), new_states


def current_pi_gains(params, bandwidth_hz=1000.0, v_max=None):
    """Pole-placement tuning: kp = Lsigma*wb, ki = (Rs + Rr Lm^2/Lr^2)*wb."""
    p = params
    wb = 2.0 * math.pi * bandwidth_hz
    v = p.v_max if v_max is None else v_max
    g = PiGains(p.Lsigma * wb, (p.Rs + p.Rr * p.Lm ** 2 / p.Lr ** 2) * wb, -v, v)
    return g, g


def _shipped_law_text(axis):
    return resources.files("imdsr").joinpath("data", f"law_{axis}.expr").read_text(encoding="utf-8")


@dataclass(frozen=True)
class SymbolicLaw:
    """A pair of expressions mapping (x1, x2, x3, x4) to (vd*, vq*)."""

    vd: E.Expression
    vq: E.Expression

    @classmethod
    def shipped(cls):
        """The shipped symbolic current-control law."""
        return cls(E.parse(_shipped_law_text("vd")), E.parse(_shipped_law_text("vq")))

    @classmethod
    def from_dir(cls, path):
        from pathlib import Path
        path = Path(path)
        return cls(E.load_expression(path / "vd.expr"), E.load_expression(path / "vq.expr"))

    def voltages(self, inp):
        xs = inp.as_tuple()
        return E.evaluate(self.vd, xs), E.evaluate(self.vq, xs)


_SHIPPED = None


def default_law():
    global _SHIPPED
    if _SHIPPED is None:
        _SHIPPED = SymbolicLaw.shipped()
    return _SHIPPED


def dsr_current_controller(inp, law=None, v_max=None):
    """
    Memoryless symbolic current controller.

    Evaluates ``law`` (default: the shipped law parsed from its expression
    files) on the controller features and applies the circle limiter with
    radius ``v_max`` (default Vdc/sqrt(3) of the default machine).
    """
    law = law or default_law()
    vd, vq = law.voltages(inp)
    if v_max is None:
        v_max = MachineParams().v_max
    return voltage_limit(vd, vq, v_max)


# ---------------------------------------------------------------- outer loops

@dataclass(frozen=True)
class OuterGains:
    speed: PiGains
    flux: PiGains | None = None


def speed_pi_gains(params, bandwidth_hz=50.0, flux_ref=DEFAULT_FLUX_REF, i_max=30.0):
    """Speed PI from electrical speed error (rad/s) to iqs* (A), integral zero at wb/5."""
    p = params
    wb = 2.0 * math.pi * bandwidth_hz
    kt = 0.75 * p.P * (p.Lm / p.Lr) * flux_ref
    kp = wb * p.J / (p.P * kt)
    return PiGains(kp, kp * wb / 5.0, -i_max, i_max)


@dataclass(frozen=True)
class OuterState:
    speed: PiState = field(default_factory=PiState)
    flux: PiState = field(default_factory=PiState)


def outer_loops(omega_ref, omega_r, lam_ref, lam_dr_est, states, gains, params, Ts):
    """
    Speed and flux loops producing the current references.

    Returns
    -------
    (ids_ref, iqs_ref, OuterState)
    """
    iqs_ref, speed_st = pi_update(omega_ref - omega_r, states.speed, gains.speed, Ts)
    ids_ref = lam_ref / params.Lm
    flux_st = states.flux
    if gains.flux is not None and lam_dr_est is not None:
        trim, flux_st = pi_update(lam_ref - lam_dr_est, states.flux, gains.flux, Ts)
        ids_ref += trim
    return ids_ref, iqs_ref, replace(states, speed=speed_st, flux=flux_st)
