"""
Induction machine model in the synchronously rotating d-q frame.

States are the stator currents and rotor flux linkages (ids, iqs, lam_dr,
lam_qr) plus the electrical rotor speed and the frame angle. The electrical
part is linear in state and input; the mechanical part is a rigid body with
optional viscous friction. Defaults correspond to the 3.7 kW test machine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi

STATE_NAMES = ("ids", "iqs", "lam_dr", "lam_qr", "omega_r")


class DomainError(ValueError):
    """Raised for non-finite or otherwise invalid model inputs."""


class IntegrationDiverged(RuntimeError):
    """Raised when a state becomes non-finite during integration."""

    def __init__(self, state_name, t=None):
        self.state_name = state_name
        self.t = t
        where = "" if t is None else f" at t={t:.6g} s"
        super().__init__(f"integration diverged{where}: state '{state_name}' is not finite")


@dataclass(frozen=True)
class MachineParams:
    """
    Electrical and mechanical constants of the machine and drive.

    Parameters
    ----------
    Rs, Rr : float
        Stator and rotor resistance (ohm).
    Ls, Lr, Lm : float
        Stator, rotor and mutual inductance (H).
    Lsigma : float, optional
        Total leakage inductance referred to the stator (H). Computed as
        ``Ls - Lm**2 / Lr`` when omitted.
    P : int
        Pole pairs.
    J : float
        Rotor inertia (kg m^2).
    B : float
        Viscous friction (N m s/rad).
    Vdc : float
        DC-link voltage (V).
    Fs : float
        Switching frequency (Hz).
    Ts : float, optional
        Control sampling period (s), ``1/Fs`` when omitted.
    """

    Rs: float = 0.7025
    Rr: float = 0.8783
    Ls: float = 0.032
    Lr: float = 0.032
    Lm: float = 0.031
    Lsigma: float | None = None
    P: int = 2
    J: float = 0.006
    B: float = 0.0
    Vdc: float = 311.0
    Fs: float = 16000.0
    Ts: float | None = None

    def __post_init__(self):
        if self.Lsigma is None:
            object.__setattr__(self, "Lsigma", self.Ls - self.Lm ** 2 / self.Lr)
        if self.Ts is None:
            object.__setattr__(self, "Ts", 1.0 / self.Fs)
        self.validate()

    def validate(self):
        for name in ("Rs", "Rr", "Ls", "Lr", "Lm", "J", "Vdc", "Fs", "Ts", "Lsigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be finite and > 0, got {v!r}")
        if not (math.isfinite(self.B) and self.B >= 0):
            raise DomainError(f"B must be >= 0, got {self.B!r}")
        if int(self.P) != self.P or self.P < 1:
            raise DomainError(f"P must be an integer >= 1, got {self.P!r}")
        if self.Lm > min(self.Ls, self.Lr):
            raise DomainError("Lm must not exceed min(Ls, Lr)")
        expected = self.Ls - self.Lm ** 2 / self.Lr
        if abs(self.Lsigma - expected) > 1e-9 * abs(expected):
            raise DomainError(
                f"Lsigma={self.Lsigma!r} inconsistent with Ls - Lm^2/Lr = {expected!r}")

    def with_overrides(self, **overrides):
        """Return a copy with fields replaced; Lsigma and Ts are re-derived unless given."""
        overrides.setdefault("Lsigma", None)
        if "Fs" in overrides:
            overrides.setdefault("Ts", None)
        return replace(self, **overrides)

    @property
    def stator_rate(self):
        """Diagonal decay rate of the stator current rows, Rs/Ls' + Rr Lm^2/(Lr^2 Ls')."""
        return self.Rs / self.Lsigma + self.Rr * self.Lm ** 2 / (self.Lr ** 2 * self.Lsigma)

    @property
    def v_max(self):
        """Linear-modulation voltage limit Vdc/sqrt(3)."""
        return self.Vdc / math.sqrt(3.0)


@dataclass(frozen=True)
class MachineState:
    ids: float = 0.0
    iqs: float = 0.0
    lam_dr: float = 0.0
    lam_qr: float = 0.0
    omega_r: float = 0.0
    theta_e: float = 0.0

    def as_array(self):
        return np.array([self.ids, self.iqs, self.lam_dr, self.lam_qr, self.omega_r])


@dataclass(frozen=True)
class MachineInput:
    vds: float = 0.0
    vqs: float = 0.0
    omega_e: float = 0.0
    T_load: float = 0.0


def _check_finite(obj):
    for name, v in vars(obj).items():
        if not math.isfinite(v):
            raise DomainError(f"{type(obj).__name__}.{name} is not finite: {v!r}")


def _rhs(y, vds, vqs, omega_e, T_load, p):
    # y = (ids, iqs, lam_dr, lam_qr, omega_r); plain floats on purpose, this is the hot path
    ids, iqs, ldr, lqr, wr = y
    Ls_ = p.Lsigma
    a = p.stator_rate
    b = p.Rr * p.Lm / (p.Lr ** 2 * Ls_)
    c = wr * p.Lm / (p.Lr * Ls_)
    rl = p.Rr * p.Lm / p.Lr
    tr = p.Rr / p.Lr
    slip = omega_e - wr
    dids = -a * ids + omega_e * iqs + b * ldr + c * lqr + vds / Ls_
    diqs = -omega_e * ids - a * iqs - c * ldr + b * lqr + vqs / Ls_
    dldr = rl * ids - tr * ldr + slip * lqr
    dlqr = rl * iqs - slip * ldr - tr * lqr
    te = 0.75 * p.P * (p.Lm / p.Lr) * ldr * iqs
    dwr = p.P * (te - T_load - p.B * wr / p.P) / p.J
    return np.array([dids, diqs, dldr, dlqr, dwr])


def electrical_derivative(state, inp, params):
    """
    Time derivative of (ids, iqs, lam_dr, lam_qr).

    The omega_r * Lm coupling terms use Lr * Lsigma in the denominator in
    both current rows.

    Returns
    -------
    numpy.ndarray of shape (4,)
    """
    _check_finite(state)
    _check_finite(inp)
    y = (state.ids, state.iqs, state.lam_dr, state.lam_qr, state.omega_r)
    return _rhs(y, inp.vds, inp.vqs, inp.omega_e, inp.T_load, params)[:4]


def fo_current_derivative(state, inp, params):
    """Stator-current derivatives under rotor field orientation (lam_qr taken as 0)."""
    p = params
    a = p.stator_rate
    dids = (-a * state.ids + inp.omega_e * state.iqs
            + p.Rr * p.Lm / (p.Lr ** 2 * p.Lsigma) * state.lam_dr + inp.vds / p.Lsigma)
    diqs = (-a * state.iqs - inp.omega_e * state.ids
            - state.omega_r * p.Lm / (p.Lr * p.Lsigma) * state.lam_dr + inp.vqs / p.Lsigma)
    out = np.array([dids, diqs])
    if not np.all(np.isfinite(out)):
        raise DomainError("non-finite field-oriented current derivative")
    return out


def torque(state, params):
    """Electromagnetic torque (3P/4)(Lm/Lr) lam_dr iqs, with P the pole-pair count."""
    return 0.75 * params.P * (params.Lm / params.Lr) * state.lam_dr * state.iqs


def mechanical_derivative(state, Te, inp, params):
    """d(omega_r)/dt of the electrical rotor speed."""
    p = params
    return p.P * (Te - inp.T_load - p.B * state.omega_r / p.P) / p.J


def rk4_step(f, y, h):
    """One classical Runge-Kutta step of dy/dt = f(y) for array-like ``y``."""
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def wrap_angle(theta):
    theta = math.fmod(theta, TWO_PI)
    if theta < 0.0:
        theta += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    if theta >= TWO_PI:
        theta = 0.0
    return theta


def _state_from(y, theta_e, t=None):
    for name, v in zip(STATE_NAMES, y):
        if not math.isfinite(v):
            raise IntegrationDiverged(name, t)
    return MachineState(float(y[0]), float(y[1]), float(y[2]), float(y[3]), float(y[4]), theta_e)


def _held_rhs(params, vds, vqs, omega_e, T_load):
    # Float-only right-hand side with the input frozen; about 7x faster than _rhs.
    p = params
    a = p.stator_rate
    b = p.Rr * p.Lm / (p.Lr ** 2 * p.Lsigma)
    cw = p.Lm / (p.Lr * p.Lsigma)
    rl = p.Rr * p.Lm / p.Lr
    tr = p.Rr / p.Lr
    kt = 0.75 * p.P * p.Lm / p.Lr
    P, J, B = p.P, p.J, p.B
    ud = vds / p.Lsigma
    uq = vqs / p.Lsigma
    we = omega_e

    def f(i, q, d, r, w):
        c = w * cw
        s = we - w
        return (-a * i + we * q + b * d + c * r + ud,
                -we * i - a * q - c * d + b * r + uq,
                rl * i - tr * d + s * r,
                rl * q - s * d - tr * r,
                P * (kt * d * q - T_load - B * w / P) / J)
    return f


def _advance(y, f, h, n):
    # Unrolled RK4 on five floats; same arithmetic as rk4_step.
    i, q, d, r, w = y
    h2 = 0.5 * h
    h6 = h / 6.0
    for _ in range(n):
        a1, a2, a3, a4, a5 = f(i, q, d, r, w)
        b1, b2, b3, b4, b5 = f(i + h2 * a1, q + h2 * a2, d + h2 * a3, r + h2 * a4, w + h2 * a5)
        c1, c2, c3, c4, c5 = f(i + h2 * b1, q + h2 * b2, d + h2 * b3, r + h2 * b4, w + h2 * b5)
        d1, d2, d3, d4, d5 = f(i + h * c1, q + h * c2, d + h * c3, r + h * c4, w + h * c5)
        i += h6 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        q += h6 * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
        d += h6 * (a3 + 2.0 * b3 + 2.0 * c3 + d3)
        r += h6 * (a4 + 2.0 * b4 + 2.0 * c4 + d4)
        w += h6 * (a5 + 2.0 * b5 + 2.0 * c5 + d5)
    return i, q, d, r, w


def step(state, inp, params, h, n=1, t=None):
    """
    Advance the machine by ``n`` RK4 steps of size ``h`` with ``inp`` held.

    The frame angle advances by ``omega_e * h`` per step and is wrapped to
    [0, 2*pi).

    Raises
    ------
    IntegrationDiverged
        If any dynamic state becomes non-finite.
    """
    if not h > 0:
        raise DomainError(f"step size must be > 0, got {h!r}")
    _check_finite(inp)
    f = _held_rhs(params, inp.vds, inp.vqs, inp.omega_e, inp.T_load)
    y = _advance((state.ids, state.iqs, state.lam_dr, state.lam_qr, state.omega_r), f, h, n)
    theta = state.theta_e
    for _ in range(n):
        theta = wrap_angle(theta + inp.omega_e * h)
    return _state_from(y, theta, t)


def magnetic_energy(state, params):
    """Stored magnetic energy, Lsigma |i_s|^2 / 2 + |lam_r|^2 / (2 Lr)."""
    return (0.5 * params.Lsigma * (state.ids ** 2 + state.iqs ** 2)
            + (state.lam_dr ** 2 + state.lam_qr ** 2) / (2.0 * params.Lr))
