"""
Closed-loop scenario simulation, timeseries logging and controller comparison.

A scenario is a JSON document::

    {
      "name": "const_500rpm",
      "duration": 1.2,
      "speed_profile": [[0.0, 0], [0.1, 0], [0.3, 500], [1.2, 500]],
      "load_profile": [[0.0, 0.0]],
      "flux_ref": 0.45,
      "controller": "pi",
      "machine": {},
      "control": {},
      "seed": 0
    }

``speed_profile`` is piecewise linear in (s, rpm) and held past its last
breakpoint; ``load_profile`` is piecewise constant in (s, N m) and zero
before its first step. ``controller`` is ``"pi"``, ``"dsr"`` or a directory
holding ``vd.expr`` and ``vq.expr``. ``control`` may override
``current_bw_hz``, ``speed_bw_hz``, ``i_max``, ``feedforward``,
``x_int_max`` and ``substeps``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import control as C
from .machine import MachineInput, MachineParams, MachineState, step, torque
from .metrics import SignalWindow, thd, tracking_metrics

TIMESERIES_COLUMNS = ("t", "omega_ref", "omega_r", "ids_ref", "ids", "iqs_ref", "iqs",
                      "lam_dr", "vd_ref", "vq_ref", "Te", "T_load", "x1", "x2", "x3", "x4")
REPORT_COLUMNS = ("controller", "axis_d_rmse", "axis_q_rmse", "thd", "rms_ia", "pkpk_err")
# logged alongside the CSV columns but not written out
EXTRA_COLUMNS = ("theta_e", "omega_e", "vd_raw", "vq_raw")

CONTROL_DEFAULTS = {
    "current_bw_hz": 1000.0,
    "speed_bw_hz": 50.0,
    "i_max": 30.0,
    "feedforward": True,
    "x_int_max": C.X_INT_MAX,
    "substeps": 16,
}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    speed_profile: tuple
    load_profile: tuple = ((0.0, 0.0),)
    flux_ref: float = C.DEFAULT_FLUX_REF
    controller: str = "pi"
    machine: dict = field(default_factory=dict)
    control: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "speed_profile",
                           tuple((float(t), float(v)) for t, v in self.speed_profile))
        object.__setattr__(self, "load_profile",
                           tuple((float(t), float(v)) for t, v in self.load_profile))
        if not self.duration > 0:
            raise ScenarioError("duration must be > 0")
        if not self.speed_profile:
            raise ScenarioError("speed_profile must not be empty")
        for label, prof in (("speed_profile", self.speed_profile), ("load_profile", self.load_profile)):
            ts = [t for t, _ in prof]
            if any(b < a for a, b in zip(ts, ts[1:])):
                raise ScenarioError(f"{label} times must be sorted")
            if ts and (ts[0] < 0 or ts[-1] > self.duration + 1e-12):
                raise ScenarioError(f"{label} times must lie within [0, duration]")
            if not all(math.isfinite(v) for _, v in prof):
                raise ScenarioError(f"{label} values must be finite")
        unknown = set(self.control) - set(CONTROL_DEFAULTS)
        if unknown:
            raise ScenarioError(f"unknown control keys: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d):
        known = {"name", "duration", "speed_profile", "load_profile", "flux_ref",
                 "controller", "machine", "control", "seed"}
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from exc

    def to_dict(self):
        return {
            "name": self.name, "duration": self.duration,
            "speed_profile": [list(p) for p in self.speed_profile],
            "load_profile": [list(p) for p in self.load_profile],
            "flux_ref": self.flux_ref, "controller": self.controller,
            "machine": dict(self.machine), "control": dict(self.control), "seed": self.seed,
        }

    @property
    def params(self):
        return MachineParams().with_overrides(**self.machine) if self.machine else MachineParams()

    def control_option(self, key):
        return self.control.get(key, CONTROL_DEFAULTS[key])

    def speed_rpm(self, t):
        ts = [p[0] for p in self.speed_profile]
        vs = [p[1] for p in self.speed_profile]
        return float(np.interp(t, ts, vs))

    def load(self, t):
        val = 0.0
        for tk, v in self.load_profile:
            if tk <= t:
                val = v
            else:
                break
        return val


def load_scenario(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    sc = Scenario.from_dict(data)
    ctrl = sc.controller
    if ctrl not in ("pi", "dsr") and not Path(ctrl).is_absolute():
        # expression directories are resolved relative to the scenario file
        sc = replace(sc, controller=str(path.parent / ctrl))
    return sc


def bundled_scenario(name):
    """Load one of the scenarios shipped with the package by name."""
    ref = resources.files("imdsr").joinpath("data", "scenarios", f"{name}.json")
    return Scenario.from_dict(json.loads(ref.read_text(encoding="utf-8")))


def bundled_scenario_names():
    d = resources.files("imdsr").joinpath("data", "scenarios")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))


@dataclass
class Timeseries:
    """Per-control-step log; ``columns`` maps each name to a float array."""

    columns: dict
    Ts: float
    name: str = ""

    def __getitem__(self, key):
        return self.columns[key]

    def __len__(self):
        return len(self.columns["t"])

    def to_csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMESERIES_COLUMNS)
        cols = [self.columns[c] for c in TIMESERIES_COLUMNS]
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write_csv(self, path):
        atomic_write(path, self.to_csv_text())


def read_timeseries(path, Ts=None):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TIMESERIES_COLUMNS:
            raise ValueError(f"{path}: unexpected timeseries header")
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    cols = {name: data[:, i] for i, name in enumerate(header)}
    if Ts is None:
        Ts = float(cols["t"][1] - cols["t"][0]) if len(data) > 1 else MachineParams().Ts
    return Timeseries(cols, Ts)


def atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _resolve_law(controller):
    if controller == "dsr":
        return C.default_law()
    if isinstance(controller, C.SymbolicLaw):
        return controller
    return C.SymbolicLaw.from_dir(controller)


def run_scenario(sc, controller=None, iqs_override=None):
    """
    Simulate the closed loop for ``sc`` at the control rate Ts.

    Each control step reads the machine state, runs the outer loops, the
    error integrator and the selected current controller, limits the
    voltage and holds it while the machine integrates ``substeps`` RK4
    steps.

    Parameters
    ----------
    sc : Scenario
    controller : str or SymbolicLaw, optional
        Overrides ``sc.controller``.
    iqs_override : callable, optional
        ``f(t, iqs_ref) -> iqs_ref`` applied after the speed loop, for
        current-mode experiments.

    Raises
    ------
    IntegrationDiverged
        With the simulation time of the failure.
    """
    p = sc.params
    Ts = p.Ts
    n_sub = int(sc.control_option("substeps"))
    h = Ts / n_sub
    ctrl = sc.controller if controller is None else controller
    use_pi = ctrl == "pi"
    law = None if use_pi else _resolve_law(ctrl)
    feedforward = bool(sc.control_option("feedforward"))
    x_int_max = float(sc.control_option("x_int_max"))
    i_max = float(sc.control_option("i_max"))
    cur_gains = C.current_pi_gains(p, sc.control_option("current_bw_hz"))
    outer_gains = C.OuterGains(C.speed_pi_gains(p, sc.control_option("speed_bw_hz"),
                                                sc.flux_ref or C.DEFAULT_FLUX_REF, i_max))
    v_max = p.v_max
    rpm_to_elec = 2.0 * math.pi / 60.0 * p.P

    n = int(round(sc.duration / Ts))
    log = {c: np.empty(n) for c in TIMESERIES_COLUMNS + EXTRA_COLUMNS}
    state = MachineState()
    outer_st = C.OuterState()
    pi_st = (C.PiState(), C.PiState())
    x = C.ControllerInput()
    theta_c = 0.0

    for k in range(n):
        t = k * Ts
        omega_ref = sc.speed_rpm(t) * rpm_to_elec
        T_load = sc.load(t)
        ids_ref, iqs_ref, outer_st = C.outer_loops(
            omega_ref, state.omega_r, sc.flux_ref, state.lam_dr, outer_st, outer_gains, p, Ts)
        if iqs_override is not None:
            iqs_ref = iqs_override(t, iqs_ref)
        x = C.error_integrator(x, ids_ref - state.ids, iqs_ref - state.iqs, Ts, x_int_max)
        omega_e, theta_c = C.slip_and_angle(iqs_ref, state.lam_dr, state.omega_r, theta_c, p, Ts)
        if use_pi:
            ff = (C.decoupling_feedforward(omega_e, state.ids, state.iqs, state.lam_dr, p)
                  if feedforward else None)
            (vd_raw, vq_raw), pi_st = C.pi_current_voltages(x, pi_st, cur_gains, Ts, ff)
        else:
            vd_raw, vq_raw = law.voltages(x)
        v = C.voltage_limit(vd_raw, vq_raw, v_max)

        row = (t, omega_ref, state.omega_r, ids_ref, state.ids, iqs_ref, state.iqs,
               state.lam_dr, v.vd_ref, v.vq_ref, torque(state, p), T_load,
               x.x1, x.x2, x.x3, x.x4, state.theta_e, omega_e, vd_raw, vq_raw)
        for c, val in zip(TIMESERIES_COLUMNS + EXTRA_COLUMNS, row):
            log[c][k] = val

        state = step(state, MachineInput(v.vd_ref, v.vq_ref, omega_e, T_load), p, h, n_sub, t)

    return Timeseries(log, Ts, sc.name)


# ---------------------------------------------------------------- comparison

@dataclass
class ComparisonReport:
    rows: list

    def to_csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r["controller"]] + [repr(float(r[c])) for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()

    def write_csv(self, path):
        atomic_write(path, self.to_csv_text())


def steady_window(ts, n_periods=10):
    """
    Index slice covering the last ``n_periods`` fundamental periods.

    The fundamental is the mean synchronous frequency over the final 0.1 s.
    Returns ``(slice, fundamental_hz)``.
    """
    Ts = ts.Ts
    tail = max(2, int(round(0.1 / Ts)))
    we = np.asarray(ts["omega_e"][-tail:])
    f0 = abs(float(np.mean(we))) / (2.0 * math.pi)
    if f0 <= 0:
        raise ValueError("no rotating fundamental in the final window")
    m = int(math.ceil(n_periods / (f0 * Ts)))
    if m > len(ts):
        raise ValueError(f"scenario too short for {n_periods} periods at {f0:.3g} Hz")
    return slice(len(ts) - m, len(ts)), f0


def summarize(ts, label, n_harmonics=40, n_periods=10):
    """
    Tracking and THD figures for one run over its steady-state window.

    ``n_harmonics`` is capped below the Nyquist limit of the control rate,
    so high synchronous frequencies get fewer harmonics rather than an error.
    """
    win, f0 = steady_window(ts, n_periods)
    fs = 1.0 / ts.Ts
    n_harmonics = min(n_harmonics, math.ceil(fs / (2.0 * f0)) - 1)
    d = tracking_metrics(ts["ids_ref"][win], ts["ids"][win])
    q = tracking_metrics(ts["iqs_ref"][win], ts["iqs"][win])
    theta = ts["theta_e"][win]
    ia = C.phase_a(ts["ids"][win], ts["iqs"][win], theta)
    ia_ref = C.phase_a(ts["ids_ref"][win], ts["iqs_ref"][win], theta)
    a = tracking_metrics(ia_ref, ia)
    dist = thd(SignalWindow(ia, fs, f0), n_harmonics)
    return {"controller": label, "axis_d_rmse": d.rmse, "axis_q_rmse": q.rmse,
            "thd": dist, "rms_ia": a.rms_measured, "pkpk_err": a.peak_to_peak_error}


def compare(sc_base, controllers, n_harmonics=40):
    """Run ``sc_base`` once per controller and tabulate the steady-state figures."""
    controllers = list(controllers)
    if not controllers:
        raise ValueError("controllers must be a non-empty list")
    rows = []
    for ctrl in controllers:
        ts = run_scenario(sc_base, controller=ctrl)
        rows.append(summarize(ts, str(ctrl), n_harmonics))
    return ComparisonReport(rows)
