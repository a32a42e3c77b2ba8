"""
Open-loop machine model
=======================

Apply fixed d-q voltages to the default 3.7 kW machine at standstill and
watch it accelerate, then check how the RK4 error shrinks with the step.
"""
import math

import numpy as np

from imdsr.machine import MachineInput, MachineParams, MachineState, step, torque

p = MachineParams()
print("Lsigma =", p.Lsigma, "H,  Ts =", p.Ts, "s,  voltage limit =", round(p.v_max, 2), "V")

#cell 1
# 60 V on the q axis with a 20 Hz synchronous frame, no load
u = MachineInput(vds=20.0, vqs=60.0, omega_e=2 * math.pi * 20, T_load=0.0)
s = MachineState()
h = p.Ts / 16
for k in range(1, 11):
    s = step(s, u, p, h, n=int(0.01 / h))
    rpm = s.omega_r / p.P * 60 / (2 * math.pi)
    print(f"t={0.01 * k:.2f}s  ids={s.ids:7.2f} A  iqs={s.iqs:7.2f} A  "
          f"lam_dr={s.lam_dr:.3f} Wb  Te={torque(s, p):6.2f} N m  speed={rpm:7.1f} rpm")

#cell 2
# error at t = 50 ms against a very fine reference; fourth order means
# halving h cuts the error by about 16
T = 0.05
ref = step(MachineState(), u, p, 2.5e-5 / 64, int(round(T * 64 / 2.5e-5))).as_array()
for h in (1e-4, 5e-5, 2.5e-5):
    y = step(MachineState(), u, p, h, int(round(T / h))).as_array()
    print(f"h={h:.1e}  max error={np.max(np.abs(y[:5] - ref[:5])):.3e}")
