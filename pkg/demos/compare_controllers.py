"""
PI versus symbolic current control
==================================

Run the bundled constant-speed scenarios with both inner current
controllers and print the steady-state tracking and THD figures.
"""
from imdsr.harness import bundled_scenario, compare

#cell 1
for name in ("const_500rpm", "const_1000rpm", "const_2000rpm"):
    rep = compare(bundled_scenario(name), ["pi", "dsr"])
    print(name)
    for row in rep.rows:
        print(f"  {row['controller']:>4}: d rmse {row['axis_d_rmse']:.3g} A, "
              f"q rmse {row['axis_q_rmse']:.3g} A, THD {row['thd']:.3g}, "
              f"rms ia {row['rms_ia']:.2f} A")

#cell 2
# the report can be written straight to CSV
rep.write_csv("compare_2000rpm.csv")
print(open("compare_2000rpm.csv").read())
