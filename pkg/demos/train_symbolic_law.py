"""
Training a symbolic law
=======================

First recover a known expression from synthetic data, then fit d/q laws
to voltages logged from a short PI simulation and drop them back into the
control loop.
"""
import numpy as np

from imdsr import expr as E
from imdsr.dsr import Dataset, TrainConfig, generate_dataset, train, train_axis, write_outputs
from imdsr.harness import Scenario, compare

#cell 1
rng = np.random.default_rng(1234)
X = rng.uniform(-5, 5, (1000, 4))
data = Dataset(X, 12 * X[:, 1] + 2 * X[:, 3])
res = train_axis(data, TrainConfig(seed=0, stop_reward=0.999), "y")
print("recovered:", E.to_text(res.expression), "reward", res.reward,
      "after", len(res.log), "epochs")

#cell 2
# behavioural cloning of the PI current loop on a small ramp scenario
sc = Scenario("ramp", 0.6, ((0.0, 0.0), (0.1, 0.0), (0.4, 800.0)))
ds_vd, ds_vq = generate_dataset([sc])
print(len(ds_vd), "rows per axis")
cfg = TrainConfig(batch_size=500, epochs=30, seed=0)
results, log = train(ds_vd, ds_vq, cfg)
for axis, r in results.items():
    print(axis, "=", E.to_text(r.expression), " reward", round(r.reward, 4))

#cell 3
write_outputs("trained_law", results, log, cfg, {"vd": ds_vd, "vq": ds_vq})
sc_long = Scenario("check", 1.0, ((0.0, 0.0), (0.1, 0.0), (0.4, 800.0)))
print(compare(sc_long, ["pi", "trained_law"]).to_csv_text())
