"""How the coupled reconstruction degrades with noise.

The regularization weight is tied to the noise level (gamma = delta / 100)
and the same section is inverted at delta = 10%, 1% and 0.1%.  A convergent
regularization method should give errors that shrink as the data get
cleaner.  Uses 20 soundings to keep the run short.
"""
import numpy as np

from fdeminv.harness import ExperimentConfig, NoiseSpec, run_experiment
from fdeminv.solvers import SolverParams

print(f"{'delta':>7} {'gamma':>7} {'RRE':>7} {'outer its':>9}")
for delta in (1e-1, 1e-2, 1e-3):
    cfg = ExperimentConfig(
        n_soundings=20,
        noise=NoiseSpec(delta, seed=1),
        params=SolverParams(gamma=1e-2 * delta),
        methods=("alternating",),
    )
    rep = run_experiment(cfg)
    print(f"{delta:7.0e} {1e-2 * delta:7.0e} {rep.rre['alternating']:7.3f} {len(rep.traces['alternating']['outer']):9d}")
