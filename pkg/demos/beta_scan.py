"""One-dimensional scan of the injection cost beta for the two-regime experiment.

The experiment's published barriers (about 1.0725 and 0.8472) come without
the value of beta.  All other inputs are known, and the paths do not depend
on beta, so one set of per-regime batches is simulated and the fixed point
is recomputed for each beta on a grid.

    python3 demos/beta_scan.py [n_paths]
"""

import sys
import warnings

import numpy as np

from bailout import cli
from bailout import map_engine as me
from bailout.errors import HorizonTooShortWarning

warnings.simplefilter("ignore", HorizonTooShortWarning)

TARGET = np.array([1.0725, 0.8472])

cfg = cli.load_config("configs/two_regime.toml")
if len(sys.argv) > 1:
    cfg["mc"]["n_paths"] = int(sys.argv[1])
base = cli.build_map(cfg)
seed, n, dt, horizon, _ = cli._mc(cfg)
batches = me.simulate_state_batches(base, dt, horizon, n, seed)
b0 = np.array([0.5, 0.5])

print(" beta     b_0      b_1    max deviation  iterations")
for beta in (1.05, 1.2, 1.35, 1.5, 1.65, 1.8, 1.9, 2.0):
    m = me.MapModel(base.models, base.generator, base.q_disc, beta, base.switch_jumps)
    guess = me.initial_guess(m, batches)
    knots = me.make_knots(5.0 * max(guess.max(), b0.max(), 0.2), 101, 1.5)
    f0 = me.policy_evaluate(b0, m, batches, knots)[0].project(beta)
    _, b, trace = me.fixed_point_iterate(m, f0, batches, tol=1e-3, b0=b0)
    dev = np.max(np.abs(b - TARGET))
    print(f"{beta:5.2f}  {b[0]:.4f}  {b[1]:.4f}  {dev:13.4f}  {trace.rows[-1].n:10d}")
