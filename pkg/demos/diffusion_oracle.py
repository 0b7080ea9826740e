"""Monte Carlo against closed forms for Brownian motion with drift.

    python3 demos/diffusion_oracle.py

Shows the barrier and value function from simulation next to the scale
function root and the ODE solution, and how within-step (bridge)
monitoring removes the bias of checking the barrier only on the grid.
"""

import numpy as np

from bailout.diffusion_oracle import DiffusionSpec, oracle_bstar, oracle_g, solve_hjb_ode
from bailout.levy_model import LevyModel, PayoffSpec, ProblemSpec
from bailout.path_engine import simulate_batch
from bailout.single_solver import estimate_g, estimate_value, solve_bstar

mu, sigma, q, r, beta = 0.5, 0.6, 0.4, 0.4, 1.8
spec = ProblemSpec(LevyModel.brownian(mu, sigma), beta, q, r, PayoffSpec.zero())
d = DiffusionSpec(mu, sigma, q + r)

b_exact = oracle_bstar(d, beta, r)
print(f"closed-form barrier {b_exact:.5f}")

for bridge in (False, True):
    batch = simulate_batch(spec.model, 0.01, 20.0, 10_000, 11, bridge=bridge)
    g = estimate_g(spec, b_exact, batch)
    sol = solve_bstar(spec, batch, tol_b=1e-4)
    label = "bridge" if bridge else "grid  "
    print(f"{label}: g(b*) = {g.value:.4f} +- {g.half_width:.4f} (exact {oracle_g(d, b_exact, beta, r):.4f}),"
          f" barrier {sol.b_star:.5f}")

# value function on [0, b*]: simulation versus the two-point boundary value problem
hjb = solve_hjb_ode(d, beta, r, PayoffSpec.zero(), b_exact)
xs = np.linspace(0.0, b_exact, 6)
est = estimate_value(spec, b_exact, xs, batch)
print("\n    x      MC value   ODE value")
for x, v, ref in zip(xs, est.value, hjb(xs)):
    print(f"{x:6.3f}  {v:9.4f}  {ref:9.4f}")
