"""When paying everything at once is optimal.

    python3 demos/zero_barrier.py

For a surplus with positive drift, no Brownian part and exponential
down-jumps at rate 0.5, the barrier is zero exactly when
0.5 * (beta - 1) - (q + r) < 0.  With q = r = 0.2 the switch is at beta = 1.8.
"""

from bailout.levy_model import JumpComponent, LevyModel, ProblemSpec, SizeDistribution
from bailout.path_engine import simulate_batch
from bailout.single_solver import solve_bstar, zero_barrier_criterion

model = LevyModel(1.0, 0.0, (JumpComponent(0.5, "down", SizeDistribution.exponential(1.0)),))
batch = simulate_batch(model, 0.05, 40.0, 10_000, 5)

print(" beta  criterion   barrier   g(b*)")
for beta in (1.2, 1.5, 1.7, 1.9, 2.2, 3.0):
    spec = ProblemSpec(model, beta, 0.2, 0.2)
    sol = solve_bstar(spec, batch)
    print(f"{beta:5.2f}  {zero_barrier_criterion(spec):+8.3f}  {sol.b_star:8.4f}  {sol.g_at_bstar.value:.3f}")
