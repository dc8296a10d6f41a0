"""Walk through the per-agent transition-matrix family.

Builds matrices M(pi, xi, alpha) for a small target density, shows that pi
stays stationary while xi scales how much probability mass moves, folds in
a motion constraint, and multiplies a sequence of matrices with shrinking
xi to show the product settling onto rank-one pi rows.

Run: python3 demos/markov_family.py
"""

import numpy as np

from swarmdensity import (
    alpha_vector,
    apply_constraints,
    build_markov,
    chain_product,
    hellinger,
    max_row_l1_to,
    reachability_constraint,
    xi_quantization_floor,
)
from swarmdensity.grid import Grid

np.set_printoptions(precision=3, suppress=True)

grid = Grid(width=5, height=1)
pi = np.array([0.0, 0.1, 0.4, 0.3, 0.2])  # bin 0 stays empty
alpha = alpha_vector(grid, 2)             # reference bin at the center

print("target density pi:", pi)
print("alpha (distance falloff from bin 2):", alpha)

for xi in (1.0, 0.3, 0.05):
    M = build_markov(pi, xi, alpha)
    print(f"\nxi = {xi}: off-diagonal mass per row "
          f"{(M.sum(axis=1) - M.diagonal())}")
    print("  stationarity residual:", np.abs(pi @ M - pi).max())
    print("  column into the empty bin is zero off-diagonal:",
          M[1:, 0].max() == 0.0)

# Motion constraint: one bin per step. Blocked mass folds onto the diagonal
# and pi remains stationary.
A = reachability_constraint(grid, 1)
Mt = apply_constraints(build_markov(pi, 0.5, alpha), A)
print("\nconstrained matrix (moves limited to +-1 bin):")
print(Mt)
print("stationarity residual:", np.abs(pi @ Mt - pi).max())

# A decreasing-xi schedule, as produced online by agents watching their
# density estimate approach pi: the forward product converges to rows = pi.
xi_floor = xi_quantization_floor(200)
prod_factors = [build_markov(pi, xi, alpha)
                for xi in np.linspace(1.0, xi_floor, 40)]
prod = chain_product(prod_factors)
print(f"\nafter 40 matrices with xi from 1.0 down to {xi_floor:.4f}:")
print("max row l1 distance of the product to pi:", max_row_l1_to(prod, pi))
print("a sampled agent history drifts toward pi regardless of start bin.")

# hellinger is the yardstick agents use to set xi in the first place
f = np.array([0.2, 0.1, 0.3, 0.3, 0.1])
print("\nexample estimate f:", f)
print("hellinger(pi, f) =", hellinger(pi, f),
      " (mass in the empty bin is penalized hard)")
