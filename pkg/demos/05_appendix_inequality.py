# Why merging two identical cells never hurts
#
# The per-unit-variance saving E[1/(2(1+A))] - E[1/(2+A+B)] is nonnegative.
# Its sign rests on a chain of three polynomials: g1 starts at 0 and ends at
# 1, its derivative is a nonnegative factor times g2, and g2's derivative is
# g3 >= 0. We check every link numerically on a grid.

import numpy as np

from ipwstrata import appendix_polynomial_chain, collapsed_pair_gap

n = np.arange(1, 201)[:, None]
p = (np.arange(1, 200) / 200)[None, :]

# %% The gap over the grid
gap = collapsed_pair_gap(n, p)
i, j = np.unravel_index(np.argmin(gap), gap.shape)
print(f"min gap {gap[i, j]:.3e} at n={n[i, 0]}, p={p[0, j]:.3f}")

# %% The polynomial chain
chain = appendix_polynomial_chain(n, p)
print("min g1", chain.g1.min(), " min g3", chain.g3.min())
print("g2 nondecreasing in p:", bool(np.all(np.diff(chain.g2, axis=1) >= 0)))

# %% Endpoints
for k in (1, 5, 50):
    a, b = appendix_polynomial_chain(k, 0.0), appendix_polynomial_chain(k, 1.0)
    print(f"n={k}: g1(0)={a.g1}, g1(1)={b.g1}, g2(1)={b.g2}")
