# Negative binomial moments E[1/(c + A)], A ~ Bin(n, p)
#
# Every exact variance in the package reduces to these two expectations.
# Here we compare the closed forms with direct summation over the support.

import numpy as np

from ipwstrata import neg_moment_bruteforce, neg_moment_c1, neg_moment_c2

# %% A few values by hand: with n = 0 the binomial is identically zero.
print(neg_moment_c1(0, 0.3), neg_moment_c2(0, 0.3))  # 1.0 and 0.5

# %% Closed form vs summation on a small grid
for n in (1, 5, 15, 60):
    for p in (0.05, 0.3, 0.8):
        c1, s1 = neg_moment_c1(n, p), neg_moment_bruteforce(1, n, p)
        c2, s2 = neg_moment_c2(n, p), neg_moment_bruteforce(2, n, p)
        print(f"n={n:3d} p={p:.2f}  c=1: {c1:.15f} (rel err {abs(c1 - s1) / s1:.1e})"
              f"  c=2: {c2:.15f} (rel err {abs(c2 - s2) / s2:.1e})")

# %% The closed forms broadcast over arrays, handy for sweeps.
n = np.arange(0, 201)[:, None]
p = np.linspace(0.01, 0.99, 99)[None, :]
table = neg_moment_c1(n, p)
print(table.shape, table.min(), table.max())

# %% For offsets other than 1 and 2 only summation is available.
print("E[1/(3 + A)], A ~ Bin(12, 0.4):", neg_moment_bruteforce(3, 12, 0.4))
