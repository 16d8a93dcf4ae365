# Checking the closed forms by simulation
#
# The Monte Carlo engine draws the forced-pair design directly. Results are a
# deterministic function of the seed and chunk size, whatever the thread count.

from ipwstrata import PopulationSpec, SimConfig, StratumSpec, aggregate_variance, run_monte_carlo

pop = PopulationSpec([StratumSpec("x", 0.3, 1.0, 3.0, 4.0, 16.0, 17)])

# %% Gaussian and two-point outcomes share mean and variance, so the exact
# variances are the same for both.
for model in ("gaussian", "twopoint"):
    rep = run_monte_carlo(pop, ["true", "estimated"], SimConfig(200_000, 7, model), workers=4)
    for scheme in ("true", "estimated"):
        exact = aggregate_variance(pop, scheme)
        s = rep[scheme]
        z = (s.variance - exact) / s.variance_se
        print(f"{model:9s} {scheme:9s} MC {s.variance:.4f} +/- {s.variance_se:.4f}  exact {exact:.4f}  z={z:+.2f}")

# %% Common random numbers: the estimated-minus-hybrid gap for twin cells
twins = PopulationSpec([StratumSpec(l, 0.5, 0.0, 0.0, 4.0, 16.0, 17) for l in "ab"])
rep = run_monte_carlo(twins, ["estimated", "hybrid"], SimConfig(200_000, 8))
d = rep.variance_differences["estimated-hybrid"]
exact = aggregate_variance(twins, "estimated") - aggregate_variance(twins, "hybrid")
print(f"variance gap MC {d['difference']:.4f} +/- {d['se']:.4f}, exact {exact:.4f}")

# %% Same seed, same report
a = run_monte_carlo(pop, ["true"], SimConfig(50_000, 1))
b = run_monte_carlo(pop, ["true"], SimConfig(50_000, 1), workers=8)
print("identical:", a == b)
