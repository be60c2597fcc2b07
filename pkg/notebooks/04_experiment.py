# %% [markdown]
# # A Monte Carlo experiment from a config
#
# Configs are TOML. The harness runs every budget for the strategy and the
# baseline, then fits the log-linear decay of the misidentification rate.
# The same config drives `ctxbai run`.

# %%
from ctxbai.config import config_from_dict
from ctxbai.harness import ExperimentResult, run_experiment

raw = {
    "instance": {"means": [0.5, 0.0], "sds": [3.0, 1.0]},
    "strategy": {"name": "rs_aipw"},
    "baseline": {"name": "uniform_eba"},
    "experiment": {"budgets": [50, 100, 200, 300], "n_trials": 5000, "seed": 11},
}
config = config_from_dict(raw)
result = run_experiment(config)
print(result.to_csv())
print(result.to_csv(baseline=True))

# %%
print("theory exponent", result.rates.upper_exponent)
if result.decay_fit is not None:
    print("fitted slope", result.decay_fit.slope, "+/-", result.decay_fit.slope_se)
else:
    print(result.decay_fit_error)

# %% [markdown]
# Results round-trip through JSON, and the thread count does not change them.

# %%
assert ExperimentResult.from_json(result.to_json()) == result
assert run_experiment(config, threads=2).to_csv() == result.to_csv()
