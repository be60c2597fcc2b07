# %% [markdown]
# # Martingale residuals and variance convergence
#
# The batched engine simulates many trials in lockstep. With diagnostics on it
# records the normalized gap differences xi at chosen rounds and the
# accumulated conditional second moment used for V_T.

# %%
import numpy as np

from ctxbai import diagnostics as diag
from ctxbai.allocation import instance_allocation
from ctxbai.bandit import BanditInstance
from ctxbai.engine import StrategySpec, simulate
from ctxbai.rng import trial_keys
from ctxbai.strategy import FIXED, RS_AIPW

inst = BanditInstance.gaussian([0.2, 0.0], [3.0, 1.0])
arm = 1

# %% [markdown]
# xi residuals: across trials the mean at each round should sit within a few
# standard errors of zero.

# %%
T, n = 500, 2000
res = simulate(inst, StrategySpec(RS_AIPW), T, trial_keys(3, T, np.arange(n)),
               record_diagnostics=True, xi_rounds=[50, 100, 250, 500])
for row in diag.xi_residuals(res.xi, [50, 100, 250, 500], arm, recorded=[50, 100, 250, 500]):
    print(f"t={row['t']:<4d} mean={row['mean']:+.2e} z={row['z']:+.2f}")

# %% [markdown]
# V_T shrinks as the plug-in allocation settles, and is exactly zero when the
# strategy is handed the true allocation and means.

# %%
for T in (200, 2000):
    res = simulate(inst, StrategySpec(RS_AIPW), T, trial_keys(4, T, np.arange(300)),
                   record_diagnostics=True)
    print(T, diag.variance_convergence(res.cond_ratio_sum, T, inst, arm))

oracle = StrategySpec(FIXED, table=instance_allocation(inst))
res = simulate(inst, oracle, 500, trial_keys(5, 500, np.arange(50)), record_diagnostics=True)
print("oracle", diag.variance_convergence(res.cond_ratio_sum, 500, inst, arm))

# %% [markdown]
# Distance of the final plug-in allocation from the target.

# %%
res = simulate(inst, StrategySpec(RS_AIPW), 5000, trial_keys(6, 5000, np.arange(100)),
               record_final_allocation=True)
print(np.mean(diag.allocation_distance(res.final_allocation, instance_allocation(inst).w)))
