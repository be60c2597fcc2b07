# %% [markdown]
# # One RS-AIPW run, step by step
#
# A strategy owns its nuisance estimates and AIPW accumulator. Randomness
# comes from a counter-based stream, so a run is a pure function of its key.

# %%
import numpy as np

from ctxbai.bandit import BanditInstance
from ctxbai.rng import RngStream, trial_key
from ctxbai.strategy import RSAIPW, StrategyConfig, UniformEBA

inst = BanditInstance.gaussian(
    means=[[1.0, 0.2], [0.4, 0.9]],
    sds=[[1.0, 2.0], [0.5, 1.0]],
    probs=[0.4, 0.6],
)
print("best arm", inst.best)

# %% [markdown]
# Walk a few rounds by hand. The first K rounds are the round-robin
# initialization block.

# %%
strat = RSAIPW(inst, budget=2000, config=StrategyConfig())
rng = RngStream.from_key(trial_key(seed=1, budget=2000, trial=0))
for _ in range(6):
    arm, y = strat.step(rng)
    print(f"t={strat.t:<3d} arm={arm} y={y:+.3f}")

# %% [markdown]
# Finish the run. The plug-in allocation should be near the target by now.

# %%
while strat.t < strat.budget:
    strat.step(rng)
print("recommended", strat.recommend())
print("AIPW estimates", strat.aipw.estimate())
print("plug-in allocation\n", np.round(strat.nuisance.allocation_table(), 3))

# %% [markdown]
# Replaying the same key reproduces the run exactly.

# %%
again = RSAIPW(inst, 2000)
rec = again.run(RngStream.from_key(trial_key(1, 2000, 0)))
print(rec == strat.recommend(), np.array_equal(again.aipw.sum_phi, strat.aipw.sum_phi))

# %% [markdown]
# The uniform baseline with empirical-best-arm recommendation, on the same key.

# %%
base = UniformEBA(inst, 2000)
print("uniform recommends", base.run(RngStream.from_key(trial_key(1, 2000, 0))))
