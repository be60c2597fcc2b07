"""Sequential strategies for one trial: observe a context, pull, update, recommend.

All strategies follow the same round order, which fixes both the draw layout
(context, arm, reward) and the measurability of the AIPW scores:

1. draw the context;
2. snapshot the nuisance estimates and the sampling probabilities;
3. draw the arm and the reward;
4. accumulate the scores computed from the snapshot;
5. only then fold the reward into the nuisance estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as diag
from .allocation import AllocationTable, _sum_rows
from .bandit import BanditInstance, Bounds, sample_context, sample_reward
from .estimation import NuisanceState, mixed_allocation, mixing_rate, plugin_allocation
from .rng import RngStream

RS_AIPW = "rs_aipw"
UNIFORM_EBA = "uniform_eba"
FIXED = "fixed"
STRATEGIES = (RS_AIPW, UNIFORM_EBA, FIXED)


@dataclass(frozen=True)
class StrategyConfig:
    """Tuning of a strategy.

    ``mixing_exponent`` sets the uniform-mixing weight ``min(1, t**-e)``;
    ``None`` disables mixing. ``init_rounds_per_arm`` round-robin passes open
    the experiment.
    """

    bounds: Bounds = field(default_factory=Bounds)
    mixing_exponent: float | None = 0.5
    init_rounds_per_arm: int = 1
    record_diagnostics: bool = False
    record_xi: bool = False

    def __post_init__(self):
        if self.init_rounds_per_arm < 1:
            raise ValueError("init_rounds_per_arm must be at least 1")
        if self.mixing_exponent is not None and not self.mixing_exponent > 0:
            raise ValueError("mixing_exponent must be positive or None")


def arm_from_uniform(w: np.ndarray, gamma) -> np.ndarray:
    """Inverse-CDF arm choice: first arm whose cumulative mass reaches ``gamma``.

    ``w`` has shape (..., K); the cumulative sum runs left to right.
    """
    w = np.asarray(w, dtype=float)
    gamma = np.asarray(gamma)
    K = w.shape[-1]
    cum = np.zeros(w.shape[:-1])
    below = np.zeros(np.broadcast_shapes(w.shape[:-1], gamma.shape), dtype=np.int64)
    for a in range(K - 1):
        cum = cum + w[..., a]
        below += cum < gamma
    return below


def aipw_scores(y: float, chosen_arm: int, mu_hat: np.ndarray, w: np.ndarray) -> np.ndarray:
    """AIPW score of every arm for one round.

    ``mu_hat`` and ``w`` are the length-K vectors at the observed context,
    taken before this round's reward was seen; ``w`` must be the probability
    actually used to draw the arm.
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    w = np.asarray(w, dtype=float)
    if w[chosen_arm] <= 0.0:
        raise ValueError("sampling probability of the chosen arm must be positive")
    phi = mu_hat.copy()
    phi[chosen_arm] = (y - mu_hat[chosen_arm]) / w[chosen_arm] + mu_hat[chosen_arm]
    return phi


@dataclass
class AipwState:
    """Running sums of AIPW scores, plus optional per-round diagnostics."""

    K: int
    t: int = 0

    def __post_init__(self):
        self.sum_phi = np.zeros(self.K)
        self.sum_phi2 = np.zeros(self.K)
        self.xi_log: list[np.ndarray] = []
        self.cond_ratio_sum = np.zeros(self.K)

    def add(self, phi: np.ndarray) -> None:
        self.sum_phi = self.sum_phi + phi
        self.sum_phi2 = self.sum_phi2 + phi * phi
        self.t += 1

    def estimate(self) -> np.ndarray:
        return self.sum_phi / self.t


class _Strategy:
    """Common round loop; subclasses provide probabilities and scores."""

    name = ""

    def __init__(self, instance: BanditInstance, budget: int, config: StrategyConfig | None = None):
        self.instance = instance
        self.budget = int(budget)
        self.config = config or StrategyConfig(bounds=instance.bounds)
        self.t = 0
        self.init_len = self._init_len()
        if self.init_len > self.budget:
            raise ValueError("budget shorter than the initialization block")
        self.nuisance = NuisanceState(instance.K, instance.M, self.config.bounds)
        self.aipw = AipwState(instance.K)
        if self.config.record_diagnostics:
            self._vtilde = diag.oracle_gap_variance(instance)

    def _init_len(self) -> int:
        return self.config.init_rounds_per_arm * self.instance.K

    def in_init(self, t: int) -> bool:
        return t <= self.init_len

    # Probabilities at each context given the current state, K x M.
    def _probability_table(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def _mu_table(self) -> np.ndarray:
        return self.nuisance.moments()[0]

    def sampling_probs(self, t: int, context: int) -> np.ndarray:
        return self._probability_table(t)[:, context]

    def choose_arm(self, t: int, context: int, rng: RngStream, probs=None) -> int:
        """Consumes exactly one uniform, also during the round-robin block."""
        gamma = rng.uniform()
        if self.in_init(t):
            return (t - 1) % self.instance.K
        if probs is None:
            probs = self.sampling_probs(t, context)
        return int(arm_from_uniform(probs, gamma))

    def step(self, rng: RngStream) -> tuple[int, float]:
        t = self.t + 1
        if t > self.budget:
            raise RuntimeError("budget exhausted")
        x = sample_context(self.instance, rng)
        mu_tab = self._mu_table()
        w_tab = self._probability_table(t)
        arm = self.choose_arm(t, x, rng, w_tab[:, x])
        y = sample_reward(self.instance, arm, x, rng)
        self._score(t, x, arm, y, mu_tab, w_tab)
        self.nuisance.update(arm, x, y)
        self.t = t
        return arm, y

    def _score(self, t, x, arm, y, mu_tab, w_tab) -> None:
        phi = aipw_scores(y, arm, mu_tab[:, x], w_tab[:, x])
        self.aipw.add(phi)
        if self.config.record_diagnostics:
            p_tab = w_tab
            if self.in_init(t):
                p_tab = np.zeros_like(w_tab)
                p_tab[arm] = 1.0
            moment = diag.conditional_gap_moment(self.instance, mu_tab, p_tab, w_tab)
            safe = np.where(self._vtilde > 0, self._vtilde, 1.0)
            self.aipw.cond_ratio_sum = self.aipw.cond_ratio_sum + moment / safe
            if self.config.record_xi:
                self.aipw.xi_log.append(diag.xi_values(phi, self.instance, self.budget, self._vtilde))

    def run(self, rng: RngStream) -> int:
        while self.t < self.budget:
            self.step(rng)
        return self.recommend()

    def recommend(self) -> int:
        if self.t < self.budget:
            raise RuntimeError("recommendation requested before the budget is exhausted")
        return int(np.argmax(self.aipw.estimate()))


class RSAIPW(_Strategy):
    """Random sampling from the estimated target allocation, AIPW recommendation."""

    name = RS_AIPW

    def _probability_table(self, t: int) -> np.ndarray:
        K, M = self.instance.K, self.instance.M
        if self.in_init(t):
            return np.full((K, M), 1.0 / K)
        mu, var = self.nuisance.moments()
        w = plugin_allocation(mu.T, var.T)  # (M, K): mixing acts on the arm axis
        return mixed_allocation(w, mixing_rate(t, self.config.mixing_exponent)).T


class FixedAllocation(_Strategy):
    """Samples from a frozen allocation table; no initialization block.

    With ``true_nuisance`` the regression term uses the instance's true
    conditional means instead of running estimates. The target allocation
    with true nuisances is the oracle strategy used by the diagnostics.
    """

    name = FIXED

    def __init__(self, instance, budget, table: AllocationTable, config=None, true_nuisance=True):
        self.table = table.w if isinstance(table, AllocationTable) else np.asarray(table, float)
        self.true_nuisance = true_nuisance
        super().__init__(instance, budget, config)

    def _init_len(self) -> int:
        return 0

    def _probability_table(self, t: int) -> np.ndarray:
        return self.table

    def _mu_table(self) -> np.ndarray:
        if self.true_nuisance:
            return np.asarray(self.instance.means)
        return super()._mu_table()


class UniformEBA(_Strategy):
    """Uniform sampling and the empirical-best-arm recommendation."""

    name = UNIFORM_EBA

    def _probability_table(self, t: int) -> np.ndarray:
        K, M = self.instance.K, self.instance.M
        return np.full((K, M), 1.0 / K)

    def arm_means(self) -> np.ndarray:
        counts = _sum_rows(self.nuisance.count.T).astype(float)
        sums = _sum_rows(self.nuisance.sum_y.T)
        return np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), -np.inf)

    def recommend(self) -> int:
        if self.t < self.budget:
            raise RuntimeError("recommendation requested before the budget is exhausted")
        return int(np.argmax(self.arm_means()))


def make_strategy(name: str, instance: BanditInstance, budget: int, config=None, table=None):
    if name == RS_AIPW:
        return RSAIPW(instance, budget, config)
    if name == UNIFORM_EBA:
        return UniformEBA(instance, budget, config)
    if name == FIXED:
        if table is None:
            raise ValueError("fixed strategy needs an allocation table")
        return FixedAllocation(instance, budget, table, config)
    raise ValueError(f"unknown strategy {name!r}")

