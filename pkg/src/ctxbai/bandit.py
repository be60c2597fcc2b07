"""Ground-truth contextual bandit instances over a finite context space."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import RngStream

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
FAMILIES = (GAUSSIAN, BERNOULLI)

UNIQUENESS_TOL = 1e-12


@dataclass(frozen=True)
class Bounds:
    """Known bounds on conditional means, second moments and variances.

    The same constants validate instances and clip the plug-in estimates.
    """

    c_mu: float = 100.0
    c_nu: float = 1e4
    c_sigma2: float = 100.0

    def __post_init__(self):
        for name in ("c_mu", "c_nu", "c_sigma2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ContextSpace:
    labels: tuple
    probs: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        probs = tuple(float(p) for p in self.probs)
        if len(probs) < 1:
            raise ValueError("context space needs at least one context")
        if len(labels) != len(probs):
            raise ValueError("labels and probs must have the same length")
        if any(not p > 0 for p in probs):
            raise ValueError("context probabilities must be positive")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError(f"context probabilities sum to {math.fsum(probs)!r}, not 1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> "ContextSpace":
        return cls(labels=tuple(range(len(probs))), probs=tuple(probs))

    @property
    def M(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class RewardLaw:
    """Reward distribution of one (arm, context) cell.

    For Bernoulli laws ``sd`` is derived from the mean and must not be given.
    """

    family: str
    mean: float
    sd: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown reward family {self.family!r}")
        mean = float(self.mean)
        if self.family == BERNOULLI:
            if self.sd is not None:
                raise ValueError("Bernoulli sd is derived from the mean")
            if not 0.0 < mean < 1.0:
                raise ValueError("Bernoulli mean must lie in (0, 1)")
        else:
            if self.sd is None or not float(self.sd) >= 0.0:
                raise ValueError("Gaussian sd must be a non-negative number")
            object.__setattr__(self, "sd", float(self.sd))
        object.__setattr__(self, "mean", mean)

    @property
    def std(self) -> float:
        if self.family == BERNOULLI:
            return math.sqrt(self.mean * (1.0 - self.mean))
        return self.sd

    @property
    def second_moment(self) -> float:
        return self.mean**2 + self.std**2

    @property
    def n_uniforms(self) -> int:
        return 2 if self.family == GAUSSIAN else 1


@dataclass(frozen=True, eq=False)
class BanditInstance:
    """Finite-context bandit: context law plus a K x M table of reward laws.

    Construction rejects instances outside the model class: fewer than two
    arms, a best arm that is not unique, or parameters outside ``bounds``.
    ``check_variance=False`` admits degenerate (zero variance) Gaussian cells
    for noiseless simulations.
    """

    context_space: ContextSpace
    laws: tuple
    bounds: Bounds = field(default_factory=Bounds)
    check_variance: bool = True

    def __post_init__(self):
        laws = tuple(tuple(row) for row in self.laws)
        M = self.context_space.M
        if len(laws) < 2:
            raise ValueError("need at least two arms")
        if any(len(row) != M for row in laws):
            raise ValueError("every arm needs one reward law per context")
        object.__setattr__(self, "laws", laws)

        means = np.array([[law.mean for law in row] for row in laws], dtype=float)
        sds = np.array([[law.std for law in row] for row in laws], dtype=float)
        b = self.bounds
        if np.any(np.abs(means) > b.c_mu):
            raise ValueError(f"conditional means exceed c_mu={b.c_mu}")
        if np.any(means**2 + sds**2 >= b.c_nu):
            raise ValueError(f"conditional second moments exceed c_nu={b.c_nu}")
        if self.check_variance:
            var = sds**2
            if np.any(var > b.c_sigma2) or np.any(var < 1.0 / b.c_sigma2):
                raise ValueError(f"conditional variances outside [1/{b.c_sigma2}, {b.c_sigma2}]")

        probs = np.array(self.context_space.probs)
        marginal = means @ probs
        order = np.argsort(-marginal, kind="stable")
        if marginal[order[0]] - marginal[order[1]] <= UNIQUENESS_TOL:
            raise ValueError("best arm is not unique")

        for name, arr in (("means", means), ("sds", sds), ("probs", probs), ("marginal", marginal)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        cum = np.cumsum(probs)
        cum.setflags(write=False)
        object.__setattr__(self, "cum_probs", cum)
        draws = np.array([[law.n_uniforms for law in row] for row in laws], dtype=np.int64)
        draws.setflags(write=False)
        object.__setattr__(self, "n_uniforms", draws)
        object.__setattr__(self, "is_gaussian", draws == 2)
        object.__setattr__(self, "best", int(order[0]))

    @classmethod
    def gaussian(cls, means, sds, probs=None, **kwargs) -> "BanditInstance":
        """Build from K x M tables of means and sds (1-D inputs mean M=1)."""
        means = np.asarray(means, dtype=float)
        sds = np.broadcast_to(np.asarray(sds, dtype=float), means.shape)
        if means.ndim == 1:
            means, sds = means[:, None], sds[:, None]
        if probs is None:
            probs = [1.0 / means.shape[1]] * means.shape[1]
        laws = [[RewardLaw(GAUSSIAN, m, s) for m, s in zip(mr, sr)] for mr, sr in zip(means, sds)]
        return cls(ContextSpace.from_probs(probs), laws, **kwargs)

    @classmethod
    def bernoulli(cls, means, probs=None, **kwargs) -> "BanditInstance":
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if probs is None:
            probs = [1.0 / means.shape[1]] * means.shape[1]
        laws = [[RewardLaw(BERNOULLI, m) for m in mr] for mr in means]
        return cls(ContextSpace.from_probs(probs), laws, **kwargs)

    @property
    def K(self) -> int:
        return len(self.laws)

    @property
    def M(self) -> int:
        return self.context_space.M

    def context_gaps(self) -> np.ndarray:
        """K x M table of conditional gaps mu*(x) - mu^a(x)."""
        return self.means[self.best][None, :] - self.means

    def to_dict(self) -> dict:
        families = {law.family for row in self.laws for law in row}
        out = {
            "family": families.pop() if len(families) == 1 else "mixed",
            "context_probs": list(self.context_space.probs),
            "means": self.means.tolist(),
        }
        if out["family"] != BERNOULLI:
            out["sds"] = self.sds.tolist()
        return out


# -- sampling ---------------------------------------------------------------
# The array transforms below are shared by the single-trial API and the
# batched simulator so that both produce bitwise identical draws.


def context_from_uniform(cum_probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(cum_probs, u, side="right")
    return np.minimum(idx, len(cum_probs) - 1)


def gaussian_from_uniforms(mean, sd, u1, u2):
    """Box-Muller cosine branch; ``1 - u1`` keeps the logarithm finite."""
    radius = np.sqrt(-2.0 * np.log(1.0 - u1))
    return mean + sd * (radius * np.cos(2.0 * np.pi * u2))


def bernoulli_from_uniform(mean, u):
    return (u < mean).astype(np.float64)


def rewards_from_uniforms(instance: BanditInstance, arm, context, u1, u2) -> np.ndarray:
    mean = instance.means[arm, context]
    sd = instance.sds[arm, context]
    gauss = gaussian_from_uniforms(mean, sd, u1, u2)
    bern = bernoulli_from_uniform(mean, u1)
    return np.where(instance.is_gaussian[arm, context], gauss, bern)


def sample_context(instance: BanditInstance, rng: RngStream) -> int:
    """Draw a context index by inverse CDF; consumes exactly one uniform."""
    u = np.array([rng.uniform()])
    return int(context_from_uniform(instance.cum_probs, u)[0])


def sample_reward(instance: BanditInstance, arm: int, context: int, rng: RngStream) -> float:
    """One reward draw; Gaussian cells consume two uniforms, Bernoulli one."""
    if not (0 <= arm < instance.K and 0 <= context < instance.M):
        raise IndexError("arm or context out of range")
    u1 = rng.uniform()
    u2 = rng.uniform() if instance.is_gaussian[arm, context] else 0.0
    y = rewards_from_uniforms(
        instance, np.array([arm]), np.array([context]), np.array([u1]), np.array([u2])
    )
    return float(y[0])


# -- population quantities --------------------------------------------------


def marginal_mean(instance: BanditInstance, arm: int) -> float:
    return float(instance.marginal[arm])


def best_arm(instance: BanditInstance) -> int:
    return instance.best


def gaps(instance: BanditInstance) -> np.ndarray:
    """Marginal gaps mu* - mu^a; zero at the best arm."""
    g = instance.marginal[instance.best] - instance.marginal
    g[instance.best] = 0.0
    return g
