"""Running conditional moments and the clipped plug-in allocation.

The array functions accept any leading batch shape, so the single-trial
:class:`NuisanceState` and the batched simulator share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import allocation_from_sds, first_argmax
from .bandit import Bounds


def clipped_moments(count, sum_y, sum_y2, bounds: Bounds):
    """Clipped mean and variance estimates; cells with no samples give mean 0.

    The second moment is clipped to ``[-c_nu, c_nu]`` before the squared mean
    is subtracted, and the variance is clipped to ``[1/c_sigma2, c_sigma2]``.
    """
    count = np.asarray(count)
    seen = count > 0
    denom = np.maximum(count, 1.0)
    mu = np.where(seen, _clip(sum_y / denom, -bounds.c_mu, bounds.c_mu), 0.0)
    nu = np.where(seen, _clip(sum_y2 / denom, -bounds.c_nu, bounds.c_nu), 0.0)
    var = _clip(nu - mu * mu, 1.0 / bounds.c_sigma2, bounds.c_sigma2)
    return mu, var


def _clip(a, lo, hi):
    return np.minimum(np.maximum(a, lo), hi)


def plugin_allocation(mu, var) -> np.ndarray:
    """Target allocation with estimates plugged in; arrays of shape (..., K).

    The empirical best arm is the first maximiser of ``mu``.
    """
    best = first_argmax(mu)
    return allocation_from_sds(np.sqrt(var), best)


def mixing_rate(t, exponent: float | None) -> float:
    """Weight on the uniform allocation in round ``t``: min(1, t**-exponent)."""
    if exponent is None:
        return 0.0
    return min(1.0, float(t) ** -exponent)


def mixed_allocation(w, r: float) -> np.ndarray:
    """Shrink an allocation toward uniform: (1 - r) * w + r / K."""
    w = np.asarray(w, dtype=float)
    if not 0.0 <= r <= 1.0:
        raise ValueError("mixing rate must lie in [0, 1]")
    if r == 0.0:
        return w
    return (1.0 - r) * w + r / w.shape[-1]


@dataclass
class NuisanceState:
    """Per-(arm, context) sample counts and moment sums for one trial."""

    K: int
    M: int
    bounds: Bounds = field(default_factory=Bounds)

    def __post_init__(self):
        self.count = np.zeros((self.K, self.M), dtype=np.int64)
        self.sum_y = np.zeros((self.K, self.M))
        self.sum_y2 = np.zeros((self.K, self.M))

    def update(self, arm: int, context: int, y: float) -> None:
        self.count[arm, context] += 1
        self.sum_y[arm, context] += y
        self.sum_y2[arm, context] += y * y

    def moments(self):
        """(mu_hat, var_hat) tables, each K x M."""
        return clipped_moments(self.count, self.sum_y, self.sum_y2, self.bounds)

    def mu_hat(self, arm: int, context: int) -> float:
        return float(self.moments()[0][arm, context])

    def var_hat(self, arm: int, context: int) -> float:
        return float(self.moments()[1][arm, context])

    def estimated_allocation(self, context: int) -> np.ndarray:
        mu, var = self.moments()
        return plugin_allocation(mu[:, context], var[:, context])

    def allocation_table(self) -> np.ndarray:
        """Plug-in allocation for every context, K x M."""
        mu, var = self.moments()
        return plugin_allocation(mu.T, var.T).T

    def snapshot(self) -> dict:
        mu, var = self.moments()
        return {"count": self.count.tolist(), "mu_hat": mu.tolist(), "var_hat": var.tolist()}
