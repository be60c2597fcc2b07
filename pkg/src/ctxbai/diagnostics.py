"""Empirical checks of the asymptotic behaviour of the strategy.

Covers the normalized AIPW gap differences, their accumulated conditional
second moments, convergence of the plug-in allocation, and a log-linear fit
of the misidentification probability against the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import instance_allocation
from .bandit import BanditInstance, gaps
from .estimation import NuisanceState

ADMISSIBLE_EVENTS = 10


def _sum_contexts(values: np.ndarray) -> np.ndarray:
    """Sum over the last (context) axis in fixed order."""
    total = values[..., 0]
    for x in range(1, values.shape[-1]):
        total = total + values[..., x]
    return total


def conditional_gap_moment(instance: BanditInstance, mu_hat, p_sample, w_score) -> np.ndarray:
    """E[(phi* - phi^a - gap_a)^2 | past] for every arm, 0 at the best arm.

    ``mu_hat``, ``p_sample`` and ``w_score`` have shape (..., K, M): the
    regression estimates, the probabilities the arm is actually drawn with,
    and the probabilities used as AIPW weights. They differ only when the arm
    is forced (initialization rounds). Expectation is exact over the context
    law and the reward law of each cell.
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    p_sample = np.asarray(p_sample, dtype=float)
    w_score = np.asarray(w_score, dtype=float)
    b = instance.best
    g = gaps(instance)
    err = instance.means - mu_hat  # (..., K, M)
    second = instance.sds**2 + err * err
    out = np.zeros(mu_hat.shape[:-1])
    pb, wb = p_sample[..., b, :], w_score[..., b, :]
    term_b = pb * (second[..., b, :] / (wb * wb))
    lin_b = pb * (err[..., b, :] / wb)
    for a in range(instance.K):
        if a == b:
            continue
        pa, wa = p_sample[..., a, :], w_score[..., a, :]
        c = mu_hat[..., b, :] - mu_hat[..., a, :] - g[a]
        lin_a = pa * (err[..., a, :] / wa)
        per_x = term_b + pa * (second[..., a, :] / (wa * wa)) + 2.0 * c * (lin_b - lin_a) + c * c
        out[..., a] = _sum_contexts(instance.probs * per_x)
    return out


def oracle_gap_variance(instance: BanditInstance) -> np.ndarray:
    """Variance of the gap score under true nuisances and the target allocation.

    Algebraically equal to :func:`ctxbai.allocation.gap_variance`; computing it
    through :func:`conditional_gap_moment` makes oracle-run ratios exactly 1.
    """
    w = instance_allocation(instance).w
    mu = np.asarray(instance.means)
    return conditional_gap_moment(instance, mu, w, w)


def xi_values(phi, instance: BanditInstance, budget: int, vtilde) -> np.ndarray:
    """Normalized gap differences for each arm (0 at the best arm); phi is (..., K)."""
    phi = np.asarray(phi, dtype=float)
    b = instance.best
    g = gaps(instance)
    scale = np.sqrt(budget * np.where(vtilde > 0, vtilde, 1.0))
    xi = (phi[..., b : b + 1] - phi - g) / scale
    xi[..., b] = 0.0
    return xi


def variance_convergence(cond_ratio_sum, budget: int, instance: BanditInstance, arm: int) -> float:
    """Monte Carlo estimate of E|sum_t E[xi_t^2 | past] - 1| for one arm.

    ``cond_ratio_sum`` holds, per trial, the sum over rounds of the
    conditional second moment divided by the oracle variance (shape
    (n_trials, K)); dividing by the budget gives the accumulated moment.
    """
    if cond_ratio_sum is None:
        raise ValueError("no recorded diagnostics")
    if arm == instance.best:
        raise ValueError("variance convergence is defined for suboptimal arms")
    s = np.asarray(cond_ratio_sum, dtype=float)
    if s.ndim == 1:
        s = s[None, :]
    return float(np.mean(np.abs(s[:, arm] / budget - 1.0)))


def allocation_convergence(state: NuisanceState, instance: BanditInstance) -> float:
    """Sup-norm distance of the plug-in allocation from the target allocation."""
    est = state.allocation_table()
    return float(np.max(np.abs(est - instance_allocation(instance).w)))


def allocation_distance(tables: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-trial sup-norm distance for stacked K x M tables (n, K, M)."""
    return np.max(np.abs(np.asarray(tables) - target), axis=(-2, -1))


def xi_residuals(xi: np.ndarray, rounds, arm: int, recorded=None) -> list[dict]:
    """Across-trial mean and standard error of xi at the given rounds.

    ``xi`` has shape (n_trials, R, K). Without ``recorded`` column t-1 holds
    round t; otherwise ``recorded`` lists the 1-based round of each column.
    """
    n = xi.shape[0]
    column = {t: t - 1 for t in rounds} if recorded is None else {int(r): i for i, r in enumerate(recorded)}
    out = []
    for t in rounds:
        col = xi[:, column[t], arm]
        mean = float(np.mean(col))
        se = float(np.std(col, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        z = mean / se if se > 0 else (0.0 if mean == 0 else math.inf)
        out.append({"t": int(t), "mean": mean, "se": se, "z": z})
    return out


# -- decay-rate fitting -----------------------------------------------------


class InsufficientDataError(ValueError):
    pass


@dataclass
class DecayFit:
    budgets: list
    p_hat: list
    p_se: list
    slope: float
    slope_se: float
    intercept: float
    r2: float
    used: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "budgets": list(self.budgets),
            "p_hat": list(self.p_hat),
            "p_se": list(self.p_se),
            "slope": self.slope,
            "slope_se": self.slope_se,
            "intercept": self.intercept,
            "r2": self.r2,
            "used": list(self.used),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecayFit":
        return cls(**d)


def fit_decay_rate(budgets, misid, n_trials, min_events: int = ADMISSIBLE_EVENTS) -> DecayFit:
    """Least-squares slope of -log p_hat against the budget.

    Only budgets with ``p_hat >= min_events / n`` enter the fit. The slope's
    standard error propagates the binomial variance of each p_hat through the
    logarithm, ``Var(log p_hat) ~ (1 - p) / (n p)``.
    """
    budgets = [int(b) for b in budgets]
    misid = [int(m) for m in misid]
    n = np.broadcast_to(np.asarray(n_trials, dtype=np.int64), (len(budgets),)).tolist()
    p = [m / k for m, k in zip(misid, n)]
    p_se = [math.sqrt(pi * (1.0 - pi) / k) for pi, k in zip(p, n)]
    used = [i for i, (pi, k) in enumerate(zip(p, n)) if pi >= min_events / k and pi > 0]
    if len(used) < 3:
        raise InsufficientDataError(
            f"need at least 3 budgets with p_hat >= {min_events}/n, got {len(used)}"
        )
    T = np.array([budgets[i] for i in used], dtype=float)
    yv = np.array([-math.log(p[i]) for i in used])
    var_log = np.array([(1.0 - p[i]) / (n[i] * p[i]) for i in used])
    tc = T - T.mean()
    sxx = float(tc @ tc)
    slope = float(tc @ (yv - yv.mean()) / sxx)
    intercept = float(yv.mean() - slope * T.mean())
    resid = yv - (intercept + slope * T)
    sst = float(((yv - yv.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    slope_se = math.sqrt(float(((tc / sxx) ** 2 * var_log).sum()))
    return DecayFit(
        budgets=budgets, p_hat=p, p_se=p_se, slope=slope, slope_se=slope_se,
        intercept=intercept, r2=r2, used=used,
    )
