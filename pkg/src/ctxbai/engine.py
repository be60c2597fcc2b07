"""Lockstep simulation of many independent trials with numpy.

Each trial owns a counter-based stream keyed by its index, and every
operation is elementwise across trials, so a trial's trajectory is identical
whether it runs alone, in a chunk of any size, or on any thread. The round
order and arithmetic mirror :mod:`ctxbai.strategy` exactly; the test suite
checks the two agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diagnostics as diag
from .allocation import AllocationTable
from .bandit import BanditInstance, context_from_uniform, gaussian_from_uniforms, rewards_from_uniforms
from .estimation import clipped_moments, mixed_allocation, mixing_rate, plugin_allocation
from .rng import BatchStream
from .strategy import FIXED, RS_AIPW, STRATEGIES, UNIFORM_EBA, StrategyConfig, arm_from_uniform


@dataclass(frozen=True)
class StrategySpec:
    name: str = RS_AIPW
    config: StrategyConfig = StrategyConfig()
    table: AllocationTable | None = None
    true_nuisance: bool = True

    def __post_init__(self):
        if self.name not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.name!r}")
        if self.name == FIXED and self.table is None:
            raise ValueError("fixed strategy needs an allocation table")

    def init_len(self, K: int) -> int:
        return 0 if self.name == FIXED else self.config.init_rounds_per_arm * K


@dataclass
class BatchResult:
    recommended: np.ndarray
    sum_phi: np.ndarray
    sum_phi2: np.ndarray
    arm_counts: np.ndarray
    cond_ratio_sum: np.ndarray | None = None
    xi: np.ndarray | None = None
    final_allocation: np.ndarray | None = None


def simulate(
    instance: BanditInstance,
    spec: StrategySpec,
    budget: int,
    keys,
    record_diagnostics: bool = False,
    xi_rounds=None,
    record_final_allocation: bool = False,
) -> BatchResult:
    """Run one trial per stream key for ``budget`` rounds.

    With ``record_diagnostics`` the conditional second moments of the
    normalised residuals are accumulated; ``xi_rounds`` (1-based rounds)
    additionally stores the residuals at those rounds, shape (N, len, K).
    """
    K, M = instance.K, instance.M
    budget = int(budget)
    init_len = spec.init_len(K)
    if init_len > budget:
        raise ValueError("budget shorter than the initialization block")
    stream = BatchStream(keys)
    N = len(stream)
    rows = np.arange(N)
    bounds = spec.config.bounds

    # Cell statistics live in (N * M, K) arrays; row n * M + x holds trial n, context x.
    count = np.zeros((N * M, K))  # float counts: exact below 2**53, no int->float casts
    sum_y = np.zeros((N * M, K))
    sum_y2 = np.zeros((N * M, K))
    flat_count, flat_y, flat_y2 = count.reshape(-1), sum_y.reshape(-1), sum_y2.reshape(-1)
    row_base = rows * M
    sum_phi = np.zeros((N, K))
    sum_phi2 = np.zeros((N, K))
    uniform_row = np.full((N, K), 1.0 / K)
    all_gaussian = bool(np.all(instance.is_gaussian))
    fixed_rows = None
    if spec.name == FIXED:
        fixed_rows = np.ascontiguousarray(spec.table.w.T)  # (M, K)
    true_mu_rows = np.ascontiguousarray(instance.means.T)  # (M, K)
    zeros_ctx = np.zeros(N, dtype=np.int64)

    if record_diagnostics:
        vtilde = diag.oracle_gap_variance(instance)
        safe_v = np.where(vtilde > 0, vtilde, 1.0)
        cond_ratio_sum = np.zeros((N, K))
    xi = None
    xi_slot = {}
    if record_diagnostics and xi_rounds is not None:
        rounds = [int(r) for r in xi_rounds]
        if len(set(rounds)) != len(rounds) or any(not 1 <= r <= budget for r in rounds):
            raise ValueError("xi_rounds must be distinct rounds in 1..budget")
        xi_slot = {r: i for i, r in enumerate(rounds)}
        xi = np.zeros((N, len(rounds), K))

    for t in range(1, budget + 1):
        if M == 1:
            stream.skip()
            x = zeros_ctx
            cell_rows = rows
        else:
            x = context_from_uniform(instance.cum_probs, stream.uniform())
            cell_rows = row_base + x
        init = t <= init_len

        if spec.name == FIXED and spec.true_nuisance:
            mu = true_mu_rows[x]
        elif M == 1:
            mu, var = clipped_moments(count, sum_y, sum_y2, bounds)
        else:
            mu, var = clipped_moments(count[cell_rows], sum_y[cell_rows], sum_y2[cell_rows], bounds)
        if spec.name == FIXED:
            w = fixed_rows[x]
        elif init or spec.name == UNIFORM_EBA:
            w = uniform_row
        else:
            w = mixed_allocation(plugin_allocation(mu, var), mixing_rate(t, spec.config.mixing_exponent))

        gamma = stream.uniform()
        if init:
            arm = np.full(N, (t - 1) % K, dtype=np.int64)
        else:
            arm = arm_from_uniform(w, gamma)
        u1 = stream.uniform()
        if all_gaussian:
            u2 = stream.uniform()
            y = gaussian_from_uniforms(instance.means[arm, x], instance.sds[arm, x], u1, u2)
        else:
            u2 = stream.uniform(advance=instance.is_gaussian[arm, x])
            y = rewards_from_uniforms(instance, arm, x, u1, u2)

        phi = np.array(mu, dtype=float, copy=True)
        m_arm = mu[rows, arm]
        phi[rows, arm] = (y - m_arm) / w[rows, arm] + m_arm
        sum_phi = sum_phi + phi
        sum_phi2 = sum_phi2 + phi * phi

        if record_diagnostics:
            mu_tab, w_tab = _full_tables(spec, instance, count, sum_y, sum_y2, t, init)
            if init:
                p_tab = np.zeros((N, K, M))
                p_tab[:, (t - 1) % K, :] = 1.0
            else:
                p_tab = w_tab
            moment = diag.conditional_gap_moment(instance, mu_tab, p_tab, w_tab)
            cond_ratio_sum = cond_ratio_sum + moment / safe_v
            if t in xi_slot:
                xi[:, xi_slot[t], :] = diag.xi_values(phi, instance, budget, vtilde)

        cell = cell_rows * K + arm
        flat_count[cell] += 1
        flat_y[cell] += y
        flat_y2[cell] += y * y

    count = count.reshape(N, M, K)
    sum_y = sum_y.reshape(N, M, K)
    sum_y2 = sum_y2.reshape(N, M, K)
    arm_counts = _sum_contexts_first(count).astype(np.int64)
    if spec.name == UNIFORM_EBA:
        totals = _sum_contexts_first(sum_y)
        cnt = arm_counts.astype(float)
        means = np.where(cnt > 0, totals / np.where(cnt > 0, cnt, 1.0), -np.inf)
        recommended = np.argmax(means, axis=1)
    else:
        recommended = np.argmax(sum_phi / budget, axis=1)

    final = None
    if record_final_allocation:
        mu_all, var_all = clipped_moments(count, sum_y, sum_y2, bounds)
        final = np.swapaxes(plugin_allocation(mu_all, var_all), 1, 2)
    return BatchResult(
        recommended=recommended,
        sum_phi=sum_phi,
        sum_phi2=sum_phi2,
        arm_counts=arm_counts,
        cond_ratio_sum=cond_ratio_sum if record_diagnostics else None,
        xi=xi,
        final_allocation=final,
    )


def _sum_contexts_first(values: np.ndarray) -> np.ndarray:
    """Sum (N, M, K) over contexts in fixed order -> (N, K)."""
    total = values[:, 0].copy()
    for x in range(1, values.shape[1]):
        total = total + values[:, x]
    return total


def _full_tables(spec, instance, count, sum_y, sum_y2, t, init):
    """Regression estimates and sampling probabilities at every context, (N, K, M)."""
    M, K = instance.M, instance.K
    N = count.shape[0] // M
    count = count.reshape(N, M, K)
    sum_y = sum_y.reshape(N, M, K)
    sum_y2 = sum_y2.reshape(N, M, K)
    if spec.name == FIXED and spec.true_nuisance:
        mu = np.broadcast_to(instance.means, (N, K, M))
    else:
        mu_r, var_r = clipped_moments(count, sum_y, sum_y2, spec.config.bounds)
        mu = np.swapaxes(mu_r, 1, 2)
    if spec.name == FIXED:
        w = np.broadcast_to(spec.table.w, (N, K, M))
    elif init or spec.name == UNIFORM_EBA:
        w = np.full((N, K, M), 1.0 / K)
    else:
        w_r = mixed_allocation(plugin_allocation(mu_r, var_r), mixing_rate(t, spec.config.mixing_exponent))
        w = np.swapaxes(w_r, 1, 2)
    return mu, w
