"""Target allocations, the maximin objective and theoretical decay exponents.

Allocation tables are K x M arrays ``w[a, x]``: the probability of pulling
arm ``a`` when context ``x`` is observed.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .bandit import BanditInstance, gaps

ORACLE_MAX_ARMS = 5
ORACLE_MAX_CONTEXTS = 3
# Per-context lattices larger than this are searched by pattern refinement.
_EXHAUSTIVE_LIMIT = 2_000_000
_SWEEP_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class AllocationTable:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2:
            raise ValueError("allocation table must be K x M")
        if np.any(w <= 0.0) or (w.shape[0] > 1 and np.any(w >= 1.0)):
            raise ValueError("allocation probabilities must lie in (0, 1)")
        if np.any(np.abs(w.sum(axis=0) - 1.0) > 1e-12):
            raise ValueError("allocation rows must sum to one per context")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def K(self) -> int:
        return self.w.shape[0]

    @property
    def M(self) -> int:
        return self.w.shape[1]

    def __getitem__(self, idx):
        return self.w[idx]

    def tolist(self) -> list:
        return self.w.tolist()


def _sum_rows(values: np.ndarray) -> np.ndarray:
    """Sum over the leading (arm) axis in a fixed left-to-right order."""
    total = values[0].copy()
    for row in values[1:]:
        total = total + row
    return total


def allocation_from_sds(sds: np.ndarray, best) -> np.ndarray:
    """Closed-form target allocation for arrays of shape (..., K).

    ``best`` broadcasts against the leading shape.  Shared by the population
    allocation and the plug-in estimate, which is why it works on arrays.
    Sums over arms run left to right so every caller gets identical bits.
    """
    sds = np.asarray(sds, dtype=float)
    K = sds.shape[-1]
    best = np.broadcast_to(np.asarray(best), sds.shape[:-1])
    is_best = [best == a for a in range(K)]
    cols = [sds[..., a] for a in range(K)]
    var = [c * c for c in cols]
    other_total = np.where(is_best[0], 0.0, var[0])
    sd_best = np.where(is_best[0], cols[0], 0.0)
    for a in range(1, K):
        other_total = other_total + np.where(is_best[a], 0.0, var[a])
        sd_best = sd_best + np.where(is_best[a], cols[a], 0.0)
    w_best = sd_best / (sd_best + np.sqrt(other_total))
    rest = 1.0 - w_best
    out = np.empty(sds.shape)
    for a in range(K):
        out[..., a] = np.where(is_best[a], w_best, rest * (var[a] / other_total))
    return out


def first_argmax(values: np.ndarray) -> np.ndarray:
    """Index of the first maximum along the last axis (cheap for small K)."""
    values = np.asarray(values)
    best = np.zeros(values.shape[:-1], dtype=np.int64)
    top = values[..., 0]
    for a in range(1, values.shape[-1]):
        better = values[..., a] > top
        best = np.where(better, a, best)
        top = np.where(better, values[..., a], top)
    return best


def optimal_allocation(sigmas, best: int) -> AllocationTable:
    """Variance-optimal target allocation from conditional sds (K x M)."""
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.ndim == 1:
        sigmas = sigmas[:, None]
    if sigmas.shape[0] < 2:
        raise ValueError("need at least two arms")
    if np.any(sigmas <= 0.0):
        raise ValueError("standard deviations must be positive")
    if not 0 <= best < sigmas.shape[0]:
        raise ValueError("best arm out of range")
    return AllocationTable(allocation_from_sds(sigmas.T, best).T)


def uniform_allocation(K: int, M: int = 1) -> AllocationTable:
    if K < 1 or M < 1:
        raise ValueError("K and M must be positive")
    return AllocationTable(np.full((K, M), 1.0 / K))


def instance_allocation(instance: BanditInstance) -> AllocationTable:
    """Target allocation of an instance, using its true sds and best arm."""
    return optimal_allocation(instance.sds, instance.best)


def _w(w) -> np.ndarray:
    return w.w if isinstance(w, AllocationTable) else np.asarray(w, dtype=float)


def omega(instance: BanditInstance, w, arm: int) -> float:
    """Asymptotic variance of the gap estimate between the best arm and ``arm``."""
    if arm == instance.best:
        raise ValueError("omega is defined for suboptimal arms only")
    w = _w(w)
    b = instance.best
    per_context = instance.sds[b] ** 2 / w[b] + instance.sds[arm] ** 2 / w[arm]
    return math.fsum(instance.probs * per_context)


def maximin_objective(instance: BanditInstance, w) -> tuple[float, int]:
    """min over suboptimal arms of gap^2 / (2 omega); ties go to the lowest arm."""
    g = gaps(instance)
    best_value, binding = math.inf, -1
    for a in range(instance.K):
        if a == instance.best:
            continue
        value = g[a] ** 2 / (2.0 * omega(instance, w, a))
        if value < best_value:
            best_value, binding = value, a
    return best_value, binding


# -- brute-force oracle -----------------------------------------------------


@functools.lru_cache(maxsize=8)
def _compositions(total: int, parts: int) -> np.ndarray:
    """All positive integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    # Stars and bars over positive parts: choose parts-1 cut points.
    cuts = np.array(list(itertools.combinations(range(1, total), parts - 1)), dtype=np.int64)
    if cuts.size == 0:
        return np.empty((0, parts), dtype=np.int64)
    edges = np.hstack([np.zeros((len(cuts), 1), np.int64), cuts, np.full((len(cuts), 1), total)])
    out = np.diff(edges, axis=1)
    out.setflags(write=False)
    return out


def _n_compositions(total: int, parts: int) -> int:
    return math.comb(total - 1, parts - 1)


class _JointObjective:
    """Maximin value as a function of one context's row, others held fixed."""

    def __init__(self, instance: BanditInstance):
        self.instance = instance
        self.best = instance.best
        self.subopt = [a for a in range(instance.K) if a != instance.best]
        g = gaps(instance)
        self.g2 = np.array([g[a] ** 2 for a in self.subopt])
        self.var = instance.sds**2
        self.p = instance.probs

    def contributions(self, w: np.ndarray) -> np.ndarray:
        """Omega contribution of each context for each suboptimal arm: (n_sub, M)."""
        b = self.best
        return np.array([self.p * (self.var[b] / w[b] + self.var[a] / w[a]) for a in self.subopt])

    def value(self, w: np.ndarray) -> float:
        om = self.contributions(w).sum(axis=1)
        return float(np.min(self.g2 / (2.0 * om)))

    def row_values(self, rest: np.ndarray, x: int, rows: np.ndarray) -> np.ndarray:
        """Objective for candidate rows (n, K) in context ``x``; ``rest`` excludes x."""
        b = self.best
        out = np.full(rows.shape[0], np.inf)
        for i, a in enumerate(self.subopt):
            om = rest[i] + self.p[x] * (self.var[b, x] / rows[:, b] + self.var[a, x] / rows[:, a])
            out = np.minimum(out, self.g2[i] / (2.0 * om))
        return out


@functools.lru_cache(maxsize=8)
def _inverse_points(total: int, parts: int) -> np.ndarray:
    """``total / composition`` for every lattice point: 1/w on the grid."""
    out = total / _compositions(total, parts)
    out.setflags(write=False)
    return out


def _best_row_exhaustive(obj, rest, x, n, K):
    pts = _compositions(n, K)
    vals = obj.row_values(rest, x, pts / n)
    i = int(np.argmax(vals))
    return pts[i], float(vals[i])


def _pattern_search(score, n, K, start, min_part=1):
    """Maximise ``score`` over integer vectors summing to ``n`` (parts >= min_part).

    Scans the offsets {-2..2}^(K-1) around the incumbent (the last coordinate
    absorbs the remainder) and halves the stride when nothing improves.
    """
    offsets = np.array(list(itertools.product(range(-2, 3), repeat=K - 1)), dtype=np.int64)
    cur = np.array(start, dtype=np.int64)
    cur_val = float(score(cur[None, :])[0])
    stride = max(1, n // 8)
    while True:
        cand = np.repeat(cur[None, :], len(offsets), axis=0)
        cand[:, :-1] += stride * offsets
        cand[:, -1] = n - cand[:, :-1].sum(axis=1)
        cand = cand[np.all(cand >= min_part, axis=1)]
        vals = score(cand)
        i = int(np.argmax(vals))
        if vals[i] > cur_val:
            cur, cur_val = cand[i], float(vals[i])
            continue
        if stride == 1:
            return cur, cur_val
        stride //= 2


def _best_row_pattern(obj, rest, x, n, K, start):
    return _pattern_search(lambda rows: obj.row_values(rest, x, rows / n), n, K, start)


_LAMBDA_RESOLUTION = 1 << 12


class _DualSearch:
    """Allocations that minimise a multiplier-weighted sum of the Omega terms.

    For weights ``lam`` on the suboptimal arms, sum_i lam_i Omega_i / gap_i^2
    separates across contexts, and each context row minimises
    sum_b c_b / w_b on the lattice. Maximising that weighted minimum over
    ``lam`` is the concave dual of the maximin problem, which plain
    coordinate sweeps cannot solve: they stall where two arms bind.
    """

    def __init__(self, obj: _JointObjective, n: int, K: int, exhaustive: bool):
        self.obj, self.n, self.K, self.exhaustive = obj, n, K, exhaustive
        self.rows = None

    def _coefficients(self, lam: np.ndarray, x: int) -> np.ndarray:
        obj = self.obj
        c = np.zeros(self.K)
        scaled = lam / obj.g2
        c[obj.best] = obj.var[obj.best, x] * scaled.sum()
        for i, a in enumerate(obj.subopt):
            c[a] = scaled[i] * obj.var[a, x]
        return c

    def allocation(self, lam: np.ndarray) -> tuple[np.ndarray, float]:
        """Lattice minimiser for weights ``lam`` and the weighted minimum (the dual value)."""
        n, K = self.n, self.K
        M = self.obj.var.shape[1]
        if self.rows is None:
            base = np.full(K, n // K)
            base[: n - base.sum()] += 1
            self.rows = np.repeat(base[:, None], M, axis=1)
        lattice = np.empty((K, M), dtype=np.int64)
        total = 0.0
        for x in range(M):
            c = self._coefficients(lam, x)
            if self.exhaustive:
                vals = _inverse_points(n, K) @ c
                i = int(np.argmin(vals))
                row, val = _compositions(n, K)[i], float(vals[i])
            else:
                row, neg = _pattern_search(lambda r: -((n / r) @ c), n, K, self.rows[:, x])
                val = -neg
            lattice[:, x] = row
            total += self.obj.p[x] * val
        self.rows = lattice
        return lattice, total

    def search(self) -> np.ndarray:
        """Best lattice allocation found over the multiplier simplex."""
        S = len(self.obj.subopt)
        if S == 1:
            return self.allocation(np.ones(1))[0]
        N = _LAMBDA_RESOLUTION
        start = np.full(S, N // S)
        start[: N - start.sum()] += 1
        found = {}

        def dual(lams):
            out = np.empty(len(lams))
            for j, lam in enumerate(lams):
                lattice, d = self.allocation(lam / N)
                found[tuple(lam)] = lattice
                out[j] = d
            return out

        lam_star, _ = _pattern_search(dual, N, S, start, min_part=0)

        def primal(lams):
            out = np.empty(len(lams))
            for j, lam in enumerate(lams):
                key = tuple(lam)
                if key not in found:
                    found[key] = self.allocation(lam / N)[0]
                out[j] = self.obj.value(found[key] / self.n)
            return out

        # The dual maximiser pins the multipliers only up to lattice noise;
        # a local search on the true objective settles them.
        lam_best, _ = _pattern_search(primal, N, S, lam_star, min_part=0)
        return found[tuple(lam_best)]


def oracle_maximin_allocation(
    instance: BanditInstance, grid_step: float = 1e-3, max_sweeps: int = 500
) -> tuple[AllocationTable, float]:
    """Search the product of per-context simplex lattices for the maximin allocation.

    A multiplier (dual) search proposes a lattice allocation, then context
    rows are re-optimised in turn with the others held fixed, by exhaustive
    enumeration of the lattice with spacing ``grid_step`` when it is small
    enough and by a shrinking-stride pattern search otherwise. Sweeps stop
    once a full pass improves the objective by less than 1e-10. The uniform
    allocation is swept too and the better result kept. This never consults
    the closed-form allocation.
    """
    K, M = instance.K, instance.M
    if K > ORACLE_MAX_ARMS or M > ORACLE_MAX_CONTEXTS:
        raise ValueError(f"oracle limited to K <= {ORACLE_MAX_ARMS}, M <= {ORACLE_MAX_CONTEXTS}")
    if not grid_step >= 1e-3 - 1e-15:
        raise ValueError("grid_step must be at least 1e-3")
    n = int(round(1.0 / grid_step))
    if n < K:
        raise ValueError("grid too coarse for the number of arms")
    obj = _JointObjective(instance)
    exhaustive = _n_compositions(n, K) <= _EXHAUSTIVE_LIMIT

    base = n // K
    start = np.full(K, base, dtype=np.int64)
    start[: n - base * K] += 1
    uniform = np.repeat(start[:, None], M, axis=1)
    dual = _DualSearch(obj, n, K, exhaustive).search()

    best_lattice, best_value = None, -math.inf
    for lattice in (dual, uniform):
        lattice, value = _coordinate_sweeps(obj, lattice.copy(), n, K, M, exhaustive, max_sweeps)
        if value > best_value:
            best_lattice, best_value = lattice, value
    return AllocationTable(best_lattice / n), best_value


def _coordinate_sweeps(obj, lattice, n, K, M, exhaustive, max_sweeps):
    value = obj.value(lattice / n)
    for _ in range(max_sweeps):
        before = value
        for x in range(M):
            contrib = obj.contributions(lattice / n)
            rest = contrib.sum(axis=1) - contrib[:, x]
            if exhaustive:
                row, row_val = _best_row_exhaustive(obj, rest, x, n, K)
            else:
                row, row_val = _best_row_pattern(obj, rest, x, n, K, lattice[:, x])
            if row_val > value:
                lattice[:, x] = row
                value = row_val
        if value - before < _SWEEP_TOL:
            break
    return lattice, obj.value(lattice / n)


# -- decay exponents --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RateReport:
    lower_exponent: float
    upper_exponent: float
    per_arm_omega: np.ndarray
    per_arm_upper: np.ndarray
    binding_arm: int
    context_constant_gaps: bool

    def to_dict(self) -> dict:
        return {
            "lower_exponent": self.lower_exponent,
            "upper_exponent": self.upper_exponent,
            "per_arm_omega": self.per_arm_omega.tolist(),
            "per_arm_upper": [None if math.isinf(v) else v for v in self.per_arm_upper.tolist()],
            "binding_arm": self.binding_arm,
            "context_constant_gaps": self.context_constant_gaps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RateReport":
        return cls(
            lower_exponent=d["lower_exponent"],
            upper_exponent=d["upper_exponent"],
            per_arm_omega=np.array(d["per_arm_omega"], dtype=float),
            per_arm_upper=np.array([math.inf if v is None else v for v in d["per_arm_upper"]]),
            binding_arm=d["binding_arm"],
            context_constant_gaps=d["context_constant_gaps"],
        )


def _root_total(instance: BanditInstance) -> np.ndarray:
    """Per-context sigma*(x) + sqrt(sum over suboptimal arms of sigma^a(x)^2)."""
    b = instance.best
    var = instance.sds**2
    others = _sum_rows(np.delete(var, b, axis=0))
    return instance.sds[b] + np.sqrt(others)


def lower_bound_rate(instance: BanditInstance) -> float:
    """Lower-bound exponent with the smallest suboptimal gap as the gap bound."""
    g = np.delete(gaps(instance), instance.best)
    delta = float(np.min(g))
    denom = math.fsum(instance.probs * _root_total(instance) ** 2)
    return delta**2 / (2.0 * denom)


def gap_variance(instance: BanditInstance) -> np.ndarray:
    """Per-arm asymptotic variance of the normalized AIPW gap (0 at the best arm).

    Combines the optimal-allocation variance with the spread of the
    conditional gaps around the marginal gap.
    """
    root2 = _root_total(instance) ** 2
    marginal_gap = gaps(instance)
    spread = (instance.context_gaps() - marginal_gap[:, None]) ** 2
    out = np.zeros(instance.K)
    for a in range(instance.K):
        if a != instance.best:
            out[a] = math.fsum(instance.probs * (root2 + spread[a]))
    return out


def upper_bound_rate(instance: BanditInstance) -> RateReport:
    g = gaps(instance)
    v = gap_variance(instance)
    w = instance_allocation(instance)
    per_arm_upper = np.full(instance.K, math.inf)
    per_arm_omega = np.zeros(instance.K)
    for a in range(instance.K):
        if a != instance.best:
            per_arm_upper[a] = g[a] ** 2 / (2.0 * v[a])
            per_arm_omega[a] = omega(instance, w, a)
    binding = int(np.argmin(per_arm_upper))
    cg = instance.context_gaps()
    constant = bool(np.all(np.abs(cg - g[:, None]) <= 1e-12))
    return RateReport(
        lower_exponent=lower_bound_rate(instance),
        upper_exponent=float(per_arm_upper[binding]),
        per_arm_omega=per_arm_omega,
        per_arm_upper=per_arm_upper,
        binding_arm=binding,
        context_constant_gaps=constant,
    )
