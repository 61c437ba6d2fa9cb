"""Vanishing-discount construction of the average-cost solution and its checks."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .dp import ValueTable, demand_expectation, relative_value, value_iteration
from .errors import InvalidInstanceError, TruncationUnderflowError
from .inventory import alpha_star, expected_h, g_alpha
from .policy import SSPolicy, extract_ss


@dataclass(frozen=True)
class VanishingSchedule:
    alphas: Tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        if not a:
            raise InvalidInstanceError("schedule is nonempty")
        if any(not 0.0 <= x < 1.0 for x in a):
            raise InvalidInstanceError("schedule discount factors in [0, 1)", f"alphas={list(a)}")
        if any(b <= c for c, b in zip(a, a[1:])):
            raise InvalidInstanceError("schedule strictly increasing", f"alphas={list(a)}")
        object.__setattr__(self, "alphas", a)

    def check_threshold(self, params):
        a_star = alpha_star(params)
        if not self.alphas[0] > a_star:
            raise InvalidInstanceError(
                "alpha_1 > alpha* = 1 + lim h(x)/(c_bar x)",
                f"alpha_1={self.alphas[0]}, alpha*={a_star}",
            )

    @classmethod
    def geometric(cls, n=6, floor=None):
        """alpha_n = 1 - 2^(-n-1), n = 1..n, clipped below at ``floor``."""
        alphas = [1.0 - 2.0 ** (-k - 1) for k in range(1, n + 1)]
        if floor is not None:
            alphas = [max(a, floor) for a in alphas]
        return cls(tuple(sorted(set(alphas))))

    @classmethod
    def default_for(cls, params, n=6):
        return cls.geometric(n, floor=alpha_star(params) + 0.05)


@dataclass
class DiscountedSolve:
    alpha: float
    v: ValueTable
    m: float
    u: ValueTable
    G: ValueTable
    ss: SSPolicy
    iterations: int


@dataclass
class AverageSolution:
    w: float
    u_tilde: ValueTable
    H: ValueTable
    policy: SSPolicy
    acoe_residual: float
    acoe_argmax: float
    alphas: List[float]
    w_sequence: List[float]
    ss_sequence: List[Tuple[float, float]]
    solves: List[DiscountedSolve] = field(repr=False, default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def u_tables(self):
        return [d.u for d in self.solves]


def _threads():
    try:
        return max(1, int(os.environ.get("ACOE_LAB_THREADS", "1")))
    except ValueError:
        return 1


def solve_discounted(params, alpha, tol=1e-8, max_iter=1_000_000, model=None):
    """Value iteration plus the derived m, u, G and (s, S) for one discount factor."""
    model = params.dp_model() if model is None else model
    v, _, it = value_iteration(model, alpha, tol, max_iter)
    m, u = relative_value(v)
    G = g_alpha(params, v, alpha)
    return DiscountedSolve(alpha, v, m, u, G, extract_ss(G, params.K), it)


def vanishing_discount(params, schedule, dp_tol=1e-6, max_iter=1_000_000):
    """Run the discounted solves along ``schedule`` and assemble the average-cost solution.

    w is (1 - alpha_N) m_{alpha_N}, the relative value is u_{alpha_N}, and
    (s*, S*) is the last (s_alpha, S_alpha) of the sequence.
    """
    if not isinstance(schedule, VanishingSchedule):
        schedule = VanishingSchedule(tuple(schedule))
    schedule.check_threshold(params)
    model = params.dp_model()
    workers = min(_threads(), len(schedule.alphas))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            solves = list(pool.map(lambda a: solve_discounted(params, a, dp_tol, max_iter, model), schedule.alphas))
    else:
        solves = [solve_discounted(params, a, dp_tol, max_iter, model) for a in schedule.alphas]

    last = solves[-1]
    w = (1.0 - last.alpha) * last.m
    H = h_function(params, last.u, w=w, S_star=last.ss.S)
    res, arg = acoe_residual(params, w, last.u, H)
    warnings = []
    if len(solves) == 1:
        warnings.append("schedule has a single discount factor: no convergence sequence")
    else:
        prev = solves[-2].ss
        step = params.lattice.step
        if abs(prev.s - last.ss.s) > step + 1e-12 or abs(prev.S - last.ss.S) > step + 1e-12:
            warnings.append(
                f"(s, S) not settled: {(prev.s, prev.S)} -> {(last.ss.s, last.ss.S)} over the last two discount factors"
            )
    return AverageSolution(
        w=w,
        u_tilde=last.u,
        H=H,
        policy=last.ss,
        acoe_residual=res,
        acoe_argmax=arg,
        alphas=list(schedule.alphas),
        w_sequence=[(1.0 - d.alpha) * d.m for d in solves],
        ss_sequence=[(d.ss.s, d.ss.S) for d in solves],
        solves=solves,
        warnings=warnings,
    )


def with_ordering_tail(params, u_tilde, w, S_star):
    """Attach the below-grid tail ``K + H(S*) - c_bar x - w`` to a relative value table.

    Below s* the optimal action orders up to S*, so the average-cost equation
    makes u linear there with slope ``-c_bar``.
    """
    if u_tilde.below_grid is not None:
        return u_tilde
    offs, probs = params.demand_offsets, params.demand.probs
    iS = params.lattice.index(S_star)
    if iS - offs.max() < 0:
        raise TruncationUnderflowError("S* is within one demand of x_min")
    H_S = params.c_bar * S_star + float(expected_h(params, S_star)) + float(probs @ u_tilde.values[iS - offs])
    return ValueTable(params.lattice, u_tilde.values, (-params.c_bar, params.K + H_S - w))


def h_function(params, u_tilde, w=None, S_star=None):
    """H(x) = c_bar x + E h(x - D) + E u(x - D) on the lattice.

    Below the grid the relative value uses its own linear tail if it has one;
    otherwise the tail ``K + H(S*) - c_bar x - w`` is built from ``w`` and ``S*``.
    """
    if u_tilde.below_grid is None:
        if w is None or S_star is None:
            raise TruncationUnderflowError("relative value has no tail and w, S* were not supplied")
        u_tilde = with_ordering_tail(params, u_tilde, w, S_star)
    x = params.lattice.points
    base = params.c_bar * x + expected_h(params, x)
    return ValueTable(params.lattice, base + demand_expectation(u_tilde, params.demand_offsets, params.demand.probs))


def _interior(params, margin):
    k = params.max_demand_steps if margin is None else int(margin)
    n = params.lattice.n_points
    return slice(k, n - k) if k > 0 else slice(0, n)


def acoe_rhs(params, H):
    """min{ min_{a >= 0} [K + H(x + a)], H(x) } - c_bar x."""
    suffix_min = np.minimum.accumulate(H.values[::-1])[::-1]
    return np.minimum(params.K + suffix_min, H.values) - params.c_bar * params.lattice.points


def acoe_residual(params, w, u_tilde, H, margin=None):
    """Sup-norm of the average-cost optimality equation residual over interior states.

    ``margin`` grid points are dropped at each end (default: the maximal demand).
    Returns ``(residual, state where it is attained)``.
    """
    r = np.abs(w + u_tilde.values - acoe_rhs(params, H))
    sl = _interior(params, margin)
    k = int(np.argmax(r[sl]))
    return float(r[sl][k]), float(params.lattice.points[sl][k])


def verify_acoi(params, w, u_tilde, pol, margin=None):
    """Largest one-sided violation of w + u(x) >= c(x, pi(x)) + E u(x + pi(x) - D)."""
    x = params.lattice.points
    target = pol.target_index
    a = pol.order_quantity
    y = x[target]
    cost = params.K * (a > 0) + params.c_bar * a + expected_h(params, y)
    Eu = demand_expectation(u_tilde, params.demand_offsets, params.demand.probs)[target]
    excess = cost + Eu - w - u_tilde.values
    return float(max(0.0, np.max(excess[_interior(params, margin)])))


def equicontinuity_modulus(u_tables, delta):
    """max_n max_{|x - y| <= delta} |u_n(x) - u_n(y)| over a family sharing one lattice."""
    tables = list(u_tables)
    if not tables:
        return 0.0
    lat = tables[0].lattice
    if any(t.lattice != lat for t in tables):
        raise ValueError("all tables must share one lattice")
    k = lat.steps(delta, "delta")
    if k <= 0:
        raise ValueError("delta must be a positive lattice multiple")
    k = min(k, lat.n_points - 1)
    out = 0.0
    for t in tables:
        for shift in range(1, k + 1):
            out = max(out, float(np.max(np.abs(t.values[shift:] - t.values[:-shift]))))
    return out


def two_actions_at_s(H, pol, K):
    """|K + H(S) - H(s)|: zero when ordering and not ordering tie at s."""
    return abs(K + float(H(pol.S)) - float(H(pol.s)))


def local_slope(H, x, radius=1):
    """Largest adjacent difference quotient of H within ``radius`` grid steps of ``x``."""
    lat = H.lattice
    i = lat.index(x)
    lo, hi = max(i - radius, 0), min(i + radius, lat.n_points - 1)
    seg = H.values[lo : hi + 1]
    return float(np.max(np.abs(np.diff(seg)))) / lat.step
