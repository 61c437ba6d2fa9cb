"""Monte Carlo simulation of the inventory chain under an (s, S) policy."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .inventory import expected_h

Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    replications: int
    seed: int = 0
    initial_state: float = 0.0
    burn_in: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.replications < 1:
            raise ValueError("horizon and replications must be positive")
        if not 0 <= self.burn_in < self.horizon:
            raise ValueError("burn_in must satisfy 0 <= burn_in < horizon")


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    half_width_95: float
    replications: int

    def to_json(self):
        return {"mean": self.mean, "half_width_95": self.half_width_95, "replications": self.replications}


def step(params, x, a, d):
    """Next inventory level x + a - d (no clamping to the solver lattice)."""
    return x + a - d


def _demand_paths(params, cfg):
    # one counter-based stream per replication; seed and index occupy separate
    # key words so distinct (seed, index) pairs never share a stream
    cdf = np.cumsum(params.demand.probs)
    sup = params.demand.support
    out = np.empty((cfg.replications, cfg.horizon))
    for r in range(cfg.replications):
        rng = np.random.Generator(np.random.Philox(key=np.array([cfg.seed & (2**64 - 1), r], dtype=np.uint64)))
        u = rng.random(cfg.horizon)
        out[r] = sup[np.minimum(np.searchsorted(cdf, u, side="right"), sup.size - 1)]
    return out


def _run(params, pol, cfg, at_s=False, trajectory=None):
    """Yield (t, per-replication cost) for t = 0..horizon-1."""
    demand = _demand_paths(params, cfg)
    x = np.full(cfg.replications, float(cfg.initial_state))
    for t in range(cfg.horizon):
        a = pol.order(x, at_s=at_s)
        cost = params.K * (a > 0) + params.c_bar * a + expected_h(params, x + a)
        if trajectory is not None:
            trajectory.append((t, x[0], a[0], demand[0, t], cost[0]))
        yield t, cost
        x = step(params, x, a, demand[:, t])


def _aggregate(per_rep):
    n = per_rep.size
    mean = float(per_rep.mean())
    hw = Z95 * float(per_rep.std(ddof=1)) / math.sqrt(n) if n > 1 else math.inf
    return SimEstimate(mean, hw, n)


def _dump(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "a", "d", "cost"])
        for t, x, a, d, c in rows:
            wr.writerow([t, repr(float(x)), repr(float(a)), repr(float(d)), repr(float(c))])


def simulate_average(params, pol, cfg, at_s=False, trajectory_csv=None):
    """Long-run average cost per period, one estimate per replication after burn-in."""
    rows = [] if trajectory_csv else None
    total = np.zeros(cfg.replications)
    for t, cost in _run(params, pol, cfg, at_s, rows):
        if t >= cfg.burn_in:
            total += cost
    if rows is not None:
        _dump(trajectory_csv, rows)
    return _aggregate(total / (cfg.horizon - cfg.burn_in))


def simulate_discounted(params, pol, alpha, cfg, at_s=False, trajectory_csv=None):
    """Total discounted cost over the horizon from ``cfg.initial_state``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    rows = [] if trajectory_csv else None
    total = np.zeros(cfg.replications)
    disc = 1.0
    for t, cost in _run(params, pol, cfg, at_s, rows):
        total += disc * cost
        disc *= alpha
        if disc == 0.0 and rows is None:
            break
    if rows is not None:
        _dump(trajectory_csv, rows)
    est = _aggregate(total)
    if alpha == 0.0 or np.ptp(total) == 0.0:
        est = SimEstimate(est.mean, 0.0, est.replications)
    return est


def order_intervals(params, pol, cfg):
    """Periods between consecutive orders, pooled over replications."""
    demand = _demand_paths(params, cfg)
    x = np.full(cfg.replications, float(cfg.initial_state))
    last = np.full(cfg.replications, -1)
    gaps = []
    for t in range(cfg.horizon):
        a = pol.order(x)
        hit = a > 0
        seen = hit & (last >= 0)
        gaps.extend((t - last[seen]).tolist())
        last[hit] = t
        x = step(params, x, a, demand[:, t])
    return np.asarray(gaps)
