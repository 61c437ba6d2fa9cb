"""Periodic-review inventory model with fixed ordering cost and backlogging."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Optional

import numpy as np

from .dp import DPModel, Lattice, ValueTable, demand_expectation
from .errors import BoundingBoxError, InvalidInstanceError


class PiecewiseLinear:
    """Convex piecewise-linear holding/backorder cost normalised to h(0) = 0.

    ``slopes[0]`` applies left of ``knots[0]``; ``slopes[k]`` applies on
    ``[knots[k-1], knots[k])`` and ``slopes[-1]`` right of the last knot.
    """

    def __init__(self, knots, slopes):
        self.knots = np.asarray(knots, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        if self.slopes.shape != (self.knots.size + 1,):
            raise InvalidInstanceError("h has one more slope than knots")
        if np.any(np.diff(self.knots) <= 0):
            raise InvalidInstanceError("h breakpoints strictly increasing")
        if np.any(np.diff(self.slopes) < 0):
            raise InvalidInstanceError("h convex (slopes nondecreasing)", f"slopes={self.slopes.tolist()}")
        if not (self.slopes[0] < 0 < self.slopes[-1]):
            raise InvalidInstanceError(
                "h(x) -> infinity as |x| -> infinity (leftmost slope < 0 < rightmost slope)",
                f"slopes={self.slopes.tolist()}",
            )
        left0 = self.slopes[np.searchsorted(self.knots, 0.0, side="left")]
        right0 = self.slopes[np.searchsorted(self.knots, 0.0, side="right")]
        if not (left0 <= 0 <= right0):
            raise InvalidInstanceError("h nonnegative with h(0) = 0", "0 is not a minimiser of h")
        self._g0 = 0.0
        self._g0 = float(self._raw(0.0))

    @classmethod
    def from_breakpoints(cls, pairs):
        """Build from ``[[x, slope_right], ...]``.

        A leading ``x`` of ``None`` sets only the slope at minus infinity;
        otherwise the first slope also extends to the left of the first point.
        """
        pairs = [tuple(p) for p in pairs]
        if not pairs:
            raise InvalidInstanceError("h has at least one slope")
        if pairs[0][0] is None:
            slopes = [pairs[0][1]]
            pairs = pairs[1:]
        else:
            slopes = [pairs[0][1]]
        knots = []
        for x, sl in pairs:
            if x is None:
                raise InvalidInstanceError("only the first h breakpoint may be null")
            knots.append(float(x))
            slopes.append(float(sl))
        return cls(knots, slopes)

    @classmethod
    def two_sided(cls, holding, backorder):
        """``holding * x^+ + backorder * x^-``."""
        return cls([0.0], [-backorder, holding])

    def _raw(self, x):
        x = np.asarray(x, dtype=float)
        out = self.slopes[0] * x
        for k, b in enumerate(self.knots):
            out = out + (self.slopes[k + 1] - self.slopes[k]) * np.maximum(x - b, 0.0)
        return out - self._g0

    def __call__(self, x):
        return self._raw(x)

    @property
    def left_slope(self):
        return float(self.slopes[0])

    def to_breakpoints(self):
        pairs = [[None, float(self.slopes[0])]]
        pairs += [[float(b), float(s)] for b, s in zip(self.knots, self.slopes[1:])]
        return pairs


@dataclass(frozen=True, eq=False)
class DemandPMF:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=float)
        pr = np.asarray(self.probs, dtype=float)
        if sup.ndim != 1 or sup.shape != pr.shape or sup.size == 0:
            raise InvalidInstanceError("demand support and probs have equal nonzero length")
        if np.any(sup < 0):
            raise InvalidInstanceError("demand support values >= 0")
        if np.any(pr < 0):
            raise InvalidInstanceError("demand probs >= 0")
        if abs(pr.sum() - 1.0) > 1e-12:
            raise InvalidInstanceError("demand probs sum to 1", f"sum={pr.sum():.15g}")
        if pr[sup > 0].sum() <= 0:
            raise InvalidInstanceError("P(D>0) > 0")
        order = np.argsort(sup, kind="stable")
        sup, pr = sup[order], pr[order]
        sup.setflags(write=False)
        pr.setflags(write=False)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", pr)

    @classmethod
    def deterministic(cls, d):
        return cls([d], [1.0])

    @property
    def mean(self):
        return float(self.support @ self.probs)

    @property
    def std(self):
        return float(np.sqrt(((self.support - self.mean) ** 2) @ self.probs))

    @property
    def unit(self):
        """Largest grid spacing on which every support value lies."""
        fr = [Fraction(float(d)).limit_denominator(10**6) for d in self.support if d > 0]
        den = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fr))
        num = reduce(math.gcd, (int(f * den) for f in fr))
        return num / den

    def to_dict(self):
        return {"support": self.support.tolist(), "probs": self.probs.tolist()}


@dataclass(frozen=True, eq=False)
class InventoryParams:
    K: float
    c_bar: float
    h: PiecewiseLinear
    demand: DemandPMF
    lattice: Lattice

    def __post_init__(self):
        if not (self.K >= 0 and math.isfinite(self.K)):
            raise InvalidInstanceError("K >= 0", f"K={self.K}")
        if not (self.c_bar > 0 and math.isfinite(self.c_bar)):
            raise InvalidInstanceError("c_bar > 0", f"c_bar={self.c_bar}")
        for d in self.demand.support:
            self.lattice.steps(d, "demand support value")

    @property
    def demand_offsets(self):
        return np.array([self.lattice.steps(d) for d in self.demand.support], dtype=int)

    @property
    def max_demand_steps(self):
        return int(self.demand_offsets.max())

    def with_lattice(self, lattice):
        return InventoryParams(self.K, self.c_bar, self.h, self.demand, lattice)

    def dp_model(self):
        """Lattice MDP: cost[i, j] for ordering from x_i up to x_j (j >= i)."""
        x = self.lattice.points
        n = x.size
        hb = expected_h(self, x)
        i, j = np.indices((n, n))
        order = x[None, :] - x[:, None]
        cost = self.K * (j > i) + self.c_bar * order + hb[None, :]
        cost = np.where(j >= i, cost, np.inf)
        return DPModel(self.lattice, cost, self.demand_offsets, self.demand.probs, tail_slope=-self.c_bar)

    def to_dict(self):
        return {
            "K": self.K,
            "c_bar": self.c_bar,
            "h_breakpoints": self.h.to_breakpoints(),
            "demand": self.demand.to_dict(),
            "lattice": self.lattice.to_dict(),
        }


def instance_a(x_min=-30, x_max=40, step=1.0):
    """K=10, c_bar=1, h = 2x^+ + 3x^-, D in {0,1,2} w.p. {.3,.4,.3}."""
    return InventoryParams(
        K=10.0,
        c_bar=1.0,
        h=PiecewiseLinear.two_sided(2.0, 3.0),
        demand=DemandPMF([0.0, 1.0, 2.0], [0.3, 0.4, 0.3]),
        lattice=Lattice.from_bounds(x_min, x_max, step),
    )


def default_lattice(c_bar, h, demand, width=40.0):
    """Grid centred on the myopic minimiser of ``c_bar x + E h(x - D)``."""
    step = demand.unit
    scale = max(demand.std, step)
    lo_guess = -width * scale
    xs = np.arange(math.floor(lo_guess / step), math.ceil(width * scale / step) + 1) * step
    hb = (h(xs[:, None] - demand.support[None, :]) @ demand.probs)
    centre = xs[np.argmin(c_bar * xs + hb)]
    half = math.ceil(width * scale / step) * step
    return Lattice.from_bounds(centre - half, centre + half, step)


def instance_from_dict(data):
    try:
        K = float(data["K"])
        c_bar = float(data["c_bar"])
        h = PiecewiseLinear.from_breakpoints(data["h_breakpoints"])
        dem = data["demand"]
        demand = DemandPMF(dem["support"], dem["probs"])
    except KeyError as exc:
        raise InvalidInstanceError("instance has required field", f"missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInstanceError):
            raise
        raise InvalidInstanceError("instance fields are numeric", str(exc)) from None
    lat = data.get("lattice")
    if lat is None:
        lattice = default_lattice(c_bar, h, demand)
    else:
        try:
            lattice = Lattice.from_bounds(float(lat["x_min"]), float(lat["x_max"]), float(lat["step"]))
        except KeyError as exc:
            raise InvalidInstanceError("lattice has x_min, x_max, step", f"missing {exc.args[0]!r}") from None
    return InventoryParams(K, c_bar, h, demand, lattice)


def load_instance(path):
    """Read and validate an instance JSON file."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInstanceError("instance file is valid JSON", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InvalidInstanceError("instance file is a JSON object")
    return instance_from_dict(data)


def expected_h(params, x):
    """E[h(x - D)], evaluated analytically (no table lookup)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for d, p in zip(params.demand.support, params.demand.probs):
        out = out + p * params.h(x - d)
    return out


def one_step_cost(params, x, a):
    """K 1{a>0} + c_bar a + E[h(x + a - D)] for a lattice state and order."""
    if a < 0:
        raise InvalidInstanceError("order quantity a >= 0", f"a={a}")
    params.lattice.steps(a, "order quantity")
    params.lattice.index(x)
    params.lattice.index(x + a)
    return float(params.K * (a > 0) + params.c_bar * a + expected_h(params, x + a))


def g_alpha(params, v_alpha, alpha):
    """G(x) = c_bar x + E h(x - D) + alpha E v(x - D) on the lattice."""
    x = params.lattice.points
    out = params.c_bar * x + expected_h(params, x)
    if alpha > 0:
        out = out + alpha * demand_expectation(v_alpha, params.demand_offsets, params.demand.probs)
    return ValueTable(params.lattice, out)


def alpha_star(params):
    """Discount threshold 1 + lim_{x -> -inf} h(x) / (c_bar x)."""
    return 1.0 + params.h.left_slope / params.c_bar


def renewal_table(demand, n_units, unit=None, tail_tol=1e-10):
    """E[N(k * unit)] for k = 0..n_units by iterated convolution."""
    unit = demand.unit if unit is None else unit
    offs = np.rint(demand.support / unit).astype(int)
    pmf = np.zeros(offs.max() + 1)
    np.add.at(pmf, offs, demand.probs)
    dist = np.zeros(n_units + 1)
    dist[0] = 1.0  # law of S_0
    total = np.zeros(n_units + 1)
    while True:
        dist = np.convolve(dist, pmf)[: n_units + 1]
        cdf = np.cumsum(dist)
        total += cdf
        if cdf[-1] < tail_tol:
            return total


def renewal_function(demand, t):
    """Expected number of n >= 1 with D_1 + ... + D_n <= t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    unit = demand.unit
    k = int(math.floor(t / unit + 1e-9))
    return float(renewal_table(demand, k, unit)[k])


def bounding_box(argmins, lattice, widen=2):
    """[x_L, x_U] from observed minimisers, widened by ``widen`` grid steps."""
    lo = min(argmins) - widen * lattice.step
    hi = max(argmins) + widen * lattice.step
    return max(lo, lattice.x_min), min(hi, lattice.x_max)


def _overshoot_samples(params, n_units, n_paths, rng, chunk=20_000):
    """Yield, per chunk, Z[p, k] = S_{N(k * step) + 1} in grid units for k = 0..n_units."""
    offs = params.demand_offsets
    cdf = np.cumsum(params.demand.probs)
    mean_units = float(offs @ params.demand.probs)
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        length = int((n_units + 1) / mean_units * 1.5) + 20
        while True:
            u = rng.random((m, length))
            draws = offs[np.minimum(np.searchsorted(cdf, u, side="right"), offs.size - 1)]
            csum = np.concatenate([np.zeros((m, 1), dtype=int), np.cumsum(draws, axis=1)], axis=1)
            if np.all(csum[:, -1] > n_units):
                break
            length *= 2
        # next[p, pos] = first partial sum strictly above pos
        nxt = np.full((m, n_units + 1), -1, dtype=int)
        rows = np.repeat(np.arange(m), length)
        pos = csum[:, :-1].ravel()
        val = csum[:, 1:].ravel()
        keep = pos <= n_units
        np.maximum.at(nxt, (rows[keep], pos[keep]), val[keep])
        yield np.maximum.accumulate(nxt, axis=1)


def upper_bound_U(params, x_L_star, x_U_star, n_paths=100_000, seed=0, se_multiplier=3.0, argmins=None):
    """Tabulate the bound U(x) dominating every discounted relative value function.

    ``E_y(x) = E[h(x - S_{N(y)+1})]`` is estimated by Monte Carlo with a fixed
    seed; ``se_multiplier`` standard errors are added to the estimate.
    ``argmins`` (minimisers of computed v_alpha) are checked against the box.
    """
    lat = params.lattice
    if x_L_star > x_U_star:
        raise ValueError("x_L_star must not exceed x_U_star")
    iL = lat.index(x_L_star)
    lat.index(x_U_star)
    if argmins is not None:
        bad = [a for a in argmins if not (x_L_star <= a <= x_U_star)]
        if bad:
            raise BoundingBoxError(f"minimisers {bad} fall outside [{x_L_star}, {x_U_star}]; widen the box")

    x = lat.points
    U = params.K + params.c_bar * (x_U_star - x)
    xs = x[iL:]
    n_units = xs.size - 1
    rng = np.random.Generator(np.random.Philox(key=seed))
    s1 = np.zeros(xs.size)
    s2 = np.zeros(xs.size)
    for Z in _overshoot_samples(params, n_units, n_paths, rng):
        # y = x - x_L is k grid units for xs[k]
        vals = params.h(xs[None, :] - lat.step * Z)
        s1 += vals.sum(axis=0)
        s2 += (vals**2).sum(axis=0)
    mean = s1 / n_paths
    var = np.maximum(s2 / n_paths - mean**2, 0.0) * n_paths / max(n_paths - 1, 1)
    E_y = mean + se_multiplier * np.sqrt(var / n_paths)
    E = params.h(xs) + E_y
    renewal = renewal_table(params.demand, n_units, unit=lat.step)
    f = (E + params.c_bar * params.demand.mean) * (1.0 + renewal)
    U[iL:] = params.K + params.c_bar * (x_U_star - x_L_star) + f
    return ValueTable(lat, U)
