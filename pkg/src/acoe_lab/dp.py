"""Finite-lattice dynamic programming kernel.

The state space is a uniformly spaced inventory grid.  Actions are order
quantities, represented by the post-order level ``y = x + a`` they reach;
the next state is ``y - D``.  Demand mass that falls below the grid is
valued through a linear tail stored on each :class:`ValueTable`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, InvalidInstanceError, NonConvergenceError, TruncationUnderflowError

_GRID_EPS = 1e-9


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Lattice:
    """Uniform grid ``x_min, x_min + step, ..., x_max``."""

    x_min: float
    step: float
    n_points: int

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise InvalidInstanceError("lattice step > 0", f"step={self.step}")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise InvalidInstanceError("lattice x_min < x_max", f"n_points={self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))

    @classmethod
    def from_bounds(cls, x_min, x_max, step):
        if not x_min < x_max:
            raise InvalidInstanceError("lattice x_min < x_max", f"x_min={x_min}, x_max={x_max}")
        if not step > 0:
            raise InvalidInstanceError("lattice step > 0", f"step={step}")
        span = (x_max - x_min) / step
        n = round(span)
        if abs(span - n) > _GRID_EPS * max(1.0, abs(span)):
            raise InvalidInstanceError(
                "lattice closure: x_max = x_min + (n_points-1)*step",
                f"(x_max - x_min)/step = {span}",
            )
        return cls(float(x_min), float(step), n + 1)

    @property
    def x_max(self):
        return self.x_min + (self.n_points - 1) * self.step

    @property
    def points(self):
        return self.x_min + self.step * np.arange(self.n_points)

    def steps(self, value, what="value"):
        """Express ``value`` as an integer number of grid steps."""
        q = value / self.step
        k = round(q)
        if abs(q - k) > _GRID_EPS * max(1.0, abs(q)):
            raise InvalidInstanceError(f"{what} must be an integer multiple of step", f"{value} / {self.step}")
        return int(k)

    def index(self, x):
        i = self.steps(x - self.x_min, "lattice point")
        if not 0 <= i < self.n_points:
            raise InvalidInstanceError("point lies on the lattice", f"x={x} outside [{self.x_min}, {self.x_max}]")
        return i

    def refined(self, factor=2):
        return Lattice(self.x_min, self.step / factor, (self.n_points - 1) * factor + 1)

    def to_dict(self):
        return {"x_min": self.x_min, "x_max": self.x_max, "step": self.step}


@dataclass(frozen=True, eq=False)
class ValueTable:
    """A function tabulated on a lattice, optionally extended linearly below it.

    ``below_grid`` is ``(slope, intercept)``: for ``x < x_min`` the value is
    ``intercept + slope * x``.  Without it, evaluating below the grid raises
    :class:`TruncationUnderflowError`.
    """

    lattice: Lattice
    values: np.ndarray
    below_grid: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.lattice.n_points,):
            raise ValueError(f"expected {self.lattice.n_points} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("value table contains non-finite entries")
        object.__setattr__(self, "values", vals)
        if self.below_grid is not None:
            object.__setattr__(self, "below_grid", (float(self.below_grid[0]), float(self.below_grid[1])))

    @classmethod
    def zeros(cls, lattice):
        return cls(lattice, np.zeros(lattice.n_points), below_grid=(0.0, 0.0))

    @classmethod
    def with_tail(cls, lattice, values, slope):
        """Attach a tail of the given slope that is continuous at ``x_min``."""
        values = np.asarray(values, dtype=float)
        return cls(lattice, values, (slope, values[0] - slope * lattice.x_min))

    def at_offsets(self, idx):
        """Values at integer grid offsets ``idx`` (negative means below the grid)."""
        idx = np.asarray(idx)
        if idx.size and idx.max() >= self.lattice.n_points:
            raise IndexError("offset above the lattice")
        low = idx < 0
        out = self.values[np.where(low, 0, idx)]
        if np.any(low):
            if self.below_grid is None:
                raise TruncationUnderflowError(
                    f"demand mass reaches below x_min={self.lattice.x_min} and the table has no linear tail"
                )
            slope, icpt = self.below_grid
            x = self.lattice.x_min + self.lattice.step * idx[low]
            out = np.array(out, dtype=float)
            out[low] = icpt + slope * x
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        q = (x - self.lattice.x_min) / self.lattice.step
        idx = np.rint(q).astype(int)
        if np.any(np.abs(q - idx) > 1e-9):
            raise InvalidInstanceError("point lies on the lattice", "off-grid evaluation")
        return self.at_offsets(idx)

    def shifted(self, c):
        tail = None if self.below_grid is None else (self.below_grid[0], self.below_grid[1] + c)
        return ValueTable(self.lattice, self.values + c, tail)

    def without_tail(self):
        return ValueTable(self.lattice, self.values, None)


@dataclass(frozen=True)
class TabularPolicy:
    """Stationary deterministic policy: an order quantity per lattice state."""

    lattice: Lattice
    order_quantity: np.ndarray

    def __post_init__(self):
        q = _frozen(self.order_quantity)
        if q.shape != (self.lattice.n_points,):
            raise ValueError("order_quantity has the wrong length")
        if np.any(q < -_GRID_EPS):
            raise InvalidInstanceError("order quantities are nonnegative")
        if np.any(self.lattice.points + q > self.lattice.x_max + _GRID_EPS * self.lattice.step):
            raise InvalidInstanceError("x + order <= x_max")
        object.__setattr__(self, "order_quantity", q)

    @classmethod
    def from_targets(cls, lattice, target_index):
        target_index = np.asarray(target_index)
        return cls(lattice, (target_index - np.arange(lattice.n_points)) * lattice.step)

    @property
    def target_index(self):
        """Index of the post-order level reached from each state."""
        k = np.rint(self.order_quantity / self.lattice.step).astype(int)
        return np.arange(self.lattice.n_points) + k

    def __eq__(self, other):
        if not isinstance(other, TabularPolicy):
            return NotImplemented
        return self.lattice == other.lattice and np.array_equal(self.target_index, other.target_index)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DPModel:
    """Lattice MDP whose transition depends only on the post-order level.

    ``cost[i, j]`` is the one-step cost of moving from state ``i`` to post-order
    level ``j`` (``+inf`` where inadmissible).  The next state is ``j - d`` in
    grid offsets, with probability ``demand_probs[k]`` for ``d = demand_offsets[k]``.
    ``tail_slope`` is the known slope of the value function below the grid when
    the lowest state orders (``-c_bar`` for the inventory model).
    """

    lattice: Lattice
    cost: np.ndarray
    demand_offsets: np.ndarray
    demand_probs: np.ndarray
    tail_slope: Optional[float] = None

    def __post_init__(self):
        n = self.lattice.n_points
        cost = _frozen(self.cost)
        if cost.shape != (n, n):
            raise ConfigurationError(f"cost matrix must be {n}x{n}")
        ok = np.isfinite(cost).any(axis=1)
        if not ok.all():
            bad = self.lattice.points[~ok][0]
            raise ConfigurationError(f"empty admissible action set at state x={bad}")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "demand_offsets", _frozen(self.demand_offsets, int))
        object.__setattr__(self, "demand_probs", _frozen(self.demand_probs))


def demand_expectation(v, offsets, probs):
    """``E v(y - D)`` for every lattice point ``y``; ``offsets`` are in grid steps."""
    base = np.arange(v.lattice.n_points)
    out = np.zeros(v.lattice.n_points)
    # fixed summation order over the demand support
    for d, p in zip(offsets, probs):
        out += p * v.at_offsets(base - d)
    return out


def expected_next(model, v):
    return demand_expectation(v, model.demand_offsets, model.demand_probs)


def _greedy(q):
    # np.argmin returns the first minimiser: the smallest order quantity
    j = np.argmin(q, axis=1)
    return j, q[np.arange(q.shape[0]), j]


def _tail_for(model, values, target):
    if model.tail_slope is not None and target[0] > 0:
        slope = model.tail_slope
        return (slope, values[0] - slope * model.lattice.x_min)
    return None


def bellman_discounted(model, v, alpha):
    """Apply the discounted Bellman operator once.

    Returns ``(T v, greedy policy)``.  Ties go to the smallest order.
    """
    if not 0.0 <= alpha < 1.0:
        raise InvalidInstanceError("discount factor in [0, 1)", f"alpha={alpha}")
    if alpha == 0.0:
        q = model.cost
    else:
        q = model.cost + alpha * expected_next(model, v)[None, :]
    target, values = _greedy(q)
    table = ValueTable(model.lattice, values, _tail_for(model, values, target))
    return table, TabularPolicy.from_targets(model.lattice, target)


def apply_policy(model, v, alpha, target):
    """One step of ``v -> c_pi + alpha P_pi v`` for a fixed policy given by target indices."""
    rows = np.arange(model.lattice.n_points)
    values = model.cost[rows, target]
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("policy selects an inadmissible action")
    if alpha > 0.0:
        values = values + alpha * expected_next(model, v)[target]
    return ValueTable(model.lattice, values, _tail_for(model, values, target))


STALL_ITERATIONS = 500


def _span(x):
    return float(np.max(x) - np.min(x))


def iterate_to_fixed_point(operator, lattice, alpha, tol, max_iter, what="value iteration"):
    """Iterate a monotone alpha-contraction (``T(v + c) = T v + alpha c``) from zero.

    Iterates are kept in relative form (minimum subtracted, offset tracked as a
    scalar) so the span of successive differences stays accurate for alpha
    close to one.  Stops once ``span(T v - v) <= tol (1 - alpha) / (2 alpha)``
    and returns the midpoint of the two-sided extrapolation bounds, which is
    within ``tol / 4`` of the fixed point in sup-norm.

    Returns ``(table, relative_iterate, iterations)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not 0.0 <= alpha < 1.0:
        raise InvalidInstanceError("discount factor in [0, 1)", f"alpha={alpha}")
    v0 = ValueTable.zeros(lattice)
    if alpha == 0.0:
        table = operator(v0)
        return table, table, 1

    threshold = tol * (1.0 - alpha) / (2.0 * alpha)
    rel, offset = v0, 0.0
    span = best_span = math.inf
    best_it = 0
    for it in range(1, max_iter + 1):
        y = operator(rel)
        diff = y.values - rel.values
        span = _span(diff)
        lo = float(y.values.min())
        prev_offset = offset
        offset = alpha * offset + lo
        rel = y.shifted(-lo)
        if span < best_span:
            best_span, best_it = span, it
        elif span > threshold and it - best_it > STALL_ITERATIONS:
            # rounding noise in T v has reached the threshold
            raise NonConvergenceError(
                span, it, f"{what} (tol={tol:g} at alpha={alpha!r} is below floating-point resolution)"
            )
        if span <= threshold:
            mid = 0.5 * (diff.max() + diff.min())
            # the true increment is diff + (alpha - 1) * prev_offset
            correction = alpha / (1.0 - alpha) * mid - alpha * prev_offset
            return rel.shifted(offset + correction), rel, it
    raise NonConvergenceError(span, max_iter, what)


def value_iteration(model, alpha, tol=1e-8, max_iter=1_000_000):
    """Solve the discounted problem by value iteration from ``v = 0``.

    Returns ``(table, greedy_policy, iterations)``; the table is within ``tol``
    of the optimal discounted value in sup-norm.
    """
    table, rel, it = iterate_to_fixed_point(
        lambda v: bellman_discounted(model, v, alpha)[0], model.lattice, alpha, tol, max_iter
    )
    _, pol = bellman_discounted(model, rel, alpha)
    return table, pol, it


def relative_value(v):
    """Split ``v`` into its minimum ``m`` and the relative table ``v - m``."""
    m = float(np.min(v.values))
    return m, v.shifted(-m)
