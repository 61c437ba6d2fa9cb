"""(s, S) policies, K-convexity checks and exact policy evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .dp import Lattice, TabularPolicy, apply_policy, iterate_to_fixed_point
from .errors import InvalidInstanceError, TruncationTooTightError


@dataclass(frozen=True)
class SSPolicy:
    """Order up to ``S`` when the inventory level is below ``s``."""

    s: float
    S: float

    def __post_init__(self):
        if self.s > self.S:
            raise InvalidInstanceError("s <= S", f"s={self.s}, S={self.S}")

    def order(self, x, at_s=False):
        """Order quantity at arbitrary (possibly off-lattice) levels ``x``."""
        x = np.asarray(x, dtype=float)
        trigger = x <= self.s if at_s else x < self.s
        return np.where(trigger, self.S - x, 0.0)

    def to_json(self):
        return {"type": "sS", "s": self.s, "S": self.S}


@dataclass(frozen=True)
class KConvexityReport:
    is_k_convex: bool
    worst_violation: float
    witness: Optional[Tuple[float, float, float]] = None

    def to_json(self):
        return {
            "is_k_convex": self.is_k_convex,
            "worst_violation": self.worst_violation,
            "witness": None if self.witness is None else list(self.witness),
        }


def check_k_convex(f, K, tol=1e-9):
    """Check f(m) <= (1 - lam) f(x) + lam f(y) + lam K over all grid triples x < m < y."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    vals = f.values
    n = vals.size
    x = f.lattice.points
    worst, witness = 0.0, None
    for i in range(n - 2):
        j = np.arange(i + 2, n)[:, None]
        k = np.arange(i + 1, n - 1)[None, :]
        lam = (k - i) / (j - i)
        bound = (1.0 - lam) * vals[i] + lam * vals[j] + lam * K
        excess = np.where(k < j, vals[k] - bound, -np.inf)
        a, b = np.unravel_index(np.argmax(excess), excess.shape)
        if excess[a, b] > worst:
            worst = float(excess[a, b])
            witness = (float(x[i]), float(x[j[a, 0]]), float(lam[a, b]))
    ok = worst <= tol
    return KConvexityReport(ok, worst, None if ok else witness)


def extract_ss(f, K, atol=1e-9):
    """(s, S) from a tabulated function: S = smallest minimiser, s = smallest x <= S with f(x) <= K + f(S).

    Raises :class:`TruncationTooTightError` when either threshold sits on the
    lower or upper lattice boundary.
    """
    vals = f.values
    lat = f.lattice
    iS = int(np.argmin(vals))
    if iS == 0 or iS == vals.size - 1:
        raise TruncationTooTightError(f"minimiser x={lat.points[iS]} lies on the lattice boundary")
    ok = vals[: iS + 1] <= vals[iS] + K + atol * max(1.0, abs(K))
    i_s = int(np.argmax(ok))
    if i_s == 0 and K > 0:
        raise TruncationTooTightError(
            f"reorder point reaches x_min={lat.x_min}; the lattice must extend further down"
        )
    return SSPolicy(float(lat.points[i_s]), float(lat.points[iS]))


def _check_on_lattice(pol, lattice):
    lattice.index(pol.s)
    lattice.index(pol.S)


def policy_to_tabular(pol, lattice):
    _check_on_lattice(pol, lattice)
    return TabularPolicy(lattice, pol.order(lattice.points))


def modified_policy_at_s(pol, lattice):
    """The (s, S) rule that also orders up to S at x = s exactly."""
    _check_on_lattice(pol, lattice)
    return TabularPolicy(lattice, pol.order(lattice.points, at_s=True))


def evaluate_policy_discounted(model, pol, alpha, tol=1e-8, max_iter=1_000_000):
    """Discounted value of a stationary tabular policy, within ``tol`` in sup-norm.

    Mass leaving the grid from below is valued with the model's linear tail,
    which requires the policy to order at ``x_min``.
    """
    target = pol.target_index
    table, _, _ = iterate_to_fixed_point(
        lambda v: apply_policy(model, v, alpha, target),
        model.lattice,
        alpha,
        tol,
        max_iter,
        what="policy evaluation",
    )
    return table


def policy_to_json(pol):
    if isinstance(pol, SSPolicy):
        return pol.to_json()
    return {"type": "tabular", "lattice": pol.lattice.to_dict(), "orders": pol.order_quantity.tolist()}


def policy_from_json(data):
    kind = data.get("type")
    if kind == "sS":
        return SSPolicy(float(data["s"]), float(data["S"]))
    if kind == "tabular":
        lat = data["lattice"]
        lattice = Lattice.from_bounds(lat["x_min"], lat["x_max"], lat["step"])
        return TabularPolicy(lattice, np.asarray(data["orders"], dtype=float))
    raise InvalidInstanceError("policy type is 'sS' or 'tabular'", f"got {kind!r}")
