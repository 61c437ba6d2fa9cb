"""Command-line entry point: ``acoe-lab <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 input error,
3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .average import (
    VanishingSchedule,
    acoe_residual,
    h_function,
    local_slope,
    solve_discounted,
    two_actions_at_s,
    vanishing_discount,
    verify_acoi,
    with_ordering_tail,
    acoe_rhs,
)
from .dp import TabularPolicy, ValueTable
from .errors import AcoeLabError, InvalidInstanceError, NonConvergenceError, TruncationTooTightError
from .inventory import alpha_star, bounding_box, load_instance, upper_bound_U
from .policy import SSPolicy, check_k_convex, modified_policy_at_s, policy_from_json, policy_to_tabular
from .reports import fmt, read_json, read_table_csv, write_json, write_table_csv
from .simulate import SimConfig, simulate_average, simulate_discounted

log = logging.getLogger("acoe_lab")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NONCONV = 0, 1, 2, 3
K_CONVEX_TOL = 1e-9


class _Manifest:
    def __init__(self, args, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.args = args
        self.artifacts = []
        self.t0 = time.time()

    def path(self, name):
        p = self.out / name
        self.artifacts.append(str(p))
        return p

    def finish(self, params):
        manifest = {
            "instance": str(getattr(self.args, "instance", "")),
            "command": self.args.command,
            "parameters": {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "command")},
            "artifacts": self.artifacts,
            "wall_clock_seconds": time.time() - self.t0,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.t0)),
            "tool_version": __version__,
        }
        write_json(self.out / "manifest.json", manifest)


def _parse_schedule(text):
    try:
        return VanishingSchedule(tuple(float(t) for t in text.split(",") if t.strip()))
    except ValueError as exc:
        if isinstance(exc, InvalidInstanceError):
            raise
        raise InvalidInstanceError("schedule is a comma-separated list of numbers", text) from None


def _schedule_for(args, params):
    if args.schedule:
        return _parse_schedule(args.schedule)
    return VanishingSchedule.default_for(params)


def cmd_solve_discounted(args):
    params = load_instance(args.instance)
    if not 0.0 <= args.alpha < 1.0:
        raise InvalidInstanceError("discount factor in [0, 1)", f"alpha={args.alpha}")
    sol = solve_discounted(params, args.alpha, args.tol)
    man = _Manifest(args, args.out)
    write_table_csv(man.path("v_alpha.csv"), sol.v)
    write_table_csv(man.path("u_alpha.csv"), sol.u)
    write_table_csv(man.path("G_alpha.csv"), sol.G)
    write_json(man.path("policy.json"), {**sol.ss.to_json(), "alpha": args.alpha})
    report = {
        "alpha": args.alpha,
        "m_alpha": sol.m,
        "iterations": sol.iterations,
        "s": sol.ss.s,
        "S": sol.ss.S,
        "k_convexity": {
            "G_alpha": check_k_convex(sol.G, params.K, K_CONVEX_TOL).to_json(),
            "u_alpha": check_k_convex(sol.u, params.K, K_CONVEX_TOL).to_json(),
        },
    }
    write_json(man.path("k_convexity.json"), report["k_convexity"])
    write_json(man.path("report.json"), report)
    man.finish(params)
    print(f"alpha={args.alpha} m_alpha={fmt(sol.m)} (s, S)=({sol.ss.s:g}, {sol.ss.S:g})")
    return EXIT_OK


def _bounds_check(params, solves, n_paths, seed):
    """u_alpha <= U for every solved alpha, with the box taken from the run's minimisers."""
    argmins = [float(params.lattice.points[np.argmin(d.u.values)]) for d in solves]
    x_L, x_U = bounding_box(argmins, params.lattice)
    U = upper_bound_U(params, x_L, x_U, n_paths=n_paths, seed=seed, argmins=argmins)
    slack = [float(np.min(U.values - d.u.values)) for d in solves]
    return {"x_L_star": x_L, "x_U_star": x_U, "argmins": argmins, "min_slack": slack, "pass": min(slack) >= 0.0}


def cmd_solve_average(args):
    params = load_instance(args.instance)
    schedule = _schedule_for(args, params)
    try:
        schedule.check_threshold(params)
    except InvalidInstanceError:
        print(f"alpha* = {alpha_star(params)!r}; the first scheduled discount factor must exceed it", file=sys.stderr)
        raise
    sol = vanishing_discount(params, schedule, dp_tol=args.tol)
    for w in sol.warnings:
        log.warning(w)
    man = _Manifest(args, args.out)
    write_table_csv(man.path("u_tilde.csv"), sol.u_tilde)
    write_table_csv(man.path("H.csv"), sol.H)
    for k, d in enumerate(sol.solves):
        write_table_csv(man.path(f"u_alpha_{k}.csv"), d.u)
        write_table_csv(man.path(f"G_alpha_{k}.csv"), d.G)
    kc = {"u_tilde": check_k_convex(sol.u_tilde, params.K, K_CONVEX_TOL).to_json(),
          "H": check_k_convex(sol.H, params.K, K_CONVEX_TOL).to_json()}
    report = {
        "w": sol.w,
        "s_star": sol.policy.s,
        "S_star": sol.policy.S,
        "acoe_residual": sol.acoe_residual,
        "acoe_argmax": sol.acoe_argmax,
        "alphas": sol.alphas,
        "w_sequence": sol.w_sequence,
        "ss_sequence": [list(p) for p in sol.ss_sequence],
        "k_convexity": kc,
        "bounds_check": _bounds_check(params, sol.solves, args.mc_paths, args.seed),
        "warnings": sol.warnings,
    }
    write_json(man.path("report.json"), report)
    man.finish(params)
    print(f"w={fmt(sol.w)} (s*, S*)=({sol.policy.s:g}, {sol.policy.S:g}) acoe_residual={sol.acoe_residual:.6g}")
    return EXIT_OK


def acoe_allowance(params, u_tilde, alpha_N, scale=1.0):
    """Pointwise ACOE tolerance (1 - alpha_N)(1 + max u over the demand reach below x), times ``scale``."""
    u = u_tilde.values
    k = params.max_demand_steps
    loc = np.array([u[max(i - k, 0) : i + 1].max() for i in range(u.size)])
    return scale * (1.0 - alpha_N) * (1.0 + loc)


def run_checks(params, sol_dir, acoe_tol=None, acoe_scale=1.0, mc_paths=100_000, seed=0):
    """Recompute every structural check from the artifacts in ``sol_dir``."""
    sol_dir = Path(sol_dir)
    report_path = sol_dir / "report.json"
    if not report_path.exists():
        raise FileNotFoundError(report_path)
    rep = read_json(report_path)
    lat = params.lattice
    u_tilde = read_table_csv(sol_dir / "u_tilde.csv", lat)
    alphas = rep["alphas"]
    u_tabs = [read_table_csv(sol_dir / f"u_alpha_{k}.csv", lat) for k in range(len(alphas))]
    g_tabs = [read_table_csv(sol_dir / f"G_alpha_{k}.csv", lat) for k in range(len(alphas))]
    w, pol = rep["w"], SSPolicy(rep["s_star"], rep["S_star"])
    u_tilde = with_ordering_tail(params, u_tilde, w, pol.S)
    H = h_function(params, u_tilde)
    K = params.K
    rows = []

    def add(name, passed, value, bound):
        rows.append({"check": name, "pass": bool(passed), "value": value, "bound": bound})

    for name, tab in [("K-convex u_tilde", u_tilde), ("K-convex H", H)] + [
        (f"K-convex u_alpha[{a}]", t) for a, t in zip(alphas, u_tabs)
    ] + [(f"K-convex G_alpha[{a}]", t) for a, t in zip(alphas, g_tabs)]:
        r = check_k_convex(tab, K, K_CONVEX_TOL)
        add(name, r.is_k_convex, r.worst_violation, K_CONVEX_TOL)

    res, arg = acoe_residual(params, w, u_tilde, H)
    r = np.abs(w + u_tilde.values - acoe_rhs(params, H))
    k = params.max_demand_steps
    inner = slice(k, lat.n_points - k)
    if acoe_tol is None:
        allow = acoe_allowance(params, u_tilde, alphas[-1], acoe_scale)
        worst = float(np.max(r[inner] / allow[inner]))
        add("ACOE residual (scaled by (1-alpha_N)(1+u))", worst <= 1.0, worst, 1.0)
    else:
        add("ACOE residual", res <= acoe_tol, res, acoe_tol)

    gap = two_actions_at_s(H, pol, K)
    slope_bound = local_slope(H, pol.s) * lat.step
    add("two actions at s*: |K + H(S*) - H(s*)|", gap <= slope_bound, gap, slope_bound)

    viol = verify_acoi(params, w, u_tilde, policy_to_tabular(pol, lat))
    add("ACOI (s*, S*) policy", viol <= res + 1e-9, viol, res)
    viol_m = verify_acoi(params, w, u_tilde, modified_policy_at_s(pol, lat))
    add("ACOI modified policy at s*", viol_m <= res + gap + 1e-9, viol_m, res + gap)

    argmins = [float(lat.points[np.argmin(t.values)]) for t in u_tabs]
    x_L, x_U = bounding_box(argmins, lat)
    U = upper_bound_U(params, x_L, x_U, n_paths=mc_paths, seed=seed, argmins=argmins)
    for a, t in zip(alphas, u_tabs):
        slack = float(np.min(U.values - t.values))
        add(f"u_alpha[{a}] <= U", slack >= 0.0, slack, 0.0)
    return rows


def cmd_verify(args):
    params = load_instance(args.instance)
    sol_dir = Path(args.solution)
    needed = ["report.json", "u_tilde.csv"]
    missing = [n for n in needed if not (sol_dir / n).exists()]
    if missing:
        raise InvalidInstanceError("solution artifacts exist", f"missing {', '.join(missing)} in {sol_dir}")
    try:
        rows = run_checks(params, sol_dir, args.acoe_tol, args.acoe_scale, args.mc_paths, args.seed)
    except FileNotFoundError as exc:
        raise InvalidInstanceError("solution artifacts exist", str(exc)) from None
    out = Path(args.out) if args.out else sol_dir
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "verification.json", {"checks": rows, "all_pass": all(r["pass"] for r in rows)})
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['check']:<{width}}  value={r['value']:.6g}  bound={r['bound']:.6g}")
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_VERIFY


def ss_from_tabular(pol):
    """Recover (s, S) from a tabular policy of that form, else raise."""
    lat = pol.lattice
    x = lat.points
    orders = pol.order_quantity > 0
    if not orders.any():
        raise InvalidInstanceError("tabular policy has (s, S) form", "policy never orders")
    targets = x[pol.target_index][orders]
    i_s = int(np.argmin(orders))  # first state that does not order
    if not orders[:i_s].all() or orders[i_s:].any() or np.ptp(targets) > 0:
        raise InvalidInstanceError("tabular policy has (s, S) form")
    return SSPolicy(float(x[i_s]), float(targets[0]))


def _load_policy(path, params):
    data = read_json(path)
    pol = policy_from_json(data)
    if isinstance(pol, TabularPolicy):
        if pol.lattice != params.lattice:
            raise InvalidInstanceError("policy lattice matches the instance lattice")
        return ss_from_tabular(pol)
    try:
        params.lattice.index(pol.s)
        params.lattice.index(pol.S)
    except InvalidInstanceError:
        raise InvalidInstanceError("policy lattice matches the instance lattice", f"(s, S)=({pol.s}, {pol.S})") from None
    return pol


def cmd_simulate(args):
    params = load_instance(args.instance)
    pol = _load_policy(args.policy, params)
    cfg = SimConfig(args.horizon, args.replications, args.seed, args.initial_state, args.burn_in)
    man = _Manifest(args, args.out)
    result = {"policy": pol.to_json()}
    result["config"] = {
        "horizon": cfg.horizon,
        "replications": cfg.replications,
        "seed": cfg.seed,
        "initial_state": cfg.initial_state,
        "burn_in": cfg.burn_in,
    }
    traj = str(man.out / "trajectory.csv") if args.trajectory else None
    if args.trajectory and (not args.no_average or args.alpha is not None):
        man.path("trajectory.csv")
    if not args.no_average:
        result["average"] = simulate_average(params, pol, cfg, trajectory_csv=traj).to_json()
        traj = None
    if args.alpha is not None:
        result["discounted"] = {"alpha": args.alpha, **simulate_discounted(params, pol, args.alpha, cfg, trajectory_csv=traj).to_json()}
    write_json(man.path("estimate.json"), result)
    man.finish(params)
    for key in ("average", "discounted"):
        if key in result:
            e = result[key]
            print(f"{key}: mean={fmt(e['mean'])} half_width_95={e['half_width_95']:.6g}")
    return EXIT_OK


def cmd_sweep(args):
    base = load_instance(args.instance)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    man = _Manifest(args, args.out)
    path = man.path("sweep.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([args.param, "w", "s_star", "S_star", "acoe_residual"])
        for v in values:
            params = type(base)(**{**{f: getattr(base, f) for f in ("K", "c_bar", "h", "demand", "lattice")}, args.param: v})
            schedule = _schedule_for(args, params)
            sol = vanishing_discount(params, schedule, dp_tol=args.tol)
            wr.writerow([fmt(v), fmt(sol.w), fmt(sol.policy.s), fmt(sol.policy.S), fmt(sol.acoe_residual)])
    man.finish(base)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="acoe-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--instance", required=True, help="instance JSON file")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("solve-discounted", help="value iteration for one discount factor")
    common(sp, "out_discounted")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.set_defaults(func=cmd_solve_discounted)

    sp = sub.add_parser("solve-average", help="vanishing-discount average-cost solution")
    common(sp, "out_average")
    sp.add_argument("--schedule", help="comma-separated increasing discount factors")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--mc-paths", type=int, default=100_000)
    sp.set_defaults(func=cmd_solve_average)

    sp = sub.add_parser("verify", help="re-run structural checks on a solve-average output")
    sp.add_argument("--instance", required=True)
    sp.add_argument("--solution", required=True, help="directory written by solve-average")
    sp.add_argument("--out", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--acoe-tol", type=float, default=None, help="flat ACOE tolerance (default: scaled check)")
    sp.add_argument("--acoe-scale", type=float, default=1.0)
    sp.add_argument("--mc-paths", type=int, default=100_000)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("simulate", help="Monte Carlo cost estimates for an (s, S) policy")
    common(sp, "out_simulate")
    sp.add_argument("--policy", required=True, help="policy JSON file")
    sp.add_argument("--replications", type=int, default=200)
    sp.add_argument("--horizon", type=int, default=20_000)
    sp.add_argument("--burn-in", type=int, default=2_000)
    sp.add_argument("--initial-state", type=float, default=0.0)
    sp.add_argument("--alpha", type=float, default=None, help="also estimate the discounted cost")
    sp.add_argument("--no-average", action="store_true")
    sp.add_argument("--trajectory", action="store_true", help="dump replication 0 as CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="(s*, S*, w) over a grid of K or c_bar")
    common(sp, "out_sweep")
    sp.add_argument("--param", choices=["K", "c_bar"], required=True)
    sp.add_argument("--values", required=True)
    sp.add_argument("--schedule")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInstanceError, TruncationTooTightError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except AcoeLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
