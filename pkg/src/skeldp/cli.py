"""Command-line front end.

Subcommands: density, skeleton, kernel, solve, evaluate, sweep, portfolio.
Every run writes a manifest.json (config hash, seed, versions) beside its
outputs; outputs are deterministic for a fixed (config, seed) regardless of
--threads, and floats are serialized with 17 significant digits.

Exit codes: 1 configuration error, 2 numerical failure, 3 resource cap.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__, density, evaluate, kernel, skeleton, solver, structures
from .errors import ConfigurationError, NumericalError, ResourceCapError


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc


_TOP_SECTIONS = {"skeleton", "problem", "solve", "evaluate", "kernel", "sweep"}


def _require_top(cfg: dict):
    _require_keys(cfg, _TOP_SECTIONS, "top level")


def _require_keys(cfg: dict, allowed: set, where: str):
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


def _write_manifest(out_dir: str, args, cfg: dict | None):
    """Everything needed to rerun: the full config, seed and versions."""
    payload = {
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": cfg,
        "config_sha256": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest() if cfg else None,
        "versions": {
            "skeldp": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    _write_json(os.path.join(out_dir, "manifest.json"), payload)


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _say(args, msg: str):
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------------------
# skeleton / solve config builders
# ---------------------------------------------------------------------------

def _skeleton_cfg(section: dict, eps_override: float | None) -> skeleton.SkeletonConfig:
    _require_keys(section, {"epsilon_k", "d", "horizon_T", "n_steps"}, "skeleton")
    eps = eps_override if eps_override is not None else section.get("epsilon_k")
    if eps is None:
        raise ConfigurationError("skeleton.epsilon_k missing (or pass --epsilon)")
    return skeleton.SkeletonConfig(
        epsilon_k=float(eps), d=int(section.get("d", 1)),
        horizon_T=float(section.get("horizon_T", 1.0)),
        n_steps=section.get("n_steps"))


def _solve_cfg(section: dict, eps_total_override: float | None = None) -> solver.SolveConfig:
    allowed = {"action_grid", "depth", "Q", "epsilon_total", "collapse", "rule",
               "refine", "refine_iters", "node_cap", "time_bin_width",
               "state_bin_width", "holder_c", "holder_gamma"}
    _require_keys(section, allowed, "solve")
    grid_spec = section.get("action_grid")
    if isinstance(grid_spec, dict):
        _require_keys(grid_spec, {"lo", "hi", "n"}, "solve.action_grid")
        grid = np.linspace(float(grid_spec["lo"]), float(grid_spec["hi"]),
                           int(grid_spec["n"]))
    elif grid_spec is not None:
        grid = np.asarray(grid_spec, dtype=float)
    else:
        raise ConfigurationError("solve.action_grid missing")
    kwargs = {k: section[k] for k in allowed & set(section) if k != "action_grid"}
    if eps_total_override is not None:
        kwargs["epsilon_total"] = eps_total_override
    return solver.SolveConfig(action_grid=grid, **kwargs)


def _problem(cfg: dict, skel: skeleton.SkeletonConfig):
    return structures.structure_from_config(cfg, skel.epsilon_k, skel.horizon_T)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_density(args) -> int:
    out = _out_dir(args)
    xs = (np.asarray([float(v) for v in args.x.split(",")])
          if args.x else np.geomspace(0.05, 10.0, 60))
    n = args.terms
    rows = [["x", "f", "bound", "cdf"]]
    for x in xs:
        rows.append([_fmt(x), _fmt(density.f_tau(x, n)),
                     _fmt(density.truncation_bound(x, n)),
                     _fmt(density.cdf_tau(x))])
    with open(os.path.join(out, "density.csv"), "w", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    _write_manifest(out, args, {"x": args.x, "terms": n})
    _say(args, f"wrote {out}/density.csv ({len(xs)} rows, {n} terms)")
    return 0


def cmd_skeleton(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args.config)
    _require_top(cfg)
    skel = _skeleton_cfg(cfg["skeleton"], args.epsilon)
    path = skeleton.sample_skeleton(skel, args.seed)
    with open(os.path.join(out, "skeleton.csv"), "w", encoding="utf-8") as fh:
        skeleton.path_to_csv(path, fh)
    stats = {
        "n_steps": len(path),
        "mean_delta_t": float(np.mean(path.delta_t)),
        "plus_sign_frequency": float(np.mean(path.signs == 1)),
        "coordinate_counts": {str(j): int(np.sum(path.coords == j))
                              for j in range(1, skel.d + 1)},
        "total_time": float(path.cum_times[-1]),
    }
    _write_json(os.path.join(out, "skeleton_stats.json"), stats)
    _write_manifest(out, args, cfg)
    _say(args, f"wrote {out}/skeleton.csv ({len(path)} steps)")
    return 0


def cmd_kernel(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args.config)
    _require_top(cfg)
    skel = _skeleton_cfg(cfg["skeleton"], args.epsilon)
    ksec = cfg.get("kernel", {})
    _require_keys(ksec, {"lags", "Q", "rule"}, "kernel")
    lags = np.asarray(ksec.get("lags", [0.0] * skel.d), dtype=float)
    if len(lags) != skel.d:
        raise ConfigurationError(
            f"kernel.lags has {len(lags)} entries for d={skel.d}")
    disc = kernel.discretize_kernel(lags, skel.epsilon_k,
                                    int(ksec.get("Q", 8)), ksec.get("rule", "quantile"))
    rows = [["delta_t", "coord", "sign", "weight"]]
    for m in range(len(disc)):
        rows.append([_fmt(disc.delta_t[m]), int(disc.coords[m]),
                     int(disc.signs[m]), _fmt(disc.weights[m])])
    with open(os.path.join(out, "kernel_atoms.csv"), "w", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    mass = {"total_mass": float(disc.weights.sum()),
            "mean_delta_t": disc.mean_delta_t}
    if skel.d > 1:
        mass["first_fire"] = {
            str(j): kernel.first_fire_probability(lags, j, skel.epsilon_k)
            for j in range(1, skel.d + 1)}
    _write_json(os.path.join(out, "kernel_mass.json"), mass)
    _write_manifest(out, args, cfg)
    _say(args, f"wrote {out}/kernel_atoms.csv ({len(disc)} atoms)")
    return 0


def _dump_tables(out: str, res: solver.SolveResult, tree: solver.Tree):
    rows = [["depth", "node_key", "value", "action"]]
    if tree.mode == "collapse":
        for depth, (packed, values) in enumerate(res.values.layers):
            actions = (res.policy.layers[depth][1]
                       if depth < len(res.policy.layers) else None)
            for i in range(len(packed)):
                rows.append([depth, int(packed[i]), _fmt(values[i]),
                             _fmt(actions[i]) if actions is not None else ""])
    else:
        for depth, layer in enumerate(res.values.layers):
            for key, v in layer.items():
                act = (_fmt(res.policy.layers[depth][key][0])
                       if depth < len(res.policy.layers) else "")
                rows.append([depth, repr(key), _fmt(v), act])
    with open(os.path.join(out, "value_policy.csv"), "w", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _summary_payload(res: solver.SolveResult, extra: dict | None = None,
                     timing: float | None = None) -> dict:
    rep = res.report
    payload = {
        "root_value": rep.root_value,
        "root_action": rep.root_action,
        "certified_epsilon": rep.certified_epsilon,
        "stage_slack": rep.stage_slack,
        "grid_term": rep.grid_term,
        "refined_gain_max": rep.refined_gain_max,
        "node_counts": rep.node_counts,
        "depth": rep.depth,
        "Q": rep.Q,
        "eps_k": rep.eps_k,
    }
    if timing is not None:
        payload["wall_time_s"] = timing
    if extra:
        payload.update(extra)
    return payload


def cmd_solve(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args.config)
    _require_top(cfg)
    skel = _skeleton_cfg(cfg["skeleton"], None)
    structure, payoff = _problem(cfg["problem"], skel)
    scfg = _solve_cfg(cfg["solve"], args.epsilon)
    t0 = time.monotonic()
    tree = solver.build_tree(structure, payoff, skel.epsilon_k, scfg)
    res = solver.backward_dp(tree)
    wall = time.monotonic() - t0
    _dump_tables(out, res, tree)
    _write_json(os.path.join(out, "summary.json"),
                _summary_payload(res, timing=wall if args.timing else None))
    _write_manifest(out, args, cfg)
    _say(args, f"root value {res.report.root_value:.6f}, "
               f"root action {res.report.root_action:.4f}")
    return 0


def _policy_from_csv(path: str, tree: "solver.Tree") -> solver.SolveResult:
    """Rebuild a collapse-mode policy/value table from a solve CSV dump."""
    if not os.path.exists(path):
        raise ConfigurationError(f"policy CSV not found: {path}")
    per_depth: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["depth", "node_key", "value", "action"]:
        raise ConfigurationError(f"bad policy CSV header: {rows[0]!r}")
    for depth_s, key_s, value_s, action_s in rows[1:]:
        per_depth.setdefault(int(depth_s), []).append(
            (int(key_s), float(value_s), float(action_s) if action_s else math.nan))
    depth_max = max(per_depth)
    value_layers, policy_layers = [], []
    for depth in range(depth_max + 1):
        entries = sorted(per_depth.get(depth, []))
        packed = np.array([e[0] for e in entries], dtype=np.int64)
        value_layers.append((packed, np.array([e[1] for e in entries])))
        if depth < depth_max:
            policy_layers.append((packed, np.array([e[2] for e in entries])))
        # the tree layers drive nearest-bin lookups during evaluation
        if depth < len(tree.layers):
            tree.layers[depth] = (packed, solver._unpack(packed, len(tree.bin_widths)),
                                  solver._reps(solver._unpack(packed, len(tree.bin_widths)),
                                               tree.bin_widths))
    rep = solver.SolveReport(
        root_value=float(value_layers[0][1][0]),
        root_action=float(policy_layers[0][1][0]) if policy_layers else math.nan,
        certified_epsilon=math.nan, stage_slack=math.nan, grid_term=math.nan,
        refined_gain_max=math.nan,
        node_counts=[len(v[0]) for v in value_layers],
        depth=depth_max, Q=tree.cfg.Q, eps_k=tree.eps_k)
    return solver.SolveResult(solver.ValueTable("collapse", value_layers),
                              solver.Policy("collapse", policy_layers), rep)


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args.config)
    _require_top(cfg)
    skel = _skeleton_cfg(cfg["skeleton"], None)
    structure, payoff = _problem(cfg["problem"], skel)
    scfg = _solve_cfg(cfg["solve"], args.epsilon)
    esec = cfg.get("evaluate", {})
    _require_keys(esec, {"n_paths", "antithetic", "policy_csv"}, "evaluate")
    n_paths = int(esec.get("n_paths", 10_000))
    if esec.get("policy_csv"):
        if not scfg.collapse:
            raise ConfigurationError("policy_csv evaluation needs collapse mode")
        tree = solver.Tree(structure, payoff, solver.discretize_kernel(
            np.zeros(skel.d), skel.epsilon_k, scfg.Q, scfg.rule), scfg,
            skel.epsilon_k, "collapse",
            _collapse_widths(structure, scfg, skel.epsilon_k),
            [None] * (scfg.depth + 1))
        res = _policy_from_csv(esec["policy_csv"], tree)
        if res.report.depth != scfg.depth:
            raise ConfigurationError(
                f"policy CSV depth {res.report.depth} != solve.depth {scfg.depth}")
    else:
        tree = solver.build_tree(structure, payoff, skel.epsilon_k, scfg)
        res = solver.backward_dp(tree)
    if esec.get("antithetic", False) and tree.mode == "collapse":
        mc = evaluate.mc_value(structure, payoff, evaluate.PolicyControl(res, tree),
                               skeleton.SkeletonConfig(skel.epsilon_k, skel.d,
                                                       skel.horizon_T, scfg.depth),
                               n_paths, args.seed, threads=args.threads,
                               antithetic=True)
    else:
        mc = evaluate.policy_mc_value(
            structure, payoff, res, tree,
            skeleton.SkeletonConfig(skel.epsilon_k, skel.d, skel.horizon_T,
                                    scfg.depth),
            n_paths, args.seed, threads=args.threads)
    cert = res.report.certified_epsilon
    payload = {
        "mc_mean": mc.mean, "mc_se": mc.se, "mc_ci_half": mc.ci_half,
        "n_paths": mc.n, "root_value": res.report.root_value,
        "certified_epsilon": None if math.isnan(cert) else cert,
        "gap_root_minus_mc": res.report.root_value - mc.mean,
    }
    _write_json(os.path.join(out, "evaluate_metrics.json"), payload)
    _write_manifest(out, args, cfg)
    _say(args, f"mc mean {mc.mean:.6f} +- {mc.ci_half:.6f} "
               f"(root {res.report.root_value:.6f})")
    return 0


def _collapse_widths(structure, scfg: solver.SolveConfig, eps_k: float) -> np.ndarray:
    ops = structure.collapse_ops()
    if ops is None:
        raise ConfigurationError("structure exposes no sufficient statistic")
    widths = np.empty(ops.n_stats)
    widths[0] = (scfg.time_bin_width if scfg.time_bin_width is not None
                 else eps_k**2 / 4.0)
    widths[1:] = scfg.state_bin_width
    return widths


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args.config)
    _require_top(cfg)
    ssec = cfg["sweep"]
    _require_keys(ssec, {"eps_list"}, "sweep")
    eps_list = [float(e) for e in ssec["eps_list"]]
    base_skel = cfg["skeleton"]

    def make_problem(eps):
        skel = _skeleton_cfg({**base_skel, "epsilon_k": eps}, None)
        return _problem(cfg["problem"], skel)

    def make_cfg(eps):
        sc = dict(cfg["solve"])
        if sc.get("depth") is None:
            sc["depth"] = skeleton.SkeletonConfig(
                epsilon_k=eps, d=int(base_skel.get("d", 1)),
                horizon_T=float(base_skel.get("horizon_T", 1.0))).e_kT
        return _solve_cfg(sc)

    report = evaluate.convergence_sweep(make_problem, eps_list, make_cfg)
    rows = [["eps_k", "root_value", "certified_epsilon", "root_action"]]
    for r in report["rows"]:
        rows.append([_fmt(r.eps_k), _fmt(r.root_value),
                     _fmt(r.certified_epsilon), _fmt(r.root_action)])
    with open(os.path.join(out, "sweep.csv"), "w", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    _write_json(os.path.join(out, "sweep.json"), {
        "diffs": report["diffs"], "stabilizing": report["stabilizing"]})
    _write_manifest(out, args, cfg)
    _say(args, f"sweep over {eps_list}: stabilizing={report['stabilizing']}")
    return 0


def cmd_portfolio(args) -> int:
    """End-to-end pipeline: solve, per-depth stage-argmax policy, references."""
    out = _out_dir(args)
    cfg = _load_config(args.config)
    _require_top(cfg)
    skel = _skeleton_cfg(cfg["skeleton"], None)
    if cfg["problem"].get("kind") != "portfolio":
        raise ConfigurationError("portfolio subcommand needs a portfolio problem")
    structure, payoff = _problem(cfg["problem"], skel)
    spec = structure.spec
    scfg = _solve_cfg(cfg["solve"], args.epsilon)
    esec = cfg.get("evaluate", {})
    _require_keys(esec, {"n_paths", "antithetic", "g_terms"}, "evaluate")
    n_paths = int(esec.get("n_paths", 10_000))

    t0 = time.monotonic()
    tree = solver.build_tree(structure, payoff, skel.epsilon_k, scfg)
    res = solver.backward_dp(tree)
    wall = time.monotonic() - t0

    merton = evaluate.merton_oracle(spec, skel.epsilon_k, scfg)
    payoffs = evaluate.portfolio_policy_rollouts(
        spec, skel.epsilon_k, res, tree, n_paths, args.seed, threads=args.threads)
    mc_mean = float(np.mean(payoffs))
    mc_se = float(np.std(payoffs, ddof=1) / math.sqrt(n_paths))

    # per-depth stage-argmax policy from the truncated stage function
    n_g = int(esec.get("g_terms", 8))
    g_actions = []
    grid = scfg.action_grid
    for depth in range(scfg.depth):
        t_rep = depth * skel.epsilon_k**2  # representative elapsed time
        if t_rep >= spec.horizon_T:
            g_actions.append(g_actions[-1] if g_actions else 0.0)
            continue
        vals = [structures.stage_g_truncated(float(a), t_rep, spec,
                                             skel.epsilon_k, n_g) for a in grid]
        g_actions.append(float(grid[int(np.argmax(vals))]))

    payload = _summary_payload(res, extra={
        "merton_fraction": merton.fraction,
        "const_grid_value": merton.const_grid_value,
        "const_grid_action": merton.const_grid_action,
        "extracted_fraction": res.report.root_action,
        "fraction_gap": abs(res.report.root_action - merton.fraction),
        "mc_mean": mc_mean, "mc_se": mc_se, "n_paths": n_paths,
        "stage_argmax_policy": g_actions,
    }, timing=wall if args.timing else None)
    _write_json(os.path.join(out, "portfolio_summary.json"), payload)
    _dump_tables(out, res, tree)
    _write_manifest(out, args, cfg)
    _say(args, f"root {res.report.root_value:.6f}, fraction "
               f"{res.report.root_action:.4f} (merton {merton.fraction:.4f}), "
               f"mc {mc_mean:.6f} +- {1.96 * mc_se:.6f}")
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skeldp")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--epsilon", type=float, default=None,
                       help="skeleton/kernel: override epsilon_k; "
                            "solve/evaluate/portfolio: override the "
                            "epsilon-optimality budget")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--timing", action="store_true",
                       help="include wall time in summaries (breaks byte-level "
                            "reproducibility across runs)")

    p = sub.add_parser("density", help="density/bound/cdf tables")
    common(p, config_required=False)
    p.add_argument("--x", default=None, help="comma-separated evaluation points")
    p.add_argument("--terms", type=int, default=25)
    p.set_defaults(fn=cmd_density)

    for name, fn in [("skeleton", cmd_skeleton), ("kernel", cmd_kernel),
                     ("solve", cmd_solve), ("evaluate", cmd_evaluate),
                     ("sweep", cmd_sweep), ("portfolio", cmd_portfolio)]:
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ResourceCapError as exc:
        print(f"resource cap: {exc} (estimate {exc.estimate})", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
