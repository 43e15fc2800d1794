"""Forward Monte Carlo evaluation, independent oracles, convergence sweeps.

The solver maximizes over a discretized tree; everything here evaluates
controls on exact (continuously sampled) skeleton draws, so agreement
between the two sides is a genuine consistency check rather than a
tautology.  Oracles:

* enumerate_oracle -- plain recursion over the same finite tree with no
  memoization, no layering and no vectorization; an independent code path
  for the DP value.
* merton_oracle -- the classical constant-fraction optimum for power
  utility (external reference) next to a constant-control grid search on
  the same tree (internal, assumption-free).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import density
from .errors import ConfigurationError, ResourceCapError
from .skeleton import SkeletonConfig, SkeletonPath, sample_skeleton
from .solver import (SolveConfig, SolveResult, Tree, backward_dp, build_tree,
                     extract_policy_control, nearest_bin_index, _pack, _quantize)
from .structures import PortfolioSpec, PortfolioStructure, power_utility_payoff

__all__ = [
    "RolloutResult", "MCResult", "rollout", "mc_value", "policy_mc_value",
    "enumerate_oracle", "merton_oracle", "convergence_sweep", "project_control",
    "PolicyControl", "portfolio_policy_rollouts", "q_slack",
]

_CHUNK = 4096          # fixed chunk size keeps reductions thread-count-free


@dataclass
class RolloutResult:
    payoff: float
    state: object
    actions: np.ndarray


@dataclass
class MCResult:
    mean: float
    se: float
    n: int

    @property
    def ci_half(self) -> float:
        return 1.96 * self.se


def _as_control(control):
    """Normalize a control to callable(depth, state, structure) -> action."""
    if callable(control):
        return control
    value = float(control) if np.ndim(control) == 0 else np.asarray(control, float)
    return lambda depth, state, structure: value


class PolicyControl:
    """Adapted control reading a solved policy along the realized path."""

    def __init__(self, result: SolveResult, tree: Tree):
        self.result = result
        self.tree = tree

    def __call__(self, depth: int, state, structure):
        if depth >= self.tree.cfg.depth:
            return float(self.result.policy.layers[-1][1][0])
        if self.tree.mode == "collapse":
            stat = np.asarray(structure.sufficient_statistic(state), dtype=float)
            bins = _quantize(stat[None, :], self.tree.bin_widths)[0]
            packed, layer_bins, _ = self.tree.layers[depth]
            i = nearest_bin_index(packed, layer_bins, bins)
            return float(self.result.policy.layers[depth][1][i])
        raise ConfigurationError("PolicyControl requires a collapsed tree; "
                                 "use extract_policy_control for full trees")


def rollout(structure, control, path: SkeletonPath, payoff=None,
            depth: int | None = None) -> RolloutResult:
    """Deterministic forward pass of a control along a realized path."""
    ctrl = _as_control(control)
    depth = len(path) if depth is None else min(depth, len(path))
    state = structure.init()
    actions = np.empty(depth)
    for n in range(depth):
        a = ctrl(n, state, structure)
        actions[n] = np.asarray(a, dtype=float).reshape(-1)[0]
        sv = np.zeros(path.d, dtype=np.int64)
        sv[path.coords[n] - 1] = path.signs[n]
        state = structure.step(state, a, float(path.delta_t[n]), sv)
    value = float(payoff(structure.payoff_input(state))) if payoff is not None else math.nan
    return RolloutResult(value, state, actions)


def mc_value(structure, payoff, control, skel_cfg: SkeletonConfig, N: int,
             seed: int, threads: int = 1, antithetic: bool = False) -> MCResult:
    """Sample mean and standard error of the payoff under a control.

    Work is split into fixed-size chunks keyed by (seed, chunk index); the
    reduction runs in chunk order, so the result is bit-identical for any
    thread count.
    """
    if N < 2:
        raise ConfigurationError("mc_value needs N >= 2")
    chunks = [(c, min(_CHUNK, N - c * _CHUNK)) for c in range((N + _CHUNK - 1) // _CHUNK)]

    def run_chunk(arg):
        cidx, size = arg
        s = 0.0
        s2 = 0.0
        for i in range(size):
            path_seed = (seed * 1_000_003 + cidx * _CHUNK + i) % 2**63
            path = sample_skeleton(skel_cfg, path_seed)
            if antithetic:
                flipped = SkeletonPath(path.epsilon_k, path.d, path.delta_t,
                                       path.coords, -path.signs)
                v = 0.5 * (rollout(structure, control, path, payoff).payoff
                           + rollout(structure, control, flipped, payoff).payoff)
            else:
                v = rollout(structure, control, path, payoff).payoff
            s += v
            s2 += v * v
        return s, s2

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    total = 0.0
    total2 = 0.0
    for s, s2 in parts:          # fixed order regardless of executor
        total += s
        total2 += s2
    mean = total / N
    var = max(total2 / N - mean * mean, 0.0) * N / (N - 1)
    return MCResult(mean, math.sqrt(var / N), N)


def policy_mc_value(structure, payoff, result: SolveResult, tree: Tree,
                    skel_cfg: SkeletonConfig, N: int, seed: int,
                    threads: int = 1) -> MCResult:
    """Monte Carlo value of a solved policy, either tree mode.

    Collapse mode reads the policy through statistic bins step by step; full
    mode extracts the action sequence along each path by nearest-atom
    projection before rolling it out.
    """
    if tree.mode == "collapse":
        return mc_value(structure, payoff, PolicyControl(result, tree),
                        skel_cfg, N, seed, threads=threads)

    def control_factory(path):
        acts = extract_policy_control(result, tree, path)
        return lambda depth, state, s: float(acts[min(depth, len(acts) - 1)])

    return _mc_value_per_path(structure, payoff, control_factory, skel_cfg,
                              N, seed, threads)


def _mc_value_per_path(structure, payoff, control_factory,
                       skel_cfg: SkeletonConfig, N: int, seed: int,
                       threads: int) -> MCResult:
    chunks = [(c, min(_CHUNK, N - c * _CHUNK)) for c in range((N + _CHUNK - 1) // _CHUNK)]

    def run_chunk(arg):
        cidx, size = arg
        s = s2 = 0.0
        for i in range(size):
            path_seed = (seed * 1_000_003 + cidx * _CHUNK + i) % 2**63
            path = sample_skeleton(skel_cfg, path_seed)
            v = rollout(structure, control_factory(path), path, payoff).payoff
            s += v
            s2 += v * v
        return s, s2

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    total = total2 = 0.0
    for s, s2 in parts:
        total += s
        total2 += s2
    mean = total / N
    var = max(total2 / N - mean * mean, 0.0) * N / (N - 1)
    return MCResult(mean, math.sqrt(var / N), N)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def enumerate_oracle(structure, payoff, tree: Tree, cap: int = 10_000_000) -> float:
    """Exact optimum over tree-adapted policies by direct leaf-to-root folding.

    Independent of backward_dp: plain recursion on explicit histories, no
    memoization or layer storage.  Refuses when the folding workload
    (sum over depths of branching^depth) exceeds the cap.
    """
    cfg = tree.cfg
    branch = len(cfg.action_grid) * tree.n_atoms
    work = 0
    level = 1
    for _ in range(cfg.depth + 1):
        work += level
        if work > cap:
            raise ResourceCapError("enumeration workload exceeds cap", estimate=work)
        level *= branch

    atoms = tree.atoms
    grid = cfg.action_grid

    def fold(state, depth):
        if depth == cfg.depth:
            return float(payoff(structure.payoff_input(state)))
        best = -math.inf
        for a in grid:
            acc = 0.0
            for m in range(len(atoms)):
                sv = np.zeros(int(atoms.coords.max()), dtype=np.int64)
                sv[atoms.coords[m] - 1] = atoms.signs[m]
                acc += atoms.weights[m] * fold(
                    structure.step(state, float(a), float(atoms.delta_t[m]), sv),
                    depth + 1)
            if acc > best:
                best = acc
        return best

    return fold(structure.init(), 0)


@dataclass
class MertonRef:
    fraction: float
    const_grid_value: float
    const_grid_action: float


def merton_oracle(spec: PortfolioSpec, eps_k: float | None = None,
                  cfg: SolveConfig | None = None) -> MertonRef:
    """Closed-form constant fraction plus a constant-control grid search.

    The fraction (alpha - r) / ((1 - gamma) sigma^2), clipped to the action
    box, is the classical power-utility optimum under constant coefficients.
    When a solve config is supplied, every grid action is evaluated as a
    constant control on the same discretized tree (singleton-grid DP), an
    internal second oracle free of any optimality assumption.
    """
    al = spec.alpha_k(0.0)
    sg = spec.sigma_k(0.0)
    if sg == 0:
        raise ConfigurationError("merton_oracle needs sigma != 0")
    frac = (al - spec.r) / ((1.0 - spec.gamma_util) * sg**2)
    frac = float(np.clip(frac, -spec.a_bar, spec.a_bar))
    best_v, best_a = -math.inf, math.nan
    if cfg is not None:
        if eps_k is None:
            raise ConfigurationError("eps_k required for the grid search")
        structure = PortfolioStructure(spec, eps_k)
        payoff = power_utility_payoff(spec)
        for a in cfg.action_grid:
            sub = SolveConfig(action_grid=np.array([a]), depth=cfg.depth, Q=cfg.Q,
                              epsilon_total=cfg.epsilon_total, collapse=True,
                              rule=cfg.rule, node_cap=cfg.node_cap,
                              time_bin_width=cfg.time_bin_width,
                              state_bin_width=cfg.state_bin_width)
            res = backward_dp(build_tree(structure, payoff, eps_k, sub))
            if res.report.root_value > best_v:
                best_v, best_a = res.report.root_value, float(a)
    return MertonRef(frac, best_v, best_a)


def q_slack(structure, payoff, eps_k: float, cfg: SolveConfig) -> float:
    """Kernel-discretization slack: |root(Q) - root(2Q)| on the same problem."""
    res_q = backward_dp(build_tree(structure, payoff, eps_k, cfg))
    cfg2 = SolveConfig(action_grid=cfg.action_grid, depth=cfg.depth, Q=2 * cfg.Q,
                       epsilon_total=cfg.epsilon_total, collapse=cfg.collapse,
                       rule=cfg.rule, refine=cfg.refine,
                       refine_iters=cfg.refine_iters, node_cap=cfg.node_cap,
                       time_bin_width=cfg.time_bin_width,
                       state_bin_width=cfg.state_bin_width,
                       holder_c=cfg.holder_c, holder_gamma=cfg.holder_gamma)
    res_2q = backward_dp(build_tree(structure, payoff, eps_k, cfg2))
    return abs(res_q.report.root_value - res_2q.report.root_value)


# ---------------------------------------------------------------------------
# convergence sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    eps_k: float
    root_value: float
    certified_epsilon: float
    root_action: float
    node_counts: list


def convergence_sweep(make_problem, eps_list, make_cfg) -> dict:
    """Solve the same problem across epsilon levels.

    make_problem(eps) -> (structure, payoff); make_cfg(eps) -> SolveConfig.
    Returns rows plus a flag for monotonically stabilizing root values
    (|v_{i+1} - v_i| nonincreasing).
    """
    rows = []
    for eps in eps_list:
        structure, payoff = make_problem(eps)
        cfg = make_cfg(eps)
        res = backward_dp(build_tree(structure, payoff, eps, cfg))
        rows.append(SweepRow(eps, res.report.root_value,
                             res.report.certified_epsilon,
                             res.report.root_action, res.report.node_counts))
    diffs = [abs(rows[i + 1].root_value - rows[i].root_value)
             for i in range(len(rows) - 1)]
    stabilizing = all(diffs[i + 1] <= diffs[i] + 1e-15 for i in range(len(diffs) - 1))
    return {"rows": rows, "diffs": diffs, "stabilizing": stabilizing}


# ---------------------------------------------------------------------------
# control projection (clamping onto the skeleton grid)
# ---------------------------------------------------------------------------

def project_control(control_fn, path: SkeletonPath, a_bar: float,
                    structure=None) -> np.ndarray:
    """Piecewise-constant adapted control: sample at each T_{n-1}+ and clamp.

    control_fn(t, path_prefix) -> action; the path prefix carries only steps
    strictly before the sampling time, so the projection is adapted.
    """
    times = np.concatenate([[0.0], path.cum_times[:-1]])
    out = np.empty((len(path),) + np.shape(np.atleast_1d(
        control_fn(0.0, path.prefix(0)))))
    for n in range(len(path)):
        val = np.atleast_1d(np.asarray(control_fn(float(times[n]), path.prefix(n)),
                                       dtype=float))
        out[n] = np.clip(val, -a_bar, a_bar)
    return out


# ---------------------------------------------------------------------------
# vectorized portfolio policy rollouts (exact law, binned-policy lookups)
# ---------------------------------------------------------------------------

def portfolio_policy_rollouts(spec: PortfolioSpec, eps_k: float,
                              result: SolveResult, tree: Tree, n_paths: int,
                              seed: int, threads: int = 1) -> np.ndarray:
    """Payoffs of the solved policy on n_paths exact skeleton draws.

    Statistics evolve exactly (continuous delta-t draws); only the policy
    lookup passes through the solve-time bins, with nearest-populated-bin
    fallback.  Matches scalar rollout() with a PolicyControl bit for bit.
    """
    if tree.mode != "collapse":
        raise ConfigurationError("vectorized rollouts need a collapsed tree")
    ops = tree.structure.collapse_ops()
    depth = tree.cfg.depth
    widths = tree.bin_widths
    chunks = [(c, min(_CHUNK, n_paths - c * _CHUNK))
              for c in range((n_paths + _CHUNK - 1) // _CHUNK)]

    def run_chunk(arg):
        cidx, size = arg
        key = np.array([np.uint64(seed), np.uint64(40_000 + cidx)], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        u = gen.random((size, depth, 2))
        dts = eps_k**2 * density.inverse_cdf_tau(
            np.clip(u[:, :, 0], 1e-16, 1 - 1e-16))
        sgns = np.where(u[:, :, 1] < 0.5, 1, -1)
        stats = np.tile(ops.stat0(), (size, 1))
        for n in range(depth):
            bins = _quantize(stats, widths)
            packed, layer_bins, _ = tree.layers[n]
            keys = _pack(bins)
            idx = np.clip(np.searchsorted(packed, keys), 0, len(packed) - 1)
            miss = packed[idx] != keys
            if miss.any():
                for i in np.flatnonzero(miss):
                    idx[i] = nearest_bin_index(packed, layer_bins, bins[i])
            acts = np.asarray(result.policy.layers[n][1])[idx]
            # per-path actions/increments: elementwise version of step_stats
            t = stats[:, 0]
            lw = stats[:, 1]
            live = t < spec.horizon_T
            al = spec.alpha_k(t)
            sg = spec.sigma_k(t)
            mult = (acts * (al - spec.r) + spec.r) * dts[:, n] \
                - 0.5 * (acts * sg) ** 2 * dts[:, n] + acts * sg * eps_k * sgns[:, n]
            crossed = live & (t + dts[:, n] > spec.horizon_T)
            t_new = np.where(live, np.minimum(t + dts[:, n], spec.horizon_T), t)
            lw_new = np.where(live & ~crossed, lw + mult, lw)
            stats = np.column_stack([t_new, lw_new])
        return ops.payoff_stats(stats)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    return np.concatenate(parts)
