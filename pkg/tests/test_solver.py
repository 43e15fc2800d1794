import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skeldp import solver
from skeldp.errors import ConfigurationError, ResourceCapError
from skeldp.kernel import discretize_kernel
from skeldp.skeleton import SkeletonConfig, sample_skeleton
from skeldp.solver import (Policy, SolveConfig, ValueTable, backward_dp,
                           build_tree, extract_policy_control, hamiltonian,
                           vertical_gradient)
from skeldp.structures import (CaseAStructure, PathView, PdSdeSpec,
                               PortfolioSpec, PortfolioStructure,
                               power_utility_payoff)


def pstruct(eps=1.0 / 3, **kw):
    base = dict(r=0.03, alpha_k=0.05, sigma_k=0.3, gamma_util=0.5, x0=1.0,
                horizon_T=1.0)
    base.update(kw)
    spec = PortfolioSpec(**base)
    return PortfolioStructure(spec, eps), power_utility_payoff(spec)


def test_leaf_count_example():
    struct, payoff = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 3), depth=3, Q=2)
    res = backward_dp(build_tree(struct, payoff, 1.0 / 3, cfg))
    assert res.report.node_counts[3] == (2 * 2 * 3) ** 3 == 1728


def test_depth_zero_value_is_payoff_of_empty_path():
    struct, payoff = pstruct()
    cfg = SolveConfig(action_grid=np.array([0.0]), depth=0, Q=2)
    res = backward_dp(build_tree(struct, payoff, 1.0 / 3, cfg))
    assert res.report.root_value == pytest.approx(1.0 / 0.5, rel=1e-14)  # x0^g/g


def test_constant_payoff_constant_value_and_tiebreak():
    struct, _ = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 5), depth=3, Q=2)
    res = backward_dp(build_tree(struct, lambda path: 4.25, 1.0 / 3, cfg))
    for layer in res.values.layers:
        assert all(v == 4.25 for v in layer.values())
    # every action ties; the smallest grid index must win everywhere
    for layer in res.policy.layers:
        assert all(v == (-1.0, 0) for v in layer.values())


def test_monotone_in_payoff():
    struct, _ = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 3), depth=2, Q=2)
    xi1 = lambda path: math.tanh(path(1.0))            # noqa: E731
    xi2 = lambda path: math.tanh(path(1.0)) + 0.3      # noqa: E731
    r1 = backward_dp(build_tree(struct, xi1, 1.0 / 3, cfg))
    r2 = backward_dp(build_tree(struct, xi2, 1.0 / 3, cfg))
    assert r1.report.root_value <= r2.report.root_value


def test_supermartingale_and_boundedness():
    struct, payoff = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 3), depth=3, Q=2)
    tree = build_tree(struct, payoff, 1.0 / 3, cfg)
    res = backward_dp(tree)
    leaf_sup = max(abs(v) for v in res.values.layers[-1].values())
    for depth in range(cfg.depth):
        for key, v in res.values.layers[depth].items():
            assert abs(v) <= leaf_sup + 1e-12
            best_ai = res.policy.layers[depth][key][1]
            for ai in range(len(cfg.action_grid)):
                u = hamiltonian(tree, res.values, depth, key, ai)
                assert u <= 1e-10 / tree.eps_k**2
                if ai == best_ai:
                    assert abs(u) <= 1e-10 / tree.eps_k**2


def test_hamiltonian_of_constant_functional_is_zero():
    struct, payoff = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 3), depth=2, Q=2)
    tree = build_tree(struct, payoff, 1.0 / 3, cfg)
    res = backward_dp(tree)
    const = ValueTable("full", [{k: 1.0 for k in layer}
                                for layer in res.values.layers])
    for key in res.values.layers[1]:
        assert hamiltonian(tree, const, 1, key, 0) == 0.0


def test_vertical_gradient():
    eps = 0.5
    # F = A^{k,1}: gradient 1 on coordinate-1 steps, 0 on others
    assert vertical_gradient(0.5, 0.0, (1, 0), j=1, eps_k=eps) == 1.0
    assert vertical_gradient(-0.5, 0.0, (0, -1), j=1, eps_k=eps) == 0.0
    assert vertical_gradient(-0.5, 0.0, (-1, 0), j=1, eps_k=eps) == 1.0
    # functional independent of the last step
    assert vertical_gradient(2.0, 2.0, (1,), j=1, eps_k=eps) == 0.0
    # portfolio log wealth: the one-step difference carries the action-scaled
    # noise term a*sigma plus the drift contribution s*(rate)/(eps*sign)
    spec = PortfolioSpec(r=0.03, alpha_k=0.05, sigma_k=0.3, gamma_util=0.5,
                         x0=1.0, horizon_T=10.0)
    a, s, sgn = 0.7, 0.2, 1
    lm = spec.log_multiplier(a, 0.0, s, sgn, eps)
    grad = vertical_gradient(lm, 0.0, (sgn,), j=1, eps_k=eps)
    drift_rate = (a * (0.05 - 0.03) + 0.03) - 0.5 * (a * 0.3) ** 2
    assert grad == pytest.approx(a * 0.3 + s * drift_rate / (eps * sgn), rel=1e-12)
    # the pure noise component alone gives exactly a*sigma
    noise_only = a * 0.3 * eps * sgn
    assert vertical_gradient(noise_only, 0.0, (sgn,), j=1, eps_k=eps) == \
        pytest.approx(a * 0.3, rel=1e-12)


def test_collapse_agrees_with_full_on_small_instance():
    struct, payoff = pstruct()
    grid = np.linspace(-1, 1, 5)
    full = backward_dp(build_tree(struct, payoff, 1.0 / 3,
                                  SolveConfig(grid, depth=3, Q=2)))
    col = backward_dp(build_tree(struct, payoff, 1.0 / 3,
                                 SolveConfig(grid, depth=3, Q=2, collapse=True)))
    # binning at 1e-3 relative wealth: roots agree to ~gamma * bin width
    assert col.report.root_value == pytest.approx(full.report.root_value, abs=2e-3)
    # layer sizes are bounded by populated bins, not by branching^depth
    branching = 2 * 2 * len(grid)
    for n in range(4):
        assert full.report.node_counts[n] == branching**n
        assert col.report.node_counts[n] <= full.report.node_counts[n]
    assert col.report.node_counts[3] < branching**3 / 10


def test_determinism_exact():
    struct, payoff = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 7), depth=4, Q=2,
                      collapse=True, refine=True)
    r1 = backward_dp(build_tree(struct, payoff, 1.0 / 3, cfg))
    r2 = backward_dp(build_tree(struct, payoff, 1.0 / 3, cfg))
    for l1, l2 in zip(r1.values.layers, r2.values.layers):
        assert np.array_equal(l1[0], l2[0])
        assert np.array_equal(l1[1], l2[1])
    for p1, p2 in zip(r1.policy.layers, r2.policy.layers):
        assert np.array_equal(p1[1], p2[1])


def test_refinement_never_hurts():
    struct, payoff = pstruct()
    grid = np.linspace(-1, 1, 9)
    plain = backward_dp(build_tree(struct, payoff, 1.0 / 3,
                                   SolveConfig(grid, depth=4, Q=2, collapse=True)))
    refined = backward_dp(build_tree(struct, payoff, 1.0 / 3,
                                     SolveConfig(grid, depth=4, Q=2, collapse=True,
                                                 refine=True)))
    assert refined.report.root_value >= plain.report.root_value - 1e-14
    assert refined.report.refined_gain_max >= 0.0


def test_extract_policy_depth_one_returns_root_action():
    struct, payoff = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 5), depth=1, Q=2)
    tree = build_tree(struct, payoff, 1.0 / 3, cfg)
    res = backward_dp(tree)
    for seed in range(5):
        path = sample_skeleton(SkeletonConfig(1.0 / 3, 1, 1.0, 1), seed)
        acts = extract_policy_control(res, tree, path)
        assert acts[0] == res.report.root_action


def test_extract_policy_constant_coefficients_flat_per_depth():
    struct, payoff = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 9), depth=4, Q=2,
                      collapse=True)
    tree = build_tree(struct, payoff, 1.0 / 3, cfg)
    res = backward_dp(tree)
    # well inside the horizon every bin at a given depth picks one action
    for depth in range(cfg.depth):
        actions = np.unique(res.policy.layers[depth][1])
        assert len(actions) == 1
    path = sample_skeleton(SkeletonConfig(1.0 / 3, 1, 1.0, 4), 12)
    acts = extract_policy_control(res, tree, path)
    assert np.array_equal(acts, [res.policy.layers[d][1][0] for d in range(4)])


def test_node_cap_refusal():
    struct, payoff = pstruct()
    cfg = SolveConfig(action_grid=np.linspace(-1, 1, 41), depth=9, Q=8,
                      node_cap=1000)
    with pytest.raises(ResourceCapError) as err:
        build_tree(struct, payoff, 1.0 / 3, cfg)
    assert err.value.estimate is not None and err.value.estimate > 1000


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolveConfig(action_grid=np.array([]), depth=2)
    with pytest.raises(ConfigurationError):
        SolveConfig(action_grid=np.array([0.0]), depth=-1)
    with pytest.raises(ConfigurationError):
        SolveConfig(action_grid=np.array([2.0]), depth=2, a_bar=1.0)
    with pytest.raises(ConfigurationError):
        SolveConfig(action_grid=np.array([0.0]), depth=2, epsilon_total=0.0)


def test_collapse_needs_statistic():
    spec = PdSdeSpec(drift=lambda t, p, a: np.zeros(1),
                     diffusion=lambda t, p, a: np.ones((1, 1)),
                     x0=np.array([0.0]))
    struct = CaseAStructure(spec, 0.5, horizon_T=1.0)
    cfg = SolveConfig(action_grid=np.array([0.0]), depth=2, Q=2, collapse=True)
    with pytest.raises(ConfigurationError):
        build_tree(struct, lambda path: 0.0, 0.5, cfg)


def test_two_dimensional_solve_end_to_end():
    """d=2 tree: lagged-kernel atoms drive a two-coordinate Euler structure
    through the DP, and the independent fold agrees."""
    import math as _math
    from skeldp.evaluate import enumerate_oracle
    eps = 0.5
    spec = PdSdeSpec(
        drift=lambda t, p, a: 0.2 * np.atleast_1d(a) * np.ones(1),
        diffusion=lambda t, p, a: np.array([[1.0, 0.5]]),
        x0=np.array([0.0]), d=2)
    struct = CaseAStructure(spec, eps, horizon_T=4.0)
    payoff = lambda path: _math.tanh(float(np.atleast_1d(path(4.0))[0]))  # noqa: E731
    cfg = SolveConfig(action_grid=np.array([-1.0, 1.0]), depth=2, Q=2)
    tree = build_tree(struct, payoff, eps, cfg)
    # fresh-start d=2 kernel: 2 nodes x 2 coords x 2 signs
    assert tree.n_atoms == 8
    assert set(np.unique(tree.atoms.coords)) == {1, 2}
    res = backward_dp(tree)
    assert res.report.node_counts[2] == (2 * 8) ** 2
    assert enumerate_oracle(struct, payoff, tree) == pytest.approx(
        res.report.root_value, abs=1e-12)
    # policy extraction along a sampled 2-d path
    path = sample_skeleton(SkeletonConfig(eps, 2, 4.0, 2), 3)
    acts = extract_policy_control(res, tree, path)
    assert acts.shape == (2,)
    assert set(acts).issubset({-1.0, 1.0})


@settings(max_examples=10, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_dp_dominates_any_fixed_action_sequence(seed):
    rng = np.random.default_rng(seed)
    struct, payoff = pstruct()
    grid = np.linspace(-1, 1, 3)
    cfg = SolveConfig(action_grid=grid, depth=3, Q=2)
    tree = build_tree(struct, payoff, 1.0 / 3, cfg)
    res = backward_dp(tree)
    seq = rng.choice(grid, size=3)

    def fold(state, depth):
        if depth == 3:
            return payoff(struct.payoff_input(state))
        acc = 0.0
        for m in range(tree.n_atoms):
            child = struct.step(state, float(seq[depth]),
                                float(tree.atoms.delta_t[m]), tree.sign_vec(m))
            acc += tree.atoms.weights[m] * fold(child, depth + 1)
        return acc

    assert fold(struct.init(), 0) <= res.report.root_value + 1e-12
