import math

import numpy as np
import pytest

from skeldp import fbm
from skeldp.errors import ConfigurationError
from skeldp.skeleton import brownian_fine_path, crossing_sample_skeleton
from skeldp.structures import FbmSpec, FbmStructure


def unit(s):
    return np.array([s], dtype=np.int64)


def test_rho_domain_checks():
    with pytest.raises(ConfigurationError):
        fbm.rho_H(1.0, 0.5, H=0.4)
    with pytest.raises(ConfigurationError):
        fbm.rho_H(0.5, 0.5, H=0.75)
    with pytest.raises(ConfigurationError):
        fbm.rho_H(0.5, 0.0, H=0.75)
    assert math.isfinite(fbm.rho_H(1.0, 0.5, H=0.75))


def test_phi_table_matches_pointwise_kernel():
    """Phi'(x) = -rho_H(1, x): check the table against direct quadrature of
    int_x^y rho(1, w) dw on an interior interval (no endpoint issues)."""
    table = fbm.get_table(0.75)
    x, y = 0.3, 0.6
    from numpy.polynomial.legendre import leggauss
    gx, gw = leggauss(64)
    w = 0.5 * (x + y) + 0.5 * (y - x) * gx
    piece = 0.5 * (y - x) * float(np.sum(gw * np.array(
        [fbm.rho_H(1.0, wi, 0.75) for wi in w])))
    assert table.phi(x) - table.phi(y) == pytest.approx(piece, rel=2e-4)


def test_representation_reproduces_fbm_covariance():
    """Ratios E[B_H(1) B_H(u)] / Var B_H(1) must match the fBm law
    (1 + u^{2H} - (1-u)^{2H}) / 2 independently of d_H."""
    H = 0.75
    table = fbm.get_table(H)
    var1 = table.variance_at_one()
    for u in (0.25, 0.5, 0.75):
        gs = np.unique(np.concatenate([np.geomspace(1e-9, 0.05 * u, 200),
                                       np.linspace(0.05 * u, u * (1 - 1e-9), 600)]))
        cov = np.trapezoid(table.phi(gs) * u**(H - 0.5) * table.phi(gs / u), gs)
        expect = 0.5 * (1 + u**(2 * H) - (1 - u)**(2 * H))
        assert cov / var1 == pytest.approx(expect, abs=2e-3)


def test_w_starts_at_zero():
    out = fbm.fbm_from_skeleton([0.3, 0.7], [1.0, -1.0], 0.5, 0.75, [0.0, 0.1])
    assert out[0] == 0.0
    assert out[1] == 0.0    # before the first event W is frozen at 0


def test_skeleton_vs_fine_reference_small():
    """Module-scale coupled check: the skeleton W_H stays near the fine-grid
    reference of the same Brownian path."""
    H, eps = 0.75, 1.0 / 8
    dt = eps**2 / 400
    t_eval = np.linspace(0.05, 1.0, 20)
    sups = []
    for seed in range(8):
        t_grid, bm = brownian_fine_path(1, 1.0, dt, seed=seed, stream=3)
        path = crossing_sample_skeleton(eps, t_grid, bm)
        w_skel = fbm.fbm_from_skeleton(path.cum_times, path.signs, eps, H, t_eval)
        # subsample the fine path for the reference integral
        sub = slice(None, None, 16)
        w_ref = fbm.fbm_ref_from_fine_path(t_grid[sub], bm[0][sub], H, t_eval)
        sups.append(np.max(np.abs(w_skel - w_ref)))
    scale = np.sqrt(fbm.get_table(H).variance_at_one())
    assert np.mean(sups) < 0.5 * scale


def test_self_similarity_variance():
    """Sample variance of W^k_H(1) within 15% of the representation's own
    fine-grid limit; d_H-free by construction."""
    H, eps = 0.75, 1.0 / 8
    n_paths = 4000
    rng_cfg_seed = 10
    from skeldp import density
    key = np.array([np.uint64(rng_cfg_seed), np.uint64(77)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    n_steps = int(np.ceil(eps**-2)) + 30
    vals = np.empty(n_paths)
    for i in range(n_paths):
        u = gen.random((n_steps, 2))
        dts = eps**2 * density.inverse_cdf_tau(np.clip(u[:, 0], 1e-12, 1 - 1e-12))
        times = np.cumsum(dts)
        signs = np.where(u[:, 1] < 0.5, 1.0, -1.0)
        vals[i] = fbm.fbm_from_skeleton(times, signs, eps, H, [1.0])[0]
    target = fbm.get_table(H).variance_at_one()
    assert abs(np.var(vals) - target) / target < 0.15


def test_fbm_structure_reductions():
    H, eps = 0.75, 0.25
    # alpha = 0: X = x0 + sigma * W_H exactly
    spec = FbmSpec(H=H, sigma=2.0, drift=lambda t, p, a: 0.0, x0=1.5)
    struct = FbmStructure(spec, eps, horizon_T=10.0)
    state = struct.init()
    dts = [0.2, 0.3, 0.15]
    signs = [1, -1, 1]
    for dt, s in zip(dts, signs):
        state = struct.step(state, 0.0, dt, unit(s))
    times = np.cumsum(dts)
    w = fbm.fbm_from_skeleton(times, np.array(signs, float), eps, H,
                              [times[-1]])[0]
    assert state.values[-1] == pytest.approx(1.5 + 2.0 * w, rel=1e-10)
    # sigma = 0: plain ODE Euler
    spec0 = FbmSpec(H=H, sigma=0.0, drift=lambda t, p, a: 0.7, x0=2.0)
    struct0 = FbmStructure(spec0, eps, horizon_T=10.0)
    state0 = struct0.init()
    for dt, s in zip(dts, signs):
        state0 = struct0.step(state0, 0.0, dt, unit(s))
    assert state0.values[-1] == pytest.approx(2.0 + 0.7 * times[-1], rel=1e-12)


def test_mean_reversion_reduces_variance():
    H, eps = 0.75, 0.25
    n_paths = 300
    from skeldp import density
    terminals = {"free": [], "revert": []}
    for name, drift in [("free", lambda t, p, a: 0.0),
                        ("revert", lambda t, p, a: -float(np.atleast_1d(p(t))[0]))]:
        spec = FbmSpec(H=H, sigma=1.0, drift=drift, x0=0.0)
        struct = FbmStructure(spec, eps, horizon_T=2.0)
        key = np.array([np.uint64(4), np.uint64(5)], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        for _ in range(n_paths):
            u = gen.random((20, 2))
            dts = eps**2 * density.inverse_cdf_tau(np.clip(u[:, 0], 1e-12, 1 - 1e-12))
            sgn = np.where(u[:, 1] < 0.5, 1, -1)
            state = struct.init()
            for dt, s in zip(dts, sgn):
                state = struct.step(state, 0.0, float(dt), unit(int(s)))
            terminals[name].append(state.values[-1])
    assert np.var(terminals["revert"]) < np.var(terminals["free"])
