import csv
import json
import os

import numpy as np
import pytest

from skeldp import density
from skeldp.cli import main

MERTON_CFG = {
    "skeleton": {"epsilon_k": 1.0 / 3, "d": 1, "horizon_T": 1.0},
    "problem": {"kind": "portfolio", "r": 0.03, "alpha": 0.05, "sigma": 0.3,
                "gamma_util": 0.5, "x0": 1.0, "a_bar": 1.0},
    "solve": {"action_grid": {"lo": -1, "hi": 1, "n": 9}, "depth": 4, "Q": 2,
              "epsilon_total": 0.01, "collapse": True},
    "evaluate": {"n_paths": 1500},
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_all(out_dir):
    found = {}
    for name in sorted(os.listdir(out_dir)):
        with open(os.path.join(out_dir, name), "rb") as fh:
            found[name] = fh.read()
    return found


def test_density_subcommand(tmp_path):
    out = str(tmp_path / "d")
    rc = main(["density", "--out-dir", out, "--x", "0.6366,1.5", "--terms", "25",
               "--quiet"])
    assert rc == 0
    with open(os.path.join(out, "density.csv")) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "f", "bound", "cdf"]
    x, f = float(rows[1][0]), float(rows[1][1])
    # both series representations at the near-crossover point
    ell = np.arange(25)
    small = 2 / np.sqrt(2 * np.pi * x**3) * np.sum(
        (-1.0) ** ell * (2 * ell + 1) * np.exp(-(2 * ell + 1) ** 2 / (2 * x)))
    large = (np.pi / 2) * np.sum(
        (-1.0) ** ell * (2 * ell + 1) * np.exp(-np.pi**2 * x * (2 * ell + 1) ** 2 / 8))
    assert abs(small - large) <= 1e-10
    assert f == pytest.approx(small, abs=1e-10)
    assert os.path.exists(os.path.join(out, "manifest.json"))


def test_missing_config_exit_1(tmp_path, capsys):
    rc = main(["solve", "--config", str(tmp_path / "nope.json"),
               "--out-dir", str(tmp_path / "o")])
    assert rc == 1
    assert "nope.json" in capsys.readouterr().err


def test_unknown_key_exit_1(tmp_path, capsys):
    cfg = json.loads(json.dumps(MERTON_CFG))
    cfg["solve"]["surprise"] = 1
    rc = main(["solve", "--config", write_cfg(tmp_path, cfg),
               "--out-dir", str(tmp_path / "o")])
    assert rc == 1
    assert "surprise" in capsys.readouterr().err


def test_unknown_coefficient_name_exit_1(tmp_path, capsys):
    cfg = {
        "skeleton": {"epsilon_k": 0.5, "d": 1, "horizon_T": 1.0},
        "problem": {"kind": "pd_sde", "drift": {"name": "no_such_drift"},
                    "diffusion": "constant", "x0": [0.0]},
        "solve": {"action_grid": [0.0], "depth": 2, "Q": 2},
    }
    rc = main(["solve", "--config", write_cfg(tmp_path, cfg),
               "--out-dir", str(tmp_path / "o")])
    assert rc == 1
    assert "no_such_drift" in capsys.readouterr().err


def test_resource_cap_exit_3(tmp_path, capsys):
    cfg = json.loads(json.dumps(MERTON_CFG))
    cfg["solve"].update(depth=9, Q=8, collapse=False,
                        action_grid={"lo": -1, "hi": 1, "n": 41},
                        node_cap=1000)
    rc = main(["solve", "--config", write_cfg(tmp_path, cfg),
               "--out-dir", str(tmp_path / "o")])
    assert rc == 3


def test_solve_threads_byte_identical(tmp_path):
    cfg_path = write_cfg(tmp_path, MERTON_CFG)
    out1, out8 = str(tmp_path / "t1"), str(tmp_path / "t8")
    assert main(["solve", "--config", cfg_path, "--out-dir", out1,
                 "--seed", "7", "--threads", "1", "--quiet"]) == 0
    assert main(["solve", "--config", cfg_path, "--out-dir", out8,
                 "--seed", "7", "--threads", "8", "--quiet"]) == 0
    assert read_all(out1) == read_all(out8)


def test_evaluate_threads_byte_identical(tmp_path):
    cfg_path = write_cfg(tmp_path, MERTON_CFG)
    out1, out8 = str(tmp_path / "e1"), str(tmp_path / "e8")
    assert main(["evaluate", "--config", cfg_path, "--out-dir", out1,
                 "--seed", "7", "--threads", "1", "--quiet"]) == 0
    assert main(["evaluate", "--config", cfg_path, "--out-dir", out8,
                 "--seed", "7", "--threads", "8", "--quiet"]) == 0
    assert read_all(out1) == read_all(out8)


def test_portfolio_summary_fields(tmp_path):
    cfg_path = write_cfg(tmp_path, MERTON_CFG)
    out = str(tmp_path / "p")
    assert main(["portfolio", "--config", cfg_path, "--out-dir", out,
                 "--seed", "3", "--quiet"]) == 0
    with open(os.path.join(out, "portfolio_summary.json")) as fh:
        summary = json.load(fh)
    for field in ["root_value", "extracted_fraction", "merton_fraction",
                  "fraction_gap", "mc_mean", "mc_se", "const_grid_value",
                  "certified_epsilon", "stage_argmax_policy"]:
        assert field in summary
    assert summary["merton_fraction"] == pytest.approx(0.4444444, abs=1e-6)
    assert len(summary["stage_argmax_policy"]) == 4


def test_portfolio_epsilon_flag_sets_budget(tmp_path):
    cfg = json.loads(json.dumps(MERTON_CFG))
    del cfg["solve"]["epsilon_total"]
    out = str(tmp_path / "pb")
    assert main(["portfolio", "--config", write_cfg(tmp_path, cfg),
                 "--out-dir", out, "--epsilon", "0.02", "--quiet"]) == 0
    with open(os.path.join(out, "manifest.json")) as fh:
        assert json.load(fh)["config"]["solve"].get("epsilon_total") is None
    # skeleton resolution must be untouched by the budget flag
    with open(os.path.join(out, "portfolio_summary.json")) as fh:
        summary = json.load(fh)
    assert summary["eps_k"] == pytest.approx(1.0 / 3)


def test_sweep_subcommand(tmp_path):
    cfg = json.loads(json.dumps(MERTON_CFG))
    cfg["sweep"] = {"eps_list": [0.5, 1.0 / 3]}
    cfg["solve"]["depth"] = 3
    out = str(tmp_path / "sw")
    assert main(["sweep", "--config", write_cfg(tmp_path, cfg),
                 "--out-dir", out, "--quiet"]) == 0
    with open(os.path.join(out, "sweep.csv")) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["eps_k", "root_value", "certified_epsilon", "root_action"]
    assert len(rows) == 3


def test_kernel_subcommand_mass(tmp_path):
    cfg = {"skeleton": {"epsilon_k": 1.0, "d": 2, "horizon_T": 1.0},
           "kernel": {"lags": [0.0, 0.5], "Q": 2}}
    out = str(tmp_path / "k")
    assert main(["kernel", "--config", write_cfg(tmp_path, cfg),
                 "--out-dir", out, "--quiet"]) == 0
    with open(os.path.join(out, "kernel_mass.json")) as fh:
        mass = json.load(fh)
    assert mass["total_mass"] == pytest.approx(1.0, abs=1e-12)
    assert mass["first_fire"]["2"] > 0.5


def test_skeleton_subcommand_roundtrip(tmp_path):
    cfg_path = write_cfg(tmp_path, MERTON_CFG)
    out = str(tmp_path / "sk")
    assert main(["skeleton", "--config", cfg_path, "--out-dir", out,
                 "--seed", "12", "--quiet"]) == 0
    from skeldp.skeleton import path_from_csv
    with open(os.path.join(out, "skeleton.csv")) as fh:
        path = path_from_csv(fh.read(), 1.0 / 3, 1)
    # 17-significant-digit serialization round-trips exactly
    from skeldp.skeleton import SkeletonConfig, sample_skeleton
    ref = sample_skeleton(SkeletonConfig(1.0 / 3, 1, 1.0), 12)
    assert np.array_equal(path.delta_t, ref.delta_t)


def test_manifest_contents(tmp_path):
    cfg_path = write_cfg(tmp_path, MERTON_CFG)
    out = str(tmp_path / "m")
    assert main(["solve", "--config", cfg_path, "--out-dir", out,
                 "--seed", "42", "--quiet"]) == 0
    with open(os.path.join(out, "manifest.json")) as fh:
        man = json.load(fh)
    assert man["seed"] == 42
    assert man["command"] == "solve"
    assert "config_sha256" in man and len(man["config_sha256"]) == 64
    assert "skeldp" in man["versions"]


def test_output_reproducible_from_manifest_alone(tmp_path):
    cfg_path = write_cfg(tmp_path, MERTON_CFG)
    out = str(tmp_path / "r1")
    assert main(["solve", "--config", cfg_path, "--out-dir", out,
                 "--seed", "42", "--quiet"]) == 0
    with open(os.path.join(out, "manifest.json")) as fh:
        man = json.load(fh)
    # rebuild the run purely from the manifest
    cfg2_path = write_cfg(tmp_path, man["config"], "from_manifest.json")
    out2 = str(tmp_path / "r2")
    assert main([man["command"], "--config", cfg2_path, "--out-dir", out2,
                 "--seed", str(man["seed"]), "--quiet"]) == 0
    a, b = read_all(out), read_all(out2)
    assert a["summary.json"] == b["summary.json"]
    assert a["value_policy.csv"] == b["value_policy.csv"]


def test_evaluate_from_policy_csv(tmp_path):
    cfg_path = write_cfg(tmp_path, MERTON_CFG)
    out_solve = str(tmp_path / "ps")
    assert main(["solve", "--config", cfg_path, "--out-dir", out_solve,
                 "--seed", "2", "--quiet"]) == 0
    cfg = json.loads(json.dumps(MERTON_CFG))
    cfg["evaluate"]["policy_csv"] = os.path.join(out_solve, "value_policy.csv")
    out_eval = str(tmp_path / "pe")
    assert main(["evaluate", "--config", write_cfg(tmp_path, cfg, "ev.json"),
                 "--out-dir", out_eval, "--seed", "2", "--quiet"]) == 0
    with open(os.path.join(out_eval, "evaluate_metrics.json")) as fh:
        metrics = json.load(fh)
    # the re-loaded policy evaluates like the in-process one
    out_ref = str(tmp_path / "pr")
    assert main(["evaluate", "--config", cfg_path, "--out-dir", out_ref,
                 "--seed", "2", "--quiet"]) == 0
    with open(os.path.join(out_ref, "evaluate_metrics.json")) as fh:
        ref = json.load(fh)
    assert metrics["mc_mean"] == pytest.approx(ref["mc_mean"], rel=1e-12)
    assert metrics["root_value"] == pytest.approx(ref["root_value"], rel=1e-12)
