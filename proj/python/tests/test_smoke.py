import math

import pytest

import nashdiff


def test_version():
    assert nashdiff.__version__ == "0.1.0"
    assert nashdiff.checkpoint_format == "nashdiff-checkpoint-v1"


def test_solve_nbs_symmetric():
    u = nashdiff.solve_nbs((0.0, 0.0))
    assert u[0] == pytest.approx(math.sqrt(0.5), abs=1e-8)
    assert u[1] == pytest.approx(math.sqrt(0.5), abs=1e-8)


def test_solve_nbs_infeasible():
    with pytest.raises(nashdiff.InfeasibleInstance):
        nashdiff.solve_nbs((0.8, 0.8))


def test_projections():
    assert nashdiff.project_feasible((-1.0, 3.0)) == pytest.approx((0.0, 1.0))
    u = nashdiff.project_to_frontier((0.1, 0.1), radius=2.0)
    assert math.hypot(*u) == pytest.approx(2.0)
    assert nashdiff.frontier_distance((3.0, 4.0)) == pytest.approx(4.0)


def test_guide_grad_matches_difference():
    u, d = (0.3, 0.1), (0.2, 0.25)
    g = nashdiff.guide_grad(u, d)
    h = 1e-6
    fx = (nashdiff.guide_loss((u[0] + h, u[1]), d) - nashdiff.guide_loss((u[0] - h, u[1]), d)) / (2 * h)
    fy = (nashdiff.guide_loss((u[0], u[1] + h), d) - nashdiff.guide_loss((u[0], u[1] - h), d)) / (2 * h)
    assert g[0] == pytest.approx(fx, rel=1e-6)
    assert g[1] == pytest.approx(fy, rel=1e-6)


def test_wilcoxon_matches_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    x = [0.9, 1.7, 2.2, 3.1, 4.4, 5.0, 6.3, 7.7, 8.1]
    y = [1.0, 1.0, 2.0, 2.5, 5.0, 4.0, 6.0, 7.0, 9.0]
    ours = nashdiff.wilcoxon(x, y)
    ref = scipy_stats.wilcoxon(x, y, alternative="two-sided", method="exact")
    assert ours["p_value"] == pytest.approx(ref.pvalue, rel=1e-9)


def test_generate_dataset():
    data = nashdiff.generate_dataset(20, seed=3)
    assert len(data) == 20
    assert [r["split"] for r in data].count("train") == 16
    for r in data:
        assert 0.05 <= r["agents"][0]["disagreement"] <= 0.4
        assert math.hypot(*r["reference"]) == pytest.approx(1.0)


def test_timesteps():
    assert nashdiff.ddim_timesteps(1000, 15)[:2] == [1000, 933]
    assert nashdiff.ddim_timesteps(1000, 15, "inclusive")[-1] == 1


def test_config_errors():
    with pytest.raises(nashdiff.ConfigError, match="guidance.lamda"):
        nashdiff.resolve_config({"guidance": {"lamda": 0.1}})
    cfg = nashdiff.resolve_config({"experiment": {"mode": "hard_constraint"}})
    assert cfg["guidance"]["t_start"] == 1.0
    keys = {(s, k) for s, k, _, _ in nashdiff.config_keys()}
    assert ("guidance", "lambda") in keys


def test_tiny_experiment():
    cfg = {
        "dataset": {"count": 100},
        "architecture": {"heads": 2, "embed_dim": 8, "time_dim": 6, "hidden": 12},
        "training": {"epochs": 2, "phase1_epochs": 1, "batch_size": 32},
        "experiment": {"seed": 5, "mode": "projection"},
    }
    res = nashdiff.run_experiment(cfg)
    assert res["n_samples"] == 10
    for u in res["samples"]:
        assert math.hypot(*u) == pytest.approx(1.0, abs=1e-9)
    again = nashdiff.run_experiment(cfg)
    assert again["samples"] == res["samples"]


def test_theory_suite():
    checks = nashdiff.theory_suite(starts=100, regression_instances=10)
    assert [c["name"] for c in checks] == ["ir_entry", "terminal_clean_estimate", "drift_clamp"]
    assert all(c["passed"] for c in checks), checks
