import json
import math

import numpy as np
import pytest
from scipy import stats

from tspacing import ExperimentConfig, ReplicaResult, ks_statistic, power_curve, run_experiment, sigma_diagnostics
from tspacing.montecarlo import ks_threshold, read_results, run_replica, summary_path


def small_config(**kw):
    base = dict(model={"model": "tensor", "n": 3, "k": 3}, gamma_grid=[0.0, 3.0], replicas=20, seed=9)
    base.update(kw)
    return ExperimentConfig(**base)


def test_ks_construction():
    N = 1000
    q = (np.arange(1, N + 1) - 0.5) / N
    assert ks_statistic(q) <= 0.5 / N + 1e-15
    x = stats.chi2(7).ppf(q)
    assert ks_statistic(x, "chi2", kappa=7) <= 0.5 / N + 1e-12


def test_ks_uniform_sample(rng):
    N = 10_000
    assert ks_statistic(rng.uniform(size=N)) < ks_threshold(N)


def test_ks_constant_sample():
    assert ks_statistic(np.full(100, 0.5)) >= 0.5


def test_ks_bad_reference():
    with pytest.raises(ValueError):
        ks_statistic([0.1], "chi2")
    with pytest.raises(ValueError):
        ks_statistic([0.1], "lognormal")


def test_power_curve_and_sigma_table():
    rows = [ReplicaResult(0.0, i, p_spacing=(i + 0.5) / 100, sigma_hat=1.0) for i in range(100)]
    rows += [ReplicaResult(1.0, i, p_spacing=0.001, sigma_hat=2.0) for i in range(50)]
    rows.append(ReplicaResult(1.0, 99, flags=["failed:OptimizationFailed"]))
    pc = power_curve(rows, 0.05)
    assert pc[0]["rate"] == 0.05 and pc[1]["rate"] == 1.0 and pc[1]["n"] == 50
    assert math.isclose(pc[0]["se"], math.sqrt(0.05 * 0.95 / 100))
    sd = sigma_diagnostics(rows, 1.0, 7)
    assert sd[1]["mean"] == 2.0 and sd[0]["all_positive"]


def test_replica_is_self_contained():
    cfg = small_config()
    a = run_replica(cfg, 1, 7)
    b = run_replica(small_config(replicas=500), 1, 7)  # same (seed, gamma, replica) -> same row
    assert a.csv_row() == b.csv_row()


def test_experiment_rows_and_files(tmp_path):
    out = tmp_path / "cal.csv"
    res = run_experiment(small_config(output=str(out)))
    rows = read_results(out)
    assert len(rows) == 40 == len(res.results)
    assert [r.csv_row() for r in rows] == [r.csv_row() for r in res.results]
    summary = json.loads(summary_path(out).read_text())
    assert summary["kappa"] == 7 and len(summary["per_gamma"]) == 2
    assert "runtime_seconds" not in summary
    for r in res.results:
        assert not r.failed
        assert 0 <= r.p_spacing <= 1 and 0 <= r.p_tspacing <= 1 and r.sigma_hat > 0
        assert r.lambda2 <= r.lambda1


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(small_config(output=str(a)))
    run_experiment(small_config(output=str(b)))
    assert a.read_bytes() == b.read_bytes()
    assert summary_path(a).read_bytes() == summary_path(b).read_bytes()


def test_workers_do_not_change_rows(tmp_path):
    a = run_experiment(small_config(replicas=6))
    b = run_experiment(small_config(replicas=6, workers=2))
    assert a.csv_text() == b.csv_text()


def test_sigma_unknown_omits_spacing():
    res = run_experiment(small_config(replicas=3, sigma_known=False))
    assert all(math.isnan(r.p_spacing) and 0 <= r.p_tspacing <= 1 for r in res.results)


@pytest.mark.parametrize("spec", [{"model": "twospiked", "n": 4, "k": 3}, {"model": "superres", "f": 3}])
def test_other_models_run(spec):
    res = run_experiment(small_config(model=spec, replicas=3, gamma_grid=[0.0]))
    assert all(not r.failed for r in res.results)
    assert all(math.isnan(r.dist_norm) for r in res.results)


def test_config_round_trip_and_validation():
    cfg = small_config()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        small_config(replicas=0)
