from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from sphereproc.infer import power as power_mod
from sphereproc.infer.power import REFERENCE_COV, estimate_cost, power_null_model, power_study
from sphereproc.model import LgcpCovariance
from sphereproc.pattern import BoxWindow
from sphereproc.sim import MAX_SPHERE_NODES

WINDOW = BoxWindow([0.0], [1.0])
TINY = dict(deltas=[0.0, 1.0], n_reps=2, n_sims=9, rho=60.0, seed=5, threads=1,
            r_grid=[0.05, 0.1], s_grid=[0.3, 0.6], cl_r=0.2, cl_s=0.5)


@pytest.fixture(scope="module")
def tiny_table():
    return power_study(**TINY)


def test_table_shape_and_rates(tiny_table):
    t = tiny_table
    assert t.statistics == ["K", "D", "K1K2"]
    for name in t.statistics:
        for kind in ("liberal", "conservative"):
            p = t.power(name, kind)
            assert p.shape == (2,)
            assert np.all((p >= 0) & (p <= 1))
        assert np.all(t.power(name, "conservative") <= t.power(name, "liberal"))
    assert t.n_ok == [2, 2] and t.n_failed == [0, 0]
    assert len(t.replicates) == 4


def test_reproducible(tiny_table):
    again = power_study(**TINY)
    assert again.to_dict()["liberal"] == tiny_table.to_dict()["liberal"]
    assert [r["theta_hat"] for r in again.replicates] == [r["theta_hat"] for r in tiny_table.replicates]


def test_outputs(tiny_table, tmp_path):
    tiny_table.to_csv(tmp_path / "power.csv")
    rows = list(csv.reader(open(tmp_path / "power.csv")))
    assert rows[0] == ["statistic", "kind", "delta=0", "delta=1"]
    assert len(rows) == 1 + 2 * 3 + 2
    assert rows[-2] == ["replicates", "ok", "2", "2"]
    text = tiny_table.format()
    assert "K1K2" in text and "conservative" in text
    d = tiny_table.to_dict()
    assert d["n_reps"] == 2 and d["deltas"] == [0.0, 1.0]


def test_failed_replicates_are_counted(monkeypatch):
    calls = {"n": 0}
    real = power_mod.fit_cl

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("synthetic failure")
        return real(*args, **kwargs)

    monkeypatch.setattr(power_mod, "fit_cl", flaky)
    t = power_study(**{**TINY, "deltas": [0.0]})
    assert t.n_ok == [1] and t.n_failed == [1]
    assert "synthetic failure" in t.replicates[0]["error"]


def test_budget_guard_and_progress():
    seen = []
    with pytest.raises(ValueError, match="budget"):
        power_study(**TINY, max_seconds=1e-9, progress=seen.append)
    assert seen and seen[0].startswith("power study budget")


def test_invalid_arguments():
    with pytest.raises(ValueError):
        power_study(**{**TINY, "deltas": [-1.0]})
    with pytest.raises(ValueError):
        power_study(**{**TINY, "n_reps": 0})


def test_cost_estimate_scales():
    base = estimate_cost([0, 1], 10, 99, 100.0, REFERENCE_COV, WINDOW, 2, 0.025, 0.15, threads=1)
    assert base.n_patterns == 2 * 10 * 100
    assert base.mean_points == pytest.approx(100 * 4 * math.pi)
    more = estimate_cost([0, 1], 10, 99, 200.0, REFERENCE_COV, WINDOW, 2, 0.025, 0.15, threads=1)
    assert more.pairs_per_pattern == pytest.approx(4 * base.pairs_per_pattern)
    assert more.seconds > base.seconds
    assert "patterns" in str(base)


def test_null_model_intensity_and_cap():
    null = power_null_model(LgcpCovariance(0.5, 0.05, 0.5, 0.13, 0.7), 1000, WINDOW, 2)
    assert null.rho == pytest.approx(1000 / (4 * math.pi))
    assert null.cov.delta == 0.0
    assert null.sphere_cells is None
    tiny_range = power_null_model(LgcpCovariance(0.5, 0.05, 0.5, 0.005, 0.0), 1000, WINDOW, 2)
    assert tiny_range.sphere_cells == MAX_SPHERE_NODES
