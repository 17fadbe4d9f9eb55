import csv
import json
import math

import pytest

import thinmag.harness as harness
from thinmag.harness import (
    CSV_COLUMNS,
    ConvergenceReport,
    ExperimentConfig,
    emit_plot_data,
    emit_report,
    fit_rate,
    load_report,
    run_convergence,
    with_overrides,
)
from thinmag.noise import eta_coefficients
from thinmag.solver import SimulationError


def tiny(**kw):
    base = dict(Ns=(2, 4), realizations=4, T=0.01, record_every=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_fit_rate_examples():
    s, c, r2 = fit_rate([(2, 1.0), (4, 0.25)])
    assert s == pytest.approx(-2.0) and r2 == pytest.approx(1.0)
    assert fit_rate([(2, 0.3), (4, 0.3)])[0] == pytest.approx(0.0, abs=1e-14)
    s, c, _ = fit_rate([(n, 5.0 * n**-1.5) for n in (4, 8, 16, 32)])
    assert s == pytest.approx(-1.5) and math.exp(c) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        fit_rate([(2, 1.0), (4, 0.0)])
    with pytest.raises(ValueError):
        fit_rate([(2, 1.0)])


def test_experiment_config_ordering():
    for bad in [dict(theta1=1.0, theta2=1.0), dict(delta=0.6), dict(theta1=1.2), dict(delta=0.0)]:
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)
    with pytest.raises(ValueError):
        ExperimentConfig(realizations=0)
    with pytest.raises(ValueError):
        ExperimentConfig(noise={"N": 3})
    assert with_overrides(ExperimentConfig(), seed=None, realizations=3).realizations == 3


def test_noise_off_slope_matches_exact_gap():
    cfg = tiny(Ns=(4, 8, 16), realizations=1, noise_on=False, T=0.05)
    rep = run_convergence(cfg)
    for r in rep.records:
        assert r["errA_hat"] < 1e-28 and r["errB_hat"] < 1e-28
    gaps = [(N, (lambda e: (e.eta_T_eps - e.eta_T_limit) ** 2)(eta_coefficients(cfg.spec(N)))) for N in cfg.Ns]
    exact = fit_rate(gaps)[0]
    assert rep.slopes["errA"]["slope"] == pytest.approx(exact, abs=0.2)
    assert all(a["errA"] > b["errA"] for a, b in zip(rep.records, rep.records[1:]))


def test_reproducible_report(tmp_path):
    cfg = tiny()
    a, b = run_convergence(cfg), run_convergence(cfg)
    for r in (a, b):
        r.metadata["wall_time"] = 0.0
    emit_report(a, tmp_path / "a.json")
    emit_report(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    c = run_convergence(with_overrides(cfg, seed=1))
    assert c.records[0]["errB"] != a.records[0]["errB"]


def test_standard_error_scales_with_realizations():
    a = run_convergence(tiny(Ns=(4,), realizations=16, T=0.02))
    b = run_convergence(tiny(Ns=(4,), realizations=32, T=0.02))
    for name in ("errB", "errA"):
        ratio = b.records[0][name + "_se"] / a.records[0][name + "_se"]
        assert abs(ratio - 1 / math.sqrt(2)) <= 0.3 / math.sqrt(2)


def test_failed_realizations(monkeypatch):
    real = harness.simulate

    def flaky(sc, seed, r, **kw):
        if r in bad:
            raise SimulationError(3, "blow-up")
        return real(sc, seed, r, **kw)

    monkeypatch.setattr(harness, "simulate", flaky)
    bad = {0}
    rep = run_convergence(tiny(Ns=(2,), realizations=24))
    assert rep.records[0]["failed"] == 1 and rep.records[0]["realizations"] == 23
    bad = {0, 1}
    with pytest.raises(SimulationError):
        run_convergence(tiny(Ns=(2,), realizations=24))


# ------------------------------------------------------------------ output


def test_empty_report_is_valid_json(tmp_path):
    rep = ConvergenceReport([], {}, ExperimentConfig().echo(), {"seed": 0})
    emit_report(rep, tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["records"] == [] and d["slopes"] == {}
    assert set(d) == {"config", "records", "slopes", "metadata"}


def test_roundtrip_and_csv(tmp_path):
    rep = run_convergence(tiny())
    emit_report(rep, tmp_path / "r.json")
    back = load_report(tmp_path / "r.json")
    assert back.records == rep.records and back.slopes == rep.slopes
    emit_report(rep, tmp_path / "r.csv", "csv")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_COLUMNS and len(rows) - 1 == len(rep.records)
    assert float(rows[1][1]) == rep.records[0]["errB"]
    csv_path, svg_path = emit_plot_data(rep, tmp_path / "plots")
    assert svg_path.read_text().startswith("<svg") and csv_path.exists()
    with pytest.raises(ValueError):
        emit_report(rep, tmp_path / "r.xml", "xml")


def test_confidence_bounds_consistent():
    rep = run_convergence(tiny())
    for r in rep.records:
        for n in ("errB", "errA", "errB_hat", "errA_hat"):
            assert r[n + "_lo"] <= r[n] <= r[n + "_hi"]
            assert r[n + "_hi"] - r[n] == pytest.approx(1.959963984540054 * r[n + "_se"])


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rep = ConvergenceReport([], {}, {}, {})
    with pytest.raises(OSError) as err:
        emit_report(rep, blocker / "sub" / "r.json")
    assert str(blocker / "sub" / "r.json") in str(err.value)
