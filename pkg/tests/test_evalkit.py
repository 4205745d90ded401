import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, settings, strategies as st

from qcse.evalkit import (EvalError, EvalReport, betainc, build_report, correlation,
                          export_plotdata, linregress, metrics, quality_report, read_scatter,
                          validate_report)


# --- naive references ------------------------------------------------------------

def _ref_mean(v):
    return math.fsum(v) / len(v)


def _ref_metrics(p, t):
    err = [a - b for a, b in zip(p, t)]
    return _ref_mean([abs(e) for e in err]), _ref_mean([e * e for e in err])


def _ref_pearson(p, t):
    mp, mt = _ref_mean(p), _ref_mean(t)
    sxy = math.fsum((a - mp) * (b - mt) for a, b in zip(p, t))
    sxx = math.fsum((a - mp) ** 2 for a in p)
    syy = math.fsum((b - mt) ** 2 for b in t)
    return sxy / math.sqrt(sxx * syy), sxy, sxx, syy


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# --- metrics -----------------------------------------------------------------------

def test_metrics_examples():
    assert metrics([1, 2, 3], [1, 2, 3]) == (0.0, 0.0)
    mae, mse = metrics([1, 2, 3], [2, 2, 2])
    assert mae == pytest.approx(2 / 3, abs=1e-15) and mse == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(EvalError):
        metrics([], [])
    with pytest.raises(EvalError):
        metrics([1, 2], [1])


def test_metrics_match_reference_on_1000_pairs():
    rng = np.random.default_rng(0)
    p, t = rng.uniform(0, 40, 1000), rng.uniform(0, 40, 1000)
    mae, mse = metrics(p, t)
    rmae, rmse = _ref_metrics(list(p), list(t))
    assert _rel(mae, rmae) < 1e-12 and _rel(mse, rmse) < 1e-12


@pytest.mark.parametrize("seed", range(100))
def test_statistics_match_brute_force(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(3, 200))
    p = rng.uniform(0, 40, n)
    t = 0.6 * p + rng.normal(0, rng.uniform(0.5, 10), n)
    mae, mse = metrics(p, t)
    rmae, rmse = _ref_metrics(list(p), list(t))
    assert _rel(mae, rmae) < 1e-12 and _rel(mse, rmse) < 1e-12
    rho, pval = correlation(p, t)
    r_ref, sxy, sxx, syy = _ref_pearson(list(p), list(t))
    assert abs(rho - r_ref) < 1e-12
    slope, intercept, r2 = linregress(p, t)
    s_ref = sxy / sxx
    assert _rel(slope, s_ref) < 1e-12
    assert abs(intercept - (_ref_mean(list(t)) - s_ref * _ref_mean(list(p)))) < 1e-12 * max(
        1.0, abs(intercept))
    assert abs(r2 - rho * rho) < 1e-12
    # the p-value uses our own incomplete beta; compare with scipy's Student-t
    tstat = r_ref * math.sqrt((n - 2) / (1 - r_ref ** 2))
    ref_p = 2 * scipy.stats.t.sf(abs(tstat), n - 2)
    assert abs(pval - ref_p) <= 1e-9 * max(ref_p, 1e-300) + 1e-15


def test_pearson_fixed_example():
    rho, _ = correlation([1, 2, 3, 4, 5], [2, 1, 4, 3, 5])
    assert abs(rho - 0.8) <= 1e-12


def test_perfect_correlation():
    x = np.arange(10.0)
    assert correlation(x, 2 * x + 1) == (1.0, 0.0)
    assert correlation(x, -x) == (-1.0, 0.0)


def test_correlation_errors():
    with pytest.raises(EvalError):
        correlation([1, 2], [1, 2])
    with pytest.raises(EvalError):
        correlation([1, 1, 1], [1, 2, 3])


def test_regression_examples():
    s, i, r2 = linregress([0, 1, 2, 3], [-2, 1, 4, 7])
    assert (s, i, r2) == pytest.approx((3, -2, 1), abs=1e-12)
    assert linregress([0, 1, 2], [0, 0, 3]) == pytest.approx((1.5, -0.5, 0.75), abs=1e-12)
    with pytest.raises(EvalError):
        linregress([2, 2, 2], [1, 2, 3])


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.05, 50), b=st.floats(0.05, 50), x=st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    assert abs(betainc(a, b, x) - scipy.special.betainc(a, b, x)) < 1e-9


# --- report ----------------------------------------------------------------------------

def _specs():
    specs = []
    for pair in range(4):
        for snr in (-5.0, 0.0, 10.0):
            specs.append(SimpleNamespace(item_id=f"p{pair}__snr{snr:+g}", pair_id=f"p{pair}",
                                         snr_db=snr))
    return specs


def _report(seed=0, **kw):
    rng = np.random.default_rng(seed)
    t = rng.uniform(2, 30, 12)
    p = t + rng.normal(0, 2, 12)
    return build_report(p, t, _specs(), **kw), p, t


def test_report_fields_and_schema():
    rep, p, t = _report(baseline_pred=15.0, quality_stats={
        "n": 12, "mean": 81.0, "std": 2.0, "mae_vs_target": 1.5, "q_target": 80.0})
    d = json.loads(rep.to_json())
    validate_report(d)
    assert d["n"] == 12 and d["mae"] == pytest.approx(metrics(p, t)[0])
    assert d["baseline_mae"] == pytest.approx(np.mean(np.abs(15.0 - t)))
    assert len(d["per_item"]) == 4 and len(d["per_snr"]) == 3
    assert EvalReport.from_dict(d).to_json() == rep.to_json()


def test_per_snr_weighted_mae_identity():
    rep, p, t = _report(1)
    total = sum(g["mae"] * g["n"] for g in rep.per_snr) / sum(g["n"] for g in rep.per_snr)
    assert total == pytest.approx(rep.mae, rel=1e-12)
    total = sum(g["mae"] * g["n"] for g in rep.per_item) / rep.n
    assert total == pytest.approx(rep.mae, rel=1e-12)


def test_per_item_std_is_over_snrs():
    rep, p, t = _report(2)
    err = np.abs(p - t).reshape(4, 3)
    for g, row in zip(rep.per_item, err):
        assert g["n"] == 3 and g["mae"] == pytest.approx(row.mean())
        assert g["std"] == pytest.approx(row.std())


def test_report_without_specs():
    rep = build_report([1.0, 2.0], [1.5, 2.5])
    assert rep.per_snr == [] and len(rep.per_item) == 2 and rep.pearson_rho is None
    validate_report(rep.to_dict())


def test_schema_rejects_bad_report():
    import jsonschema
    d = _report()[0].to_dict()
    d["mae"] = -1.0
    with pytest.raises(jsonschema.ValidationError):
        validate_report(d)
    d = _report()[0].to_dict()
    del d["regression"]
    with pytest.raises(jsonschema.ValidationError):
        validate_report(d)


def test_export_and_reimport(tmp_path):
    rep, p, t = _report(3)
    out = export_plotdata(rep, tmp_path / "plots")
    names = sorted(f.name for f in out.iterdir())
    assert names == ["README.txt", "per_item.csv", "per_snr.csv", "regression.csv", "scatter.csv"]
    pred, target = read_scatter(out / "scatter.csv")
    assert len(pred) == rep.n
    mae, mse = metrics(pred, target)
    assert abs(mae - rep.mae) < 1e-9 and abs(mse - rep.mse) < 1e-9
    lines = (out / "regression.csv").read_text().splitlines()
    assert lines[0] == "pred_db,fit_db" and len(lines) == 3


def test_export_empty_report(tmp_path):
    rep = build_report([], [])
    out = export_plotdata(rep, tmp_path)
    for name in ("scatter.csv", "per_item.csv", "per_snr.csv", "regression.csv"):
        assert len((out / name).read_text().splitlines()) == 1


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export_plotdata(build_report([1.0], [1.0]), blocker / "sub")


# --- quality report --------------------------------------------------------------------

def test_quality_report_examples():
    from qcse.audio import AudioClip
    from qcse.enhancer import SeparationResult
    from qcse.quality import ApsProxy

    rng = np.random.default_rng(4)
    items = []
    for _ in range(3):
        s = AudioClip(rng.standard_normal(6000), 12000)
        b = AudioClip(rng.standard_normal(6000), 12000)
        s_est = s.with_samples(0.8 * s.samples + 0.05 * b.samples)
        x = s.with_samples(s.samples + b.samples)
        items.append(SimpleNamespace(s=s, b=b, sep=SeparationResult(
            s_est, x.with_samples(x.samples - s_est.samples))))
    oracle = ApsProxy()
    qs = quality_report(items, [0.0] * 3, oracle)
    assert qs["mean"] == 100.0 and qs["std"] == 0.0 and qs["mae_vs_target"] == 20.0
    par = quality_report(items, [5.0, 10.0, 20.0], oracle, workers=3)
    assert par == quality_report(items, [5.0, 10.0, 20.0], oracle)
    with pytest.raises(EvalError):
        quality_report(items, [0.0], oracle)
