"""Objective evaluation of predicted attenuations against oracle targets."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .enhancer import remix


class EvalError(ValueError):
    pass


def _pair(pred, target):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise EvalError(f"prediction and target lengths differ ({p.size} vs {t.size})")
    return p, t


def metrics(pred, target) -> tuple[float, float]:
    """``(mae, mse)`` of ``pred - target``."""
    p, t = _pair(pred, target)
    if p.size == 0:
        raise EvalError("metrics need at least one item")
    err = p - t
    return float(np.mean(np.abs(err))), float(np.mean(err * err))


# ---------------------------------------------------------------------------
# Student-t tail via the regularised incomplete beta function

BETA_TOL = 1e-10
_BETA_MAX_TERMS = 500


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, _BETA_MAX_TERMS + 1):
        m2 = 2 * m
        for num in (m * (b - m) * x / ((qam + m2) * (a + m2)),
                    -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))):
            d = 1.0 + num * d
            d = 1.0 / (d if abs(d) > tiny else tiny)
            c = 1.0 + num / c
            c = c if abs(c) > tiny else tiny
            h *= d * c
        if abs(d * c - 1.0) < BETA_TOL:
            return h
    raise EvalError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta ``I_x(a, b)`` for ``a, b > 0``, ``0 <= x <= 1``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def correlation(pred, target) -> tuple[float, float]:
    """Pearson ``rho`` and its two-sided p-value (t-test with ``n - 2`` dof)."""
    p, t = _pair(pred, target)
    n = p.size
    if n < 3:
        raise EvalError("correlation needs at least 3 items")
    dp, dt = p - p.mean(), t - t.mean()
    spp, stt = float(dp @ dp), float(dt @ dt)
    if spp == 0.0 or stt == 0.0:
        raise EvalError("correlation is undefined for a constant vector")
    rho = float(np.clip(float(dp @ dt) / math.sqrt(spp * stt), -1.0, 1.0))
    if abs(rho) == 1.0:
        return rho, 0.0
    tstat = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, student_t_two_sided(tstat, n - 2)


def linregress(pred, target) -> tuple[float, float, float]:
    """Least-squares line ``target ~ slope * pred + intercept`` and its ``r**2``."""
    x, y = _pair(pred, target)
    if x.size < 2:
        raise EvalError("regression needs at least 2 items")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)
    if sxx == 0.0:
        raise EvalError("regression is undefined for a constant predictor")
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    # a constant target is fitted exactly by the flat line
    r2 = 1.0 if syy == 0.0 else min(sxy * sxy / (sxx * syy), 1.0)
    return slope, intercept, r2


# ---------------------------------------------------------------------------
# report

@dataclass
class EvalReport:
    """Global metrics plus per-item and per-SNR breakdowns.

    ``records`` holds one dict per segment (item_id, pair_id, snr_db, target_db,
    pred_db). Groups use population standard deviations. Statistics that are
    undefined for the data at hand (too few items, constant vectors) are None.
    """

    n: int
    mae: float | None
    mse: float | None
    pearson_rho: float | None
    p_value: float | None
    slope: float | None
    intercept: float | None
    r_squared: float | None
    per_item: list = field(default_factory=list)
    per_snr: list = field(default_factory=list)
    records: list = field(default_factory=list)
    quality_stats: dict | None = None
    baseline_mae: float | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n, "mae": self.mae, "mse": self.mse,
            "pearson_rho": self.pearson_rho, "p_value": self.p_value,
            "regression": {"slope": self.slope, "intercept": self.intercept,
                           "r_squared": self.r_squared},
            "per_item": self.per_item, "per_snr": self.per_snr, "records": self.records,
            "quality_stats": self.quality_stats, "baseline_mae": self.baseline_mae,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        reg = d["regression"]
        return cls(d["n"], d["mae"], d["mse"], d["pearson_rho"], d["p_value"], reg["slope"],
                   reg["intercept"], reg["r_squared"], d["per_item"], d["per_snr"], d["records"],
                   d.get("quality_stats"), d.get("baseline_mae"))


def _group(records, key):
    groups: dict = {}
    for r in records:
        if r[key] is None:
            continue
        groups.setdefault(r[key], []).append(abs(r["pred_db"] - r["target_db"]))
    out = []
    for k in sorted(groups):
        err = np.asarray(groups[k])
        out.append({key: k, "n": int(err.size), "mae": float(err.mean()), "std": float(err.std())})
    return out


def _maybe(fn, *args):
    try:
        return fn(*args)
    except EvalError:
        return None


def build_report(pred, target, specs=None, quality_stats=None, baseline_pred=None) -> EvalReport:
    """Assemble an :class:`EvalReport`.

    ``specs`` supplies the grouping keys (objects with ``item_id``, ``pair_id`` and
    ``snr_db``, as in the manifest); without them every item is its own group
    and there is no per-SNR breakdown.
    ``baseline_pred`` (a scalar or per-item values) adds a comparison MAE.
    """
    p, t = _pair(pred, target)
    if specs is None:
        keys = [(f"item{i:04d}", f"item{i:04d}", None) for i in range(p.size)]
    else:
        specs = list(specs)
        if len(specs) != p.size:
            raise EvalError("one spec per prediction is required")
        keys = [(s.item_id, s.pair_id, float(s.snr_db)) for s in specs]
    records = [{"item_id": k[0], "pair_id": k[1], "snr_db": k[2],
                "target_db": float(ti), "pred_db": float(pi)} for k, pi, ti in zip(keys, p, t)]
    mae = mse = rho = pval = slope = intercept = r2 = None
    if p.size:
        mae, mse = metrics(p, t)
        cr = _maybe(correlation, p, t)
        if cr is not None:
            rho, pval = cr
        lr = _maybe(linregress, p, t)
        if lr is not None:
            slope, intercept, r2 = lr
    baseline = None
    if baseline_pred is not None and p.size:
        base = np.broadcast_to(np.asarray(baseline_pred, dtype=np.float64), t.shape)
        baseline = metrics(base, t)[0]
    per_item = [{"item_id": g.pop("pair_id"), **g} for g in _group(records, "pair_id")]
    return EvalReport(int(p.size), mae, mse, rho, pval, slope, intercept, r2,
                      per_item, _group(records, "snr_db"), records, quality_stats, baseline)


REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["n", "mae", "mse", "pearson_rho", "p_value", "regression", "per_item",
                 "per_snr", "records", "quality_stats", "baseline_mae"],
    "properties": {
        "n": {"type": "integer", "minimum": 0},
        "mae": {"type": ["number", "null"], "minimum": 0},
        "mse": {"type": ["number", "null"], "minimum": 0},
        "pearson_rho": {"type": ["number", "null"], "minimum": -1, "maximum": 1},
        "p_value": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "regression": {
            "type": "object",
            "required": ["slope", "intercept", "r_squared"],
            "properties": {
                "slope": {"type": ["number", "null"]},
                "intercept": {"type": ["number", "null"]},
                "r_squared": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            },
        },
        "per_item": {"type": "array", "items": {
            "type": "object", "required": ["item_id", "n", "mae", "std"],
            "properties": {"item_id": {"type": "string"}, "n": {"type": "integer", "minimum": 1},
                           "mae": {"type": "number", "minimum": 0},
                           "std": {"type": "number", "minimum": 0}}}},
        "per_snr": {"type": "array", "items": {
            "type": "object", "required": ["snr_db", "n", "mae", "std"],
            "properties": {"snr_db": {"type": "number"}, "n": {"type": "integer", "minimum": 1},
                           "mae": {"type": "number", "minimum": 0},
                           "std": {"type": "number", "minimum": 0}}}},
        "records": {"type": "array", "items": {
            "type": "object", "required": ["item_id", "pair_id", "snr_db", "target_db", "pred_db"]}},
        "quality_stats": {"type": ["object", "null"],
                          "required": ["n", "mean", "std", "mae_vs_target", "q_target"]},
        "baseline_mae": {"type": ["number", "null"], "minimum": 0},
    },
}


def validate_report(data: dict) -> None:
    """Raise ``jsonschema.ValidationError`` when ``data`` is not a valid report."""
    import jsonschema

    jsonschema.validate(data, REPORT_SCHEMA)


# ---------------------------------------------------------------------------
# output quality

def quality_report(items, predictions, oracle, q_target: float = 80.0, workers: int = 1) -> dict:
    """Re-score ``remix(item.sep, h)`` for each item and summarise against ``q_target``."""
    items = list(items)
    h = [float(v) for v in np.asarray(predictions, dtype=np.float64).ravel()]
    if len(items) != len(h):
        raise EvalError("one prediction per item is required")

    def score(pair):
        item, hi = pair
        return float(oracle(remix(item.sep, hi), item.s, item.b))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            q = list(pool.map(score, zip(items, h)))
    else:
        q = [score(pair) for pair in zip(items, h)]
    q = np.asarray(q)
    if q.size == 0:
        return {"n": 0, "mean": None, "std": None, "mae_vs_target": None,
                "q_target": q_target, "scores": []}
    return {"n": int(q.size), "mean": float(q.mean()), "std": float(q.std()),
            "mae_vs_target": float(np.mean(np.abs(q - q_target))), "q_target": q_target,
            "scores": [float(v) for v in q]}


# ---------------------------------------------------------------------------
# plot data

PLOT_README = """\
Plot data exported from an evaluation report. UTF-8, comma-separated, '.' decimals.

scatter.csv     one row per evaluated 4 s segment
  item_id         segment identifier (pair and SNR)
  pair_id         speech/background/segment identifier shared across SNRs
  snr_db          mixing SNR in dB
  target_db       oracle attenuation h (dB)
  pred_db         predicted attenuation (dB)

per_item.csv    absolute error grouped by pair_id (across its SNRs)
  item_id, n, mae_db, std_db   (std is the population standard deviation)

per_snr.csv     absolute error grouped by mixing SNR
  snr_db, n, mae_db, std_db

regression.csv  end points of the least-squares line target ~ pred
  pred_db, fit_db              (two rows at the smallest and largest prediction;
                                empty when the regression is undefined)
"""


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export_plotdata(report: EvalReport, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "scatter.csv", ("item_id", "pair_id", "snr_db", "target_db", "pred_db"),
               [(r["item_id"], r["pair_id"], repr(r["snr_db"]), repr(r["target_db"]),
                 repr(r["pred_db"])) for r in report.records])
    _write_csv(out_dir / "per_item.csv", ("item_id", "n", "mae_db", "std_db"),
               [(g["item_id"], g["n"], repr(g["mae"]), repr(g["std"])) for g in report.per_item])
    _write_csv(out_dir / "per_snr.csv", ("snr_db", "n", "mae_db", "std_db"),
               [(repr(g["snr_db"]), g["n"], repr(g["mae"]), repr(g["std"]))
                for g in report.per_snr])
    line = []
    if report.slope is not None and report.records:
        preds = [r["pred_db"] for r in report.records]
        for x in (min(preds), max(preds)):
            line.append((repr(x), repr(report.slope * x + report.intercept)))
    _write_csv(out_dir / "regression.csv", ("pred_db", "fit_db"), line)
    (out_dir / "README.txt").write_text(PLOT_README, encoding="utf-8")
    return out_dir


def read_scatter(path) -> tuple[np.ndarray, np.ndarray]:
    """``(pred, target)`` arrays from an exported ``scatter.csv``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    pred = np.array([float(r["pred_db"]) for r in rows])
    target = np.array([float(r["target_db"]) for r in rows])
    return pred, target
