"""Metrics, evaluation reports and plot-data export.

Group statistics are over tests: each test contributes its own MAE (mean
absolute error over its 52 locations) and a group reports the mean of those
with standard error ``sample_std / sqrt(n)``. Groups with no tests are
reported as ``None`` rather than zero.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataio import GROUPS, assign_groups, to_arrays
from .errors import DataError
from .locations import SECTORS, LocationTable, default_table


def _summary(values):
    values = np.asarray(values, dtype=np.float64)
    n = int(values.size)
    if n == 0:
        return None
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else None
    return {"mae": float(values.mean()), "se": se, "n": n}


def per_test_mae(preds, targets):
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if preds.shape != targets.shape:
        raise DataError(f"prediction shape {preds.shape} != target shape {targets.shape}")
    return np.abs(preds - targets).mean(axis=1)


def grouped(errors, groups):
    """Per-group and overall summaries of one error value per test."""
    errors = np.asarray(errors, dtype=np.float64)
    groups = np.asarray(groups, dtype=object)
    out = {g: _summary(errors[groups == g]) for g in GROUPS}
    out["overall"] = _summary(errors)
    return out


def pointwise_mae(preds, targets, groups):
    return grouped(per_test_mae(preds, targets), groups)


def md_mae(md_pred, md_true, groups):
    err = np.abs(np.asarray(md_pred, dtype=np.float64) - np.asarray(md_true, dtype=np.float64))
    return grouped(err, groups)


def _members(sector_map):
    if sector_map is None:
        sector_map = default_table()
    if isinstance(sector_map, LocationTable):
        return sector_map.sector_members()
    return {s: np.asarray(sector_map[s], dtype=np.int64) for s in SECTORS}


def sectoral_averages(vf, sector_map=None):
    """Mean td per sector, columns in ``SECTORS`` order. (52,) -> (6,), (N,52) -> (N,6)."""
    vf = np.asarray(vf, dtype=np.float64)
    members = _members(sector_map)
    return np.stack([vf[..., members[s]].mean(axis=-1) for s in SECTORS], axis=-1)


def r2(preds, targets):
    """Coefficient of determination; None when the targets have no variance."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    ss_tot = float(((targets - targets.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return None
    ss_res = float(((targets - preds) ** 2).sum())
    return 1.0 - ss_res / ss_tot


@dataclass
class EvalReport:
    pointwise: dict          # group -> {mae, se, n} | None, plus "overall"
    md: dict                 # same layout, absolute MD error
    sectors: dict            # sector -> {mae, se, n} of sectoral-average error
    r2: dict                 # sector -> R^2 of sectoral mean total deviation | None
    counts: dict
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"pointwise_mae": self.pointwise, "md_mae": self.md,
                "sectoral_mae": self.sectors, "sectoral_r2_total_deviation": self.r2,
                "counts": self.counts, "meta": self.meta}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "key", "value", "se", "n"])
        for name, table in (("pointwise_mae", self.pointwise), ("md_mae", self.md),
                            ("sectoral_mae", self.sectors)):
            for key, s in table.items():
                if s is None:
                    w.writerow([name, key, "", "", 0])
                else:
                    w.writerow([name, key, _fmt(s["mae"]), _fmt(s["se"]), s["n"]])
        for key, v in self.r2.items():
            w.writerow(["sectoral_r2_total_deviation", key, _fmt(v), "", ""])
        return buf.getvalue()

    def write(self, json_path, csv_path=None):
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json() + "\n")
        if csv_path:
            with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.to_csv())


def _fmt(v):
    return "" if v is None else repr(float(v))


def report_from_predictions(vf_pred, md_pred, targets, md_true, sector_map=None, meta=None):
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] == 0:
        raise DataError("cannot evaluate on an empty test set")
    groups = assign_groups(md_true)
    sp = sectoral_averages(vf_pred, sector_map)
    st = sectoral_averages(targets, sector_map)
    sectors, r2s = {}, {}
    for k, s in enumerate(SECTORS):
        sectors[s] = _summary(np.abs(sp[:, k] - st[:, k]))
        r2s[s] = r2(sp[:, k], st[:, k])
    counts = {g: int((groups == g).sum()) for g in GROUPS}
    counts["overall"] = int(len(groups))
    return EvalReport(pointwise_mae(vf_pred, targets, groups), md_mae(md_pred, md_true, groups),
                      sectors, r2s, counts, dict(meta or {}))


def evaluate(predictor, data, sector_map=None, meta=None):
    """Run ``predictor`` over ``data`` and build an :class:`EvalReport`.

    ``predictor`` is a ModelVariant or anything with ``predict(rnfl) -> (vf, md)``;
    ``data`` is a list of exams or an ``(X, Y, md)`` triple. Groups are by true MD.
    """
    x, y, md = to_arrays(data) if isinstance(data, list) else data
    if len(x) == 0:
        raise DataError("cannot evaluate on an empty test set")
    if hasattr(predictor, "predict"):
        vf, md_hat = predictor.predict(x)
    else:
        from .models import predict
        vf, md_hat = predict(predictor, x)
    if sector_map is None:
        sector_map = getattr(predictor, "table", None)
    return report_from_predictions(vf, md_hat, y, md, sector_map, meta)


# ---------------------------------------------------------------------------
# plot data

def md_histogram(md_values, bin_width=1.0, lo=-35.0, hi=5.0):
    """Rows (bin_lo, bin_hi, count); values outside [lo, hi) land in the end bins."""
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    md = np.clip(np.asarray(md_values, dtype=np.float64), lo, hi - 1e-9)
    counts, _ = np.histogram(md, bins=edges)
    return [(float(a), float(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)]


def write_md_histogram_csv(path, md_values, bin_width=1.0):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        w.writerows(md_histogram(md_values, bin_width))


def variant_group_rows(index):
    """Per-group validation MAE by variant, from a registry index dict."""
    rows = []
    for vid, entry in sorted(index["variants"].items()):
        mae = entry["validation_metrics"]["mae"]
        for g in GROUPS:
            v = mae.get(g)
            rows.append((vid, entry["alpha"], entry["beta"], g, "" if v is None else repr(float(v))))
    return rows


def write_variant_group_csv(path, index):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "alpha", "beta", "group", "val_mae"])
        w.writerows(variant_group_rows(index))
