"""Exam files, reliability filtering, patient-grouped splits and MD bucketing.

Exam files are JSON lines, one paired SDOCT/SAP exam per line::

    {"schema_version": 1, "patient_id": "P000001", "eye": "right", "age": 61.2,
     "sdoct_date": "2014-03-02", "sap_date": "2014-04-11", "quality_score": 27.5,
     "fixation_loss_pct": 4.0, "false_positive_pct": 1.5,
     "rnfl": [768 thickness values, micrometres, TSNIT order],
     "td": [52 total-deviation values, dB, canonical location order],
     "md": -2.31, "psd": 1.87}

Fields of ``td`` follow the right-eye orientation of the location table; left
eyes are expected to be mirrored upstream.
"""

import datetime as dt
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ParseError

SCHEMA_VERSION = 1
RNFL_LENGTH = 768
N_LOCATIONS = 52
TD_BOUNDS = (-40.0, 10.0)

MAX_FIXATION_LOSS = 33.0
MAX_FALSE_POSITIVE = 15.0
MIN_QUALITY = 15.0
MAX_PAIRING_DAYS = 180

GROUPS = ("early", "moderate", "advanced")
REQUIRED_FIELDS = ("schema_version", "patient_id", "eye", "age", "sdoct_date", "sap_date",
                   "quality_score", "fixation_loss_pct", "false_positive_pct",
                   "rnfl", "td", "md", "psd")


@dataclass
class RnflVector:
    values: np.ndarray
    quality_score: float


@dataclass
class VisualField:
    td: np.ndarray
    md: float
    psd: float


@dataclass
class PairedExam:
    patient_id: str
    eye: str
    age: float
    sdoct_date: dt.date
    sap_date: dt.date
    rnfl: RnflVector
    vf: VisualField
    fixation_loss_pct: float
    false_positive_pct: float

    @property
    def date_gap_days(self):
        return abs((self.sdoct_date - self.sap_date).days)

    def to_record(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "patient_id": self.patient_id,
            "eye": self.eye,
            "age": float(self.age),
            "sdoct_date": self.sdoct_date.isoformat(),
            "sap_date": self.sap_date.isoformat(),
            "quality_score": float(self.rnfl.quality_score),
            "fixation_loss_pct": float(self.fixation_loss_pct),
            "false_positive_pct": float(self.false_positive_pct),
            "rnfl": [float(v) for v in self.rnfl.values],
            "td": [float(v) for v in self.vf.td],
            "md": float(self.vf.md),
            "psd": float(self.vf.psd),
        }


# ---------------------------------------------------------------------------
# parsing

def _real(rec, name, line):
    v = rec[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError("expected a number", line, name)
    v = float(v)
    if not math.isfinite(v):
        raise ParseError("non-finite value", line, name)
    return v


def _vector(rec, name, length, line):
    v = rec[name]
    if not isinstance(v, list):
        raise ParseError("expected a list", line, name)
    if len(v) != length:
        hint = ""
        if name == "td" and len(v) == 54:
            hint = " (the two blind-spot points must be removed before export)"
        raise ParseError(f"expected {length} values, got {len(v)}{hint}", line, name)
    if any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ParseError("non-numeric entry", line, name)
    arr = np.asarray(v, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ParseError("non-finite value", line, name)
    return arr


def _date(rec, name, line):
    try:
        return dt.date.fromisoformat(str(rec[name]))
    except ValueError:
        raise ParseError(f"not an ISO-8601 date: {rec[name]!r}", line, name) from None


def exam_from_record(rec, line=None):
    if not isinstance(rec, dict):
        raise ParseError("expected a JSON object", line)
    for name in REQUIRED_FIELDS:
        if name not in rec:
            raise ParseError("missing field", line, name)
    if rec["schema_version"] != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {rec['schema_version']!r}", line, "schema_version")
    eye = rec["eye"]
    if eye not in ("left", "right"):
        raise ParseError(f"eye must be 'left' or 'right', got {eye!r}", line, "eye")
    rnfl = _vector(rec, "rnfl", RNFL_LENGTH, line)
    if (rnfl < 0).any():
        raise ParseError("negative thickness", line, "rnfl")
    td = _vector(rec, "td", N_LOCATIONS, line)
    if td.min() < TD_BOUNDS[0] or td.max() > TD_BOUNDS[1]:
        raise ParseError(f"td outside sanity bounds {TD_BOUNDS}", line, "td")
    return PairedExam(
        patient_id=str(rec["patient_id"]),
        eye=eye,
        age=_real(rec, "age", line),
        sdoct_date=_date(rec, "sdoct_date", line),
        sap_date=_date(rec, "sap_date", line),
        rnfl=RnflVector(rnfl, _real(rec, "quality_score", line)),
        vf=VisualField(td, _real(rec, "md", line), _real(rec, "psd", line)),
        fixation_loss_pct=_real(rec, "fixation_loss_pct", line),
        false_positive_pct=_real(rec, "false_positive_pct", line),
    )


def parse_exams(path):
    exams = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except ValueError as exc:
                raise ParseError(f"invalid JSON: {exc}", lineno) from None
            exams.append(exam_from_record(rec, lineno))
    return exams


def write_exams(path, exams):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for exam in exams:
            fh.write(json.dumps(exam.to_record(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# filtering

def rejection_reasons(exam):
    reasons = []
    if exam.fixation_loss_pct > MAX_FIXATION_LOSS:
        reasons.append("fixation_loss")
    if exam.false_positive_pct > MAX_FALSE_POSITIVE:
        reasons.append("false_positive")
    if exam.rnfl.quality_score < MIN_QUALITY:
        reasons.append("quality")
    if exam.date_gap_days > MAX_PAIRING_DAYS:
        reasons.append("pairing_window")
    return reasons


def reliability_filter(exams):
    """Split into (kept, [(exam, reasons), ...])."""
    kept, rejected = [], []
    for exam in exams:
        reasons = rejection_reasons(exam)
        if reasons:
            rejected.append((exam, reasons))
        else:
            kept.append(exam)
    return kept, rejected


# ---------------------------------------------------------------------------
# MD bucketing

def assign_interval(md):
    """Training interval 1..4 for the pair weights; md = -26 is placed in 3."""
    md = float(md)
    if not math.isfinite(md):
        raise DataError(f"non-finite MD value {md}")
    if md > -6.0:
        return 1
    if md > -16.0:
        return 2
    if md >= -26.0:
        return 3
    return 4


def assign_intervals(md_values):
    md = np.asarray(md_values, dtype=np.float64)
    if not np.isfinite(md).all():
        raise DataError("non-finite MD value")
    out = np.full(md.shape, 4, dtype=np.int64)
    out[md >= -26.0] = 3
    out[md > -16.0] = 2
    out[md > -6.0] = 1
    return out


def assign_group(md):
    """Severity group: early (> -6), moderate (-12, -6], advanced (<= -12)."""
    md = float(md)
    if not math.isfinite(md):
        raise DataError(f"non-finite MD value {md}")
    if md > -6.0:
        return "early"
    if md > -12.0:
        return "moderate"
    return "advanced"


def assign_groups(md_values):
    md = np.asarray(md_values, dtype=np.float64)
    if not np.isfinite(md).all():
        raise DataError("non-finite MD value")
    out = np.full(md.shape, "advanced", dtype=object)
    out[md > -12.0] = "moderate"
    out[md > -6.0] = "early"
    return out


# ---------------------------------------------------------------------------
# splitting

@dataclass
class SplitStats:
    counts: dict
    interval_counts: dict
    group_counts: dict
    patients: dict = field(default_factory=dict)

    def to_dict(self):
        return {"counts": self.counts, "interval_counts": self.interval_counts,
                "group_counts": self.group_counts, "patients": self.patients}


SPLIT_NAMES = ("train", "val", "test")


def split_by_patient(exams, fractions=(0.6, 0.2, 0.2), seed=0):
    """Patient-grouped train/val/test split.

    Patients are shuffled with a seeded generator and each is given to the
    split furthest below its exam-count target (ties -> earlier split).
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    by_patient = {}
    for i, exam in enumerate(exams):
        by_patient.setdefault(exam.patient_id, []).append(i)
    patients = sorted(by_patient)
    if len(patients) < 3:
        raise ConfigError(f"need at least 3 patients to split, got {len(patients)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patients))
    total = len(exams)
    targets = np.array(fractions) * total
    filled = np.zeros(3)
    members = ([], [], [])
    owners = ([], [], [])
    for k in order:
        pid = patients[k]
        idx = by_patient[pid]
        s = int(np.argmax(targets - filled))
        filled[s] += len(idx)
        members[s].extend(idx)
        owners[s].append(pid)
    splits = tuple([exams[i] for i in sorted(m)] for m in members)
    stats = split_stats(splits)
    stats.patients = {name: sorted(o) for name, o in zip(SPLIT_NAMES, owners)}
    return splits[0], splits[1], splits[2], stats


def split_stats(splits):
    counts, ivs, groups = {}, {}, {}
    for name, part in zip(SPLIT_NAMES, splits):
        md = np.array([e.vf.md for e in part])
        counts[name] = len(part)
        iv = assign_intervals(md) if len(md) else np.zeros(0, dtype=int)
        ivs[name] = [int((iv == k).sum()) for k in range(1, 5)]
        gr = assign_groups(md) if len(md) else np.zeros(0, dtype=object)
        groups[name] = {g: int((gr == g).sum()) for g in GROUPS}
    return SplitStats(counts, ivs, groups)


# ---------------------------------------------------------------------------

def to_arrays(exams):
    """Stack exams into X (N,768), Y (N,52), md (N,)."""
    if not exams:
        return np.zeros((0, RNFL_LENGTH)), np.zeros((0, N_LOCATIONS)), np.zeros(0)
    x = np.stack([e.rnfl.values for e in exams])
    y = np.stack([e.vf.td for e in exams])
    md = np.array([e.vf.md for e in exams], dtype=np.float64)
    return x, y, md
