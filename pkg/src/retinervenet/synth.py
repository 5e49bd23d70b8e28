"""Synthetic paired RNFL / visual-field exams with a known ground truth.

Generator model, per eye:

* healthy thickness is a fixed double-hump TSNIT profile (:func:`baseline_profile`);
* 0-3 arcuate wedge defects remove a fraction ``depth`` of tissue over an arc;
  overlapping wedges take the max loss, and at most ``ATROPHY`` of the
  thickness can be lost (the measurement floor);
* each field location reads the mean loss over a fixed window of the RNFL
  half serving its hemifield (:func:`location_windows`), and its clean
  total deviation is ``-SLOPE * max(0, loss - DEAD_ZONE) / (1 - DEAD_ZONE)``
  capped at ``-SATURATION``;
* field noise is Gaussian with sd ``NOISE_BASE + NOISE_GAIN * |clean td|``;
  thickness noise is Gaussian with sd ``RNFL_NOISE``.

MD is the plain mean of the noisy td values. Each eye is drawn for a target
MD interval (``defect_mix``) and redrawn until its first visit lands there.
"""

import datetime as dt

import numpy as np

from .dataio import (N_LOCATIONS, RNFL_LENGTH, PairedExam, RnflVector, VisualField,
                     assign_interval)
from .errors import ConfigError
from .locations import BLIND_SPOT_X, default_table

HALF = RNFL_LENGTH // 2
ATROPHY = 0.7
DEAD_ZONE = 0.05
SLOPE = 34.0
SATURATION = 33.0
NOISE_BASE = 1.0
NOISE_GAIN = 0.12
RNFL_NOISE = 1.5
WINDOW_HALF_WIDTH = 12
TD_CLIP = (-38.0, 8.0)
DEFAULT_MIX = (0.70, 0.15, 0.10, 0.05)

# wedge proposals per target interval: (n_defects choices, width range, depth range)
_PROPOSALS = {
    1: ((0, 0, 0, 1), (20, 70), (0.05, 0.35)),
    2: ((1, 2), (60, 180), (0.35, 0.8)),
    3: ((2, 3), (140, 300), (0.6, 1.0)),
    4: ((3,), (260, 384), (0.85, 1.0)),
}


def _circ_dist(i, centre):
    d = np.abs(i - centre) % RNFL_LENGTH
    return np.minimum(d, RNFL_LENGTH - d)


def baseline_profile():
    """Healthy thickness (micrometres) at the 768 TSNIT positions."""
    i = np.arange(RNFL_LENGTH, dtype=np.float64)

    def bump(c, s):
        return np.exp(-0.5 * (_circ_dist(i, c) / s) ** 2)

    return 55.0 + 80.0 * bump(192, 60) + 85.0 * bump(576, 60) + 10.0 * bump(384, 80)


def location_windows(table=None):
    """For each of the 52 locations, the RNFL indices whose loss it reads.

    Superior-field locations read the inferior half (384..767), inferior-field
    locations the superior half (0..383). Within a half the window centre
    follows the location's polar angle about the blind spot: points beside
    the raphe on the nasal side of the blind spot read near the temporal end,
    points temporal to the blind spot read near the nasal end.
    """
    table = table or default_table()
    windows = []
    for (x, y) in table.coords:
        phi = np.arctan2(abs(y), -(x - BLIND_SPOT_X))   # 0 .. pi
        frac = phi / np.pi
        if y < 0:
            centre = frac * (HALF - 1)
            lo, hi = 0, HALF
        else:
            centre = (RNFL_LENGTH - 1) - frac * (HALF - 1)
            lo, hi = HALF, RNFL_LENGTH
        c = int(round(centre))
        idx = np.arange(max(lo, c - WINDOW_HALF_WIDTH), min(hi, c + WINDOW_HALF_WIDTH + 1))
        windows.append(idx)
    return windows


def loss_profile(defects):
    """Fractional tissue loss (0..1) around the circle for a list of wedges."""
    i = np.arange(RNFL_LENGTH, dtype=np.float64)
    loss = np.zeros(RNFL_LENGTH)
    for centre, width, depth in defects:
        inside = _circ_dist(i, centre) <= width / 2.0
        loss = np.where(inside, np.maximum(loss, depth), loss)
    return loss


def clean_field(loss, windows):
    """Noise-free td (dB) implied by a loss profile."""
    loc_loss = np.array([loss[w].mean() for w in windows])
    dep = SLOPE * np.maximum(0.0, loc_loss - DEAD_ZONE) / (1.0 - DEAD_ZONE)
    return -np.minimum(dep, SATURATION)


def noise_sd(clean_td):
    return NOISE_BASE + NOISE_GAIN * np.abs(clean_td)


def oracle_predict(rnfl, table=None):
    """Invert the generator: recover clean td from thickness alone."""
    rnfl = np.atleast_2d(np.asarray(rnfl, dtype=np.float64))
    base = baseline_profile()
    loss = np.clip((1.0 - rnfl / base) / ATROPHY, 0.0, 1.0)
    windows = location_windows(table)
    out = np.empty((rnfl.shape[0], N_LOCATIONS))
    for k, row in enumerate(loss):
        out[k] = clean_field(row, windows)
    return out


def _draw_defects(rng, interval):
    choices, (wlo, whi), (dlo, dhi) = _PROPOSALS[interval]
    n = int(rng.choice(choices))
    defects = []
    for _ in range(n):
        # arcuate damage concentrates at the poles
        pole = 192.0 if rng.random() < 0.5 else 576.0
        centre = (pole + rng.normal(0.0, 60.0)) % RNFL_LENGTH
        defects.append((float(centre), float(rng.uniform(wlo, whi)), float(rng.uniform(dlo, dhi))))
    return defects


def _observe(rng, loss, windows):
    base = baseline_profile()
    thick = base * (1.0 - ATROPHY * loss) + rng.normal(0.0, RNFL_NOISE, RNFL_LENGTH)
    thick = np.round(np.maximum(thick, 0.0), 2)
    clean = clean_field(loss, windows)
    td = clean + rng.normal(0.0, 1.0, N_LOCATIONS) * noise_sd(clean)
    td = np.round(np.clip(td, *TD_CLIP), 2)
    return thick, td


def exam_from_defects(defects, rng, table=None, **meta):
    """One exam for a given wedge list (used by the generator and by tests)."""
    windows = location_windows(table)
    thick, td = _observe(rng, loss_profile(defects), windows)
    return _make_exam(thick, td, rng, **meta)


def _make_exam(thick, td, rng, patient_id="P000000", eye="right", age=60.0, visit_day=0):
    md = float(td.mean())
    psd = float(td.std(ddof=1))
    sdoct = dt.date(2010, 1, 1) + dt.timedelta(days=int(visit_day))
    sap = sdoct + dt.timedelta(days=int(rng.integers(-150, 151)))
    return PairedExam(
        patient_id=patient_id, eye=eye, age=round(float(age), 1),
        sdoct_date=sdoct, sap_date=sap,
        rnfl=RnflVector(thick, round(float(rng.uniform(18.0, 40.0)), 1)),
        vf=VisualField(td, md, psd),
        fixation_loss_pct=round(float(rng.uniform(0.0, 25.0)), 1),
        false_positive_pct=round(float(rng.uniform(0.0, 10.0)), 1),
    )


def synth_generate(n, seed=0, defect_mix=DEFAULT_MIX, table=None, max_tries=400):
    """``n`` exams grouped into patients (1-2 eyes, 1-3 visits per eye)."""
    mix = np.asarray(defect_mix, dtype=np.float64)
    if mix.shape != (4,) or (mix < 0).any() or abs(mix.sum() - 1.0) > 1e-9:
        raise ConfigError(f"defect_mix must be 4 non-negative proportions summing to 1, got {defect_mix}")
    if n < 0:
        raise ConfigError("n must be non-negative")
    rng = np.random.default_rng(seed)
    windows = location_windows(table)
    exams = []
    patient = 0
    while len(exams) < n:
        patient += 1
        pid = f"P{patient:06d}"
        age = rng.uniform(25.0, 85.0)
        n_eyes = 1 if rng.random() < 0.4 else 2
        for eye in ("right", "left")[:n_eyes]:
            target = int(rng.choice(4, p=mix)) + 1
            n_visits = int(rng.choice((1, 2, 3), p=(0.5, 0.3, 0.2)))
            day0 = int(rng.integers(0, 3000))
            for _ in range(max_tries):
                loss = loss_profile(_draw_defects(rng, target))
                thick, td = _observe(rng, loss, windows)
                if assign_interval(td.mean()) == target:
                    break
            for v in range(n_visits):
                if len(exams) >= n:
                    break
                if v > 0:
                    thick, td = _observe(rng, loss, windows)
                day = day0 + 200 * v
                exams.append(_make_exam(thick, td, rng, pid, eye, age + day / 365.25, day))
    return exams
