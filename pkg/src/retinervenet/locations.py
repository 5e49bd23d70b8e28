"""24-2 visual-field geometry: coordinates, recursive-pass schedule, sectors.

Coordinates are right-eye (OD) orientation in grid units (1 unit = 6 degrees,
adjacent locations 1 apart); the blind spot sits at x = +2.5 and its two grid
points are absent. Canonical index order is row-major from the top row,
left (nasal) to right, giving superior-field locations 0..25 and
inferior-field locations 26..51.

The shipped table is ``data/locations_24_2.json``; :func:`build_default_table`
regenerates it.
"""

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigError

N_LOCATIONS = 52
N_HEMI = 26
N_PASSES = 7
N_SLOTS = 5
KEPT_PER_PASS = (5, 4, 4, 4, 4, 4, 1)
BLIND_SPOT_X = 2.5
SECTORS = ("central", "temporal", "inferior", "inferior_nasal", "superior", "superior_nasal")
HEMIFIELDS = ("superior", "inferior")

# columns per row, right-eye layout (nasal field at negative x)
_ROWS = (
    (3.5, (-1.5, 1.5)),
    (2.5, (-2.5, 2.5)),
    (1.5, (-3.5, 3.5)),
    (0.5, (-4.5, 3.5)),
)


def _grid_points():
    pts = []
    for y, (lo, hi) in _ROWS:
        xs = np.arange(lo, hi + 0.5, 1.0)
        pts.extend((float(x), y) for x in xs)
    for y, (lo, hi) in reversed(_ROWS):
        xs = np.arange(lo, hi + 0.5, 1.0)
        pts.extend((float(x), -y) for x in xs)
    # drop the blind-spot pair
    return [(x, y) for x, y in pts if not (x == BLIND_SPOT_X and abs(y) == 0.5)]


def _sector(x, y):
    if x >= 2.5 and abs(y) <= 1.5:
        return "temporal"
    if abs(x) <= 1.5 and abs(y) == 0.5:
        return "central"
    if y > 0:
        return "superior_nasal" if x <= -2.5 else "superior"
    return "inferior_nasal" if x <= -2.5 else "inferior"


def build_default_table():
    """Location records for the default geometry (see module docstring)."""
    pts = _grid_points()
    records = []
    for idx, (x, y) in enumerate(pts):
        records.append({"index": idx, "x": x, "y": y,
                        "hemifield": "superior" if y > 0 else "inferior",
                        "sector": _sector(x, y)})
    for hemi in HEMIFIELDS:
        members = [r for r in records if r["hemifield"] == hemi]
        bs_y = 0.5 if hemi == "superior" else -0.5

        def dist(r):
            return math.hypot(r["x"] - BLIND_SPOT_X, r["y"] - bs_y)

        order = sorted(members, key=lambda r: (round(dist(r), 9), abs(r["y"]), -r["x"]))
        pos = 0
        for t, kept in enumerate(KEPT_PER_PASS):
            group = order[pos:pos + kept]
            pos += kept
            group.sort(key=lambda r: (abs(r["y"]), -r["x"]))
            for s, r in enumerate(group):
                r["pass"] = t + 1
                r["slot"] = s
    return records


def table_path():
    return resources.files("retinervenet") / "data" / "locations_24_2.json"


def load_table(path=None):
    if path is None:
        text = table_path().read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    records = doc["locations"] if isinstance(doc, dict) else doc
    return LocationTable(records)


@dataclass(frozen=True)
class PassSchedule:
    """Maps each hemifield's 26 locations to kept (pass, slot) outputs.

    ``gather[h]`` indexes the flattened (7 passes x 5 slots) output of the
    sub-network serving hemifield ``h``; entry m is the output for the m-th
    location of that hemifield in canonical order.
    """
    kept: tuple
    gather: dict      # hemifield -> int array (26,)
    locations: dict   # hemifield -> int array (26,) of canonical indices

    def pairs(self, hemifield):
        g = self.gather[hemifield]
        return [(int(i) // N_SLOTS + 1, int(i) % N_SLOTS) for i in g]


class LocationTable:
    def __init__(self, records):
        records = sorted(records, key=lambda r: r["index"])
        if [r["index"] for r in records] != list(range(N_LOCATIONS)):
            raise ConfigError("location table must hold indices 0..51 exactly once")
        self.records = records
        self.coords = np.array([[r["x"], r["y"]] for r in records], dtype=np.float64)
        self.hemifield = np.array([r["hemifield"] for r in records])
        self.sector = np.array([r["sector"] for r in records])
        self._validate()
        self.schedule = self._schedule()

    def _validate(self):
        for r in self.records:
            if r["hemifield"] not in HEMIFIELDS:
                raise ConfigError(f"location {r['index']}: bad hemifield {r['hemifield']!r}")
            if r["sector"] not in SECTORS:
                raise ConfigError(f"location {r['index']}: bad sector {r['sector']!r}")
        for h in HEMIFIELDS:
            if int((self.hemifield == h).sum()) != N_HEMI:
                raise ConfigError(f"hemifield {h} must hold {N_HEMI} locations")
        for s in SECTORS:
            if not (self.sector == s).any():
                raise ConfigError(f"sector {s} is empty")

    def _schedule(self):
        gather, locs = {}, {}
        for h in HEMIFIELDS:
            idx = np.flatnonzero(self.hemifield == h)
            seen = set()
            g = []
            for i in idx:
                r = self.records[i]
                t, s = int(r["pass"]), int(r["slot"])
                if not (1 <= t <= N_PASSES) or not (0 <= s < KEPT_PER_PASS[t - 1]):
                    raise ConfigError(f"location {i}: (pass {t}, slot {s}) is not a kept output")
                if (t, s) in seen:
                    raise ConfigError(f"location {i}: (pass {t}, slot {s}) assigned twice")
                seen.add((t, s))
                g.append((t - 1) * N_SLOTS + s)
            if len(seen) != sum(KEPT_PER_PASS):
                raise ConfigError(f"hemifield {h}: schedule is not a bijection")
            gather[h] = np.array(g, dtype=np.int64)
            locs[h] = idx.astype(np.int64)
        return PassSchedule(KEPT_PER_PASS, gather, locs)

    @property
    def distances(self):
        """Distance of each location from the field centre (fixation)."""
        return np.hypot(self.coords[:, 0], self.coords[:, 1])

    def sector_members(self):
        return {s: np.flatnonzero(self.sector == s) for s in SECTORS}

    def to_json(self):
        return json.dumps({"schema_version": 1, "units": "grid (1 = 6 deg), right-eye orientation",
                           "locations": self.records}, indent=1)


_DEFAULT = None


def default_table():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_table()
    return _DEFAULT
