"""Hard-routed ensemble of trained variants.

A router variant predicts MD, the predicted MD picks a severity group, and
the group's expert variant produces the final field and MD. Router and
experts are chosen from validation metrics; the basic (alpha=0, beta=0)
variant never takes part. Ties go to the lexicographically smallest
(alpha, beta).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import models
from .dataio import GROUPS, assign_groups
from .errors import ConfigError, InferenceError, UsageError

SPEC_SCHEMA_VERSION = 1


def _hyper(entry):
    if isinstance(entry, models.ModelVariant):
        return float(entry.hyper["alpha"]), float(entry.hyper["beta"])
    if isinstance(entry, dict):
        return float(entry["alpha"]), float(entry["beta"])
    a, b = entry
    return float(a), float(b)


def _candidates(registry):
    out = {vid: _hyper(e) for vid, e in registry.items()}
    return {vid: ab for vid, ab in out.items() if ab != (0.0, 0.0)}


def _metrics(registry, val_metrics, vid):
    if val_metrics is not None:
        return val_metrics[vid]
    e = registry[vid]
    return e.validation_metrics if isinstance(e, models.ModelVariant) else e["validation_metrics"]


def pick_router(registry, val_metrics=None):
    """Variant with the lowest unweighted mean of per-group validation MD-MAE.

    ``registry`` maps variant id -> (alpha, beta), a registry index entry or a
    ModelVariant; ``val_metrics`` maps variant id -> {"md_mae": {group: value}}
    and defaults to the metrics stored with each entry. Groups absent from the
    validation data are left out of the mean. Returns (variant id, scores).
    """
    cands = _candidates(registry)
    if not cands:
        raise UsageError("no eligible variants to choose a router from")
    scores = {}
    for vid in cands:
        vals = [_metrics(registry, val_metrics, vid)["md_mae"].get(g) for g in GROUPS]
        vals = [v for v in vals if v is not None]
        if not vals:
            raise UsageError(f"variant {vid} has no MD-MAE validation metrics")
        scores[vid] = float(np.mean(vals))
    best = min(cands, key=lambda v: (scores[v], cands[v]))
    return best, scores


def pick_group_experts(registry, val_metrics=None):
    """Per group, the variant with the lowest within-group validation MAE.

    Returns ({group: variant id}, {group: {variant id: mae}}).
    """
    cands = _candidates(registry)
    if not cands:
        raise UsageError("no eligible variants to choose experts from")
    experts, scores = {}, {}
    for g in GROUPS:
        s = {}
        for vid in cands:
            v = _metrics(registry, val_metrics, vid)["mae"].get(g)
            if v is not None:
                s[vid] = float(v)
        if not s:
            raise UsageError(f"no validation MAE recorded for group {g!r}")
        experts[g] = min(s, key=lambda v: (s[v], cands[v]))
        scores[g] = s
    return experts, scores


def route(router, rnfl):
    """Severity group of each input from the router's predicted MD."""
    _, md = models.predict(router, rnfl)
    if not np.isfinite(md).all():
        raise InferenceError("router produced a non-finite MD; cannot route")
    return assign_groups(md)


@dataclass
class EnsembleSpec:
    router: str
    experts: dict
    provenance: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)

    def variant_ids(self):
        return sorted({self.router, *self.experts.values()})

    def to_dict(self):
        return {"schema_version": SPEC_SCHEMA_VERSION, "router": self.router,
                "experts": self.experts, "provenance": self.provenance,
                "checkpoint_sha256": self.hashes}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SPEC_SCHEMA_VERSION:
            raise ConfigError(f"unsupported ensemble schema_version {d.get('schema_version')!r}")
        if set(d["experts"]) != set(GROUPS):
            raise ConfigError(f"ensemble needs one expert per group {GROUPS}")
        return cls(d["router"], dict(d["experts"]), d.get("provenance", {}),
                   d.get("checkpoint_sha256", {}))


def build_spec(registry, val_metrics=None, hashes=None):
    router, router_scores = pick_router(registry, val_metrics)
    experts, expert_scores = pick_group_experts(registry, val_metrics)
    spec = EnsembleSpec(router, experts,
                        {"router_mean_md_mae": router_scores, "group_mae": expert_scores})
    if hashes:
        spec.hashes = {vid: hashes[vid] for vid in spec.variant_ids()}
    return spec


def ensemble_predict(spec, variants, rnfl):
    """Routed prediction: (vf (N,52), md (N,), groups (N,))."""
    missing = [v for v in spec.variant_ids() if v not in variants]
    if missing:
        raise ConfigError(f"ensemble references variants missing from the registry: {missing}")
    rnfl = np.atleast_2d(np.asarray(rnfl, dtype=np.float64))
    groups = route(variants[spec.router], rnfl)
    vf = np.empty((rnfl.shape[0], models.N_LOCATIONS))
    md = np.empty(rnfl.shape[0])
    for g in GROUPS:
        sel = np.flatnonzero(groups == g)
        if sel.size:
            vf[sel], md[sel] = models.predict(variants[spec.experts[g]], rnfl[sel])
    return vf, md, groups


class Ensemble:
    """Spec plus loaded variants, usable wherever a predictor is expected."""

    def __init__(self, spec, variants):
        self.spec = spec
        self.variants = {v: variants[v] for v in spec.variant_ids()}
        self.table = self.variants[spec.router].table

    def predict(self, rnfl):
        vf, md, _ = ensemble_predict(self.spec, self.variants, rnfl)
        return vf, md
