"""Imbalance- and eccentricity-weighted multi-task loss.

Pair weights favour under-represented MD intervals, location weights favour
the field centre, and the total blends the field loss with the MD loss.
"""

import numpy as np

from . import autodiff as ad
from .dataio import assign_intervals
from .errors import ConfigError

N_INTERVALS = 4


def interval_counts(md_values):
    iv = assign_intervals(md_values)
    return np.array([(iv == k).sum() for k in range(1, N_INTERVALS + 1)], dtype=np.int64)


def sample_weights(md_values, alpha, counts=None):
    """Per-pair weights ``(1-alpha)/N + alpha/(4*N_i)``.

    ``counts`` defaults to the interval counts of ``md_values`` themselves.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    iv = assign_intervals(md_values)
    counts = interval_counts(md_values) if counts is None else np.asarray(counts, dtype=np.int64)
    if counts.shape != (N_INTERVALS,):
        raise ConfigError(f"need {N_INTERVALS} interval counts, got {counts.shape}")
    n = int(counts.sum())
    if n <= 0:
        raise ConfigError("no training pairs")
    if alpha > 0 and (counts == 0).any():
        empty = [k + 1 for k in range(N_INTERVALS) if counts[k] == 0]
        raise ConfigError(f"MD interval(s) {empty} are empty; alpha > 0 needs every interval populated")
    per_pair_count = counts[iv - 1]
    if (per_pair_count == 0).any():
        raise ConfigError("a pair falls in an interval whose count is zero")
    return (1.0 - alpha) / n + alpha / (N_INTERVALS * per_pair_count.astype(np.float64))


def location_weights(distances, gamma):
    """Gaussian-in-eccentricity weights normalised to sum to one."""
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    d = np.asarray(distances, dtype=np.float64)
    logits = -(d * d) / (2.0 * gamma * gamma)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def vf_loss(preds, targets, lam, rho):
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ConfigError(f"prediction shape {preds.shape} != target shape {targets.shape}")
    r = targets - preds
    return float(np.asarray(lam) @ ((r * r) @ np.asarray(rho)))


def md_loss(md_preds, md_true, lam):
    r = np.asarray(md_true, dtype=np.float64) - np.asarray(md_preds, dtype=np.float64)
    return float(np.asarray(lam) @ (r * r))


def total_loss(l_vf, l_md, beta):
    _check_beta(beta)
    return (1.0 - beta) * l_vf + beta * l_md


def _check_beta(beta):
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")


def composite_loss_tape(vf, md, targets, md_true, lam, rho, beta):
    """Record ``(1-beta)*L_VF + beta*L_MD`` on the tape of ``vf``/``md`` Vars."""
    _check_beta(beta)
    l_vf = ad.weighted_sse(vf, targets, lam, rho)
    l_md = ad.weighted_sse(md, md_true, lam)
    return ad.add(ad.scale(l_vf, 1.0 - beta), ad.scale(l_md, beta))
