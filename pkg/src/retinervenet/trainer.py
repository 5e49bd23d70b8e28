"""Training loop, run selection and (alpha, beta) grid orchestration."""

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import models, objective
from .dataio import GROUPS, assign_groups, assign_intervals, to_arrays
from .errors import ConfigError, TrainingError, UsageError
from .evalkit import md_mae, pointwise_mae
from .params import AdamState, adam_step

GRID_VALUES = (0.01, 0.25, 0.5, 0.75, 0.99)
CONFIG_SCHEMA_VERSION = 1
INDEX_NAME = "index.json"


@dataclass
class TrainConfig:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 5.0
    max_epochs: int = 2000
    patience: int = 50
    lr: float = 1e-3
    batch_size: int = 256
    seeds: tuple = (0, 1, 2, 3, 4)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = "retinervenet"
    model_config: dict = None
    init_output_bias: bool = True

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    def validate(self):
        if int(self.max_epochs) < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if int(self.patience) < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {list(self.seeds)}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.kind not in models.KINDS or self.kind == "generator_oracle":
            raise ConfigError(f"cannot train model kind {self.kind!r}")

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d, **overrides):
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version must be {CONFIG_SCHEMA_VERSION}, got {version!r}")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**d)

    def with_hyper(self, alpha, beta, gamma=None):
        d = asdict(self)
        d.update(alpha=float(alpha), beta=float(beta))
        if gamma is not None:
            d["gamma"] = float(gamma)
        return TrainConfig(**d)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)       # per epoch: {group: mae | None}
    best_epoch: int = -1                              # 1-based
    best_val_loss: float = float("inf")
    stop_reason: str = ""
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def _arrays(data):
    if isinstance(data, (list, tuple)) and (len(data) == 0 or not isinstance(data[0], np.ndarray)):
        return to_arrays(list(data))
    x, y, md = data
    return (np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64),
            np.asarray(md, dtype=np.float64))


def fit_normalization(x):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    return {"mean": mean, "std": std}


def validation_weights(md, alpha):
    """Pair weights for the validation loss.

    The training formula, using the validation set's own interval counts;
    intervals absent from the validation set are dropped from the alpha term
    so the weights still sum to one.
    """
    iv = assign_intervals(md)
    counts = np.array([(iv == k).sum() for k in range(1, 5)], dtype=np.float64)
    n = counts.sum()
    populated = int((counts > 0).sum())
    return (1.0 - alpha) / n + alpha / (populated * counts[iv - 1])


def _init_output_bias(model, y):
    """Start the output layer at the mean training td of the field it predicts."""
    sched = model.table.schedule
    for sub in models.SUBNETS:
        mean = float(y[:, sched.locations[models.SUBNET_FIELD[sub]]].mean())
        if model.kind in ("retinervenet", "vanilla_conv"):
            name = f"{sub}.b4.b"
        elif model.kind == "fully_connected":
            name = f"{sub}.fc{len(model.config['hidden'])}.b"
        else:
            continue
        model.params[name] = np.full_like(model.params[name], mean)


def _predict_normalized(model, xn, chunk=256):
    vfs, mds = [], []
    for s in range(0, xn.shape[0], chunk):
        vf, md = models.forward(model, xn[s:s + chunk])
        vfs.append(np.atleast_2d(vf))
        mds.append(np.atleast_1d(md))
    return np.concatenate(vfs), np.concatenate(mds)


def composite_value(vf, md_hat, y, md, lam, rho, beta):
    return objective.total_loss(objective.vf_loss(vf, y, lam, rho),
                                objective.md_loss(md_hat, md, lam), beta)


def validation_metrics(vf, md_hat, y, md):
    groups = assign_groups(md)
    pw = pointwise_mae(vf, y, groups)
    mm = md_mae(md_hat, md, groups)
    keys = GROUPS + ("overall",)
    return {
        "mae": {g: None if pw[g] is None else pw[g]["mae"] for g in keys},
        "mae_se": {g: None if pw[g] is None else pw[g]["se"] for g in keys},
        "md_mae": {g: None if mm[g] is None else mm[g]["mae"] for g in keys},
        "counts": {g: 0 if pw[g] is None else pw[g]["n"] for g in keys},
    }


def train(model, train_set, val_set, config, seed=None, callback=None):
    """Minimise the composite loss with Adam; returns (model, TrainHistory).

    ``train_set``/``val_set`` are exam lists or ``(X, Y, md)`` triples with raw
    thickness values. ``model`` is modified in place: normalization is fitted
    on the training inputs and, at the end, parameters are restored from the
    epoch with the lowest validation loss. ``callback(epoch, history, model)``
    runs after every epoch and may return True to stop.
    """
    seed = config.seeds[0] if seed is None else int(seed)
    x, y, md = _arrays(train_set)
    xv, yv, mdv = _arrays(val_set)
    if len(x) == 0 or len(xv) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    norm = fit_normalization(x)
    model.normalization = norm
    model.hyper = {"alpha": float(config.alpha), "beta": float(config.beta), "gamma": float(config.gamma)}
    if config.init_output_bias:
        _init_output_bias(model, y)
    xn = (x - norm["mean"]) / norm["std"]
    xvn = (xv - norm["mean"]) / norm["std"]

    lam = objective.sample_weights(md, config.alpha)
    lam_val = validation_weights(mdv, config.alpha)
    rho = objective.location_weights(model.table.distances, config.gamma)

    rng = np.random.default_rng(seed)
    state = AdamState()
    n = len(x)
    bs = min(int(config.batch_size), n)
    hist = TrainHistory(seed=seed)
    best = model.params.copy()
    since_best = 0
    for epoch in range(1, int(config.max_epochs) + 1):
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            tape = ad.Tape(model.params)
            vf, md_hat = models.forward_tape(model, tape, tape.constant(xn[idx]))
            loss = objective.composite_loss_tape(vf, md_hat, y[idx], md[idx],
                                                 lam[idx] * (n / len(idx)), rho, config.beta)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch {b + 1}")
            grads = ad.backward(tape, loss)
            tape.release()
            adam_step(model.params, grads, state, config.lr, config.beta1, config.beta2, config.eps)
            losses.append(value)
        vf_v, md_v = _predict_normalized(model, xvn)
        val_loss = composite_value(vf_v, md_v, yv, mdv, lam_val, rho, config.beta)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_loss.append(float(val_loss))
        hist.val_mae.append(validation_metrics(vf_v, md_v, yv, mdv)["mae"])
        if val_loss < hist.best_val_loss:
            hist.best_val_loss = float(val_loss)
            hist.best_epoch = epoch
            best = model.params.copy()
            since_best = 0
        else:
            since_best += 1
        if callback is not None and callback(epoch, hist, model):
            hist.stop_reason = "callback"
            break
        if since_best > config.patience:
            hist.stop_reason = "early_stopping"
            break
    else:
        hist.stop_reason = "max_epochs"
    model.params = best
    vf_v, md_v = _predict_normalized(model, xvn)
    metrics = validation_metrics(vf_v, md_v, yv, mdv)
    metrics["val_loss"] = float(composite_value(vf_v, md_v, yv, mdv, lam_val, rho, config.beta))
    model.validation_metrics = metrics
    model.meta = {"seed": seed, "best_epoch": hist.best_epoch, "epochs_run": len(hist.val_loss),
                  "stop_reason": hist.stop_reason, "train_config": config.to_dict()}
    return model, hist


def select_best_run(runs):
    """Pick the run with the lowest restored validation loss; ties -> lowest seed.

    ``runs`` holds trained ModelVariants (seed read from ``meta``).
    """
    runs = list(runs)
    if not runs:
        raise UsageError("select_best_run needs at least one run")
    return min(runs, key=lambda m: (m.validation_metrics["val_loss"], m.meta["seed"]))


def train_variant(train_set, val_set, config, table=None):
    """All seeds of one (alpha, beta) point; returns (best model, [(seed, val_loss, history)])."""
    runs, summaries = [], []
    for seed in config.seeds:
        model = models.build(config.kind, config.model_config, table, seed=seed)
        model, hist = train(model, train_set, val_set, config, seed=seed)
        runs.append(model)
        summaries.append({"seed": seed, "val_loss": model.validation_metrics["val_loss"],
                          "best_epoch": hist.best_epoch, "epochs_run": len(hist.val_loss),
                          "stop_reason": hist.stop_reason})
    return select_best_run(runs), summaries


def _grid_job(args):
    train_set, val_set, config, table = args
    return train_variant(train_set, val_set, config, table)


def full_grid(values=GRID_VALUES):
    return [(a, b) for a in values for b in values]


def run_grid(grid, gamma, train_set, val_set, config, out_dir=None, workers=1, table=None):
    """Train every (alpha, beta) point and return the registry index.

    With ``out_dir`` each selected variant is saved as ``<variant_id>.ckpt``
    and the index as ``index.json``. Grid points may run in worker processes;
    results are gathered in grid order so the registry does not depend on
    scheduling.
    """
    points = [(float(a), float(b)) for a, b in grid]
    if not points:
        raise UsageError("empty grid")
    if len(set(points)) != len(points):
        raise ConfigError("grid contains duplicate points")
    train_set, val_set = _arrays(train_set), _arrays(val_set)
    jobs = [(train_set, val_set, config.with_hyper(a, b, gamma), table) for a, b in points]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_grid_job, jobs))
    else:
        results = [_grid_job(j) for j in jobs]
    index = {"schema_version": 1, "gamma": float(gamma), "kind": config.kind,
             "seeds": list(config.seeds), "variants": {}}
    variants = {}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for (a, b), (model, runs) in zip(points, results):
        vid = models.variant_id(a, b)
        entry = {"alpha": a, "beta": b, "gamma": float(gamma), "best_seed": model.meta["seed"],
                 "runs": runs, "validation_metrics": model.validation_metrics}
        if out_dir:
            fname = f"{vid}.ckpt"
            entry["file"] = fname
            entry["sha256"] = models.save_model(model, os.path.join(out_dir, fname))
        index["variants"][vid] = entry
        variants[vid] = model
    if out_dir:
        write_index(os.path.join(out_dir, INDEX_NAME), index)
    return index, variants


def write_index(path, index):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(index, sort_keys=True, indent=1) + "\n")


def load_registry(path):
    """(index, {variant_id: ModelVariant}) with checkpoint hashes verified."""
    from .checkpoint import file_sha256
    from .errors import DataError
    with open(os.path.join(path, INDEX_NAME), encoding="utf-8") as fh:
        index = json.load(fh)
    variants = {}
    for vid, entry in index["variants"].items():
        fpath = os.path.join(path, entry["file"])
        digest = file_sha256(fpath)
        if digest != entry["sha256"]:
            raise DataError(f"checkpoint {entry['file']} hash mismatch")
        variants[vid] = models.load_model(fpath)
    return index, variants


def config_hash(config):
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()
