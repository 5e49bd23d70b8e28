"""``retinn`` command line: synth, split, train, grid, ensemble, eval, predict, plot-data.

Every command writes a ``manifest.json`` (or ``<out>.manifest.json`` for
single-file outputs) listing its inputs and artifacts with SHA-256 hashes.
Failures exit with 2 (config), 3 (data), 4 (training) or 5 (inference)
and print one JSON object on stderr.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, dataio, ensemble, evalkit, models, synth, trainer
from .checkpoint import file_sha256
from .errors import ConfigError, DataError, RetinnError, UsageError
from .locations import load_table

WORKERS_ENV = "RETINN_WORKERS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers

def _floats(text, n=None, what="values"):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"could not parse {what} {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} comma-separated {what}, got {len(vals)}")
    return vals


def _parse_grid(text):
    if text == "full":
        return trainer.full_grid()
    points = []
    for item in text.split(";"):
        a, b = _floats(item, 2, "grid coordinates")
        points.append((a, b))
    return points


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except ValueError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _load_exams(path):
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    return dataio.parse_exams(path)


def _select(exams, split, split_seed, fractions):
    if split == "all":
        return exams
    kept, _ = dataio.reliability_filter(exams)
    parts = dataio.split_by_patient(kept, fractions, split_seed)
    return parts[dataio.SPLIT_NAMES.index(split)]


def _train_config(args):
    base = _read_json(args.config) if args.config else {"schema_version": trainer.CONFIG_SCHEMA_VERSION}
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    return trainer.TrainConfig.from_dict(
        base, alpha=getattr(args, "alpha", None), beta=getattr(args, "beta", None), gamma=args.gamma,
        max_epochs=args.max_epochs, patience=args.patience, lr=args.lr,
        batch_size=args.batch_size, seeds=seeds, kind=args.kind)


def _prepared_splits(args):
    exams = _load_exams(args.data)
    kept, rejected = dataio.reliability_filter(exams)
    train_set, val_set, test_set, stats = dataio.split_by_patient(
        kept, _floats(args.fractions, 3, "split fractions"), args.split_seed)
    info = stats.to_dict()
    info["rejected"] = len(rejected)
    return train_set, val_set, info


def _load_predictor(args):
    if bool(args.model) == bool(args.ensemble):
        raise UsageError("give exactly one of --model or --ensemble")
    if args.model:
        if not os.path.exists(args.model):
            raise DataError(f"file not found: {args.model}")
        return models.load_model(args.model), [args.model]
    if not args.registry:
        raise UsageError("--ensemble needs --registry")
    spec = ensemble.EnsembleSpec.from_dict(_read_json(args.ensemble))
    index, variants = trainer.load_registry(args.registry)
    for vid, digest in spec.hashes.items():
        if index["variants"].get(vid, {}).get("sha256") != digest:
            raise DataError(f"registry checkpoint for {vid} does not match the ensemble spec")
    return ensemble.Ensemble(spec, variants), [args.ensemble, os.path.join(args.registry, trainer.INDEX_NAME)]


class Manifest:
    def __init__(self, command, args, seed=None, config=None):
        self.start = time.perf_counter()
        self.doc = {"command": command, "version": __version__, "seed": seed,
                    "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
                    "config_sha256": None if config is None else
                    hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
                    "inputs": {}, "artifacts": {}}

    def input(self, path):
        self.doc["inputs"][path] = file_sha256(path)

    def artifact(self, path):
        self.doc["artifacts"][path] = file_sha256(path)

    def write(self, path):
        self.doc["wall_clock_s"] = round(time.perf_counter() - self.start, 3)
        _write_json(path, self.doc)


def _beside(path):
    return path + ".manifest.json"


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args):
    mix = _floats(args.mix, 4, "mix proportions")
    exams = synth.synth_generate(args.n, args.seed, mix)
    dataio.write_exams(args.out, exams)
    man = Manifest("synth", args, seed=args.seed)
    man.artifact(args.out)
    man.write(_beside(args.out))


def cmd_split(args):
    exams = _load_exams(args.data)
    kept, rejected = dataio.reliability_filter(exams)
    parts = dataio.split_by_patient(kept, _floats(args.fractions, 3, "split fractions"), args.split_seed)
    os.makedirs(args.out, exist_ok=True)
    man = Manifest("split", args, seed=args.split_seed)
    man.input(args.data)
    for name, part in zip(dataio.SPLIT_NAMES, parts[:3]):
        p = os.path.join(args.out, f"{name}.jsonl")
        dataio.write_exams(p, part)
        man.artifact(p)
    info = parts[3].to_dict()
    info["rejected"] = [{"patient_id": e.patient_id, "eye": e.eye, "sdoct_date": e.sdoct_date.isoformat(),
                         "reasons": r} for e, r in rejected]
    p = os.path.join(args.out, "split_stats.json")
    _write_json(p, info)
    man.artifact(p)
    man.write(os.path.join(args.out, "manifest.json"))


def cmd_train(args):
    config = _train_config(args)
    train_set, val_set, info = _prepared_splits(args)
    os.makedirs(args.out, exist_ok=True)
    runs, summaries, histories = [], [], {}
    for seed in config.seeds:
        model = models.build(config.kind, config.model_config, seed=seed)
        model, hist = trainer.train(model, train_set, val_set, config, seed=seed)
        runs.append(model)
        histories[str(seed)] = hist.to_dict()
        summaries.append({"seed": seed, "val_loss": model.validation_metrics["val_loss"]})
    best = trainer.select_best_run(runs)
    man = Manifest("train", args, seed=args.split_seed, config=config.to_dict())
    man.input(args.data)
    if args.config:
        man.input(args.config)
    ckpt = os.path.join(args.out, "model.ckpt")
    models.save_model(best, ckpt)
    man.artifact(ckpt)
    hp = os.path.join(args.out, "history.json")
    _write_json(hp, {"best_seed": best.meta["seed"], "runs": summaries, "histories": histories, "split": info})
    man.artifact(hp)
    man.write(os.path.join(args.out, "manifest.json"))


def cmd_grid(args):
    config = _train_config(args)
    train_set, val_set, info = _prepared_splits(args)
    workers = args.workers if args.workers is not None else int(os.environ.get(WORKERS_ENV, "1"))
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    index, _ = trainer.run_grid(_parse_grid(args.grid), config.gamma, train_set, val_set, config,
                                out_dir=args.out, workers=workers)
    man = Manifest("grid", args, seed=args.split_seed, config=config.to_dict())
    man.input(args.data)
    if args.config:
        man.input(args.config)
    for entry in index["variants"].values():
        man.artifact(os.path.join(args.out, entry["file"]))
    man.artifact(os.path.join(args.out, trainer.INDEX_NAME))
    sp = os.path.join(args.out, "split_stats.json")
    _write_json(sp, info)
    man.artifact(sp)
    man.write(os.path.join(args.out, "manifest.json"))


def cmd_ensemble(args):
    index, variants = trainer.load_registry(args.registry)
    val_metrics = None
    if args.val_data:
        exams = _select(_load_exams(args.val_data), args.split, args.split_seed,
                        _floats(args.fractions, 3, "split fractions"))
        x, y, md = dataio.to_arrays(exams)
        if len(x) == 0:
            raise DataError("validation data is empty")
        val_metrics = {}
        for vid, m in variants.items():
            vf, md_hat = models.predict(m, x)
            val_metrics[vid] = trainer.validation_metrics(vf, md_hat, y, md)
    hashes = {vid: e["sha256"] for vid, e in index["variants"].items()}
    spec = ensemble.build_spec(index["variants"], val_metrics, hashes)
    _write_json(args.out, spec.to_dict())
    man = Manifest("ensemble", args)
    man.input(os.path.join(args.registry, trainer.INDEX_NAME))
    if args.val_data:
        man.input(args.val_data)
    man.artifact(args.out)
    man.write(_beside(args.out))


def cmd_eval(args):
    predictor, inputs = _load_predictor(args)
    exams = _select(_load_exams(args.data), args.split, args.split_seed,
                    _floats(args.fractions, 3, "split fractions"))
    table = load_table(args.sector_map) if args.sector_map else None
    report = evalkit.evaluate(predictor, exams, table)
    csv_path = os.path.splitext(args.report)[0] + ".csv"
    report.write(args.report, csv_path)
    man = Manifest("eval", args)
    for p in inputs + [args.data] + ([args.sector_map] if args.sector_map else []):
        man.input(p)
    man.artifact(args.report)
    man.artifact(csv_path)
    man.write(_beside(args.report))


def _read_rnfl(path):
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except ValueError as exc:
                raise dataio.ParseError(f"invalid JSON: {exc}", lineno) from None
            if not isinstance(rec, dict) or "rnfl" not in rec:
                raise dataio.ParseError("missing field", lineno, "rnfl")
            vec = dataio._vector(rec, "rnfl", dataio.RNFL_LENGTH, lineno)
            rows.append(vec)
            ids.append(rec.get("id", rec.get("patient_id", str(lineno))))
    return ids, (np.stack(rows) if rows else np.zeros((0, dataio.RNFL_LENGTH)))


def cmd_predict(args):
    predictor, inputs = _load_predictor(args)
    ids, x = _read_rnfl(args.rnfl_file)
    if isinstance(predictor, ensemble.Ensemble):
        vf, md, groups = ensemble.ensemble_predict(predictor.spec, predictor.variants, x)
    else:
        vf, md = models.predict(predictor, x)
        groups = dataio.assign_groups(md) if len(md) else []
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for i, rid in enumerate(ids):
            fh.write(json.dumps({"id": rid, "td": [float(v) for v in vf[i]], "md": float(md[i]),
                                 "predicted_group": str(groups[i])}, sort_keys=True) + "\n")
    man = Manifest("predict", args)
    for p in inputs + [args.rnfl_file]:
        man.input(p)
    man.artifact(args.out)
    man.write(_beside(args.out))


def cmd_plot_data(args):
    os.makedirs(args.out, exist_ok=True)
    man = Manifest("plot-data", args)
    if args.data:
        exams = _load_exams(args.data)
        p = os.path.join(args.out, "md_histogram.csv")
        evalkit.write_md_histogram_csv(p, [e.vf.md for e in exams], args.bin_width)
        man.input(args.data)
        man.artifact(p)
    if args.registry:
        ip = os.path.join(args.registry, trainer.INDEX_NAME)
        index = _read_json(ip)
        p = os.path.join(args.out, "variant_group_mae.csv")
        evalkit.write_variant_group_csv(p, index)
        man.input(ip)
        man.artifact(p)
    if not (args.data or args.registry):
        raise UsageError("plot-data needs --data and/or --registry")
    man.write(os.path.join(args.out, "manifest.json"))


def cmd_oracle(args):
    model = models.build("generator_oracle")
    models.save_model(model, args.out)
    man = Manifest("oracle", args)
    man.artifact(args.out)
    man.write(_beside(args.out))


# ---------------------------------------------------------------------------

def _split_flags(p, with_split=False):
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--fractions", default="0.6,0.2,0.2")
    if with_split:
        p.add_argument("--split", choices=("all",) + dataio.SPLIT_NAMES, default="all",
                       help="evaluate on one split of --data (after reliability filtering)")


def _train_flags(p):
    p.add_argument("--data", required=True)
    _split_flags(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--config", help="JSON training config with schema_version; flags override it")
    p.add_argument("--kind", choices=[k for k in models.KINDS if k != "generator_oracle"])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seeds", help="comma-separated run seeds")
    p.add_argument("--out", required=True)


def _predictor_flags(p):
    p.add_argument("--model")
    p.add_argument("--ensemble")
    p.add_argument("--registry")


def build_parser():
    ap = _Parser(prog="retinn", description="Estimate visual-field total deviation from RNFL thickness.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic exam file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mix", default=",".join(str(v) for v in synth.DEFAULT_MIX))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="reliability-filter and split an exam file by patient")
    p.add_argument("--data", required=True)
    _split_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one (alpha, beta, gamma) variant")
    _train_flags(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="train an (alpha, beta) grid into a registry")
    _train_flags(p)
    p.add_argument("--grid", default="full", help="'full' or 'a,b;a,b;...'")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("ensemble", help="select router and group experts from a registry")
    p.add_argument("--registry", required=True)
    p.add_argument("--val-data", help="recompute validation metrics on this exam file")
    _split_flags(p, with_split=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("eval", help="evaluate a model or ensemble on an exam file")
    _predictor_flags(p)
    p.add_argument("--data", required=True)
    _split_flags(p, with_split=True)
    p.add_argument("--sector-map", help="location table JSON (default: shipped table)")
    p.add_argument("--report", required=True, help="JSON report path; a CSV is written beside it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict fields for RNFL vectors")
    _predictor_flags(p)
    p.add_argument("--rnfl-file", required=True, help="JSON lines with an 'rnfl' list per line")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot-data", help="export CSVs for the MD histogram and per-group MAE by variant")
    p.add_argument("--data")
    p.add_argument("--registry")
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("oracle", help="write a checkpoint of the generator-truth predictor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)
    return ap


def _fail(exc, code):
    sys.stderr.write(json.dumps({"error": getattr(exc, "category", "error"), "exit_code": code,
                                 "message": str(exc)}) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except RetinnError as exc:
        return _fail(exc, exc.exit_code)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail(DataError(str(exc)), DataError.exit_code)
    return 0


if __name__ == "__main__":
    sys.exit(main())
