"""Command-line entry point: ``tripletreg <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure
(including an experiment in which any cell failed).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from sklearn.pipeline import Pipeline

from . import __version__
from .evaluation import (
    PRESETS,
    ExperimentConfig,
    export_embeddings,
    preset_config,
    print_progress,
    r2_score,
    run_experiment,
    summarize,
)
from .exceptions import DimensionMismatch, TripletRegError, ValidationError
from .ingest import Standardizer, load_annotations, load_feature_table, normalize_labels
from .persistence import load_model, model_input_dim, save_model
from .reducers import AutoencoderReducer, GaussianRandomProjection, PCAReducer, TripletEmbedding
from .regressors import SVR, GradientBoostingRegressor

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

# Values fixed by the MediaEval 2013 / DEAM experiments; everything else keeps
# the module defaults.
TNN_PRESETS = {
    "mediaeval2013": {"dims": 600, "triplets_per_round": 50_000, "epochs_per_round": 10,
                      "rounds": 25, "lr": 1e-5, "delta_p": 0.1, "delta_n": 0.5},
    "deam": {"dims": 100, "triplets_per_round": 150_000, "epochs_per_round": 10,
             "rounds": 25, "lr": 1e-5, "delta_p": 0.1, "delta_n": 0.5},
}
TNN_DEFAULTS = {"dims": 600, "triplets_per_round": 50_000, "epochs_per_round": 10,
                "rounds": 25, "lr": 1e-3, "delta_p": 0.1, "delta_n": 0.5, "margin": 0.2,
                "batch_size": 128}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _common(p, out_help="output path", seed_help="random seed (default: 0)", seed_default=0):
    p.add_argument("--seed", type=int, default=seed_default, help=seed_help)
    p.add_argument("--out", help=out_help)
    p.add_argument("--quiet", action="store_true", help="suppress progress lines on stderr")


def _tnn_flags(p):
    p.add_argument("--dims", type=int, help="embedding size (default 600)")
    p.add_argument("--delta-p", type=float, help="positive label threshold (default 0.1)")
    p.add_argument("--delta-n", type=float, help="negative label threshold (default 0.5)")
    p.add_argument("--margin", type=float, help="triplet margin alpha (default 0.2)")
    p.add_argument("--epochs-per-round", type=int, help="epochs between re-mining (default 10)")
    p.add_argument("--rounds", type=int, help="mining rounds (default 25)")
    p.add_argument("--triplets-per-round", type=int, help="triplets mined per round (default 50000)")
    p.add_argument("--batch-size", type=int, help="triplets per Adam step (default 128)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3; presets 1e-5)")


def build_parser():
    parser = _Parser(prog="tripletreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate", help="check feature/annotation CSVs and print n, d")
    p.add_argument("--features", required=True, help="feature CSV (song_id + numeric columns)")
    p.add_argument("--annotations", help="annotation CSV (song_id,valence,arousal)")
    _common(p)

    p = sub.add_parser("train-tnn", help="train a triplet-network embedding")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--annotations", required=True, help="annotation CSV")
    p.add_argument("--target", choices=("valence", "arousal"), default="valence",
                   help="label that drives triplet mining (default valence)")
    p.add_argument("--preset", choices=PRESETS,
                   help="published dataset settings for dims, triplet count, rounds and lr")
    _tnn_flags(p)
    _common(p, "model file to write (required)")

    p = sub.add_parser("train-ae", help="train the autoencoder baseline")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--dims", type=int, default=600, help="encoder width (default 600)")
    p.add_argument("--epochs", type=int, default=100, help="training epochs (default 100)")
    p.add_argument("--batch-size", type=int, default=128, help="rows per Adam step (default 128)")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")
    p.add_argument("--early-stopping", action="store_true",
                   help="stop when MSE improves < 1e-5 relative over 10 epochs")
    _common(p, "model file to write (required)")

    p = sub.add_parser("reduce", help="embed a feature CSV with a saved or freshly fitted reducer")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--model", help="saved reducer model")
    p.add_argument("--kind", choices=("pca", "rp"), help="fit this unsupervised reducer instead")
    p.add_argument("--dims", type=int, help="output size when fitting with --kind")
    p.add_argument("--save-model", help="also save the fitted --kind reducer here")
    _common(p, "embeddings CSV to write (song_id,e1..ek; required)")

    p = sub.add_parser("regress", help="fit SVR/GBM on one CSV, predict another")
    p.add_argument("--train", required=True, help="training feature CSV")
    p.add_argument("--test", required=True, help="test feature CSV")
    p.add_argument("--annotations", required=True, help="annotation CSV covering training songs")
    p.add_argument("--target", choices=("valence", "arousal"), default="valence")
    p.add_argument("--regressor", choices=("svr", "gbm"), default="svr")
    p.add_argument("--model", help="optional saved reducer applied before regression")
    p.add_argument("--c", type=float, default=1.0, help="SVR C (default 1.0)")
    p.add_argument("--epsilon", type=float, default=0.1, help="SVR tube width (default 0.1)")
    p.add_argument("--gamma", default="auto", help="RBF gamma or 'auto' = 1/d (default auto)")
    p.add_argument("--n-trees", type=int, default=100, help="GBM trees (default 100)")
    p.add_argument("--max-depth", type=int, default=3, help="GBM tree depth (default 3)")
    p.add_argument("--gbm-lr", type=float, default=0.1, help="GBM shrinkage (default 0.1)")
    _common(p, "predictions CSV to write (song_id,prediction; required)")

    p = sub.add_parser("experiment", help="cross-validated reducer x regressor benchmark")
    p.add_argument("--preset", choices=PRESETS, help="MediaEval 2013 or DEAM grid")
    p.add_argument("--config", help="experiment JSON (alternative to --preset)")
    p.add_argument("--data-dir", help="directory with features.csv and annotations.csv")
    p.add_argument("--features", help="feature CSV (overrides the config/preset path)")
    p.add_argument("--annotations", help="annotation CSV (overrides the config/preset path)")
    p.add_argument("--folds", type=int, help="fold count (default from config, presets 10)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    _common(p, "JSON report to write; timings go to <out>.meta.json",
            "random seed for folds and models (default: config value, presets 0)", None)

    p = sub.add_parser("export-embeddings",
                       help="write embeddings with label-quartile classes for plotting")
    p.add_argument("--model", required=True, help="saved reducer model")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--annotations", required=True, help="annotation CSV")
    p.add_argument("--target", choices=("valence", "arousal"), default="arousal",
                   help="label used for the class tags (default arousal)")
    p.add_argument("--extreme-count", type=int,
                   help="size of the high/low classes (default 100 for 744 songs, else n/4)")
    _common(p, "CSV to write (required)")
    return parser


def _require(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise ValidationError(f"missing required flag --{name}")


def _labels(path, feats, target):
    ann = normalize_labels(load_annotations(path))
    return ann.align(feats.song_ids).target(target)


def _progress(args, tag):
    if args.quiet:
        return None

    def report(epoch, loss):
        print(f"[{tag}] epoch {epoch + 1}: loss {loss:.6g}", file=sys.stderr, flush=True)
    return report


def cmd_validate(args):
    feats = load_feature_table(args.features)
    n, d = feats.shape
    msg = f"features ok: n={n} d={d}"
    if args.annotations:
        ann = load_annotations(args.annotations)
        matched = ann.align(feats.song_ids)
        normalize_labels(matched)
        msg += f"; annotations ok: {len(ann)} rows, {len(matched)} matched"
    print(msg)
    return EXIT_OK


def cmd_train_tnn(args):
    _require(args, "out")
    settings = dict(TNN_DEFAULTS)
    if args.preset:
        settings.update(TNN_PRESETS[args.preset])
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    feats = load_feature_table(args.features)
    y = _labels(args.annotations, feats, args.target)
    tnn = TripletEmbedding(
        n_components=settings["dims"], delta_p=settings["delta_p"], delta_n=settings["delta_n"],
        margin=settings["margin"], triplets_per_round=settings["triplets_per_round"],
        epochs_per_round=settings["epochs_per_round"], rounds=settings["rounds"],
        batch_size=settings["batch_size"], learning_rate=settings["lr"],
        random_state=args.seed, verbose=not args.quiet)
    pipe = Pipeline([("standardize", Standardizer()), ("reduce", tnn)]).fit(feats.values, y)
    save_model(pipe, args.out)
    log = tnn.training_log_
    print(f"trained TNN {feats.shape[1]}->{settings['dims']} on {len(y)} songs "
          f"({len(log)} epochs, final loss {log[-1]:.6g}) -> {args.out}")
    return EXIT_OK


def cmd_train_ae(args):
    _require(args, "out")
    feats = load_feature_table(args.features)
    ae = AutoencoderReducer(args.dims, epochs=args.epochs, batch_size=args.batch_size,
                            learning_rate=args.lr, early_stopping=args.early_stopping,
                            random_state=args.seed, verbose=not args.quiet)
    pipe = Pipeline([("standardize", Standardizer()), ("reduce", ae)]).fit(feats.values)
    save_model(pipe, args.out)
    log = ae.model_.training_log
    final = f"{log[-1]:.6g}" if log else "n/a"
    print(f"trained AE {feats.shape[1]}->{args.dims} ({len(log)} epochs, final mse {final})"
          f" -> {args.out}")
    return EXIT_OK


def _write_matrix(path, song_ids, E, prefix="e"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["song_id"] + [f"{prefix}{j + 1}" for j in range(E.shape[1])])
        for sid, row in zip(song_ids, E):
            w.writerow([sid] + [repr(float(v)) for v in row])


def _load_reducer(path, d):
    model = load_model(path)
    expected = model_input_dim(model)
    if expected is not None and expected != d:
        raise DimensionMismatch(f"model expects {expected} features, feature file has {d}")
    return model


def cmd_reduce(args):
    _require(args, "out")
    feats = load_feature_table(args.features)
    if args.model:
        model = _load_reducer(args.model, feats.shape[1])
    elif args.kind:
        _require(args, "dims")
        reducer = (PCAReducer(args.dims) if args.kind == "pca"
                   else GaussianRandomProjection(args.dims, random_state=args.seed))
        model = Pipeline([("standardize", Standardizer()), ("reduce", reducer)]).fit(feats.values)
        if args.save_model:
            save_model(model, args.save_model)
    else:
        raise ValidationError("reduce needs --model or --kind")
    E = model.transform(feats.values)
    _write_matrix(args.out, feats.song_ids, E)
    print(f"reduced {feats.shape[0]} songs {feats.shape[1]}->{E.shape[1]} -> {args.out}")
    return EXIT_OK


def cmd_regress(args):
    _require(args, "out")
    train = load_feature_table(args.train)
    test = load_feature_table(args.test)
    if train.columns != test.columns:
        raise DimensionMismatch("train and test feature columns differ")
    ann = normalize_labels(load_annotations(args.annotations))
    y = ann.align(train.song_ids).target(args.target)
    gamma = args.gamma if args.gamma == "auto" else float(args.gamma)
    reg = (SVR(C=args.c, epsilon=args.epsilon, gamma=gamma) if args.regressor == "svr"
           else GradientBoostingRegressor(args.n_trees, args.max_depth, args.gbm_lr,
                                          random_state=args.seed))
    if args.model:
        # the saved reducer pipeline already carries its own standardizer
        reducer = _load_reducer(args.model, train.shape[1])
        reg.fit(reducer.transform(train.values), y)
        pred = reg.predict(reducer.transform(test.values))
    else:
        pipe = Pipeline([("standardize", Standardizer()), ("regress", reg)]).fit(train.values, y)
        pred = pipe.predict(test.values)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["song_id", "prediction"])
        for sid, p in zip(test.song_ids, pred):
            w.writerow([sid, repr(float(p))])
    known = {s: i for i, s in enumerate(ann.song_ids)}
    if all(s in known for s in test.song_ids) and len(test) >= 2:
        truth = ann.align(test.song_ids).target(args.target)
        try:
            print(f"R2 {args.target} = {r2_score(truth, pred):.4f} "
                  f"({len(test)} test songs) -> {args.out}")
        except TripletRegError:
            print(f"R2 undefined (constant test targets) -> {args.out}")
    else:
        print(f"predicted {len(test)} songs (no labels for R2) -> {args.out}")
    return EXIT_OK


def cmd_experiment(args):
    if args.preset and args.config:
        raise ValidationError("use either --preset or --config, not both")
    if args.preset:
        config = preset_config(args.preset, args.data_dir, args.seed or 0,
                               args.features, args.annotations)
    elif args.config:
        config = ExperimentConfig.from_json(args.config)
        changes = {} if args.seed is None else {"seed": args.seed}
        if args.data_dir:
            changes["features"] = os.path.join(args.data_dir, "features.csv")
            changes["annotations"] = os.path.join(args.data_dir, "annotations.csv")
        if args.features:
            changes["features"] = args.features
        if args.annotations:
            changes["annotations"] = args.annotations
        config = ExperimentConfig(**{**config.__dict__, **changes})
    else:
        raise ValidationError("experiment needs --preset or --config")
    if args.folds is not None:
        config = ExperimentConfig(**{**config.__dict__, "k_folds": args.folds})
    report = run_experiment(config, jobs=args.jobs,
                            progress=None if args.quiet else print_progress)
    print(summarize(report))
    if args.out:
        report.write(args.out)
    n_failed = sum(r["status"] == "failed" for c in report.cells for r in c["results"].values())
    print(f"{len(report.cells)} cells, {config.k_folds} folds, {n_failed} failed"
          + (f" -> {args.out}" if args.out else ""))
    return EXIT_RUNTIME if report.failed else EXIT_OK


def cmd_export_embeddings(args):
    _require(args, "out")
    feats = load_feature_table(args.features)
    model = _load_reducer(args.model, feats.shape[1])
    ann = normalize_labels(load_annotations(args.annotations))
    E, classes = export_embeddings(model, feats, ann, args.out, args.target, args.extreme_count)
    counts = {t: classes.count(t) for t in ("high", "mid-high", "mid-low", "low")}
    print(f"exported {E.shape[0]}x{E.shape[1]} embeddings, classes {counts} -> {args.out}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "train-tnn": cmd_train_tnn,
    "train-ae": cmd_train_ae,
    "reduce": cmd_reduce,
    "regress": cmd_regress,
    "experiment": cmd_experiment,
    "export-embeddings": cmd_export_embeddings,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc.tag}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TripletRegError as exc:
        print(f"error: {exc.tag}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
