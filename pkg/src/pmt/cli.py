"""Command-line interface: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (LABEL_NAMES, apply_encoding, filter_covered, fit_frequency_encoding, load_csv,
                      split_by_project, write_csv_to)
from .ensemble import (CombinedModel, ForestConfig, GbBagConfig, PipelineOptions, classify_scores, fit_members,
                       fit_pipeline, load_model)
from .errors import DataError, FitError, ModelFormatError, SchemaError, UndefinedMetricError
from .featsel import permutation_importance, recursive_elimination
from .metrics import evaluate_per_project, read_report_csv
from .resample import AdasynConfig, adasyn
from .schema import default_schema, load_schema
from .skesd import MetricGroup, scott_knott_esd
from .synthdata import (SynthConfig, inflation_experiment, strong_signal_config, weak_signal_config,
                        zero_signal_config)
from .trees import GbConfig

log = logging.getLogger("pmt")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_IO = 4
EXIT_FIT = 5
EXIT_MODEL = 6


# --------------------------------------------------------------------------
# output helpers


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _dataset_text(ds) -> str:
    buf = io.StringIO()
    write_csv_to(ds, buf)
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_manifest(args, outputs, inputs=(), manifest_path=None) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {
        "tool": "pmt",
        "version": __version__,
        "subcommand": args.command,
        "seed": getattr(args, "seed", None),
        "flags": flags,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
    }
    target = Path(manifest_path) if manifest_path else Path(f"{outputs[0]}.manifest.json")
    write_atomic(target, _json_text(manifest))


def _schema(args):
    return load_schema(args.schema) if getattr(args, "schema", None) else default_schema()


# --------------------------------------------------------------------------
# option wiring


def _pipeline_options(args) -> PipelineOptions:
    return PipelineOptions(
        use_adasyn=not args.no_adasyn,
        use_forest=not args.no_forest,
        use_gb_bag=not args.no_gb,
        eliminate=not args.no_eliminate,
        adasyn=AdasynConfig(k=args.adasyn_k, beta=args.adasyn_beta, seed=args.seed),
        forest=ForestConfig(n_trees=args.rf_trees, max_features_fraction=args.rf_max_features, seed=args.seed),
        gb_bag=GbBagConfig(n_models=args.gb_bag, seed=args.seed,
                           inner=GbConfig(n_iterations=args.gb_iters, learning_rate=args.gb_lr,
                                          max_leaf_nodes=args.gb_leaves, min_samples_leaf=args.gb_min_leaf)),
        importance_threshold=args.elim_importance_threshold,
        rho_threshold=args.elim_rho_threshold,
        importance_repeats=args.importance_repeats,
        seed=args.seed,
    )


def _add_common(p, schema=True):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    if schema:
        p.add_argument("--schema", help="feature schema JSON (default: built-in 30-feature schema)")


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--adasyn-k", type=int, default=5, help="ADASYN neighbor count (default 5)")
    g.add_argument("--adasyn-beta", type=float, default=1.0, help="ADASYN balance level in [0,1] (default 1)")
    g.add_argument("--rf-trees", type=int, default=100, help="random forest size (default 100)")
    g.add_argument("--rf-max-features", type=float, default=0.7,
                   help="fraction of features tried per split (default 0.7)")
    g.add_argument("--gb-bag", type=int, default=50, help="number of bagged boosters (default 50)")
    g.add_argument("--gb-iters", type=int, default=100, help="boosting iterations per booster (default 100)")
    g.add_argument("--gb-lr", type=float, default=0.1, help="boosting learning rate (default 0.1)")
    g.add_argument("--gb-leaves", type=int, default=31, help="max leaves per boosting tree (default 31)")
    g.add_argument("--gb-min-leaf", type=int, default=20, help="min rows per boosting leaf (default 20)")
    g.add_argument("--elim-importance-threshold", type=float, default=0.01,
                   help="importance share below which a feature is noisy (default 0.01)")
    g.add_argument("--elim-rho-threshold", type=float, default=0.9,
                   help="|Spearman rho| above which a pair is redundant (default 0.9)")
    g.add_argument("--importance-repeats", type=int, default=5, help="shuffles per feature (default 5)")
    g.add_argument("--no-adasyn", action="store_true", help="skip ADASYN rebalancing")
    g.add_argument("--no-forest", action="store_true", help="drop the random forest half")
    g.add_argument("--no-gb", action="store_true", help="drop the boosting-bag half")
    g.add_argument("--no-eliminate", action="store_true", help="keep all schema features")


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    if args.config:
        cfg = SynthConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
        cfg = replace(cfg, seed=args.seed)
    else:
        preset = {"default": SynthConfig, "weak": weak_signal_config, "zero": zero_signal_config,
                  "strong": strong_signal_config}[args.signal]
        cfg = preset(n_projects=args.projects, mutants_per_project=(args.mutants_min, args.mutants_max),
                     uncovered_fraction=args.uncovered_fraction, covered_kill_rate=args.kill_rate,
                     schema=_schema(args) if args.schema else None, seed=args.seed)
    from .synthdata import generate

    ds = generate(cfg)
    write_atomic(args.out, _dataset_text(ds))
    cfg_path = f"{args.out}.config.json"
    write_atomic(cfg_path, cfg.dumps())
    write_manifest(args, [args.out, cfg_path])
    print(f"wrote {len(ds)} mutants from {len(ds.project_ids)} projects to {args.out}")
    return EXIT_OK


def cmd_split(args) -> int:
    ds = load_csv(args.input, _schema(args))
    fractions = tuple(float(x) for x in args.fractions.split(","))
    parts = split_by_project(ds, fractions, args.seed)
    names = ["train", "valid", "test"] if len(parts) == 3 else [f"part{i}" for i in range(len(parts))]
    out_dir = Path(args.out_dir)
    outputs = []
    for name, part in zip(names, parts):
        path = out_dir / f"{args.prefix}{name}.csv"
        write_atomic(path, _dataset_text(part))
        outputs.append(path)
        print(f"{name}: {len(part.project_ids)} projects, {len(part)} mutants -> {path}")
    write_manifest(args, outputs, [args.input], out_dir / f"{args.prefix}split.manifest.json")
    return EXIT_OK


def cmd_filter_covered(args) -> int:
    ds = load_csv(args.input, _schema(args))
    kept = filter_covered(ds)
    write_atomic(args.out, _dataset_text(kept))
    write_manifest(args, [args.out], [args.input])
    print(f"kept {len(kept)} of {len(ds)} mutants (covered only)")
    return EXIT_OK


def cmd_train(args) -> int:
    schema = _schema(args)
    train = load_csv(args.train, schema)
    valid = load_csv(args.valid, schema) if args.valid else None
    model = fit_pipeline(train, valid, _pipeline_options(args), threads=args.threads)
    write_atomic(args.out, model.dumps())
    write_manifest(args, [args.out], [p for p in (args.train, args.valid) if p])
    print(f"trained on {len(train)} mutants; {len(model.selected_features)} features -> {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    ds = load_csv(args.input, model.schema.subset(model.selected_features), require_label=False)
    scores = model.score(ds)
    preds = classify_scores(scores)
    rows = [("project", "score", "predicted")]
    rows += [(p, repr(float(s)), LABEL_NAMES[int(c)]) for p, s, c in zip(ds.projects, scores, preds)]
    write_atomic(args.out, _csv_text(rows))
    write_manifest(args, [args.out], [args.model, args.input])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    ds = load_csv(args.input, model.schema.subset(model.selected_features))
    report = evaluate_per_project(model, ds)
    write_atomic(args.out, _csv_text(report.csv_rows()))
    summary_path = f"{args.out}.summary.json"
    summary = report.aggregate()
    write_atomic(summary_path, _json_text(summary))
    write_manifest(args, [args.out, summary_path], [args.model, args.input])
    auc = summary["auc"]
    print(f"projects={summary['projects']} auc_mean={auc['mean']} auc_median={auc['median']} "
          f"mcc_mean={summary['mcc']['mean']} bal_acc_adj_mean={summary['bal_acc_adj']['mean']} "
          f"worse_than_random={summary['worse_than_random']}")
    return EXIT_OK


def cmd_select_features(args) -> int:
    schema = _schema(args)
    train = load_csv(args.train, schema)
    valid = load_csv(args.valid, schema)
    opts = _pipeline_options(args)
    enc = fit_frequency_encoding(train)
    X = apply_encoding(train, enc)
    y = train.labels.astype(np.int64)
    X_fit, y_fit = adasyn(X, y, opts.adasyn) if opts.use_adasyn else (X, y)

    def fit(Xs, ys, cols):
        return CombinedModel(*fit_members(Xs, ys, opts, args.threads), enc, cols, schema, options=opts)

    trace = recursive_elimination(X_fit, y_fit, apply_encoding(valid, enc), valid.labels.astype(np.int64),
                                  schema.names, fit, X_corr=X, importance_threshold=opts.importance_threshold,
                                  rho_threshold=opts.rho_threshold, repeats=opts.importance_repeats,
                                  seed=args.seed, threads=args.threads)
    write_atomic(args.out_trace, _json_text(trace.to_dict()))
    write_atomic(args.out_schema, schema.subset(trace.selected).dumps())
    write_manifest(args, [args.out_trace, args.out_schema], [args.train, args.valid])
    for r in trace.rounds:
        extra = f" (rho={r.rho:.3f} with {r.partner})" if r.reason == "redundant" else ""
        print(f"removed {r.removed}: {r.reason}{extra}")
    print(f"{len(trace.selected)} features selected")
    return EXIT_OK


def cmd_importance(args) -> int:
    model = load_model(args.model)
    ds = load_csv(args.input, model.schema.subset(model.selected_features))
    report = permutation_importance(model, model.design_matrix(ds), ds.labels.astype(np.int64),
                                    args.repeats, args.seed, model.selected_features, args.threads)
    write_atomic(args.out, _json_text(report.to_dict()))
    write_manifest(args, [args.out], [args.model, args.input])
    for name, imp, share in report.ranking():
        print(f"{name:32s} {imp: .5f} {share:.3f}")
    return EXIT_OK


def _group_name(spec: str, used: set) -> tuple[str, str]:
    if "=" in spec and not Path(spec).exists():
        name, path = spec.split("=", 1)
    else:
        path, name = spec, Path(spec).stem
    base, i = name, 2
    while name in used:
        name = f"{base}_{i}"
        i += 1
    used.add(name)
    return name, path


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise DataError("compare needs at least two report CSVs")
    used, groups, paths = set(), [], []
    for spec in args.reports:
        name, path = _group_name(spec, used)
        report = read_report_csv(path)
        groups.append(MetricGroup(name, np.array(report.values(args.metric))))
        paths.append(path)
    result = scott_knott_esd(groups, alpha=args.sk_alpha, negligible_threshold=args.sk_delta,
                             log_transform=args.log_transform)
    means = {g.name: g.mean for g in groups}
    table = [{"group": g.name, "rank": result.ranks[g.name], "mean": means[g.name],
              "n": len(g.observations)} for g in sorted(groups, key=lambda g: (result.ranks[g.name], -g.mean))]
    doc = {"metric": args.metric, "alpha": args.sk_alpha, "negligible_threshold": args.sk_delta,
           "ranks": table, "partitions": result.partitions, "tree": result.tree}
    write_atomic(args.out, _json_text(doc))
    write_manifest(args, [args.out], paths)
    for row in table:
        print(f"{row['rank']:3d}  {row['group']:24s} mean={row['mean']:.4f} n={row['n']}")
    return EXIT_OK


def cmd_inflation(args) -> int:
    preset = {"weak": weak_signal_config, "zero": zero_signal_config, "strong": strong_signal_config,
              "default": SynthConfig}[args.signal]
    cfg = preset(n_projects=args.projects, mutants_per_project=(args.mutants_min, args.mutants_max))
    options = PipelineOptions(use_adasyn=False, use_gb_bag=False, eliminate=False,
                              forest=ForestConfig(n_trees=args.rf_trees, max_features_fraction=args.rf_max_features))
    seeds = [args.seed + i for i in range(args.seeds)]
    results = inflation_experiment(cfg, options, seeds, threads=args.threads)
    rows = [("seed", "auc_all", "auc_covered_only", "gap")]
    for r in results:
        rows.append((r["seed"], repr(r["auc_all"]), repr(r["auc_covered_only"]),
                     repr(r["auc_all"] - r["auc_covered_only"])))
        print(f"seed {r['seed']}: all={r['auc_all']:.3f} covered={r['auc_covered_only']:.3f}")
    write_atomic(args.out, _csv_text(rows))
    write_manifest(args, [args.out])
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmt", description=__doc__)
    parser.add_argument("--version", action="version", version=f"pmt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic mutant corpus")
    _add_common(p)
    p.add_argument("--projects", type=int, default=50, help="number of projects (default 50)")
    p.add_argument("--mutants-min", type=int, default=200, help="fewest mutants per project (default 200)")
    p.add_argument("--mutants-max", type=int, default=2000, help="most mutants per project (default 2000)")
    p.add_argument("--uncovered-fraction", type=float, default=0.625,
                   help="expected share of mutants no test executes (default 0.625)")
    p.add_argument("--kill-rate", type=float, default=0.67, help="kill rate among covered mutants")
    p.add_argument("--signal", choices=("default", "weak", "zero", "strong"), default="default",
                   help="strength of the planted kill signal (default: default)")
    p.add_argument("--config", help="generator config JSON (overrides the other generator flags)")
    p.add_argument("--out", required=True, help="output corpus CSV")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", help="split a corpus by project into train/valid/test")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="corpus CSV")
    p.add_argument("--fractions", default="0.8,0.1,0.1", help="train,valid,test project shares (default 0.8,0.1,0.1)")
    p.add_argument("--out-dir", required=True, help="directory for train.csv, valid.csv and test.csv")
    p.add_argument("--prefix", default="", help="file name prefix for the partitions")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("filter-covered", help="drop mutants no test executes")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="corpus CSV")
    p.add_argument("--out", required=True, help="covered-only CSV")
    p.set_defaults(func=cmd_filter_covered)

    p = sub.add_parser("train", help="fit the combined model")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--train", required=True, help="training CSV")
    p.add_argument("--valid", help="validation CSV (required unless --no-eliminate)")
    p.add_argument("--out", required=True, help="model JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score mutants with a trained model")
    _add_common(p, schema=False)
    p.add_argument("--model", required=True, help="model JSON from 'train'")
    p.add_argument("--in", dest="input", required=True, help="mutant CSV; the label column is optional")
    p.add_argument("--out", required=True, help="scores CSV (project,score,predicted)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="per-project AUC / MCC / adjusted balanced accuracy")
    _add_common(p, schema=False)
    p.add_argument("--model", required=True, help="model JSON from 'train'")
    p.add_argument("--in", dest="input", required=True, help="labeled test CSV")
    p.add_argument("--out", required=True, help="per-project report CSV; a .summary.json is written beside it")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-features", help="recursive noisy/redundant feature elimination")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--train", required=True, help="training CSV")
    p.add_argument("--valid", required=True, help="validation CSV used for permutation importance")
    p.add_argument("--out-trace", required=True, help="elimination trace JSON")
    p.add_argument("--out-schema", required=True, help="schema JSON of the surviving features (for --schema)")
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("importance", help="permutation importance of a trained model")
    _add_common(p, schema=False)
    p.add_argument("--model", required=True, help="model JSON from 'train'")
    p.add_argument("--in", dest="input", required=True, help="labeled CSV to shuffle columns of")
    p.add_argument("--repeats", type=int, default=5, help="shuffles per feature (default 5)")
    p.add_argument("--out", required=True, help="importance JSON")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("compare", help="Scott-Knott ESD ranking of evaluation reports")
    _add_common(p, schema=False)
    p.add_argument("reports", nargs="+", help="report CSVs from 'evaluate' (optionally NAME=PATH)")
    p.add_argument("--metric", choices=("auc", "mcc", "bal_acc_adj"), default="auc",
                   help="report column to rank on (default auc)")
    p.add_argument("--sk-alpha", type=float, default=0.05, help="significance level (default 0.05)")
    p.add_argument("--sk-delta", type=float, default=0.2, help="negligible |Cohen's delta| (default 0.2)")
    p.add_argument("--log-transform", action="store_true", help="rank log1p-transformed values")
    p.add_argument("--out", required=True, help="rank table JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inflation", help="AUC on all vs covered-only test mutants")
    _add_common(p, schema=False)
    p.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds")
    p.add_argument("--signal", choices=("weak", "zero", "strong", "default"), default="weak",
                   help="generator preset (default weak)")
    p.add_argument("--projects", type=int, default=30, help="projects per corpus (default 30)")
    p.add_argument("--mutants-min", type=int, default=100, help="fewest mutants per project (default 100)")
    p.add_argument("--mutants-max", type=int, default=300, help="most mutants per project (default 300)")
    p.add_argument("--rf-trees", type=int, default=100, help="random forest size (default 100)")
    p.add_argument("--rf-max-features", type=float, default=0.7, help="fraction of features per split (default 0.7)")
    p.add_argument("--out", required=True, help="per-seed results CSV")
    p.set_defaults(func=cmd_inflation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (DataError, SchemaError) as exc:
        print(f"pmt {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelFormatError as exc:
        print(f"pmt {args.command}: bad model file: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (FitError, UndefinedMetricError) as exc:
        print(f"pmt {args.command}: cannot fit/evaluate: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"pmt {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"pmt {args.command}: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"pmt {args.command}: unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
