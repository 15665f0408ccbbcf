"""Command-line entry point: calibrate, evaluate, sweep, synth.

Every failure prints one JSON object on stderr ({"error": ..., "message":
...}) and exits non-zero: 2 for bad flags, 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .calibrators import Method
from .data_io import (
    DataFormatError,
    Dataset,
    SyntheticSpec,
    gen_synthetic,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)
from .harness import (
    ROW_COLUMNS,
    MethodSpec,
    SweepConfig,
    evaluate_model,
    fit_method,
    metrics_row,
    run_sweep,
    to_csv,
    true_label_scores,
)
from .scores import parse_score_kind


class UsageError(Exception):
    pass


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--probs", help="CSV of class probabilities (header row of class names)")
    p.add_argument("--scores", help="CSV of precomputed candidate scores")
    p.add_argument("--labels", help="file with one integer label per line")
    p.add_argument("--synth-spec", help="JSON synthetic-data spec used instead of data files")


def _add_score_flags(p: argparse.ArgumentParser, multiple: bool = False) -> None:
    help_ = "score function(s): softmax, aps, raps" + (" (comma separated)" if multiple else "")
    p.add_argument("--score", default="softmax", help=help_)
    p.add_argument("--raps-lambda", type=float, default=0.01)
    p.add_argument("--raps-kreg", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clustered-conformal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="fit a conformal model and write it as JSON")
    _add_data_flags(cal)
    _add_score_flags(cal)
    cal.add_argument("--method", default="standard", choices=[m.value for m in Method])
    cal.add_argument("--alpha", type=float, default=0.1)
    cal.add_argument("--gamma", type=float, help="clustering fraction (clustered only)")
    cal.add_argument("--clusters", type=int, help="number of clusters (clustered only)")
    cal.add_argument("--randomized", action="store_true", help="randomize thresholds for exact coverage")
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--model", required=True, help="output model JSON path")

    ev = sub.add_parser("evaluate", help="score a model's prediction sets on held-out data")
    _add_data_flags(ev)
    _add_score_flags(ev)
    ev.add_argument("--model", required=True)
    ev.add_argument("--seed", type=int, default=0, help="seed of the APS/RAPS uniform draws")
    ev.add_argument("--out", help="output CSV (default: stdout)")

    sw = sub.add_parser("sweep", help="repeated calibration over several n_avg values")
    _add_data_flags(sw)
    _add_score_flags(sw, multiple=True)
    sw.add_argument("--method", default="standard,classwise,clustered",
                    help="comma separated; append _randomized for the randomized variant")
    sw.add_argument("--randomized", action="store_true", help="randomize every listed method")
    sw.add_argument("--alpha", type=float, default=0.1)
    sw.add_argument("--gamma", type=float)
    sw.add_argument("--clusters", type=int)
    sw.add_argument("--navg", default="10,20,30,40,50,75,100,150", help="comma separated n_avg values")
    sw.add_argument("--reps", type=int, default=10)
    sw.add_argument("--seed", type=int, default=0, help="master seed")
    sw.add_argument("--jobs", type=int, default=1, help="worker threads")
    sw.add_argument("--out", required=True,
                    help="per-rep CSV path; the aggregate goes next to it with suffix .agg.csv")

    syn = sub.add_parser("synth", help="write a synthetic dataset to CSV")
    syn.add_argument("--synth-spec", required=True)
    syn.add_argument("--scores", required=True, help="output score CSV")
    syn.add_argument("--labels", required=True, help="output labels file")
    return parser


def _load(args) -> Dataset:
    sources = [args.probs is not None, args.scores is not None, args.synth_spec is not None]
    if sum(sources) != 1:
        raise UsageError("give exactly one of --probs, --scores, --synth-spec")
    if args.synth_spec:
        if args.labels:
            raise UsageError("--labels cannot be combined with --synth-spec")
        return gen_synthetic(SyntheticSpec.from_json_file(args.synth_spec))
    if not args.labels:
        raise UsageError("--labels is required with --probs/--scores")
    return load_dataset(args.labels, probs_path=args.probs, scores_path=args.scores)


def _score_kind(args, name: str):
    return parse_score_kind(name, args.raps_lambda, args.raps_kreg)


def cmd_calibrate(args) -> int:
    if args.method != Method.CLUSTERED.value and (args.gamma is not None or args.clusters is not None):
        raise UsageError("--gamma/--clusters only apply to --method clustered")
    dataset = _load(args)
    kind = _score_kind(args, args.score)
    matrix = dataset.score_matrix(kind, seed=args.seed)
    data = true_label_scores(matrix, dataset.labels, dataset.n_classes)
    spec = MethodSpec(Method(args.method), args.randomized)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit_method(spec, data, args.alpha, args.seed, gamma=args.gamma, n_clusters=args.clusters)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_model(model, args.model)

    summary = {"method": spec.label, "n_classes": model.n_classes, "n_calibration": len(data)}
    if spec.method is Method.CLUSTERED:
        cmap = model.cluster_map
        summary.update(gamma=model.info.get("gamma"), clusters=cmap.n_clusters,
                       null_classes=model.n_null_classes)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    dataset = _load(args)
    if dataset.n_classes != model.n_classes:
        raise ValueError(f"model has {model.n_classes} classes, dataset has {dataset.n_classes}")
    if dataset.n_examples == 0:
        raise ValueError("evaluation dataset is empty")
    kind = _score_kind(args, args.score)
    matrix = dataset.score_matrix(kind, seed=args.seed)
    report = evaluate_model(model, matrix, dataset.labels)
    label = model.method.value + ("_randomized" if model.randomized else "")
    score_name = "precomputed" if dataset.has_scores else kind.name
    row = metrics_row(label, score_name, model.alpha, None, None, report, model.n_null_classes, model.seed)
    text = to_csv([row], ROW_COLUMNS)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _aggregate_path(out: Path) -> Path:
    return out.with_name(out.stem + ".agg.csv")


def cmd_sweep(args) -> int:
    dataset = _load(args)
    methods = tuple(MethodSpec.parse(t) for t in args.method.split(",") if t.strip())
    if args.randomized:
        methods = tuple(MethodSpec(m.method, True) for m in methods)
    if (args.gamma is not None or args.clusters is not None) and all(
            m.method is not Method.CLUSTERED for m in methods):
        raise UsageError("--gamma/--clusters need the clustered method")
    kinds = tuple(_score_kind(args, s.strip()) for s in args.score.split(",") if s.strip())
    try:
        n_avg = tuple(int(x) for x in args.navg.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"--navg must be comma separated integers, got {args.navg!r}") from None
    config = SweepConfig(methods, kinds, args.alpha, n_avg, args.reps, args.seed,
                         gamma=args.gamma, n_clusters=args.clusters, jobs=args.jobs)
    result = run_sweep(dataset, config)
    out = Path(args.out)
    out.write_text(result.rows_csv())
    _aggregate_path(out).write_text(result.aggregate_csv())
    failed = sum(1 for r in result.aggregate if r["error"])
    print(f"wrote {len(result.rows)} rows to {out} and {len(result.aggregate)} cells to "
          f"{_aggregate_path(out)}" + (f" ({failed} failed cells)" if failed else ""))
    return 0


def cmd_synth(args) -> int:
    dataset = gen_synthetic(SyntheticSpec.from_json_file(args.synth_spec))
    save_dataset(dataset, args.scores, args.labels)
    print(f"wrote {dataset.n_examples} examples over {dataset.n_classes} classes")
    return 0


COMMANDS = {"calibrate": cmd_calibrate, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "synth": cmd_synth}


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, DataFormatError):
        payload.update(path=exc.path, row=exc.row, col=exc.col)
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            return 0
        return _fail(UsageError("invalid command line"), 2)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        return _fail(e, 2)
    except (OSError, ValueError, ArithmeticError) as e:
        return _fail(e, 1)


if __name__ == "__main__":
    sys.exit(main())
