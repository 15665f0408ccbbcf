"""Fit/evaluate orchestration and repeated calibration sweeps.

A sweep repeats, for each n_avg and repetition: draw n_avg * K calibration
examples, fit every requested method, and score prediction sets on the
remaining examples. Output rows are ordered by (n_avg, rep, method, score)
no matter how many worker threads ran them.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .calibrators import (
    CalibratedModel,
    LabeledScores,
    Method,
    fit_classwise,
    fit_clustered_auto,
    fit_standard,
    predict_sets,
)
from .data_io import Dataset, calibration_indices
from .metrics import MetricsReport, evaluate
from .scores import ScoreKind
from .seeding import derive_int

ROW_COLUMNS = ["method", "score", "alpha", "n_avg", "rep", "covgap", "avgsize", "fracundercov",
               "marginal", "n_null_classes", "seed"]
METRIC_COLUMNS = ["covgap", "avgsize", "fracundercov", "marginal", "n_null_classes"]
AGG_COLUMNS = (["method", "score", "alpha", "n_avg", "n_reps"]
               + [c for m in METRIC_COLUMNS for c in (m, f"{m}_se")] + ["error"])


@dataclass(frozen=True)
class MethodSpec:
    method: Method
    randomized: bool = False

    @property
    def label(self) -> str:
        return self.method.value + ("_randomized" if self.randomized else "")

    @classmethod
    def parse(cls, token: str) -> MethodSpec:
        token = token.strip().lower()
        randomized = False
        for suffix in ("_randomized", "_rand", "-randomized", "-rand"):
            if token.endswith(suffix):
                token, randomized = token[: -len(suffix)], True
                break
        try:
            return cls(Method(token), randomized)
        except ValueError:
            raise ValueError(f"unknown method {token!r}; expected standard, classwise or clustered") from None


def fit_method(spec: MethodSpec, data: LabeledScores, alpha, seed: int, gamma=None,
               n_clusters: int | None = None) -> CalibratedModel:
    if spec.method is Method.STANDARD:
        return fit_standard(data, alpha, randomized=spec.randomized, seed=seed)
    if spec.method is Method.CLASSWISE:
        return fit_classwise(data, alpha, randomized=spec.randomized, seed=seed)
    return fit_clustered_auto(data, alpha, seed=seed, gamma=gamma, n_clusters=n_clusters,
                              randomized=spec.randomized)


def true_label_scores(scores: np.ndarray, labels: np.ndarray, n_classes: int) -> LabeledScores:
    return LabeledScores(scores[np.arange(labels.size), labels], labels, n_classes)


def evaluate_model(model: CalibratedModel, scores: np.ndarray, labels: np.ndarray) -> MetricsReport:
    if labels.size == 0:
        raise ValueError("evaluation set is empty")
    if scores.shape[1] != model.n_classes:
        raise ValueError(f"model has {model.n_classes} classes, evaluation data has {scores.shape[1]}")
    return evaluate(predict_sets(model, scores), labels, model.alpha, model.n_classes, warn=False)


def fmt(x) -> str:
    """Shortest round-tripping text for a number; '' for None."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def metrics_row(spec_label: str, score: str, alpha, n_avg, rep, report: MetricsReport,
                n_null: int, seed: int) -> dict:
    return {
        "method": spec_label, "score": score, "alpha": fmt(alpha),
        "n_avg": "" if n_avg is None else str(n_avg), "rep": "" if rep is None else str(rep),
        "covgap": fmt(report.cov_gap), "avgsize": fmt(report.avg_size),
        "fracundercov": fmt(report.frac_under_cov), "marginal": fmt(report.marginal_coverage),
        "n_null_classes": str(n_null), "seed": str(seed),
    }


@dataclass(frozen=True)
class SweepConfig:
    methods: tuple[MethodSpec, ...]
    scores: tuple[ScoreKind, ...]
    alpha: float
    n_avg_list: tuple[int, ...]
    n_reps: int = 10
    master_seed: int = 0
    gamma: float | None = None
    n_clusters: int | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        if not self.n_avg_list:
            raise ValueError("n_avg_list must not be empty")
        if not self.methods or not self.scores:
            raise ValueError("need at least one method and one score")


@dataclass
class SweepResult:
    rows: list[dict]
    aggregate: list[dict]

    def rows_csv(self) -> str:
        return to_csv(self.rows, ROW_COLUMNS + ["error"])

    def aggregate_csv(self) -> str:
        return to_csv(self.aggregate, AGG_COLUMNS)


def to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore", restval="")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _score_label(dataset: Dataset, kind: ScoreKind) -> str:
    return "precomputed" if dataset.has_scores else kind.name


def _run_rep(dataset: Dataset, matrices: dict, config: SweepConfig, n_avg: int, rep: int) -> list[dict]:
    rep_seed = derive_int(config.master_seed, "rep", n_avg, rep)
    cal, hold = calibration_indices(dataset.n_examples, dataset.n_classes, n_avg, rep_seed)
    rows = []
    for spec in config.methods:
        for score_name, matrix in matrices.items():
            fit_seed = derive_int(rep_seed, "fit", spec.label, score_name)
            row = {"method": spec.label, "score": score_name, "alpha": fmt(config.alpha),
                   "n_avg": str(n_avg), "rep": str(rep), "seed": str(fit_seed)}
            try:
                data = true_label_scores(matrix[cal], dataset.labels[cal], dataset.n_classes)
                model = fit_method(spec, data, config.alpha, fit_seed,
                                   gamma=config.gamma, n_clusters=config.n_clusters)
                report = evaluate_model(model, matrix[hold], dataset.labels[hold])
                row = metrics_row(spec.label, score_name, config.alpha, n_avg, rep, report,
                                  model.n_null_classes, fit_seed)
                row["error"] = ""
            except Exception as e:  # recorded per cell, the sweep carries on
                row["error"] = f"{type(e).__name__}: {e}"
            rows.append(row)
    return rows


def aggregate_rows(rows: list[dict], config: SweepConfig) -> list[dict]:
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((int(r["n_avg"]), r["method"], r["score"]), []).append(r)
    order = {s.label: i for i, s in enumerate(config.methods)}
    out = []
    for (n_avg, method, score) in sorted(cells, key=lambda c: (c[0], order[c[1]], c[2])):
        group = cells[(n_avg, method, score)]
        agg = {"method": method, "score": score, "alpha": fmt(config.alpha), "n_avg": str(n_avg),
               "n_reps": str(len(group)), "error": ""}
        failed = [r for r in group if r.get("error")]
        if failed:
            agg["error"] = f"rep {failed[0]['rep']}: {failed[0]['error']}"
            out.append(agg)
            continue
        for col in METRIC_COLUMNS:
            vals = [float(r[col]) for r in group]
            mean = math.fsum(vals) / len(vals)
            agg[col] = fmt(mean)
            if len(vals) > 1:
                var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
                agg[f"{col}_se"] = fmt(math.sqrt(var / len(vals)))
            else:
                agg[f"{col}_se"] = ""
        out.append(agg)
    return out


def run_sweep(dataset: Dataset, config: SweepConfig) -> SweepResult:
    """Run every (n_avg, rep) cell and aggregate means and standard errors."""
    need = max(config.n_avg_list) * dataset.n_classes
    if need > dataset.n_examples:
        raise ValueError(f"n_avg={max(config.n_avg_list)} needs {need} examples, dataset has {dataset.n_examples}")
    matrices = {}
    for kind in config.scores:
        label = _score_label(dataset, kind)
        if label not in matrices:
            matrices[label] = dataset.score_matrix(kind, seed=config.master_seed)

    tasks = [(n_avg, rep) for n_avg in config.n_avg_list for rep in range(config.n_reps)]
    # fallback and cluster-reduction warnings would repeat for every rep
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if config.jobs > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                chunks = list(pool.map(lambda t: _run_rep(dataset, matrices, config, *t), tasks))
        else:
            chunks = [_run_rep(dataset, matrices, config, *t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    return SweepResult(rows, aggregate_rows(rows, config))
