"""Reading and writing datasets and models, and synthetic data with known
latent cluster structure.

File formats
------------
probabilities / scores : CSV with a header row of class names, one row per
    example, one column per class.
labels : one integer class index per line.
model : JSON, see `CalibratedModel.to_dict`.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibrators import CalibratedModel
from .scores import NegativeProbabilityError, RowSumError, ScoreKind, normalize_rows, score_matrix
from .seeding import derive_rng

# distribution of non-true-label scores in synthetic data: mass near 1
OTHER_LABEL_BETA = (6.0, 1.5)


class DataFormatError(ValueError):
    """Malformed input file; carries the file and location of the problem."""

    def __init__(self, message: str, path=None, row: int | None = None, col: int | None = None):
        self.path = None if path is None else str(path)
        self.row = row
        self.col = col
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"column {col}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class NonNumericCellError(DataFormatError):
    pass


class DimensionMismatchError(DataFormatError):
    pass


class LabelRangeError(DataFormatError):
    pass


class RowNormalizationError(DataFormatError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Examples as either a probability matrix or precomputed candidate scores.

    Exactly one of `probs` and `scores` is set; both are (N, K).
    """

    labels: np.ndarray
    probs: np.ndarray | None = None
    scores: np.ndarray | None = None
    class_names: tuple[str, ...] | None = None
    latent_clusters: np.ndarray | None = None

    def __post_init__(self):
        if (self.probs is None) == (self.scores is None):
            raise ValueError("a dataset holds exactly one of probs and scores")
        matrix = np.asarray(self.probs if self.scores is None else self.scores, dtype=float)
        if matrix.ndim != 2:
            raise ValueError(f"expected an (N, K) matrix, got shape {matrix.shape}")
        labels = np.asarray(self.labels, dtype=int).ravel()
        if labels.size != matrix.shape[0]:
            raise ValueError(f"{matrix.shape[0]} rows but {labels.size} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= matrix.shape[1]):
            raise ValueError(f"labels must lie in [0, {matrix.shape[1]})")
        for arr in (matrix, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs" if self.scores is None else "scores", matrix)
        if self.class_names is not None:
            if len(self.class_names) != matrix.shape[1]:
                raise ValueError("class_names length must match the number of columns")
            object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.latent_clusters is not None:
            object.__setattr__(self, "latent_clusters", np.asarray(self.latent_clusters, dtype=int))

    @property
    def n_examples(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return (self.probs if self.scores is None else self.scores).shape[1]

    @property
    def has_scores(self) -> bool:
        return self.scores is not None

    def score_matrix(self, kind: ScoreKind, seed: int = 0) -> np.ndarray:
        """Candidate scores for every (example, label).

        Precomputed scores are returned as-is. For probabilities, APS and RAPS
        draw one uniform per example from a stream derived from `seed`.
        """
        if self.scores is not None:
            return self.scores
        u = derive_rng(seed, "u", kind.name).random(self.n_examples)
        return score_matrix(self.probs, kind, u)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            labels=self.labels[idx],
            probs=None if self.probs is None else self.probs[idx],
            scores=None if self.scores is None else self.scores[idx],
            class_names=self.class_names,
            latent_clusters=self.latent_clusters,
        )


# -- CSV ----------------------------------------------------------------------

def read_matrix_csv(path) -> tuple[np.ndarray, tuple[str, ...]]:
    """Numeric matrix and header names from a CSV file with a header row.

    Row numbers in errors are 0-based example indices (the header excluded).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file", path) from None
        header = tuple(h.strip() for h in header)
        rows = []
        for i, raw in enumerate(reader):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise DimensionMismatchError(
                    f"expected {len(header)} columns, found {len(raw)}", path, row=len(rows))
            vals = []
            for j, cell in enumerate(raw):
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCellError(f"non-numeric cell {cell!r}", path, row=len(rows), col=j) from None
                if math.isnan(v):
                    raise NonNumericCellError("NaN cell", path, row=len(rows), col=j)
                vals.append(v)
            rows.append(vals)
    matrix = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return matrix, header


def write_matrix_csv(path, matrix, class_names=None) -> None:
    matrix = np.asarray(matrix, dtype=float)
    names = class_names or [f"c{j}" for j in range(matrix.shape[1])]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in matrix:
            w.writerow([repr(float(v)) for v in row])


def read_labels(path) -> np.ndarray:
    path = Path(path)
    out = []
    with path.open() as fh:
        for line in fh:
            text = line.strip()
            if not text:
                continue
            try:
                out.append(int(text))
            except ValueError:
                raise NonNumericCellError(f"label {text!r} is not an integer", path, row=len(out)) from None
    return np.array(out, dtype=int)


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(y)}\n" for y in labels))


def load_dataset(labels_path, probs_path=None, scores_path=None) -> Dataset:
    """Validated dataset from a labels file and one probability or score CSV.

    Probability rows within 1e-3 of summing to one are renormalized; rows
    further off raise `RowNormalizationError` naming the row.
    """
    if (probs_path is None) == (scores_path is None):
        raise ValueError("give exactly one of probs_path and scores_path")
    matrix_path = probs_path if scores_path is None else scores_path
    matrix, header = read_matrix_csv(matrix_path)
    labels = read_labels(labels_path)
    if labels.size != matrix.shape[0]:
        raise DimensionMismatchError(
            f"{matrix.shape[0]} matrix rows but {labels.size} labels", labels_path)
    bad = np.flatnonzero((labels < 0) | (labels >= matrix.shape[1]))
    if bad.size:
        raise LabelRangeError(f"label {labels[bad[0]]} outside [0, {matrix.shape[1]})",
                              labels_path, row=int(bad[0]))
    if probs_path is not None:
        try:
            matrix = normalize_rows(matrix)
        except RowSumError as e:
            raise RowNormalizationError(str(e), probs_path, row=e.row) from None
        except NegativeProbabilityError as e:
            raise RowNormalizationError(str(e), probs_path, row=e.row, col=e.col) from None
        return Dataset(labels, probs=matrix, class_names=header)
    return Dataset(labels, scores=matrix, class_names=header)


def save_dataset(dataset: Dataset, matrix_path, labels_path) -> None:
    m = dataset.probs if dataset.scores is None else dataset.scores
    write_matrix_csv(matrix_path, m, dataset.class_names)
    write_labels(labels_path, dataset.labels)


def save_model(model: CalibratedModel, path) -> None:
    Path(path).write_text(model.to_json() + "\n")


def load_model(path) -> CalibratedModel:
    try:
        return CalibratedModel.from_json(Path(path).read_text())
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"invalid model file: {e}", path) from None


# -- synthetic data -------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Classes share one of `n_archetypes` Beta score laws (round-robin)."""

    n_classes: int
    n_archetypes: int
    beta_params: tuple[tuple[float, float], ...]
    n_examples: int
    seed: int = 0
    freq: str | dict = "uniform"
    other_params: tuple[float, float] = OTHER_LABEL_BETA

    def __post_init__(self):
        object.__setattr__(self, "beta_params", tuple(tuple(map(float, p)) for p in self.beta_params))
        object.__setattr__(self, "other_params", tuple(map(float, self.other_params)))
        if self.n_classes < 1 or self.n_examples < 0:
            raise ValueError("n_classes must be >= 1 and n_examples >= 0")
        if not 1 <= self.n_archetypes <= self.n_classes:
            raise ValueError("need 1 <= n_archetypes <= n_classes")
        if len(self.beta_params) != self.n_archetypes:
            raise ValueError(f"need {self.n_archetypes} Beta shape pairs, got {len(self.beta_params)}")
        if any(len(p) != 2 or min(p) <= 0 for p in self.beta_params + (self.other_params,)):
            raise ValueError("Beta shapes must be positive pairs")
        self.class_probs()  # validates freq

    def class_probs(self) -> np.ndarray:
        if self.freq == "uniform":
            return np.full(self.n_classes, 1.0 / self.n_classes)
        if isinstance(self.freq, dict) and set(self.freq) == {"zipf"}:
            s = float(self.freq["zipf"])
            w = np.arange(1, self.n_classes + 1, dtype=float) ** -s
            return w / w.sum()
        raise ValueError(f"freq must be 'uniform' or {{'zipf': s}}, got {self.freq!r}")

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSpec:
        known = {"n_classes", "n_archetypes", "beta_params", "freq", "n_examples", "seed", "other_params"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown synthetic spec keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> SyntheticSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Precomputed-score dataset with a known archetype per class.

    True-label scores come from the class's archetype Beta law; every other
    candidate score is drawn from `spec.other_params`.
    """
    rng = derive_rng(spec.seed, "synthetic")
    latent = np.arange(spec.n_classes) % spec.n_archetypes
    labels = rng.choice(spec.n_classes, size=spec.n_examples, p=spec.class_probs())
    shapes = np.array(spec.beta_params)[latent[labels]]
    true = rng.beta(shapes[:, 0], shapes[:, 1]) if spec.n_examples else np.empty(0)
    scores = rng.beta(*spec.other_params, size=(spec.n_examples, spec.n_classes))
    scores[np.arange(spec.n_examples), labels] = true
    return Dataset(labels, scores=scores, latent_clusters=latent)


def sample_calibration(dataset: Dataset, n_avg: int, seed: int) -> tuple[Dataset, Dataset]:
    """Calibration sample of n_avg * K examples without replacement; the rest
    is the holdout."""
    cal, hold = calibration_indices(dataset.n_examples, dataset.n_classes, n_avg, seed)
    return dataset.subset(cal), dataset.subset(hold)


def calibration_indices(n_examples: int, n_classes: int, n_avg: int, seed: int):
    size = n_avg * n_classes
    if n_avg < 1:
        raise ValueError(f"n_avg must be >= 1, got {n_avg}")
    if size > n_examples:
        raise ValueError(f"need {size} examples for n_avg={n_avg}, dataset has {n_examples}")
    perm = derive_rng(seed, "calibration").permutation(n_examples)
    cal, hold = np.sort(perm[:size]), np.sort(perm[size:])
    if hold.size == 0:
        warnings.warn("calibration sample uses the whole dataset; holdout is empty", stacklevel=2)
    return cal, hold
