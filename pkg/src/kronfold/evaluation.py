"""Reconstruction error, k-NN classification and the k-fold experiment harness."""

from __future__ import annotations

import csv
import io
import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import as_samples, kfold_split
from .glram import FitConfig, glram_fit, glram_objective, glram_project
from .mpglram import MpglramConfig, mpglram_fit, mpglram_project
from .svd_baseline import svd_fit, svd_objective, svd_project

METHODS = ("svd", "glram", "mpglram")
CSV_FIELDS = ("method", "d", "k_pairs", "fold_count", "fold_index", "metric",
              "value", "seed", "wall_time_ms")


class UnseenClassWarning(UserWarning):
    """A test fold holds a class that is absent from its training folds."""


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def rmsre(data, reconstructed):
    """Root mean squared Frobenius residual, ``sqrt(mean_i ||A_i - Ahat_i||^2)``."""
    A = as_samples(data)
    B = as_samples(reconstructed)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    r = A - B
    return float(np.sqrt(np.sum(r * r) / A.shape[0]))


def knn_classify(train_features, train_labels, test_features, K=1):
    """Majority-vote k-nearest-neighbour labels under Euclidean distance.

    Distance ties go to the lower training index.  Vote ties go to the
    label whose voters have the smaller summed distance, then to the
    smaller label id.
    """
    X = np.asarray(train_features, dtype=float)
    y = np.asarray(train_labels)
    T = np.asarray(test_features, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if K < 1:
        raise ValueError("K must be >= 1")
    X = X.reshape(X.shape[0], -1)
    T = T.reshape(T.shape[0], -1)
    K = min(K, X.shape[0])
    diff = T[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.einsum("tnf,tnf->tn", diff, diff))
    order = np.argsort(dist, axis=1, kind="stable")[:, :K]
    out = np.empty(T.shape[0], dtype=y.dtype)
    for t in range(T.shape[0]):
        votes = {}
        for i in order[t]:
            count, total = votes.get(y[i], (0, 0.0))
            votes[y[i]] = (count + 1, total + dist[t, i])
        out[t] = min(votes, key=lambda c: (-votes[c][0], votes[c][1], c))
    return out


# ---------------------------------------------------------------------------
# Reducers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    """A reducer configuration.  ``side`` is the core side length: GLRAM and
    MPGLRAM reduce to ``side x side`` cores, SVD to ``side**2`` vectors."""

    name: str
    side: int
    k_pairs: int = 1
    init_mode: str = "glram-warm"
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0
    centered: bool = False

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}")

    @property
    def reduced_dim(self):
        return self.side * self.side

    @property
    def pair_count(self):
        return {"svd": 0, "glram": 1}.get(self.name, self.k_pairs)


@dataclass
class FittedReducer:
    spec: MethodSpec
    model: object

    def project(self, data):
        """Feature vectors, one row per sample."""
        A = as_samples(data)
        if self.spec.name == "svd":
            return svd_project(self.model, A)
        if self.spec.name == "glram":
            cores = glram_project(self.model, A)
        else:
            cores = mpglram_project(self.model, A)
        return cores.reshape(A.shape[0], -1)

    def training_error(self, data):
        A = as_samples(data)
        if self.spec.name == "svd":
            return svd_objective(A, self.model)
        if self.spec.name == "glram":
            return glram_objective(A, self.model)[0]
        return self.model.objective

    def factors(self):
        if self.spec.name == "svd":
            return [self.model.W]
        if self.spec.name == "glram":
            return [self.model.L, self.model.R]
        return [self.model.pairs.Ls, self.model.pairs.Rs]


def fit_reducer(data, spec, warm_start=None):
    A = as_samples(data)
    if spec.name == "svd":
        return FittedReducer(spec, svd_fit(A, spec.reduced_dim, spec.centered))
    glram_cfg = FitConfig(spec.side, spec.side, max_iter=spec.max_iter, tol=spec.tol,
                          seed=spec.seed)
    if spec.name == "glram":
        return FittedReducer(spec, glram_fit(A, glram_cfg))
    cfg = MpglramConfig(spec.k_pairs, spec.side, spec.side, outer_iters=spec.max_iter,
                        tol=spec.tol, seed=spec.seed, init_mode=spec.init_mode,
                        glram_max_iter=spec.max_iter, glram_tol=spec.tol)
    return FittedReducer(spec, mpglram_fit(A, cfg, warm_start))


def fit_mpglram_chain(data, spec, k_values, glram_model=None):
    """Fit MPGLRAM for increasing ``k``: the first from GLRAM, each later one
    warm-started from the previous model padded with one new pair."""
    fitted = {}
    previous = None
    for k in sorted(k_values):
        if previous is None:
            cell = replace(spec, name="mpglram", k_pairs=k, init_mode="glram-warm")
            fitted[k] = fit_reducer(data, cell, glram_model)
        else:
            cell = replace(spec, name="mpglram", k_pairs=k, init_mode="pairs-warm")
            fitted[k] = fit_reducer(data, cell, previous.model)
        previous = fitted[k]
    return fitted


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class EvalRecord:
    method: str
    d: int
    k_pairs: int
    fold_count: int
    fold_index: int
    metric: str
    value: float
    seed: int
    wall_time_ms: float = 0.0
    knn: int | None = None


@dataclass
class EvalReport:
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def extend(self, other):
        self.records.extend(other.records)
        self.warnings.extend(other.warnings)
        self.failures.extend(other.failures)

    def select(self, **criteria):
        return [r for r in self.records
                if all(getattr(r, key) == value for key, value in criteria.items())]

    def _metric_name(self, record, knn_values):
        if record.metric == "accuracy" and len(knn_values) > 1:
            return f"accuracy_{record.knn}nn"
        return record.metric

    def rows(self):
        knn_values = sorted({r.knn for r in self.records if r.knn is not None})
        out = []
        for r in self.records:
            value = round(r.value, 2) if r.metric == "accuracy" else r.value
            out.append({
                "method": r.method, "d": r.d, "k_pairs": r.k_pairs,
                "fold_count": r.fold_count, "fold_index": r.fold_index,
                "metric": self._metric_name(r, knn_values), "value": value,
                "seed": r.seed, "wall_time_ms": round(r.wall_time_ms, 3),
            })
        return out

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self):
        doc = {"metadata": self.metadata, "records": self.rows(),
               "warnings": self.warnings, "failures": self.failures}
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"

    def accuracy_table(self):
        """Rows ``(fold_count, d, svd, glram, mpglram)`` of mean accuracy.

        The MPGLRAM column is the best aggregate accuracy over the fitted
        pair counts.  Returns one list per classifier ``K``.
        """
        tables = {}
        for r in self.records:
            if r.metric != "accuracy" or r.fold_index != -1:
                continue
            cell = tables.setdefault(r.knn, {}).setdefault((r.fold_count, r.d), {})
            cell[r.method] = max(cell.get(r.method, -1.0), r.value)
        return {
            knn: [(fc, d, cells.get("svd"), cells.get("glram"), cells.get("mpglram"))
                  for (fc, d), cells in sorted(rows.items())]
            for knn, rows in sorted(tables.items())
        }


def worker_count():
    """Worker cap from ``KRONFOLD_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("KRONFOLD_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"KRONFOLD_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("KRONFOLD_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _run_cells(fn, cells, workers):
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

def _fold_reducers(train, spec, k_values):
    """Fit every reducer needed for one training split, keyed by pair count."""
    if spec.name != "mpglram":
        return {spec.pair_count: fit_reducer(train, spec)}
    glram_model = None
    if spec.init_mode == "glram-warm":
        glram_model = fit_reducer(train, replace(spec, name="glram")).model
    return fit_mpglram_chain(train, spec, k_values, glram_model)


def cross_validate(dataset, method, plan, knn=(1,), k_values=None, timing=False,
                   on_fit=None, workers=1):
    """K-fold accuracy of a reducer followed by k-NN.

    Each fold fits the reducer on the training folds only, projects both
    sides and classifies the held-out fold.  One record per fold plus an
    aggregate (``fold_index == -1``) mean is emitted for every ``K`` in
    ``knn`` and, for MPGLRAM, every pair count in ``k_values``.

    ``on_fit(fold, reducers)`` is called after each fold's fits.
    """
    if not dataset.has_labels:
        raise ValueError("cross_validate needs labels")
    knn = tuple(knn)
    if method.name == "mpglram":
        k_values = tuple(sorted(k_values or (method.k_pairs,)))
    else:
        k_values = (method.pair_count,)
    report = EvalReport()

    def run_fold(fold):
        train_idx, test_idx = plan.train_indices(fold), plan.test_indices(fold)
        train, test = dataset.subset(train_idx), dataset.subset(test_idx)
        notes = []
        unseen = sorted(set(test.labels.tolist()) - set(train.labels.tolist()))
        if unseen:
            msg = f"fold {fold}: classes {unseen} absent from training folds"
            warnings.warn(msg, UnseenClassWarning, stacklevel=2)
            notes.append(msg)
        start = time.perf_counter()
        reducers = _fold_reducers(train, method, k_values)
        fit_ms = (time.perf_counter() - start) * 1e3
        if on_fit is not None:
            on_fit(fold, reducers)
        scores = {}
        for kp, reducer in reducers.items():
            Xtr, Xte = reducer.project(train), reducer.project(test)
            for K in knn:
                pred = knn_classify(Xtr, train.labels, Xte, K)
                scores[kp, K] = 100.0 * float(np.mean(pred == test.labels))
        return scores, notes, fit_ms

    results = _run_cells(run_fold, list(range(plan.K)), workers)
    for kp in k_values:
        for K in knn:
            values = []
            for fold, (scores, _, fit_ms) in enumerate(results):
                values.append(scores[kp, K])
                report.records.append(EvalRecord(
                    method.name, method.side, kp, plan.K, fold, "accuracy", scores[kp, K],
                    method.seed, fit_ms if timing else 0.0, K))
            report.records.append(EvalRecord(
                method.name, method.side, kp, plan.K, -1, "accuracy", float(np.mean(values)),
                method.seed, sum(r[2] for r in results) if timing else 0.0, K))
    for _, notes, _ in results:
        report.warnings.extend(notes)
    return report


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _rmsre_cells(dataset, methods, side, k_values, seed, base, timing):
    """RMSRE of every method at one side length, fitted on the full dataset."""
    records = []
    A = dataset.samples
    glram_model = None
    for name in methods:
        if name == "mpglram":
            continue
        start = time.perf_counter()
        reducer = fit_reducer(A, replace(base, name=name, side=side, seed=seed))
        elapsed = (time.perf_counter() - start) * 1e3
        if name == "glram":
            glram_model = reducer.model
        value = float(np.sqrt(reducer.training_error(A) / dataset.N))
        records.append(EvalRecord(name, side, reducer.spec.pair_count, 0, -1, "rmsre", value,
                                  seed, elapsed if timing else 0.0))
    if "mpglram" in methods:
        if glram_model is None:
            glram_model = fit_reducer(A, replace(base, name="glram", side=side, seed=seed)).model
        start = time.perf_counter()
        chain = fit_mpglram_chain(A, replace(base, side=side, seed=seed), k_values, glram_model)
        elapsed = (time.perf_counter() - start) * 1e3
        for kp, reducer in chain.items():
            value = float(np.sqrt(reducer.model.objective / dataset.N))
            records.append(EvalRecord("mpglram", side, kp, 0, -1, "rmsre", value, seed,
                                      elapsed if timing else 0.0))
    order = {name: i for i, name in enumerate(methods)}
    records.sort(key=lambda r: (order[r.method], r.k_pairs))
    return records


def sweep(dataset, methods=METHODS, sides=(5, 6, 7, 8, 9), k_values=(2,), fold_counts=(2, 5, 10),
          seed=0, knn=(1,), max_iter=100, tol=1e-6, centered=False, timing=False, workers=1):
    """Cross product of methods, core sizes, pair counts and fold counts.

    Emits one RMSRE record per (method, side, pair count), fitted on the full
    dataset, and the cross-validated accuracy records of
    :func:`cross_validate` for every fold count when labels are present.
    A failing cell is logged in ``report.failures`` and skipped.
    """
    methods = tuple(m for m in METHODS if m in methods)
    k_values = tuple(sorted(set(k_values)))
    base = MethodSpec("svd", 1, max_iter=max_iter, tol=tol, seed=seed, centered=centered)
    report = EvalReport(metadata={
        "methods": list(methods), "sides": list(sides), "k_values": list(k_values),
        "fold_counts": list(fold_counts), "knn": list(knn), "seed": seed,
        "accuracy_aggregate": "mean over folds, single cross-validation run",
        "rmsre": "sqrt(mean_i ||A_i - Ahat_i||_F^2), reducers fitted on the full dataset",
        "d": "core side length; svd uses d*d components",
    })

    def rmsre_cell(side):
        try:
            return _rmsre_cells(dataset, methods, side, k_values, seed, base, timing), None
        except Exception as exc:  # a failed cell must not abort the sweep
            return [], f"rmsre side={side}: {type(exc).__name__}: {exc}"

    for records, failure in _run_cells(rmsre_cell, list(sides), workers):
        report.records.extend(records)
        if failure:
            report.failures.append(failure)

    if not dataset.has_labels:
        return report
    cells = [(fc, side, name) for fc in fold_counts for side in sides for name in methods]
    plans = {}
    for fc in fold_counts:
        try:
            plans[fc] = kfold_split(dataset, fc, seed)
        except ValueError as exc:
            report.failures.append(f"folds={fc}: {exc}")

    def accuracy_cell(cell):
        fc, side, name = cell
        if fc not in plans:
            return None, None
        spec = replace(base, name=name, side=side, k_pairs=k_values[0])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UnseenClassWarning)
                return cross_validate(dataset, spec, plans[fc], knn, k_values, timing), None
        except Exception as exc:
            return None, f"accuracy folds={fc} side={side} method={name}: {type(exc).__name__}: {exc}"

    for sub, failure in _run_cells(accuracy_cell, cells, workers):
        if sub is not None:
            report.extend(sub)
        if failure:
            report.failures.append(failure)
    report.warnings = sorted(set(report.warnings))
    return report
