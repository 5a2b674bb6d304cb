"""Five-fold cross-validation of the patient-level aggregators."""
from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import metrics
from ._io import atomic_write_json, atomic_write_text, dumps_json
from .aggregate import (
    ALL_VARIANTS, DEFAULT_MC_RUNS, AggregationModel, FeatureVariant, PatientPrediction, TrainConfig,
    TrainingLog, build_features, build_model, maximum_method, predictions_to_csv, train_aggregator,
)
from .measures import MEASURE_NAMES, UncertaintySummary, summarize_many
from .predstore import STROKE, TIA, CohortDataset

N_FOLDS = 5
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


# --------------------------------------------------------------------------
# folds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    test: tuple[str, ...]
    train1: tuple[str, ...]
    valid1: tuple[str, ...]
    valid2: tuple[str, ...]

    @property
    def training_side(self) -> tuple[str, ...]:
        return self.train1 + self.valid1 + self.valid2


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[FoldSplit, ...]
    seed: int
    stratification: dict  # "fold_<i>" -> {split name -> stroke fraction}
    cohort_stroke_fraction: float

    @property
    def test_sets(self) -> list[tuple[str, ...]]:
        return [f.test for f in self.folds]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "cohort_stroke_fraction": self.cohort_stroke_fraction,
            "stratification": self.stratification,
            "folds": [asdict(f) for f in self.folds],
        }


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _split_counts(n: int, fractions) -> tuple[int, int, int]:
    n_v1 = max(1, _round_half_up(fractions[1] * n))
    n_v2 = max(1, _round_half_up(fractions[2] * n))
    return n - n_v1 - n_v2, n_v1, n_v2


def make_folds(
    dataset: CohortDataset, seed: int = 0, n_folds: int = N_FOLDS, fractions=SPLIT_FRACTIONS
) -> FoldPlan:
    """Stratified test partition plus a stratified Train-1/Valid-1/Valid-2 split per fold.

    Patients of each class are shuffled, stroke patients first, and dealt
    round-robin into the test folds, so fold sizes differ by at most one
    and each fold holds a near-equal share of both classes.
    """
    if len(dataset) < 2 * n_folds:
        raise ValueError(f"make_folds: need at least {2 * n_folds} patients, got {len(dataset)}")
    if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) <= 0:
        raise ValueError("make_folds: split fractions must be positive and sum to 1")
    by_class = {
        lab: [p.patient_id for p in dataset if p.patient_label == lab] for lab in (STROKE, TIA)
    }
    for lab, ids in by_class.items():
        if len(ids) < n_folds:
            raise ValueError(
                f"make_folds: too few {lab} patients to stratify ({len(ids)} < {n_folds})"
            )
    rng = np.random.default_rng(seed)
    dealt: list[str] = []
    for lab in (STROKE, TIA):
        ids = by_class[lab]
        dealt += [ids[i] for i in rng.permutation(len(ids))]
    fold_of = {pid: k % n_folds for k, pid in enumerate(dealt)}
    label_of = {p.patient_id: p.patient_label for p in dataset}

    folds = []
    report = {}
    for i in range(n_folds):
        test = tuple(pid for pid in dealt if fold_of[pid] == i)
        fold_rng = np.random.default_rng([seed, i])
        parts: list[list[str]] = [[], [], []]
        for lab in (STROKE, TIA):
            rest = [pid for pid in dealt if fold_of[pid] != i and label_of[pid] == lab]
            rest = [rest[j] for j in fold_rng.permutation(len(rest))]
            n_tr, n_v1, _ = _split_counts(len(rest), fractions)
            parts[0] += rest[:n_tr]
            parts[1] += rest[n_tr : n_tr + n_v1]
            parts[2] += rest[n_tr + n_v1 :]
        split = FoldSplit(test, tuple(parts[0]), tuple(parts[1]), tuple(parts[2]))
        folds.append(split)
        report[f"fold_{i}"] = {
            name: sum(label_of[p] == STROKE for p in ids) / len(ids)
            for name, ids in (("test", test), ("train1", split.train1), ("valid1", split.valid1), ("valid2", split.valid2))
        }
    frac = len(by_class[STROKE]) / len(dataset)
    return FoldPlan(tuple(folds), seed, report, frac)


# --------------------------------------------------------------------------
# experiment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    mc_runs: int = DEFAULT_MC_RUNS
    seed: int = 0
    fractions: tuple = SPLIT_FRACTIONS
    n_jobs: int = 1
    z: float = metrics.Z95
    grid: tuple = metrics.DEFAULT_GRID

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        d["grid"] = list(self.grid)
        return d


@dataclass
class CellResult:
    fold: int
    variant: str
    predictions: list[PatientPrediction] = field(default_factory=list)
    model: AggregationModel | None = None
    log: TrainingLog | None = None
    error: str | None = None


@dataclass
class ExperimentResult:
    plan: FoldPlan
    variants: tuple[str, ...]
    cells: dict  # (fold, variant) -> CellResult
    fold_reports: dict  # (fold, variant) -> EvaluationReport
    pooled: dict  # variant -> EvaluationReport | None
    image_report: metrics.EvaluationReport | None = None


def cohort_summaries(dataset: CohortDataset) -> dict[str, list[UncertaintySummary]]:
    """Per-image summaries for every patient, in slice order."""
    flat = [im.samples for p in dataset for im in p.images]
    out = summarize_many(flat)
    result = {}
    k = 0
    for p in dataset:
        result[p.patient_id] = out[k : k + len(p.images)]
        k += len(p.images)
    return result


def cell_seed(seed: int, fold: int, variant: str) -> int:
    return int(np.random.SeedSequence([seed, fold, zlib.crc32(variant.encode())]).generate_state(1)[0])


def _run_cell(args) -> CellResult:
    fold, variant_name, split, patients, summaries, config = args
    variant = FeatureVariant.parse(variant_name)
    cell = CellResult(fold, variant_name)
    try:
        seed = cell_seed(config.seed, fold, variant_name)
        test = [patients[pid] for pid in split.test]
        if not variant.is_network:
            cell.predictions = [maximum_method(p, summaries[p.patient_id]) for p in test]
            cell.model = AggregationModel(variant)
            return cell

        def examples(ids):
            return [
                (build_features(patients[pid], summaries[pid], variant), patients[pid].label)
                for pid in ids
            ]

        net = build_model(variant)
        tcfg = replace(config.train, seed=seed)
        params, log = train_aggregator(net, examples(split.train1 + split.valid1), examples(split.valid2), tcfg)
        cell.model = AggregationModel(variant, net, params, tcfg, log)
        cell.log = log
        cell.predictions = [cell.model.predict(p, summaries[p.patient_id], config.mc_runs, seed) for p in test]
    except Exception as exc:  # a failed cell must not sink the experiment
        cell.error = f"{type(exc).__name__}: {exc}"
        cell.predictions = []
    return cell


def report_for(predictions: Sequence[PatientPrediction], config: ExperimentConfig):
    if not predictions:
        return None
    p = [pr.p_stroke for pr in predictions]
    y = [pr.true_label == STROKE for pr in predictions]
    yhat = [pr.predicted_label == STROKE for pr in predictions]
    measures = None
    if all(pr.summary is not None for pr in predictions):
        measures = {m: [pr.summary.measure(m) for pr in predictions] for m in MEASURE_NAMES}
    return metrics.evaluate_predictions(p, y, yhat, measures, z=config.z, grid=config.grid)


def image_level_report(dataset: CohortDataset, summaries, config: ExperimentConfig | None = None):
    """Image-level discrimination and uncertainty evaluation over the whole cohort."""
    config = config or ExperimentConfig()
    flat = [(im, s) for p in dataset for im, s in zip(p.images, summaries[p.patient_id])]
    p = [s.p_stroke for _, s in flat]
    y = [im.true_label == STROKE for im, _ in flat]
    yhat = [s.predicted_class == STROKE for _, s in flat]
    measures = {m: [s.measure(m) for _, s in flat] for m in MEASURE_NAMES}
    return metrics.evaluate_predictions(p, y, yhat, measures, z=config.z, grid=config.grid)


def run_experiment(
    dataset: CohortDataset,
    variants: Sequence[FeatureVariant | str] = ALL_VARIANTS,
    config: ExperimentConfig = ExperimentConfig(),
) -> ExperimentResult:
    """Train and test every variant on every fold.

    Image summaries are computed once and shared by all folds and
    variants. Cells are independent; with ``n_jobs > 1`` they run in
    worker processes and are reassembled in a fixed order, so results do
    not depend on the degree of parallelism.
    """
    names = tuple(v.name if isinstance(v, FeatureVariant) else FeatureVariant.parse(v).name for v in variants)
    if len(set(names)) != len(names):
        raise ValueError("variants must be unique")
    plan = make_folds(dataset, config.seed, fractions=config.fractions)
    summaries = cohort_summaries(dataset)
    patients = dataset.by_id()

    jobs = []
    for i, split in enumerate(plan.folds):
        involved = set(split.training_side) | set(split.test)
        sub_p = {pid: patients[pid] for pid in involved}
        sub_s = {pid: summaries[pid] for pid in involved}
        for name in names:
            jobs.append((i, name, split, sub_p, sub_s, config))

    if config.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            done = list(pool.map(_run_cell, jobs))
    else:
        done = [_run_cell(j) for j in jobs]
    cells = {(c.fold, c.variant): c for c in done}

    fold_reports = {}
    pooled = {}
    for name in names:
        all_preds = []
        for i in range(len(plan.folds)):
            preds = cells[(i, name)].predictions
            fold_reports[(i, name)] = report_for(preds, config)
            all_preds.extend(preds)
        pooled[name] = report_for(all_preds, config)
    return ExperimentResult(
        plan, names, cells, fold_reports, pooled, image_level_report(dataset, summaries, config)
    )


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def file_stem(variant: str) -> str:
    return variant.replace("/", "_")


def table2_csv(result: ExperimentResult) -> str:
    cols = ["variant", "family", "inputs", "n", "n_correct", "accuracy", "ci_lower", "ci_upper", "sanders"]
    cols += [f"auc_{m}" for m in MEASURE_NAMES] + ["failed_folds"]
    lines = [",".join(cols)]

    def fmt(x):
        return "" if x is None else repr(float(x))

    for name in result.variants:
        v = FeatureVariant.parse(name)
        rep = result.pooled[name]
        failed = [str(i) for i in range(len(result.plan.folds)) if result.cells[(i, name)].error]
        row = [name, v.family, v.inputs]
        if rep is None:
            row += ["0", "0"] + [""] * (4 + len(MEASURE_NAMES))
        else:
            row += [str(rep.n), str(rep.n_correct), fmt(rep.accuracy), fmt(rep.ci[0]), fmt(rep.ci[1]), fmt(rep.sanders)]
            row += [fmt(rep.auc(m)) for m in MEASURE_NAMES]
        row.append(";".join(failed))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _write_report(report, directory):
    os.makedirs(directory, exist_ok=True)
    atomic_write_json(os.path.join(directory, "metrics.json"), report.to_dict())
    for fname, text in metrics.report_files(report).items():
        atomic_write_text(os.path.join(directory, fname), text)


def write_experiment(result: ExperimentResult, out_dir: str, manifest: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "table2.csv"), table2_csv(result))
    atomic_write_json(os.path.join(out_dir, "folds.json"), result.plan.to_dict())
    if result.image_report is not None:
        _write_report(result.image_report, os.path.join(out_dir, "image_level"))
    for name in result.variants:
        if result.pooled[name] is not None:
            _write_report(result.pooled[name], os.path.join(out_dir, "pooled", file_stem(name)))
    for i in range(len(result.plan.folds)):
        fdir = os.path.join(out_dir, f"fold_{i}")
        os.makedirs(fdir, exist_ok=True)
        errors = {}
        for name in result.variants:
            cell = result.cells[(i, name)]
            stem = file_stem(name)
            if cell.error:
                errors[name] = cell.error
                continue
            cell.model.save(os.path.join(fdir, f"model_{stem}.json"))
            if cell.log is not None:
                atomic_write_json(os.path.join(fdir, f"trainlog_{stem}.json"), cell.log.to_dict())
            atomic_write_text(os.path.join(fdir, f"predictions_{stem}.csv"), predictions_to_csv(cell.predictions))
            rep = result.fold_reports[(i, name)]
            if rep is not None:
                _write_report(rep, os.path.join(fdir, f"eval_{stem}"))
        if errors:
            atomic_write_json(os.path.join(fdir, "errors.json"), errors)
    atomic_write_text(os.path.join(out_dir, "manifest.json"), dumps_json(manifest))
