"""Seeded synthetic cohorts with MC-dropout-like predictive samples.

Each image gets a latent mean stroke probability and T per-run draws
from ``Beta(mean * k, (1 - mean) * k)``. Easy images have means close to
the correct class and the full concentration ``k``; hard images have
means near 0.5 and a reduced concentration, so they are both more often
wrong and visibly more uncertain. How often an image is hard varies by
patient: each patient draws a hard-image rate from a Beta distribution
with mean ``difficulty_mix``, so a few patients are mostly hard and
genuinely ambiguous at patient level. Stroke images in a stroke patient form
one contiguous run of slices.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .predstore import (
    NO_STROKE, STROKE, TIA, CohortDataset, ImageRecord, PatientRecord, PredictiveSamples,
)


@dataclass(frozen=True)
class GeneratorConfig:
    n_stroke_patients: int = 355
    n_tia_patients: int = 156
    min_images: int = 21
    max_images: int = 46
    mean_images: float = 30.0
    mean_stroke_images: float = 12.5
    mc_runs: int = 500
    concentration: float = 20.0
    difficulty_mix: float = 0.15
    label_noise: float = 0.0
    hard_concentration_scale: float = 0.25
    hard_spread: float = 0.12
    patient_difficulty_concentration: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_stroke_patients < 0 or self.n_tia_patients < 0:
            raise ValueError("patient counts must be >= 0")
        if self.n_stroke_patients + self.n_tia_patients < 1:
            raise ValueError("the cohort needs at least one patient")
        if not (1 <= self.min_images <= self.max_images):
            raise ValueError("need 1 <= min_images <= max_images")
        if not (self.min_images <= self.mean_images <= self.max_images):
            raise ValueError("mean_images must lie in [min_images, max_images]")
        if not (0 < self.mean_stroke_images <= self.min_images):
            raise ValueError("mean_stroke_images must be positive and at most min_images")
        if self.mc_runs < 1:
            raise ValueError("mc_runs must be >= 1")
        if not self.concentration > 0:
            raise ValueError("concentration must be > 0")
        if not (0.0 <= self.difficulty_mix < 1.0):
            raise ValueError("difficulty_mix must lie in [0, 1)")
        if not (0.0 <= self.label_noise < 0.5):
            raise ValueError("label_noise must lie in [0, 0.5)")
        if not (0.0 < self.hard_concentration_scale <= 1.0):
            raise ValueError("hard_concentration_scale must lie in (0, 1]")
        if self.hard_spread < 0:
            raise ValueError("hard_spread must be >= 0")
        if not self.patient_difficulty_concentration > 0:
            raise ValueError("patient_difficulty_concentration must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GenerationManifest:
    config: dict
    counts: dict
    patient_seeds: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _patient_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _patient_hard_rate(rng, cfg: GeneratorConfig) -> float:
    m = cfg.difficulty_mix
    if m == 0.0:
        return 0.0
    c = cfg.patient_difficulty_concentration
    if np.isinf(c):
        return m
    return float(rng.beta(m * c, (1.0 - m) * c))


def _image_mean(rng, is_stroke: bool, hard: bool, cfg: GeneratorConfig) -> float:
    if hard:
        mu = 0.5 + cfg.hard_spread * rng.standard_normal()
    else:
        confidence = 0.5 + 0.5 * rng.beta(6.0, 1.5)
        if rng.random() < cfg.label_noise:
            confidence = 1.0 - confidence
        mu = confidence if is_stroke else 1.0 - confidence
    return float(np.clip(mu, 0.02, 0.98))


def _generate_patient(cfg: GeneratorConfig, pid: str, label: str, seed: int):
    rng = np.random.default_rng(seed)
    extra = rng.poisson(cfg.mean_images - cfg.min_images)
    n_images = int(min(cfg.min_images + extra, cfg.max_images))
    stroke_slices: set[int] = set()
    if label == STROKE:
        length = int(np.clip(rng.poisson(cfg.mean_stroke_images), 1, n_images))
        start = int(rng.integers(0, n_images - length + 1))
        stroke_slices = set(range(start, start + length))
    hard_rate = _patient_hard_rate(rng, cfg)
    images = []
    n_hard = 0
    for j in range(n_images):
        is_stroke = j in stroke_slices
        hard = bool(rng.random() < hard_rate)
        n_hard += hard
        mu = _image_mean(rng, is_stroke, hard, cfg)
        k = cfg.concentration * (cfg.hard_concentration_scale if hard else 1.0)
        p = rng.beta(mu * k, (1.0 - mu) * k, size=cfg.mc_runs)
        images.append(
            ImageRecord(f"{pid}_s{j:02d}", j, STROKE if is_stroke else NO_STROKE, PredictiveSamples(p))
        )
    return PatientRecord(pid, label, tuple(images)), n_hard


def generate(config: GeneratorConfig = GeneratorConfig()) -> tuple[CohortDataset, GenerationManifest]:
    """Build a cohort; identical configs give identical datasets.

    Patient ``i`` draws from its own generator seeded by ``(seed, i)``,
    so patients can be produced in any order or in parallel.
    """
    n = config.n_stroke_patients + config.n_tia_patients
    labels = np.array([STROKE] * config.n_stroke_patients + [TIA] * config.n_tia_patients)
    labels = labels[np.random.default_rng(config.seed).permutation(n)]
    patients = []
    seeds = {}
    n_hard = 0
    for i, label in enumerate(labels):
        pid = f"P{i:04d}"
        seeds[pid] = _patient_seed(config.seed, i)
        rec, hard = _generate_patient(config, pid, str(label), seeds[pid])
        patients.append(rec)
        n_hard += hard
    dataset = CohortDataset(tuple(patients))
    n_stroke_img = sum(im.true_label == STROKE for p in patients for im in p.images)
    counts = {
        "n_patients": n,
        "n_stroke_patients": int(np.sum(labels == STROKE)),
        "n_tia_patients": int(np.sum(labels == TIA)),
        "n_images": dataset.n_images,
        "n_stroke_images": int(n_stroke_img),
        "n_no_stroke_images": int(dataset.n_images - n_stroke_img),
        "n_hard_images": int(n_hard),
    }
    return dataset, GenerationManifest(config.to_dict(), counts, seeds)


DEGENERATE_KINDS = ("all_confident_correct", "all_uniform", "single_patient")


def degenerate_cohort(kind: str, mc_runs: int = 10) -> CohortDataset:
    """Small fixtures whose measures are known in closed form.

    ``all_uniform``: every run is exactly 0.5 (PE = ln 2, Var = 0).
    ``all_confident_correct``: runs are exactly 1 on stroke images and 0
    elsewhere, so every image prediction is correct with zero uncertainty.
    ``single_patient``: one stroke patient, too small for cross-validation.
    """
    if kind not in DEGENERATE_KINDS:
        raise ValueError(f"kind must be one of {DEGENERATE_KINDS}")

    def patient(pid, label, n_images, stroke_slices, value_fn):
        images = []
        for j in range(n_images):
            is_stroke = j in stroke_slices
            p = np.full(mc_runs, value_fn(is_stroke))
            images.append(
                ImageRecord(f"{pid}_s{j:02d}", j, STROKE if is_stroke else NO_STROKE, PredictiveSamples(p))
            )
        return PatientRecord(pid, label, tuple(images))

    if kind == "all_uniform":
        pats = [
            patient("U0", STROKE, 6, {2, 3}, lambda s: 0.5),
            patient("U1", TIA, 6, set(), lambda s: 0.5),
        ]
    elif kind == "all_confident_correct":
        pats = [patient(f"C{i}", STROKE, 6, {1, 2, 3}, lambda s: 1.0 if s else 0.0) for i in range(5)]
        pats += [patient(f"C{i}", TIA, 6, set(), lambda s: 0.0) for i in range(5, 10)]
    else:
        pats = [patient("S0", STROKE, 6, {2, 3}, lambda s: 0.9 if s else 0.1)]
    return CohortDataset(tuple(pats))
