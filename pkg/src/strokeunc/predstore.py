"""Predictive-sample data model and the long-format CSV store.

A cohort file holds one row per (patient, image, MC run)::

    patient_id,patient_label,image_id,slice_index,image_label,run,p_stroke

Only the stroke probability is stored; the no-stroke column is
reconstructed as ``1 - p_stroke`` so every row is normalized by design.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ._io import atomic_write_text

STROKE = "stroke"
NO_STROKE = "no_stroke"
TIA = "tia"
IMAGE_LABELS = (NO_STROKE, STROKE)
PATIENT_LABELS = (TIA, STROKE)

HEADER = ("patient_id", "patient_label", "image_id", "slice_index", "image_label", "run", "p_stroke")


class SampleFileError(ValueError):
    """A cohort CSV could not be parsed; ``line`` is 1-based (header is line 1)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.reason = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class PredictiveSamples:
    """T x 2 matrix of MC-dropout softmax outputs for one input.

    Column 0 is no-stroke, column 1 is stroke. The stroke column is stored;
    column 0 is always derived as ``1 - p_stroke`` so that serialization
    round-trips bit-exactly.
    """

    p_stroke: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_stroke, dtype=np.float64).reshape(-1)
        if p.size < 1:
            raise ValueError("PredictiveSamples needs at least one run")
        if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("probability out of range [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "p_stroke", p)

    @classmethod
    def from_runs(cls, runs) -> "PredictiveSamples":
        runs = np.asarray(runs, dtype=np.float64)
        if runs.ndim != 2 or runs.shape[1] != 2 or runs.shape[0] < 1:
            raise ValueError(f"runs must have shape (T, 2) with T >= 1, got {runs.shape}")
        if np.any(runs < 0.0) or np.any(runs > 1.0):
            raise ValueError("probability out of range [0, 1]")
        if np.any(np.abs(runs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every run must sum to 1 within 1e-9")
        return cls(runs[:, 1])

    @property
    def runs(self) -> np.ndarray:
        return np.column_stack([1.0 - self.p_stroke, self.p_stroke])

    @property
    def T(self) -> int:
        return int(self.p_stroke.size)

    def __eq__(self, other):
        if not isinstance(other, PredictiveSamples):
            return NotImplemented
        return np.array_equal(self.p_stroke, other.p_stroke)

    def __hash__(self):
        return hash(self.p_stroke.tobytes())


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    slice_index: int
    true_label: str
    samples: PredictiveSamples

    def __post_init__(self):
        if self.true_label not in IMAGE_LABELS:
            raise ValueError(f"image label must be one of {IMAGE_LABELS}, got {self.true_label!r}")
        if int(self.slice_index) < 0:
            raise ValueError("slice_index must be >= 0")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    patient_label: str
    images: tuple[ImageRecord, ...]

    def __post_init__(self):
        if self.patient_label not in PATIENT_LABELS:
            raise ValueError(
                f"patient label must be one of {PATIENT_LABELS}, got {self.patient_label!r}"
            )
        images = tuple(sorted(self.images, key=lambda im: im.slice_index))
        if not images:
            raise ValueError(f"patient {self.patient_id!r} has no images")
        slices = [im.slice_index for im in images]
        if len(set(slices)) != len(slices):
            raise ValueError(f"patient {self.patient_id!r} has duplicate slice_index values")
        ids = [im.image_id for im in images]
        if len(set(ids)) != len(ids):
            raise ValueError(f"patient {self.patient_id!r} has duplicate image ids")
        if self.patient_label == TIA and any(im.true_label == STROKE for im in images):
            raise ValueError(f"tia patient {self.patient_id!r} contains a stroke-labeled image")
        object.__setattr__(self, "images", images)

    @property
    def label(self) -> int:
        return int(self.patient_label == STROKE)


@dataclass(frozen=True)
class CohortDataset:
    patients: tuple[PatientRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        patients = tuple(self.patients)
        ids = [p.patient_id for p in patients]
        if len(set(ids)) != len(ids):
            raise ValueError("patient_id values must be unique")
        object.__setattr__(self, "patients", patients)

    def __len__(self):
        return len(self.patients)

    def __iter__(self):
        return iter(self.patients)

    def by_id(self) -> dict[str, PatientRecord]:
        return {p.patient_id: p for p in self.patients}

    def subset(self, patient_ids: Iterable[str]) -> "CohortDataset":
        lookup = self.by_id()
        return CohortDataset(tuple(lookup[pid] for pid in patient_ids))

    @property
    def n_images(self) -> int:
        return sum(len(p.images) for p in self.patients)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _parse_int(text: str, name: str, line: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise SampleFileError(f"malformed row: {name} is not an integer ({text!r})", line) from None
    if value < 0:
        raise SampleFileError(f"malformed row: {name} must be >= 0", line)
    return value


def parse_samples_text(text: str) -> CohortDataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SampleFileError("empty file: missing header", 1) from None
    if tuple(h.strip() for h in header) != HEADER:
        raise SampleFileError(f"header must be exactly {','.join(HEADER)}", 1)

    # patient_id -> {"label", "line", "images": {image_id -> {...}}}, insertion ordered
    patients: dict[str, dict] = {}
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(HEADER):
            raise SampleFileError(
                f"malformed row: expected {len(HEADER)} fields, got {len(row)}", line
            )
        pid, plabel, iid, slice_text, ilabel, run_text, p_text = (f.strip() for f in row)
        if not pid or not iid:
            raise SampleFileError("malformed row: empty patient_id or image_id", line)
        if plabel not in PATIENT_LABELS:
            raise SampleFileError(f"malformed row: patient_label {plabel!r}", line)
        if ilabel not in IMAGE_LABELS:
            raise SampleFileError(f"malformed row: image_label {ilabel!r}", line)
        slice_index = _parse_int(slice_text, "slice_index", line)
        run = _parse_int(run_text, "run", line)
        try:
            p = float(p_text)
        except ValueError:
            raise SampleFileError(f"malformed row: p_stroke is not a number ({p_text!r})", line) from None
        if not (0.0 <= p <= 1.0):
            raise SampleFileError(f"probability out of range: {p_text}", line)

        pat = patients.setdefault(pid, {"label": plabel, "images": {}})
        if pat["label"] != plabel:
            raise SampleFileError(f"inconsistent patient_label for patient {pid!r}", line)
        if plabel == TIA and ilabel == STROKE:
            raise SampleFileError(f"tia patient {pid!r} contains a stroke-labeled image", line)
        img = pat["images"].setdefault(iid, {"slice": slice_index, "label": ilabel, "runs": {}})
        if img["slice"] != slice_index or img["label"] != ilabel:
            raise SampleFileError(f"inconsistent slice_index/image_label for image {iid!r}", line)
        if run in img["runs"]:
            raise SampleFileError(
                f"duplicate (patient_id, image_id, run) triple ({pid}, {iid}, {run})", line
            )
        img["runs"][run] = (p, line)

    records = []
    for pid, pat in patients.items():
        images = []
        seen_slices: dict[int, str] = {}
        for iid, img in pat["images"].items():
            runs = img["runs"]
            order = sorted(runs)
            if order != list(range(len(order))):
                last_line = max(l for _, l in runs.values())
                raise SampleFileError(
                    f"runs for image {iid!r} must be 0..T-1 without gaps", last_line
                )
            if img["slice"] in seen_slices:
                line = min(l for _, l in runs.values())
                raise SampleFileError(
                    f"slice_index {img['slice']} repeated within patient {pid!r}", line
                )
            seen_slices[img["slice"]] = iid
            p_stroke = np.array([runs[r][0] for r in order])
            images.append(ImageRecord(iid, img["slice"], img["label"], PredictiveSamples(p_stroke)))
        records.append(PatientRecord(pid, pat["label"], tuple(images)))
    return CohortDataset(tuple(records))


def parse_samples_file(path) -> CohortDataset:
    """Read and validate a long-format cohort CSV.

    Patients keep their order of first appearance; images are ordered by
    ``slice_index`` and runs by run index regardless of row order.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_samples_text(fh.read())


def format_float(x: float) -> str:
    # shortest decimal that round-trips to the same double
    return repr(float(x))


def serialize_samples_text(dataset: CohortDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for patient in dataset.patients:
        for image in patient.images:
            for run, p in enumerate(image.samples.p_stroke):
                writer.writerow(
                    (
                        patient.patient_id,
                        patient.patient_label,
                        image.image_id,
                        image.slice_index,
                        image.true_label,
                        run,
                        format_float(p),
                    )
                )
    return buf.getvalue()


def serialize_samples_file(dataset: CohortDataset, path) -> None:
    atomic_write_text(os.fspath(path), serialize_samples_text(dataset))
