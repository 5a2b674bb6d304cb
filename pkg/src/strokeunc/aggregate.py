"""Patient-level aggregation of image-level predictions.

Nine aggregators are available, named ``family/inputs``:

============================  ======================================
``max``                       maximum image stroke probability
``fcnn/P``                    FC-NN on the five highest p_stroke
``fcnn/P+VR_PE_MI_Var``       weight-shared parallel FC-NN, 5 inputs/image
``fcnn/P+Epi_Alea``           weight-shared parallel FC-NN, 3 inputs/image
``fcnn/Hist``                 weight-shared parallel FC-NN, 100 bins/image
``cnn1d/<inputs>``            1D-CNN over all images in slice order
============================  ======================================

Network aggregators are trained with Adam on batch-mean cross-entropy
and keep the parameters of the epoch with the lowest validation loss.
At prediction time dropout stays on and each patient is pushed through
``T`` perturbations, giving a patient-level predictive distribution.
"""
from __future__ import annotations

import csv
import io
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from ._io import atomic_write_json, atomic_write_text
from .measures import UncertaintySummary, summarize
from .predstore import STROKE, TIA, PatientRecord, PredictiveSamples, format_float

TOP_K = 5
INPUT_KINDS = ("P", "P+VR_PE_MI_Var", "P+Epi_Alea", "Hist")
FAMILIES = ("fcnn", "cnn1d")
_INPUT_ALIASES = {"HistCounts": "Hist"}
DEFAULT_MC_RUNS = 500


@dataclass(frozen=True, order=True)
class FeatureVariant:
    family: str
    inputs: str = ""

    def __post_init__(self):
        inputs = _INPUT_ALIASES.get(self.inputs, self.inputs)
        object.__setattr__(self, "inputs", inputs)
        if self.family == "max":
            if inputs not in ("", "P"):
                raise ValueError("the maximum method takes no input variant")
            object.__setattr__(self, "inputs", "")
            return
        if self.family not in FAMILIES:
            raise ValueError(f"unknown aggregator family {self.family!r}")
        if inputs not in INPUT_KINDS:
            raise ValueError(f"unknown input variant {self.inputs!r}; expected one of {INPUT_KINDS}")

    @classmethod
    def parse(cls, text: str) -> "FeatureVariant":
        text = text.strip()
        if text == "max":
            return cls("max")
        family, sep, inputs = text.partition("/")
        if not sep:
            raise ValueError(f"variant must look like 'fcnn/P' or 'max', got {text!r}")
        return cls(family, inputs)

    @property
    def name(self) -> str:
        return "max" if self.family == "max" else f"{self.family}/{self.inputs}"

    @property
    def is_network(self) -> bool:
        return self.family != "max"

    @property
    def n_channels(self) -> int:
        return {"P": 1, "P+VR_PE_MI_Var": 5, "P+Epi_Alea": 3, "Hist": 100}[self.inputs]

    def __str__(self):
        return self.name


ALL_VARIANTS = tuple(
    [FeatureVariant("max")]
    + [FeatureVariant(f, i) for f in FAMILIES for i in INPUT_KINDS]
)


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


def _check_aligned(patient: PatientRecord, summaries: Sequence[UncertaintySummary]):
    if len(summaries) != len(patient.images):
        raise ValueError(
            f"patient {patient.patient_id!r}: {len(summaries)} summaries for {len(patient.images)} images"
        )


def select_top5(patient: PatientRecord, summaries: Sequence[UncertaintySummary]) -> list[int]:
    """Indices into ``patient.images`` of the five highest mean stroke probabilities.

    Ordered by descending p_stroke, ties by ascending slice index.
    """
    _check_aligned(patient, summaries)
    if len(patient.images) < TOP_K:
        raise ValueError(
            f"patient {patient.patient_id!r} has {len(patient.images)} images; "
            f"at least {TOP_K} are required"
        )
    order = sorted(
        range(len(patient.images)),
        key=lambda i: (-summaries[i].p_stroke, patient.images[i].slice_index),
    )
    return order[:TOP_K]


def image_channels(s: UncertaintySummary, inputs: str) -> np.ndarray:
    if inputs == "P":
        return np.array([s.p_stroke])
    if inputs == "P+VR_PE_MI_Var":
        return np.array([s.p_stroke, s.vr, s.pe, s.mi, s.var])
    if inputs == "P+Epi_Alea":
        return np.array([s.p_stroke, s.epi, s.alea])
    if inputs == "Hist":
        return np.array(s.hist[1])
    raise ValueError(f"unknown input variant {inputs!r}")


def build_features(patient: PatientRecord, summaries, variant: FeatureVariant) -> np.ndarray:
    """Network input for one patient.

    fcnn/P gives a length-5 vector; other fcnn variants a (5, channels)
    block in top-5 order; cnn1d variants an (n_images, channels) sequence
    in slice order.
    """
    _check_aligned(patient, summaries)
    if variant.family == "fcnn":
        idx = select_top5(patient, summaries)
        block = np.stack([image_channels(summaries[i], variant.inputs) for i in idx])
        return block[:, 0] if variant.inputs == "P" else block
    if variant.family == "cnn1d":
        if len(patient.images) < 3:
            raise ValueError(
                f"patient {patient.patient_id!r} has {len(patient.images)} images; the 1D-CNN needs >= 3"
            )
        return np.stack([image_channels(s, variant.inputs) for s in summaries])
    raise ValueError("the maximum method does not use network features")


# --------------------------------------------------------------------------
# architectures
# --------------------------------------------------------------------------


def default_dropout(variant: FeatureVariant) -> float:
    if variant.inputs == "Hist":
        return 0.5
    if variant.family == "fcnn" and variant.inputs == "P":
        return 0.3
    return 0.4


def build_model(
    variant: FeatureVariant,
    *,
    hidden: int = 8,
    head_hidden: int = 8,
    filters: int = 16,
    kernel: int = 3,
    dropout_rate: float | None = None,
) -> nn.NetworkGraph:
    if not variant.is_network:
        raise ValueError("the maximum method has no network")
    rate = default_dropout(variant) if dropout_rate is None else dropout_rate
    C = variant.n_channels
    if variant.family == "cnn1d":
        return nn.NetworkGraph(
            input_shape=(None, C),
            layers=(
                nn.conv1d(filters, kernel), nn.RELU, nn.dropout(rate),
                nn.GLOBAL_MAX_POOL, nn.dense(2), nn.SOFTMAX,
            ),
        )
    block = (nn.dense(hidden), nn.RELU, nn.dropout(rate)) * 3
    if variant.inputs == "P":
        return nn.NetworkGraph(input_shape=(TOP_K,), layers=block + (nn.dense(2), nn.SOFTMAX))
    return nn.NetworkGraph(
        input_shape=(TOP_K, C),
        pathway=block,
        shared=True,
        layers=(nn.CONCAT, nn.dense(head_hidden), nn.dropout(rate), nn.dense(2), nn.SOFTMAX),
    )


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError("learning rate must be a positive finite number")


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    valid_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 0 means the initial parameters

    def to_dict(self) -> dict:
        return asdict(self)


Example = tuple[np.ndarray, int]


def _batches_by_shape(items: Sequence[Example]):
    groups: dict[tuple, list[int]] = {}
    for i, (x, _) in enumerate(items):
        groups.setdefault(np.shape(x), []).append(i)
    return groups.values()


def evaluate(net, params, data: Sequence[Example]) -> tuple[float, float]:
    """Deterministic mean loss and accuracy."""
    if not data:
        return float("nan"), float("nan")
    loss_sum = 0.0
    correct = 0
    for idx in _batches_by_shape(data):
        x = np.stack([data[i][0] for i in idx])
        y = np.array([data[i][1] for i in idx])
        probs = nn.predict_proba(net, params, x)
        loss_sum += nn.cross_entropy_loss(probs, y) * len(idx)
        correct += int(np.sum((probs[:, 1] > 0.5) == (y == 1)))
    return loss_sum / len(data), correct / len(data)


def train_aggregator(
    net: nn.NetworkGraph,
    train: Sequence[Example],
    valid: Sequence[Example],
    config: TrainConfig = TrainConfig(),
) -> tuple[nn.ParameterStore, TrainingLog]:
    """Mini-batch Adam with retrospective early stopping on validation loss.

    Batches whose samples share a shape are stacked; otherwise each sample
    is run separately and gradients are averaged before the Adam step.
    Returns the parameters of the epoch with the lowest validation loss
    (the last epoch when ``valid`` is empty).
    """
    if not train:
        raise ValueError("training set is empty")
    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = nn.init_params(net, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    adam = nn.AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    log = TrainingLog()
    best = params.copy()
    best_loss = math.inf

    n = len(train)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            shapes = {np.shape(x) for x, _ in batch}
            if len(shapes) == 1:
                parts = [batch]
            else:
                parts = [[item] for item in batch]
            grads = None
            for part in parts:
                x = np.stack([b[0] for b in part])
                y = np.array([b[1] for b in part])
                probs, cache = nn.forward(net, params, x, "train", dropout_rng)
                g = nn.backward(net, params, cache, y)
                weight = len(part) / len(batch)
                if grads is None:
                    grads = {k: v * weight for k, v in g.items()}
                else:
                    for k, v in g.items():
                        grads[k] += v * weight
                loss_sum += nn.cross_entropy_loss(probs, y) * len(part)
                correct += int(np.sum((probs[:, 1] > 0.5) == (y == 1)))
            nn.adam_step(adam, params, grads)

        log.train_loss.append(loss_sum / n)
        log.train_acc.append(correct / n)
        v_loss, v_acc = evaluate(net, params, valid)
        log.valid_loss.append(v_loss)
        log.valid_acc.append(v_acc)
        if not valid or v_loss < best_loss:
            best_loss = v_loss
            best = params.copy()
            log.best_epoch = epoch
    return best, log


# --------------------------------------------------------------------------
# prediction
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PatientPrediction:
    patient_id: str
    mean_prob: tuple[float, float]
    summary: UncertaintySummary | None
    predicted_label: str
    true_label: str | None = None

    @property
    def p_stroke(self) -> float:
        return self.mean_prob[1]

    @property
    def correct(self) -> bool:
        return self.true_label is not None and self.predicted_label == self.true_label


def patient_label(p_stroke: float) -> str:
    return STROKE if p_stroke > 0.5 else TIA


def patient_seed(seed: int, patient_id: str) -> list[int]:
    """Seed material for one patient; independent of processing order."""
    return [int(seed), zlib.crc32(patient_id.encode("utf-8"))]


def maximum_method(patient: PatientRecord, summaries) -> PatientPrediction:
    _check_aligned(patient, summaries)
    m = max(s.p_stroke for s in summaries)
    return PatientPrediction(
        patient_id=patient.patient_id,
        mean_prob=(1.0 - m, m),
        summary=None,
        predicted_label=patient_label(m),
        true_label=patient.patient_label,
    )


def predict_patient(
    net: nn.NetworkGraph,
    params,
    features: np.ndarray,
    T: int = DEFAULT_MC_RUNS,
    seed=0,
    patient_id: str = "",
    true_label: str | None = None,
) -> PatientPrediction:
    """Patient-level MC dropout: ``T`` stochastic passes, then the usual summaries."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.broadcast_to(features, (T,) + np.shape(features))
    probs, _ = nn.forward(net, params, x, "mc_inference", rng)
    samples = PredictiveSamples(np.clip(probs[:, 1], 0.0, 1.0))
    s = summarize(samples)
    return PatientPrediction(
        patient_id=patient_id,
        mean_prob=s.mean_prob,
        summary=s,
        predicted_label=patient_label(s.p_stroke),
        true_label=true_label,
    )


# --------------------------------------------------------------------------
# model and prediction files
# --------------------------------------------------------------------------


@dataclass
class AggregationModel:
    variant: FeatureVariant
    net: nn.NetworkGraph | None = None
    params: nn.ParameterStore | None = None
    train_config: TrainConfig | None = None
    log: TrainingLog | None = None

    def to_dict(self) -> dict:
        cfg = self.train_config
        return {
            "format": "strokeunc-model/1",
            "variant": self.variant.name,
            "architecture": self.net.to_dict() if self.net is not None else None,
            "parameters": self.params.to_dict() if self.params is not None else None,
            "adam": (
                {"lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2, "eps": cfg.eps}
                if cfg is not None else None
            ),
            "training": asdict(cfg) if cfg is not None else None,
            "seed": cfg.seed if cfg is not None else None,
            "best_epoch": self.log.best_epoch if self.log is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AggregationModel":
        variant = FeatureVariant.parse(d["variant"])
        net = nn.NetworkGraph.from_dict(d["architecture"]) if d.get("architecture") else None
        params = nn.ParameterStore.from_dict(d["parameters"]) if d.get("parameters") else None
        cfg = TrainConfig(**d["training"]) if d.get("training") else None
        if variant.is_network and (net is None or params is None):
            raise ValueError(f"model file for {variant.name} lacks architecture or parameters")
        return cls(variant, net, params, cfg)

    def save(self, path) -> None:
        atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "AggregationModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def predict(self, patient: PatientRecord, summaries, T: int = DEFAULT_MC_RUNS, seed: int = 0):
        if not self.variant.is_network:
            return maximum_method(patient, summaries)
        x = build_features(patient, summaries, self.variant)
        return predict_patient(
            self.net, self.params, x, T, patient_seed(seed, patient.patient_id),
            patient.patient_id, patient.patient_label,
        )


PREDICTION_HEADER = (
    "patient_id", "p_bar_stroke", "var", "vr", "pe", "mi", "epi", "alea",
    "predicted_label", "true_label",
)


def predictions_to_csv(predictions: Sequence[PatientPrediction]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_HEADER)
    for p in predictions:
        s = p.summary
        unc = [""] * 6 if s is None else [format_float(getattr(s, k)) for k in ("var", "vr", "pe", "mi", "epi", "alea")]
        w.writerow([p.patient_id, format_float(p.p_stroke), *unc, p.predicted_label, p.true_label or ""])
    return buf.getvalue()


def write_predictions(path, predictions) -> None:
    atomic_write_text(path, predictions_to_csv(predictions))


@dataclass(frozen=True)
class PredictionRow:
    """One parsed row of a predictions file; absent measures are ``None``."""

    patient_id: str
    p_stroke: float
    measures: dict
    predicted_label: str
    true_label: str


def read_predictions(path) -> list[PredictionRow]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTION_HEADER:
            raise ValueError(f"predictions header must be exactly {','.join(PREDICTION_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(PREDICTION_HEADER):
                raise ValueError(f"line {reader.line_num}: expected {len(PREDICTION_HEADER)} fields")
            rec = dict(zip(PREDICTION_HEADER, row))
            try:
                measures = {k: (float(rec[k]) if rec[k] != "" else None) for k in ("var", "vr", "pe", "mi", "epi", "alea")}
                p = float(rec["p_bar_stroke"])
            except ValueError:
                raise ValueError(f"line {reader.line_num}: malformed number") from None
            for k in ("predicted_label", "true_label"):
                if rec[k] not in (STROKE, TIA):
                    raise ValueError(f"line {reader.line_num}: {k} must be stroke or tia")
            rows.append(PredictionRow(rec["patient_id"], p, measures, rec["predicted_label"], rec["true_label"]))
    return rows
