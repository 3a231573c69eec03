"""Neural workplace choice model: shared zone-block MLP plus per-zone constants.

Every zone ``j`` is scored by the same multilayer perceptron applied to
the zone's job counts, the person's accessibility to that zone and the
person's attributes; a trainable alternative-specific constant is added
per zone and a softmax over zones gives the choice probabilities.  Zones
without jobs get utility ``-inf`` and so probability exactly 0.

Feature vectors (before z-scoring)::

    car mode: log1p(jobs_1..7), accessibility, has_car                  (9)
    all mode: log1p(jobs_1..7), accessibility, household_type, has_kids,
              has_car, gender, income_class, employment                 (14)
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import ATTRIBUTE_RANGES, ATTRIBUTES, N_OCCUPATIONS, OCCUPATIONS, Dataset, softmax
from .nested_logit import ZeroProbabilityError, chosen_log_probabilities
from .optim import AdamState, adam_step
from .rng import Rng

log = logging.getLogger(__name__)

FEATURE_VERSION = 1
MODE_ATTRIBUTES = {
    "car": ("has_car",),
    "all": ATTRIBUTES,
}
N_ZONE_FEATURES = N_OCCUPATIONS
ACCESS_COLUMN = N_OCCUPATIONS


class TrainingDivergedError(FloatingPointError):
    """Loss or gradients became non-finite during training."""


@dataclass(frozen=True)
class FeatureSpec:
    mode: str = "car"

    def __post_init__(self):
        if self.mode not in MODE_ATTRIBUTES:
            raise ValueError(f"feature mode must be 'car' or 'all', got {self.mode!r}")

    @property
    def attributes(self) -> tuple[str, ...]:
        return MODE_ATTRIBUTES[self.mode]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f"log1p_jobs_{o}" for o in OCCUPATIONS) + ("accessibility",) + self.attributes

    @property
    def input_dim(self) -> int:
        return len(self.names)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "input_dim": self.input_dim, "features": list(self.names), "version": FEATURE_VERSION}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        spec = cls(d["mode"])
        if d.get("input_dim", spec.input_dim) != spec.input_dim:
            raise ValueError(f"input_dim {d['input_dim']} does not match mode {spec.mode!r}")
        return spec


def build_features(individual, zone, accessibility_value: float, spec: FeatureSpec) -> np.ndarray:
    """Unscaled feature vector for one person-zone pair."""
    jobs = np.asarray(zone.jobs, dtype=np.float64)
    parts = [np.log1p(jobs), [float(accessibility_value)]]
    attrs = []
    for name in spec.attributes:
        value = getattr(individual, name)
        lo, hi = ATTRIBUTE_RANGES[name]
        if not lo <= value <= hi:
            raise ValueError(f"{name}={value} outside [{lo}, {hi}]")
        attrs.append(float(value))
    parts.append(attrs)
    return np.concatenate(parts)


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_scaler(training_rows) -> Scaler:
    """Per-column mean and population std; constant columns get std 1."""
    rows = np.asarray(training_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("fit_scaler needs a nonempty 2-D array of rows")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Scaler(mean, std)


def apply_scaler(scaler: Scaler, vector) -> np.ndarray:
    return (np.asarray(vector, dtype=np.float64) - scaler.mean) / scaler.std


def _column_stats(values: np.ndarray) -> tuple[float, float]:
    m = float(values.mean())
    s = float(values.std())
    return m, s if s > 0 else 1.0


def fit_feature_scaler(spec: FeatureSpec, dataset: Dataset) -> Scaler:
    """Scaler over all N x J person-zone rows without materialising them.

    Each person sees every zone once, so zone columns have the moments of
    the zone table, attribute columns those of the person table and the
    accessibility column those of the whole matrix.
    """
    if dataset.n_individuals == 0:
        raise ValueError("cannot fit a scaler on an empty training set")
    stats = [_column_stats(np.log1p(dataset.jobs[:, k])) for k in range(N_OCCUPATIONS)]
    stats.append(_column_stats(dataset.accessibility))
    stats += [_column_stats(dataset.attribute(a).astype(np.float64)) for a in spec.attributes]
    mean, std = zip(*stats)
    return Scaler(np.array(mean), np.array(std))


@dataclass
class EncodedData:
    """Scaled inputs split into their zone, person-zone and person parts."""

    zone: np.ndarray  # (J, 7)
    access: np.ndarray  # (N, J)
    person: np.ndarray  # (N, m)
    work: np.ndarray  # (N,), -1 when unobserved
    weights: np.ndarray  # (N,)
    available: np.ndarray  # (J,) bool, zone has jobs


def encode(spec: FeatureSpec, scaler: Scaler, dataset: Dataset) -> EncodedData:
    mean, std = scaler.mean, scaler.std
    z = (np.log1p(dataset.jobs) - mean[:N_ZONE_FEATURES]) / std[:N_ZONE_FEATURES]
    a = (dataset.accessibility - mean[ACCESS_COLUMN]) / std[ACCESS_COLUMN]
    raw = np.stack([dataset.attribute(n).astype(np.float64) for n in spec.attributes], axis=1)
    p = (raw - mean[ACCESS_COLUMN + 1 :]) / std[ACCESS_COLUMN + 1 :]
    available = dataset.total_jobs() > 0
    return EncodedData(z, a, p, np.asarray(dataset.work), np.asarray(dataset.weights), available)


@dataclass
class TrainConfig:
    hidden_sizes: tuple[int, ...] = (100, 150)
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    output_activation: str = "identity"

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("need at least one hidden layer with positive width")
        if not (self.learning_rate > 0 and self.epochs >= 1 and self.batch_size >= 1):
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if self.output_activation not in ("identity", "relu"):
            raise ValueError("output_activation must be 'identity' or 'relu'")

    def to_dict(self) -> dict:
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "output_activation": self.output_activation,
        }


@dataclass
class TrainHistory:
    train_ll: list[float] = field(default_factory=list)
    val_ll: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final_epoch(self) -> int:
        return len(self.train_ll)


class NeuralModel:
    """Zone-block MLP weights, per-zone constants and the input scaler.

    ``weights[l]`` has shape ``(h_l, h_{l-1})``; ``biases`` cover the
    hidden layers only and the output row ``w_out`` has no bias, the
    per-zone constant playing that role.
    """

    model_kind = "neural"

    def __init__(self, weights, biases, w_out, asc, scaler: Scaler, feature_spec: FeatureSpec, output_activation: str = "identity"):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.w_out = np.asarray(w_out, dtype=np.float64).reshape(1, -1)
        self.asc = np.asarray(asc, dtype=np.float64)
        self.scaler = scaler
        self.feature_spec = feature_spec
        self.output_activation = output_activation
        self._check()

    def _check(self):
        dim = self.feature_spec.input_dim
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per hidden layer and at least one hidden layer")
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or W.shape[1] != dim or b.shape != (W.shape[0],):
                raise ValueError("layer shapes are not dimensionally consistent")
            dim = W.shape[0]
        if self.w_out.shape != (1, dim):
            raise ValueError("output layer does not match the last hidden layer")
        if self.scaler.mean.shape != (self.feature_spec.input_dim,) or np.any(self.scaler.std <= 0):
            raise ValueError("scaler does not match the feature spec")

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(W.shape[0] for W in self.weights)

    @property
    def n_zones(self) -> int:
        return self.asc.size

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out + [self.w_out, self.asc]

    def copy(self) -> "NeuralModel":
        return NeuralModel(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.w_out.copy(),
            self.asc.copy(),
            self.scaler,
            self.feature_spec,
            self.output_activation,
        )

    def utilities(self, dataset: Dataset, chunk: int = 256) -> np.ndarray:
        _check_zone_count(self, dataset)
        enc = encode(self.feature_spec, self.scaler, dataset)
        out = np.empty((dataset.n_individuals, dataset.n_zones))
        for start in range(0, dataset.n_individuals, chunk):
            rows = np.arange(start, min(start + chunk, dataset.n_individuals))
            out[rows] = _forward(self, enc, rows)[0]
        return out

    def probabilities(self, dataset: Dataset) -> np.ndarray:
        return softmax(self.utilities(dataset), axis=1)

    def log_probabilities_chosen(self, dataset: Dataset) -> np.ndarray:
        return chosen_log_probabilities(self.utilities(dataset), dataset)


def _check_zone_count(model: NeuralModel, dataset: Dataset) -> None:
    if model.n_zones != dataset.n_zones:
        raise ValueError(f"model has {model.n_zones} zone constants, dataset has {dataset.n_zones} zones")


def init_model(spec: FeatureSpec, scaler: Scaler, n_zones: int, config: TrainConfig, rng: Rng) -> NeuralModel:
    """He-uniform weights, zero biases and zero zone constants."""

    def he_uniform(fan_out, fan_in):
        limit = math.sqrt(6.0 / fan_in)
        return (rng.random(fan_out * fan_in) * 2.0 - 1.0).reshape(fan_out, fan_in) * limit

    weights, biases = [], []
    fan_in = spec.input_dim
    for h in config.hidden_sizes:
        weights.append(he_uniform(h, fan_in))
        biases.append(np.zeros(h))
        fan_in = h
    w_out = he_uniform(1, fan_in)
    return NeuralModel(weights, biases, w_out, np.zeros(n_zones), scaler, spec, config.output_activation)


def mlp_forward(weights, biases, w_out, x, output_activation: str = "identity") -> float:
    """ReLU hidden layers then a bias-free output row, for one input vector."""
    a = np.asarray(x, dtype=np.float64)
    for W, b in zip(weights, biases):
        W = np.asarray(W, dtype=np.float64)
        if W.ndim != 2 or W.shape[1] != a.shape[0]:
            raise ValueError(f"layer of shape {W.shape} cannot take an input of length {a.shape[0]}")
        a = np.maximum(W @ a + np.asarray(b, dtype=np.float64), 0.0)
    w_out = np.asarray(w_out, dtype=np.float64).reshape(-1)
    if w_out.shape != a.shape:
        raise ValueError("output row does not match the last hidden layer")
    v = float(w_out @ a)
    return max(v, 0.0) if output_activation == "relu" else v


def forward_zone_block(model: NeuralModel, scaled_input) -> float:
    """Utility of one zone block for an already scaled input vector."""
    a = np.asarray(scaled_input, dtype=np.float64)
    if a.shape != (model.feature_spec.input_dim,):
        raise ValueError(f"input length {a.shape} does not match input_dim {model.feature_spec.input_dim}")
    return mlp_forward(model.weights, model.biases, model.w_out, a, model.output_activation)


def _forward(model: NeuralModel, enc: EncodedData, rows: np.ndarray):
    """Utilities (B, J) for individuals ``rows`` plus cached activations."""
    W1 = model.weights[0]
    zone_part = enc.zone @ W1[:, :N_ZONE_FEATURES].T  # (J, h1)
    person_part = enc.person[rows] @ W1[:, ACCESS_COLUMN + 1 :].T + model.biases[0]  # (B, h1)
    acc = enc.access[rows]  # (B, J)
    z = zone_part[None, :, :] + person_part[:, None, :] + acc[:, :, None] * W1[:, ACCESS_COLUMN]
    B, J, h = z.shape
    pre = [z.reshape(B * J, h)]
    a = np.maximum(pre[0], 0.0)
    acts = [a]
    for W, b in zip(model.weights[1:], model.biases[1:]):
        zl = a @ W.T + b
        pre.append(zl)
        a = np.maximum(zl, 0.0)
        acts.append(a)
    out = (a @ model.w_out[0]).reshape(B, J)
    if model.output_activation == "relu":
        out_pre = out
        out = np.maximum(out, 0.0)
    else:
        out_pre = None
    V = out + model.asc[None, :]
    V[:, ~enc.available] = -np.inf
    return V, (pre, acts, out_pre, acc)


def model_utilities(model: NeuralModel, dataset: Dataset, individual: int) -> np.ndarray:
    """Utility vector over zones for one individual (row index)."""
    _check_zone_count(model, dataset)
    enc = encode(model.feature_spec, model.scaler, dataset.subset([individual]))
    return _forward(model, enc, np.array([0]))[0][0]


def predict_probabilities(model: NeuralModel, dataset: Dataset, individual: int) -> np.ndarray:
    return softmax(model_utilities(model, dataset, individual))


def loss_and_gradients(model: NeuralModel, enc: EncodedData, rows) -> tuple[float, list[np.ndarray]]:
    """Weighted negative log-likelihood of ``rows`` and its exact gradients.

    Gradients are returned in the order of :meth:`NeuralModel.parameters`.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("batch is empty")
    y = enc.work[rows]
    if np.any(y < 0):
        raise ValueError("batch contains individuals without an observed work zone")
    if not np.all(enc.available[y]):
        raise ZeroProbabilityError("batch contains a choice of a zone without jobs")
    w = enc.weights[rows]
    V, (pre, acts, out_pre, acc) = _forward(model, enc, rows)
    B, J = V.shape
    m = V.max(axis=1, keepdims=True)
    e = np.exp(V - m)
    s = e.sum(axis=1, keepdims=True)
    logp_chosen = V[np.arange(B), y] - (m[:, 0] + np.log(s[:, 0]))
    loss = float(-(w @ logp_chosen))

    dV = e / s
    dV[np.arange(B), y] -= 1.0
    dV *= w[:, None]
    d_asc = dV.sum(axis=0)
    du = dV if out_pre is None else dV * (out_pre > 0)
    du_flat = du.reshape(B * J)
    d_wout = (du_flat @ acts[-1])[None, :]
    da = du_flat[:, None] * model.w_out[0][None, :]

    grads_W = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for layer in range(len(model.weights) - 1, 0, -1):
        dz = da * (pre[layer] > 0)
        grads_W[layer] = dz.T @ acts[layer - 1]
        grads_b[layer] = dz.sum(axis=0)
        da = dz @ model.weights[layer]
    dz1 = (da * (pre[0] > 0)).reshape(B, J, -1)
    W1 = model.weights[0]
    gW1 = np.empty_like(W1)
    gW1[:, :N_ZONE_FEATURES] = dz1.sum(axis=0).T @ enc.zone
    gW1[:, ACCESS_COLUMN] = np.einsum("bjh,bj->h", dz1, acc)
    per_person = dz1.sum(axis=1)  # (B, h1)
    gW1[:, ACCESS_COLUMN + 1 :] = per_person.T @ enc.person[rows]
    grads_W[0] = gW1
    grads_b[0] = per_person.sum(axis=0)

    grads = []
    for gW, gb in zip(grads_W, grads_b):
        grads += [gW, gb]
    return loss, grads + [d_wout, d_asc]


def _total_loglik(model: NeuralModel, enc: EncodedData, chunk: int = 256) -> float:
    total = 0.0
    n = enc.work.size
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        V = _forward(model, enc, rows)[0]
        m = V.max(axis=1)
        lse = m + np.log(np.exp(V - m[:, None]).sum(axis=1))
        total += float(enc.weights[rows] @ (V[np.arange(rows.size), enc.work[rows]] - lse))
    return total


def _param_norms(model: NeuralModel) -> list[float]:
    return [float(np.linalg.norm(p)) for p in model.parameters()]


def train(
    dataset_train: Dataset,
    dataset_val: Dataset | None,
    feature_spec: FeatureSpec,
    config: TrainConfig = TrainConfig(),
) -> tuple[NeuralModel, TrainHistory]:
    """Mini-batch Adam on the weighted negative log-likelihood.

    Returns the final-epoch model.  The per-epoch training log-likelihood
    is the sum of the batch log-likelihoods seen during that epoch; the
    validation value is a full pass after the epoch.
    """
    dataset_train.require_choices()
    if dataset_val is not None:
        dataset_val.require_choices()
    started = time.perf_counter()
    rng = Rng(config.seed)
    init_rng, shuffle_rng = rng.split(), rng.split()
    scaler = fit_feature_scaler(feature_spec, dataset_train)
    model = init_model(feature_spec, scaler, dataset_train.n_zones, config, init_rng)
    enc = encode(feature_spec, scaler, dataset_train)
    enc_val = encode(feature_spec, scaler, dataset_val) if dataset_val is not None else None
    params = model.parameters()
    state = AdamState.for_params(
        params,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
    )
    history = TrainHistory()
    n = dataset_train.n_individuals
    order = np.arange(n, dtype=np.int64)
    for epoch in range(1, config.epochs + 1):
        shuffle_rng.shuffle(order)
        epoch_ll = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            rows = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(model, enc, rows)
            if not (math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads)):
                raise TrainingDivergedError(
                    f"non-finite loss or gradient at epoch {epoch}, batch {b}; "
                    f"parameter norms {[round(v, 4) for v in _param_norms(model)]}"
                )
            adam_step(state, params, grads)
            epoch_ll -= loss
        history.train_ll.append(epoch_ll)
        val_ll = _total_loglik(model, enc_val) if enc_val is not None else float("nan")
        history.val_ll.append(val_ll)
        log.info("epoch %d train_ll=%.4f val_ll=%.4f", epoch, epoch_ll, val_ll)
    history.wall_time = time.perf_counter() - started
    return model, history
