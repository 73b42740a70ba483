"""
Surrogate Training.

Fits `NetworkWeights` to closed-chain plant data with truncated backpropagation
through time and reports accuracy the way the engine model is judged: RMSE in
physical units and NRMSE in percent of each output's range, on a train and a
validation split.

Module Functions:
- `generate_dataset(params, n_cycles, seed)`: closed-chain data where every input
  row carries the measured IMEP/CA50 of the previous cycle.
- `train(dataset, spec, config)`: Adam with a cosine-decayed learning rate,
  gradient clipping and early stopping on validation loss.
- `evaluate(weights, dataset)`: one-step-ahead RMSE/NRMSE with the LSTM state
  carried by running the network over the whole sequence.
- `loss_and_gradient(...)`: mean squared error of one BPTT window and its exact
  gradient (exposed for gradient checks).

Normalization constants are fitted on the training split only; validation targets
are read exclusively through `evaluate`.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.metrics import mean_squared_error
from sklearn.preprocessing import StandardScaler

from lstm_nmpc.domain import (
    INPUT_NAMES,
    N_INPUTS,
    N_OUTPUTS,
    OUTPUT_NAMES,
    OUTPUT_UNITS,
    Actuation,
    ActuatorBounds,
)
from lstm_nmpc.errors import TrainingDivergedError
from lstm_nmpc.nn_core import (
    NetworkSpec,
    NetworkWeights,
    Normalization,
    activate,
    lstm_gates,
    model_step_array,
)
from lstm_nmpc.surrogate_plant import PlantParams, PlantState, excitation_array, plant_step

logger = logging.getLogger(__name__)

MIN_DATASET_CYCLES = 1000


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Contiguous cycle-indexed sequence of model inputs and measured outputs.

    The first `split_index` cycles form the training split, the rest the
    validation split; the order of cycles is never shuffled.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    train_fraction: float = 0.8

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        outputs = np.asarray(self.outputs, dtype=float)
        if inputs.ndim != 2 or inputs.shape[1] != N_INPUTS:
            raise ValueError(f"inputs must have shape (n, {N_INPUTS})")
        if outputs.shape != (inputs.shape[0], N_OUTPUTS):
            raise ValueError(f"outputs must have shape (n, {N_OUTPUTS})")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def split_index(self) -> int:
        return int(round(len(self) * self.train_fraction))

    @property
    def output_range(self) -> np.ndarray:
        """Max minus min of every output over the full dataset."""
        return self.outputs.max(axis=0) - self.outputs.min(axis=0)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            np.hstack([self.inputs, self.outputs]), columns=[*INPUT_NAMES, *OUTPUT_NAMES]
        )
        frame.insert(0, "cycle", np.arange(len(self)))
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, train_fraction: float = 0.8) -> "Dataset":
        frame = frame.sort_values("cycle")
        return cls(
            frame[list(INPUT_NAMES)].to_numpy(float),
            frame[list(OUTPUT_NAMES)].to_numpy(float),
            train_fraction,
        )

    def to_csv(self, destination: str | PathLike) -> Path:
        """Write the dataset as CSV with a header row."""
        path = Path(destination)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def read_csv(cls, source: str | PathLike, train_fraction: float = 0.8) -> "Dataset":
        return cls.from_frame(pd.read_csv(source), train_fraction)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of truncated-BPTT training."""

    window: int = 32
    batch_size: int = 8
    learning_rate: float = 3e-3
    min_learning_rate: float = 1e-4
    max_epochs: int = 150
    patience: int = 20
    grad_clip: float = 5.0
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        # must exceed the roughly two-cycle combustion coupling
        if self.window < 3:
            raise ValueError("BPTT window must be at least 3 cycles")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if not 0 < self.min_learning_rate <= self.learning_rate:
            raise ValueError("learning rates must satisfy 0 < min <= initial")
        if self.grad_clip <= 0 or self.workers < 1:
            raise ValueError("grad_clip and workers must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float
    best_validation_loss: float
    learning_rate: float


@dataclass
class FitReport:
    """
    Accuracy of a fitted network per output.

    NRMSE is 100 * RMSE / (max - min of that output over the full dataset). An
    output with zero range is normalised by 1 instead.
    """

    rmse_train: np.ndarray
    rmse_validation: np.ndarray
    output_range: np.ndarray
    history: list = field(default_factory=list)

    @property
    def normalizer(self) -> np.ndarray:
        return np.where(self.output_range > 0, self.output_range, 1.0)

    @property
    def nrmse_train(self) -> np.ndarray:
        return 100.0 * self.rmse_train / self.normalizer

    @property
    def nrmse_validation(self) -> np.ndarray:
        return 100.0 * self.rmse_validation / self.normalizer

    def to_frame(self) -> pd.DataFrame:
        """Tidy table with one row per output and split."""
        rows = []
        for split, rmse, nrmse in (
            ("train", self.rmse_train, self.nrmse_train),
            ("validation", self.rmse_validation, self.nrmse_validation),
        ):
            for index, name in enumerate(OUTPUT_NAMES):
                rows.append(
                    {
                        "output": name,
                        "unit": OUTPUT_UNITS[name],
                        "split": split,
                        "rmse": rmse[index],
                        "nrmse_pct": nrmse[index],
                    }
                )
        return pd.DataFrame(rows)

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame([record.__dict__ for record in self.history])

    def summary(self) -> str:
        """Human-readable table: unit, training and validation errors per output."""
        lines = [f"{'output':<8}{'unit':>10}{'train':>12}{'validation':>12}"]
        for index, name in enumerate(OUTPUT_NAMES):
            lines.append(
                f"{name:<8}{OUTPUT_UNITS[name]:>10}"
                f"{self.rmse_train[index]:>12.4g}{self.rmse_validation[index]:>12.4g}"
            )
            lines.append(
                f"{'':<8}{'%':>10}"
                f"{self.nrmse_train[index]:>12.2f}{self.nrmse_validation[index]:>12.2f}"
            )
        return "\n".join(lines)

    def save(self, directory: str | PathLike) -> None:
        """Write fit_report.csv, training_history.csv and fit_summary.txt."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(directory / "fit_report.csv", index=False)
        self.history_frame().to_csv(directory / "training_history.csv", index=False)
        (directory / "fit_summary.txt").write_text(self.summary() + "\n", encoding="utf-8")


def generate_dataset(
    params: PlantParams,
    n_cycles: int,
    seed: int,
    bounds: ActuatorBounds | None = None,
    train_fraction: float = 0.8,
    max_hold: int = 12,
) -> Dataset:
    """
    Run the plant under randomised excitation and record a closed-chain dataset.

    Parameters:
        params (PlantParams): Plant parameters, noise amplitudes included.
        n_cycles (int): Number of recorded cycles (at least 1000).
        seed (int): Seed for both excitation and measurement noise.
        bounds (ActuatorBounds | None): Actuator limits of the excitation.
        train_fraction (float): Share of cycles in the training split.
        max_hold (int): Longest hold time of the excitation, in cycles.

    Returns:
        Dataset: Inputs whose feedback fields equal the previous measured outputs.
    """
    if n_cycles < MIN_DATASET_CYCLES:
        raise ValueError(f"a dataset needs at least {MIN_DATASET_CYCLES} cycles")
    bounds = bounds or ActuatorBounds()
    excite_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    signal = excitation_array(
        n_cycles, bounds, np.random.default_rng(excite_seed), max_hold=max_hold
    )
    noise_rng = np.random.default_rng(noise_seed)

    state = PlantState()
    # one unrecorded cycle provides the first feedback measurement
    state, previous = plant_step(state, bounds.midpoint(), params, noise_rng)
    inputs = np.empty((n_cycles, N_INPUTS))
    outputs = np.empty((n_cycles, N_OUTPUTS))
    for cycle in range(n_cycles):
        actuation = Actuation.from_array(signal[cycle])
        inputs[cycle, :2] = previous.feedback()
        inputs[cycle, 2:] = signal[cycle]
        state, previous = plant_step(state, actuation, params, noise_rng)
        outputs[cycle] = previous.as_array()
    logger.info("Generated %d-cycle dataset (seed %d)", n_cycles, seed)
    return Dataset(inputs, outputs, train_fraction)


def _sequence_sse(spec: NetworkSpec, params: tuple, inputs, targets, c0, h0):
    """Forward and backward pass over one window of shape (T, B, channels)."""
    layers = spec.layers
    lstm_index = spec.lstm_index
    lstm_activation = layers[lstm_index].activation
    grads = [[np.zeros_like(array) for array in group] for group in params]
    caches = []
    c, h = c0, h0
    sse = 0.0
    for t in range(inputs.shape[0]):
        a = inputs[t]
        in_cache = []
        for index in range(lstm_index):
            weight, bias = params[index]
            out, deriv = activate(layers[index].activation, a @ weight.T + bias)
            in_cache.append((a, deriv))
            a = out
        i, f, g, o, di, df, dg, do = lstm_gates(params[lstm_index], h, a, lstm_activation)
        c_next = f * c + i * g
        squashed, dsquashed = activate(lstm_activation, c_next)
        h_next = o * squashed
        lstm_cache = (a, h, c, i, f, g, o, di, df, dg, do, squashed, dsquashed)
        a = h_next
        out_cache = []
        for index in range(lstm_index + 1, len(layers)):
            weight, bias = params[index]
            out, deriv = activate(layers[index].activation, a @ weight.T + bias)
            out_cache.append((a, deriv))
            a = out
        error = a - targets[t]
        sse += float(np.sum(error * error))
        caches.append((in_cache, lstm_cache, out_cache, error))
        c, h = c_next, h_next

    w_x, w_h, _ = params[lstm_index]
    dh_carry = np.zeros_like(h0)
    dc_carry = np.zeros_like(c0)
    output_indices = list(range(lstm_index + 1, len(layers)))
    for t in reversed(range(inputs.shape[0])):
        in_cache, lstm_cache, out_cache, error = caches[t]
        grad = 2.0 * error
        for index, (a_in, deriv) in reversed(list(zip(output_indices, out_cache))):
            dz = grad * deriv
            grads[index][0] += dz.T @ a_in
            grads[index][1] += dz.sum(axis=0)
            grad = dz @ params[index][0]
        a_in, h_prev, c_prev, i, f, g, o, di, df, dg, do, squashed, dsquashed = lstm_cache
        dh = grad + dh_carry
        dc = dh * o * dsquashed + dc_carry
        d_pre = np.concatenate(
            [dc * g * di, dc * c_prev * df, dc * i * dg, dh * squashed * do], axis=-1
        )
        grads[lstm_index][0] += d_pre.T @ a_in
        grads[lstm_index][1] += d_pre.T @ h_prev
        grads[lstm_index][2] += d_pre.sum(axis=0)
        dh_carry = d_pre @ w_h
        dc_carry = dc * f
        grad = d_pre @ w_x
        for index in reversed(range(lstm_index)):
            a_in, deriv = in_cache[index]
            dz = grad * deriv
            grads[index][0] += dz.T @ a_in
            grads[index][1] += dz.sum(axis=0)
            if index > 0:
                grad = dz @ params[index][0]
    flat = np.concatenate([array.ravel() for group in grads for array in group])
    return sse, flat, c, h


def loss_and_gradient(
    spec: NetworkSpec,
    vector: np.ndarray,
    inputs: np.ndarray,
    targets: np.ndarray,
    c0: np.ndarray | None = None,
    h0: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """
    Mean squared error of one BPTT window and its gradient.

    Parameters:
        spec (NetworkSpec): Architecture.
        vector (np.ndarray): Flat parameters (NetworkWeights.to_vector order).
        inputs (np.ndarray): Normalised inputs, shape (T, B, 5).
        targets (np.ndarray): Normalised targets, shape (T, B, 4).
        c0, h0 (np.ndarray | None): Initial LSTM states, shape (B, 4); zeros if None.

    Returns:
        tuple: (loss, gradient with respect to `vector`).
    """
    params = NetworkWeights.from_vector(spec, vector).params
    batch = inputs.shape[1]
    hidden = spec.layers[spec.lstm_index].output_width
    c0 = np.zeros((batch, hidden)) if c0 is None else c0
    h0 = np.zeros((batch, hidden)) if h0 is None else h0
    sse, grad, _, _ = _sequence_sse(spec, params, inputs, targets, c0, h0)
    count = targets.size
    return sse / count, grad / count


class AdamOptimizer:
    """Adam update rule over one flat parameter vector."""

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, vector: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return vector - learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_learning_rate(config: TrainConfig, epoch: int) -> float:
    """Cosine decay from the initial to the minimum rate over max_epochs."""
    progress = epoch / max(config.max_epochs - 1, 1)
    span = config.learning_rate - config.min_learning_rate
    return config.min_learning_rate + 0.5 * span * (1.0 + math.cos(math.pi * progress))


def initialise_weights(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases, forget-gate bias 1."""
    groups = []
    for layer in spec.layers:
        if layer.kind == "dense":
            limit = math.sqrt(6.0 / (layer.input_width + layer.output_width))
            groups.append(
                (
                    rng.uniform(-limit, limit, (layer.output_width, layer.input_width)),
                    np.zeros(layer.output_width),
                )
            )
            continue
        hidden = layer.output_width
        limit_x = math.sqrt(6.0 / (layer.input_width + hidden))
        limit_h = math.sqrt(6.0 / (2 * hidden))
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        groups.append(
            (
                rng.uniform(-limit_x, limit_x, (4 * hidden, layer.input_width)),
                rng.uniform(-limit_h, limit_h, (4 * hidden, hidden)),
                bias,
            )
        )
    return NetworkWeights(spec, tuple(groups)).to_vector()


def fit_normalization(dataset: Dataset) -> Normalization:
    """Per-channel z-score constants fitted on the training split only."""
    split = dataset.split_index
    input_scaler = StandardScaler().fit(dataset.inputs[:split])
    output_scaler = StandardScaler().fit(dataset.outputs[:split])
    return Normalization(
        input_scaler.mean_, input_scaler.scale_, output_scaler.mean_, output_scaler.scale_
    )


def predict_sequence(weights: NetworkWeights, inputs: np.ndarray) -> np.ndarray:
    """One-step-ahead predictions, carrying the LSTM state from zero at cycle 0."""
    hidden = weights.spec.layers[weights.spec.lstm_index].output_width
    x = np.zeros(2 * hidden)
    predictions = np.empty((inputs.shape[0], N_OUTPUTS))
    for cycle, u in enumerate(inputs):
        x, predictions[cycle] = model_step_array(weights, x, u)
    return predictions


def _rmse(targets: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    if targets.shape[0] == 0:
        return np.full(N_OUTPUTS, np.nan)
    return np.sqrt(mean_squared_error(targets, predictions, multioutput="raw_values"))


def evaluate(weights: NetworkWeights, dataset: Dataset) -> FitReport:
    """
    Open-loop one-step-ahead accuracy on both splits.

    The network runs over the full sequence so that validation cycles start from
    the state reached at the end of the training split.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    predictions = predict_sequence(weights, dataset.inputs)
    split = dataset.split_index
    return FitReport(
        rmse_train=_rmse(dataset.outputs[:split], predictions[:split]),
        rmse_validation=_rmse(dataset.outputs[split:], predictions[split:]),
        output_range=dataset.output_range,
    )


def _validation_loss(weights: NetworkWeights, dataset: Dataset) -> float:
    report = evaluate(weights, dataset)
    if dataset.split_index >= len(dataset):
        rmse = report.rmse_train
    else:
        rmse = report.rmse_validation
    normalized = rmse / weights.normalization.output_scale
    return float(np.mean(normalized**2))


def _stream_layout(n_train: int, config: TrainConfig) -> tuple[int, int]:
    batch = max(1, min(config.batch_size, n_train // config.window))
    return batch, n_train // batch


def _batch_sse(spec, params, inputs, targets, c0, h0, workers: int):
    if workers == 1:
        return _sequence_sse(spec, params, inputs, targets, c0, h0)
    chunks = np.array_split(np.arange(inputs.shape[1]), min(workers, inputs.shape[1]))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(
            pool.map(
                lambda idx: _sequence_sse(
                    spec, params, inputs[:, idx], targets[:, idx], c0[idx], h0[idx]
                ),
                chunks,
            )
        )
    sse = sum(part[0] for part in parts)
    grad = np.sum([part[1] for part in parts], axis=0)
    c = np.concatenate([part[2] for part in parts])
    h = np.concatenate([part[3] for part in parts])
    return sse, grad, c, h


def train(
    dataset: Dataset, spec: NetworkSpec, config: TrainConfig
) -> tuple[NetworkWeights, FitReport]:
    """
    Fit network weights with truncated BPTT and early stopping.

    The training split is cut into `batch_size` contiguous streams trained in
    parallel; each epoch walks the streams in windows of `config.window` cycles,
    carrying the LSTM state from one window to the next. Window boundaries are
    shifted by a seeded random offset every epoch.

    Parameters:
        dataset (Dataset): Closed-chain data with a train/validation split.
        spec (NetworkSpec): Architecture to fit.
        config (TrainConfig): Hyperparameters.

    Returns:
        tuple: (weights with the lowest validation loss seen, FitReport).

    Raises:
        ValueError: If the training split is shorter than one window.
        TrainingDivergedError: If a loss becomes NaN or infinite.
    """
    split = dataset.split_index
    if split < config.window:
        raise ValueError("training split is shorter than one BPTT window")
    rng = np.random.default_rng(config.seed)
    normalization = fit_normalization(dataset)
    x_norm = normalization.normalize_input(dataset.inputs[:split])
    y_norm = normalization.normalize_output(dataset.outputs[:split])
    batch, stream_length = _stream_layout(split, config)
    # (time, stream, channel)
    x_streams = x_norm[: batch * stream_length].reshape(batch, stream_length, -1).swapaxes(0, 1)
    y_streams = y_norm[: batch * stream_length].reshape(batch, stream_length, -1).swapaxes(0, 1)
    hidden = spec.layers[spec.lstm_index].output_width

    vector = initialise_weights(spec, rng)
    optimizer = AdamOptimizer(vector.size)
    best_vector = vector.copy()
    best_loss = math.inf
    stale_epochs = 0
    history: list[EpochRecord] = []
    for epoch in range(config.max_epochs):
        learning_rate = cosine_learning_rate(config, epoch)
        offset = int(rng.integers(0, config.window)) if stream_length > config.window else 0
        boundaries = [0, *range(offset or config.window, stream_length, config.window)]
        if boundaries[-1] != stream_length:
            boundaries.append(stream_length)
        c = np.zeros((batch, hidden))
        h = np.zeros((batch, hidden))
        epoch_sse = 0.0
        for start, stop in zip(boundaries[:-1], boundaries[1:]):
            params = NetworkWeights.from_vector(spec, vector).params
            sse, grad, c, h = _batch_sse(
                spec, params, x_streams[start:stop], y_streams[start:stop], c, h, config.workers
            )
            count = (stop - start) * batch * N_OUTPUTS
            if not math.isfinite(sse):
                raise TrainingDivergedError(epoch, history)
            grad = grad / count
            norm = float(np.linalg.norm(grad))
            if norm > config.grad_clip:
                grad = grad * (config.grad_clip / norm)
            vector = optimizer.step(vector, grad, learning_rate)
            epoch_sse += sse
        train_loss = epoch_sse / (stream_length * batch * N_OUTPUTS)
        if not np.all(np.isfinite(vector)):
            raise TrainingDivergedError(epoch, history)
        candidate = NetworkWeights.from_vector(spec, vector, normalization)
        validation_loss = _validation_loss(candidate, dataset)
        if not math.isfinite(validation_loss):
            raise TrainingDivergedError(epoch, history)
        if validation_loss < best_loss:
            best_loss = validation_loss
            best_vector = vector.copy()
            stale_epochs = 0
        else:
            stale_epochs += 1
        history.append(
            EpochRecord(epoch, train_loss, validation_loss, best_loss, learning_rate)
        )
        logger.info(
            "epoch %d: train loss %.5f, validation loss %.5f, lr %.2e",
            epoch,
            train_loss,
            validation_loss,
            learning_rate,
        )
        if stale_epochs >= config.patience:
            logger.info("Early stop after %d epochs without improvement", stale_epochs)
            break

    weights = NetworkWeights.from_vector(spec, best_vector, normalization)
    report = evaluate(weights, dataset)
    report.history = history
    return weights, report
