"""
Deep Network State-Space Model.

This module evaluates the combustion surrogate network (input fully connected
stack, one LSTM cell, output fully connected stack) and its exact first-order
sensitivities. Seen from the controller, the network is a discrete nonlinear
state-space model

    x(k+1) = f(x(k), u(k))        x = [c; h] (LSTM cell and hidden states)
    y(k)   = g(x(k), u(k))        y = output stack applied to the new hidden state

with inputs normalised and outputs de-normalised using constants stored with the
weights.

Classes:
- LayerSpec / NetworkSpec: architecture description and validation.
- Normalization: per-channel offset and scale for inputs and outputs.
- NetworkWeights: immutable parameter container with flattening helpers.
- ModelJacobians: the four sensitivity blocks of one model step.

Functions:
- dense_forward(layer, weight, bias, x): one fully connected layer.
- lstm_step(layer, params, state, x): one LSTM cell update.
- model_step(weights, state, u): x(k+1) and y(k) from x(k) and u(k).
- model_jacobians(weights, state, u): analytic sensitivities of model_step.
- settle_state(weights, u, cycles): LSTM state after holding one input.

Weights are never mutated after construction, so one instance can be shared by
any number of concurrent evaluators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from lstm_nmpc.domain import (
    HIDDEN_SIZE,
    N_INPUTS,
    N_OUTPUTS,
    LstmState,
    ModelInput,
    ModelOutput,
)
from lstm_nmpc.errors import (
    LayerDimensionError,
    NetworkSpecError,
    NonFiniteActivationError,
)

LAYER_KINDS = ("dense", "lstm")
ACTIVATIONS = ("tanh", "linear", "sigmoid")
# gate blocks of the stacked LSTM matrices
GATE_ORDER = ("i", "f", "g", "o")


@dataclass(frozen=True)
class LayerSpec:
    """Shape and activation of one layer."""

    kind: str
    input_width: int
    output_width: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise NetworkSpecError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise NetworkSpecError(f"unknown activation {self.activation!r}")
        if self.input_width < 1 or self.output_width < 1:
            raise NetworkSpecError("layer widths must be at least 1")
        if self.kind == "lstm" and self.activation == "sigmoid":
            raise NetworkSpecError("LSTM squashing must be tanh or linear")

    @property
    def parameter_count(self) -> int:
        if self.kind == "dense":
            return self.output_width * (self.input_width + 1)
        hidden = self.output_width
        return 4 * hidden * (self.input_width + hidden + 1)

    def parameter_shapes(self) -> list[tuple]:
        """Return the array shapes stored for this layer, in storage order."""
        if self.kind == "dense":
            return [(self.output_width, self.input_width), (self.output_width,)]
        hidden = self.output_width
        return [
            (4 * hidden, self.input_width),
            (4 * hidden, hidden),
            (4 * hidden,),
        ]


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack: dense layers, exactly one LSTM, dense layers."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        kinds = [layer.kind for layer in layers]
        if kinds.count("lstm") != 1:
            raise NetworkSpecError("a network needs exactly one lstm layer")
        lstm = layers[kinds.index("lstm")]
        if lstm.output_width != HIDDEN_SIZE:
            raise NetworkSpecError(f"lstm hidden size must be {HIDDEN_SIZE}")
        if layers[0].input_width != N_INPUTS:
            raise NetworkSpecError(f"first layer must take {N_INPUTS} inputs")
        if layers[-1].kind != "dense" or layers[-1].output_width != N_OUTPUTS:
            raise NetworkSpecError(f"last layer must be dense with {N_OUTPUTS} outputs")
        for index, (prev, nxt) in enumerate(zip(layers[:-1], layers[1:]), start=1):
            if prev.output_width != nxt.input_width:
                raise NetworkSpecError(
                    f"layer {index} input width {nxt.input_width} does not match "
                    f"previous output width {prev.output_width}"
                )

    @classmethod
    def from_widths(
        cls,
        fc_in: Sequence[int] = (24, 24, 16),
        fc_out: Sequence[int] = (24, 24),
        fc_activation: str = "tanh",
        lstm_activation: str = "tanh",
    ) -> "NetworkSpec":
        """
        Build the dense-LSTM-dense stack from hidden widths.

        Parameters:
            fc_in (Sequence[int]): Widths of the input-side dense layers.
            fc_out (Sequence[int]): Widths of the hidden output-side dense layers;
                the final linear layer to the four outputs is always appended.
            fc_activation (str): Activation of every hidden dense layer.
            lstm_activation (str): Candidate/cell squashing of the LSTM.

        Returns:
            NetworkSpec: The validated architecture.
        """
        layers = []
        width = N_INPUTS
        for out in fc_in:
            layers.append(LayerSpec("dense", width, int(out), fc_activation))
            width = int(out)
        layers.append(LayerSpec("lstm", width, HIDDEN_SIZE, lstm_activation))
        width = HIDDEN_SIZE
        for out in fc_out:
            layers.append(LayerSpec("dense", width, int(out), fc_activation))
            width = int(out)
        layers.append(LayerSpec("dense", width, N_OUTPUTS, "linear"))
        return cls(tuple(layers))

    @classmethod
    def default(cls) -> "NetworkSpec":
        """Six dense layers around one 4-unit LSTM, about 2300 parameters."""
        return cls.from_widths()

    @property
    def lstm_index(self) -> int:
        return [layer.kind for layer in self.layers].index("lstm")

    @property
    def input_layers(self) -> tuple:
        return self.layers[: self.lstm_index]

    @property
    def output_layers(self) -> tuple:
        return self.layers[self.lstm_index + 1 :]

    @property
    def parameter_count(self) -> int:
        return sum(layer.parameter_count for layer in self.layers)


@dataclass(frozen=True, eq=False)
class Normalization:
    """Per-channel z-score constants for network inputs and outputs."""

    input_offset: np.ndarray
    input_scale: np.ndarray
    output_offset: np.ndarray
    output_scale: np.ndarray

    def __post_init__(self):
        for name in ("input_offset", "input_scale", "output_offset", "output_scale"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1)
            )
        if self.input_offset.size != N_INPUTS or self.input_scale.size != N_INPUTS:
            raise NetworkSpecError(f"input normalization needs {N_INPUTS} channels")
        if self.output_offset.size != N_OUTPUTS or self.output_scale.size != N_OUTPUTS:
            raise NetworkSpecError(f"output normalization needs {N_OUTPUTS} channels")
        if np.any(self.input_scale <= 0) or np.any(self.output_scale <= 0):
            raise NetworkSpecError("normalization scales must be strictly positive")

    @classmethod
    def identity(cls) -> "Normalization":
        return cls(
            np.zeros(N_INPUTS), np.ones(N_INPUTS), np.zeros(N_OUTPUTS), np.ones(N_OUTPUTS)
        )

    def normalize_input(self, u: np.ndarray) -> np.ndarray:
        return (u - self.input_offset) / self.input_scale

    def normalize_output(self, y: np.ndarray) -> np.ndarray:
        return (y - self.output_offset) / self.output_scale

    def denormalize_output(self, y_norm: np.ndarray) -> np.ndarray:
        return y_norm * self.output_scale + self.output_offset

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.input_offset, self.input_scale, self.output_offset, self.output_scale]
        )

    @classmethod
    def from_vector(cls, values: np.ndarray) -> "Normalization":
        values = np.asarray(values, dtype=float)
        cuts = np.cumsum([N_INPUTS, N_INPUTS, N_OUTPUTS])
        return cls(*np.split(values, cuts))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Normalization):
            return NotImplemented
        return bool(np.array_equal(self.as_vector(), other.as_vector()))


@dataclass(frozen=True, eq=False)
class NetworkWeights:
    """
    All learnable parameters of the network plus its normalization constants.

    `params[i]` holds the arrays of layer i in storage order: (W, b) for dense
    layers and (W_x, W_h, b) for the LSTM, where the LSTM matrices stack the
    input, forget, candidate and output gate blocks in that order.
    """

    spec: NetworkSpec
    params: tuple
    normalization: Normalization = field(default_factory=Normalization.identity)

    def __post_init__(self):
        if len(self.params) != len(self.spec.layers):
            raise NetworkSpecError("one parameter group per layer is required")
        frozen = []
        for index, (layer, group) in enumerate(zip(self.spec.layers, self.params)):
            shapes = layer.parameter_shapes()
            if len(group) != len(shapes):
                raise NetworkSpecError(f"layer {index}: wrong number of parameter arrays")
            arrays = []
            for array, shape in zip(group, shapes):
                array = np.array(array, dtype=float).reshape(shape)
                array.setflags(write=False)
                arrays.append(array)
            frozen.append(tuple(arrays))
        object.__setattr__(self, "params", tuple(frozen))

    @classmethod
    def zeros(
        cls, spec: NetworkSpec, normalization: Normalization | None = None
    ) -> "NetworkWeights":
        """Return a network whose every weight and bias is zero."""
        groups = tuple(
            tuple(np.zeros(shape) for shape in layer.parameter_shapes())
            for layer in spec.layers
        )
        return cls(spec, groups, normalization or Normalization.identity())

    @property
    def parameter_count(self) -> int:
        return self.spec.parameter_count

    def to_vector(self) -> np.ndarray:
        """Flatten every parameter array, layer by layer, in storage order."""
        return np.concatenate([array.ravel() for group in self.params for array in group])

    @classmethod
    def from_vector(
        cls,
        spec: NetworkSpec,
        vector: np.ndarray,
        normalization: Normalization | None = None,
    ) -> "NetworkWeights":
        """Rebuild weights from a vector produced by `to_vector`."""
        vector = np.asarray(vector, dtype=float)
        if vector.size != spec.parameter_count:
            raise NetworkSpecError(
                f"expected {spec.parameter_count} parameters, received {vector.size}"
            )
        groups = []
        offset = 0
        for layer in spec.layers:
            arrays = []
            for shape in layer.parameter_shapes():
                size = int(np.prod(shape))
                arrays.append(vector[offset : offset + size].reshape(shape))
                offset += size
            groups.append(tuple(arrays))
        return cls(spec, tuple(groups), normalization or Normalization.identity())

    def with_normalization(self, normalization: Normalization) -> "NetworkWeights":
        return NetworkWeights(self.spec, self.params, normalization)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkWeights):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.normalization == other.normalization
            and bool(np.array_equal(self.to_vector(), other.to_vector()))
        )


@dataclass(frozen=True)
class ModelJacobians:
    """Sensitivities of one model step with respect to state and physical input."""

    dx_dx: np.ndarray  # d x(k+1) / d x(k), 8x8
    dx_du: np.ndarray  # d x(k+1) / d u(k), 8x5
    dy_dx: np.ndarray  # d y(k) / d x(k), 4x8
    dy_du: np.ndarray  # d y(k) / d u(k), 4x5


def activate(name: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Apply an activation and return it with its elementwise derivative.

    Parameters:
        name (str): One of "tanh", "linear", "sigmoid".
        z (np.ndarray): Pre-activation values.

    Returns:
        tuple: (activation, derivative), both shaped like z.
    """
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    if name == "sigmoid":
        a = expit(z)
        return a, a * (1.0 - a)
    return z, np.ones_like(z)


def _check_width(layer_index: int, expected: int, x: np.ndarray) -> None:
    if x.shape[-1] != expected:
        raise LayerDimensionError(layer_index, expected, x.shape[-1])


def _check_finite(layer_index: int, *arrays: np.ndarray) -> None:
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NonFiniteActivationError(layer_index)


def dense_forward(
    layer: LayerSpec,
    weight: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    layer_index: int = 0,
) -> np.ndarray:
    """
    Evaluate activation(W x + b) for one vector or a batch of row vectors.

    Raises:
        LayerDimensionError: If x does not have `layer.input_width` columns.
        NonFiniteActivationError: If the result is not finite.
    """
    x = np.asarray(x, dtype=float)
    _check_width(layer_index, layer.input_width, x)
    out, _ = activate(layer.activation, x @ weight.T + bias)
    _check_finite(layer_index, out)
    return out


def lstm_gates(params: tuple, h: np.ndarray, x: np.ndarray, activation: str) -> tuple:
    """
    Compute the four gate activations and their derivatives.

    Works on single vectors or on batches of row vectors.

    Returns:
        tuple: (i, f, g, o, di, df, dg, do) where d* are derivatives of each gate
        with respect to its pre-activation.
    """
    w_x, w_h, bias = params
    hidden = w_h.shape[1]
    pre = x @ w_x.T + h @ w_h.T + bias
    i, di = activate("sigmoid", pre[..., :hidden])
    f, df = activate("sigmoid", pre[..., hidden : 2 * hidden])
    g, dg = activate(activation, pre[..., 2 * hidden : 3 * hidden])
    o, do = activate("sigmoid", pre[..., 3 * hidden :])
    return i, f, g, o, di, df, dg, do


def lstm_step(
    layer: LayerSpec,
    params: tuple,
    state: LstmState,
    x: np.ndarray,
    layer_index: int = 0,
) -> LstmState:
    """
    Advance the LSTM cell by one step.

    c+ = f * c + i * g and h+ = o * tanh(c+) with sigmoid gates i, f, o and a
    tanh candidate g (tanh replaced by identity when the layer is linear).

    Raises:
        LayerDimensionError: If x does not match the layer input width.
    """
    x = np.asarray(x, dtype=float)
    _check_width(layer_index, layer.input_width, x)
    i, f, g, o, *_ = lstm_gates(params, state.h, x, layer.activation)
    c_next = f * state.c + i * g
    squashed, _ = activate(layer.activation, c_next)
    h_next = o * squashed
    _check_finite(layer_index, c_next, h_next)
    return LstmState(c_next, h_next)


def _forward(weights: NetworkWeights, x: np.ndarray, u: np.ndarray, need_jacobians: bool):
    spec = weights.spec
    norm = weights.normalization
    u = np.asarray(u, dtype=float)
    _check_width(0, N_INPUTS, u)
    hidden = HIDDEN_SIZE
    lstm_index = spec.lstm_index

    a = norm.normalize_input(u)
    jac_in = np.diag(1.0 / norm.input_scale) if need_jacobians else None
    for index in range(lstm_index):
        layer = spec.layers[index]
        weight, bias = weights.params[index]
        z = a @ weight.T + bias
        a, da = activate(layer.activation, z)
        _check_finite(index, a)
        if need_jacobians:
            jac_in = (da[:, None] * weight) @ jac_in

    lstm = spec.layers[lstm_index]
    c, h = x[:hidden], x[hidden:]
    i, f, g, o, di, df, dg, do = lstm_gates(weights.params[lstm_index], h, a, lstm.activation)
    c_next = f * c + i * g
    squashed, dsquashed = activate(lstm.activation, c_next)
    h_next = o * squashed
    _check_finite(lstm_index, c_next, h_next)

    a = h_next
    jac_out = np.eye(hidden) if need_jacobians else None
    for index in range(lstm_index + 1, len(spec.layers)):
        layer = spec.layers[index]
        weight, bias = weights.params[index]
        z = a @ weight.T + bias
        a, da = activate(layer.activation, z)
        _check_finite(index, a)
        if need_jacobians:
            jac_out = (da[:, None] * weight) @ jac_out
    y = norm.denormalize_output(a)
    x_next = np.concatenate([c_next, h_next])
    if not need_jacobians:
        return x_next, y, None

    jac_out = norm.output_scale[:, None] * jac_out
    w_x, w_h, _ = weights.params[lstm_index]

    def propagate(d_pre: np.ndarray, d_c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d_i = di[:, None] * d_pre[:hidden]
        d_f = df[:, None] * d_pre[hidden : 2 * hidden]
        d_g = dg[:, None] * d_pre[2 * hidden : 3 * hidden]
        d_o = do[:, None] * d_pre[3 * hidden :]
        d_c_next = c[:, None] * d_f + f[:, None] * d_c + g[:, None] * d_i + i[:, None] * d_g
        d_h_next = squashed[:, None] * d_o + (o * dsquashed)[:, None] * d_c_next
        return d_c_next, d_h_next

    d_pre_x = np.hstack([np.zeros((4 * hidden, hidden)), w_h])
    d_c_x = np.hstack([np.eye(hidden), np.zeros((hidden, hidden))])
    dc_dx, dh_dx = propagate(d_pre_x, d_c_x)
    dc_du, dh_du = propagate(w_x @ jac_in, np.zeros((hidden, N_INPUTS)))
    jacobians = ModelJacobians(
        dx_dx=np.vstack([dc_dx, dh_dx]),
        dx_du=np.vstack([dc_du, dh_du]),
        dy_dx=jac_out @ dh_dx,
        dy_du=jac_out @ dh_du,
    )
    return x_next, y, jacobians


def _as_input_vector(u) -> np.ndarray:
    if isinstance(u, ModelInput):
        return u.as_array()
    return np.asarray(u, dtype=float)


def model_step(
    weights: NetworkWeights, state: LstmState, u: ModelInput | np.ndarray
) -> tuple[LstmState, ModelOutput]:
    """
    Evaluate one cycle of the state-space model.

    Parameters:
        weights (NetworkWeights): Network parameters and normalization.
        state (LstmState): x(k).
        u (ModelInput | np.ndarray): u(k) in physical units.

    Returns:
        tuple: (x(k+1), y(k)) with y de-normalised to physical units.

    Raises:
        LayerDimensionError: If u is not a 5-vector.
        NonFiniteActivationError: If any layer output is not finite.
    """
    x_next, y = model_step_array(weights, state.as_array(), _as_input_vector(u))
    return LstmState.from_array(x_next), ModelOutput.from_array(y)


def model_step_array(
    weights: NetworkWeights, x: np.ndarray, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Array form of `model_step`: stacked [c; h] in, stacked [c; h] and y out."""
    x_next, y, _ = _forward(weights, np.asarray(x, dtype=float), u, need_jacobians=False)
    return x_next, y


def model_step_with_jacobians(
    weights: NetworkWeights, x: np.ndarray, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray, ModelJacobians]:
    """Evaluate one step and its sensitivities in a single pass."""
    return _forward(weights, np.asarray(x, dtype=float), u, need_jacobians=True)


def model_jacobians(
    weights: NetworkWeights, state: LstmState, u: ModelInput | np.ndarray
) -> ModelJacobians:
    """
    Return the exact chain-rule sensitivities of `model_step`.

    Derivatives are taken with respect to the stacked state [c; h] and the
    physical (not normalised) input vector.
    """
    _, _, jacobians = _forward(weights, state.as_array(), _as_input_vector(u), True)
    return jacobians


def settle_state(
    weights: NetworkWeights,
    u: ModelInput | np.ndarray,
    cycles: int = 50,
    state: LstmState | None = None,
) -> LstmState:
    """Hold one input for a number of cycles and return the resulting state."""
    x = (state or LstmState.zeros()).as_array()
    u = _as_input_vector(u)
    for _ in range(cycles):
        x, _ = model_step_array(weights, x, u)
    return LstmState.from_array(x)
