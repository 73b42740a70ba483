"""
Domain Types.

Plain value types shared by the model, the plant, the optimal control problem and
the wire protocol. Channel orderings are fixed here once:

- model input  u(k) = [imep(k-1), ca50(k-1), doi_fuel(k), doi_water(k), nvo(k)]
- model output y(k) = [imep(k), ca50(k), nox(k), mprr(k)]
- model state  x(k) = [c (4 cell states), h (4 hidden states)]
- actuation    a(k) = [doi_fuel(k), doi_water(k), nvo(k)]

The constants at the bottom are the engine constraint table used as compiled-in
defaults for bounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

INPUT_NAMES = ("imep_prev", "ca50_prev", "doi_fuel", "doi_water", "nvo")
OUTPUT_NAMES = ("imep", "ca50", "nox", "mprr")
ACTUATOR_NAMES = ("doi_fuel", "doi_water", "nvo")
OUTPUT_UNITS = {"imep": "bar", "ca50": "CAD aTDC", "nox": "ppm", "mprr": "bar/CAD"}
ACTUATOR_UNITS = {"doi_fuel": "ms", "doi_water": "ms", "nvo": "CAD"}

N_INPUTS = len(INPUT_NAMES)
N_OUTPUTS = len(OUTPUT_NAMES)
N_ACTUATORS = len(ACTUATOR_NAMES)
HIDDEN_SIZE = 4
N_STATES = 2 * HIDDEN_SIZE

# Engine constraint table
ENGINE_OUTPUT_MIN = (1.0, 0.0, 0.0, 0.0)
ENGINE_OUTPUT_MAX = (6.0, 17.0, 500.0, 15.0)
ENGINE_ACTUATOR_MIN = (0.0, 0.0, 150.0)
ENGINE_ACTUATOR_MAX = (1.50, 1.00, 360.0)


@dataclass(frozen=True)
class ModelInput:
    """One cycle of network input, in physical units."""

    imep_prev: float
    ca50_prev: float
    doi_fuel: float
    doi_water: float
    nvo: float

    def as_array(self) -> np.ndarray:
        """Return the input as a 5-vector in model order."""
        return np.array(
            [self.imep_prev, self.ca50_prev, self.doi_fuel, self.doi_water, self.nvo],
            dtype=float,
        )

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ModelInput":
        """Build an input from a 5-vector in model order."""
        return cls(*(float(v) for v in values))

    @classmethod
    def assemble(
        cls, feedback: Sequence[float], actuation: "Actuation"
    ) -> "ModelInput":
        """Combine measured (imep, ca50) of the previous cycle with an actuation."""
        return cls(
            float(feedback[0]),
            float(feedback[1]),
            actuation.doi_fuel,
            actuation.doi_water,
            actuation.nvo,
        )


@dataclass(frozen=True)
class ModelOutput:
    """Combustion outputs of one cycle, in physical units."""

    imep: float
    ca50: float
    nox: float
    mprr: float

    def as_array(self) -> np.ndarray:
        """Return the output as a 4-vector in model order."""
        return np.array([self.imep, self.ca50, self.nox, self.mprr], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ModelOutput":
        """Build an output from a 4-vector in model order."""
        return cls(*(float(v) for v in values))

    def feedback(self) -> tuple[float, float]:
        """Return the (imep, ca50) pair fed back as next-cycle model input."""
        return (self.imep, self.ca50)


@dataclass(frozen=True)
class Actuation:
    """Actuator settings applied for one cycle."""

    doi_fuel: float
    doi_water: float
    nvo: float

    def as_array(self) -> np.ndarray:
        """Return the actuation as a 3-vector."""
        return np.array([self.doi_fuel, self.doi_water, self.nvo], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Actuation":
        """Build an actuation from a 3-vector."""
        return cls(*(float(v) for v in values))


@dataclass(frozen=True, eq=False)
class LstmState:
    """Cell and hidden states of the recurrent layer."""

    c: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(-1))
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float).reshape(-1))
        if self.c.shape != self.h.shape:
            raise ValueError("cell and hidden state must have equal size")

    @classmethod
    def zeros(cls, hidden_size: int = HIDDEN_SIZE) -> "LstmState":
        """Return the all-zero state."""
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "LstmState":
        """Split a stacked [c; h] vector."""
        values = np.asarray(values, dtype=float)
        half = values.size // 2
        return cls(values[:half].copy(), values[half:].copy())

    def as_array(self) -> np.ndarray:
        """Return the stacked [c; h] vector."""
        return np.concatenate([self.c, self.h])

    def __eq__(self, other) -> bool:
        if not isinstance(other, LstmState):
            return NotImplemented
        return bool(np.array_equal(self.c, other.c) and np.array_equal(self.h, other.h))


@dataclass(frozen=True)
class ActuatorBounds:
    """Lower and upper limits per actuator channel."""

    lower: tuple = ENGINE_ACTUATOR_MIN
    upper: tuple = ENGINE_ACTUATOR_MAX

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if not lower or len(lower) != len(upper):
            raise ValueError("actuator bounds must be non-empty and of equal length")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise ValueError("actuator lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    def midpoint(self) -> Actuation:
        """Return the centre of the admissible box."""
        return Actuation.from_array(0.5 * (self.lo + self.hi))

    def contains(self, actuation: Actuation, tol: float = 0.0) -> bool:
        """Check whether an actuation lies inside the box (with tolerance)."""
        values = actuation.as_array()
        return bool(np.all(values >= self.lo - tol) and np.all(values <= self.hi + tol))

    def clip(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lo, self.hi)
