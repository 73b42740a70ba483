"""
Synthetic HCCI-Like Plant.

A two-state nonlinear difference model standing in for the engine. Each cycle the
plant maps the actuation (fuel and water injection durations, negative valve
overlap) and its residual thermal state to IMEP, CA50, NOx and MPRR, then
updates the thermal state so that cycle k couples into cycle k+1.

Sign structure of the noise-free maps:
- IMEP rises with fuel duration.
- CA50 advances (falls) with NVO and retards (rises) with water.
- At fixed load, MPRR falls as CA50 retards.
- NOx rises with IMEP and falls as CA50 retards.
- The next thermal state rises with IMEP and falls with water.
- Below the misfire threshold IMEP collapses smoothly and CA50 saturates late.

Measured outputs carry Gaussian noise with per-output amplitudes; all randomness
comes from an explicit numpy Generator, so seeded runs are bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.special import expit

from lstm_nmpc.domain import Actuation, ActuatorBounds, ModelOutput

logger = logging.getLogger(__name__)

# gains whose sign carries one of the monotonicity properties
POSITIVE_GAINS = (
    "imep_gain",
    "ca50_nvo_gain",
    "ca50_water_gain",
    "ca50_residual_gain",
    "mprr_gain",
    "mprr_decay",
    "nox_gain",
    "nox_imep_gain",
    "nox_ca50_gain",
    "thermal_memory",
    "thermal_imep_gain",
    "thermal_nvo_gain",
    "thermal_water_gain",
    "misfire_width",
)
NOISE_FIELDS = ("noise_imep", "noise_ca50", "noise_nox", "noise_mprr")


@dataclass(frozen=True)
class PlantParams:
    """Gains, offsets, misfire threshold and noise amplitudes of the plant."""

    imep_offset: float = 0.2
    imep_gain: float = 3.8
    phasing_loss: float = 0.15
    phasing_optimum: float = 6.0
    phasing_width: float = 8.0
    ca50_offset: float = 7.0
    ca50_nvo_gain: float = 5.0
    ca50_water_gain: float = 5.0
    ca50_residual_gain: float = 3.0
    ca50_late: float = 25.0
    nvo_center: float = 255.0
    nvo_half_range: float = 105.0
    mprr_gain: float = 2.5
    mprr_decay: float = 8.0
    nox_gain: float = 60.0
    nox_imep_gain: float = 0.45
    nox_ca50_gain: float = 0.12
    thermal_offset: float = 0.3
    thermal_memory: float = 0.8
    thermal_imep_gain: float = 0.25
    thermal_nvo_gain: float = 0.8
    thermal_water_gain: float = 0.6
    misfire_threshold: float = 0.35
    misfire_width: float = 0.06
    noise_imep: float = 0.12
    noise_ca50: float = 0.5
    noise_nox: float = 10.0
    noise_mprr: float = 0.4
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Check the parameter invariants.

        Raises:
            ValueError: If a monotonicity-bearing gain is not strictly positive,
                a noise amplitude is negative, or the phasing loss leaves [0, 1).
        """
        for name in POSITIVE_GAINS:
            if getattr(self, name) <= 0:
                raise ValueError(f"plant gain {name} must be strictly positive")
        for name in NOISE_FIELDS:
            if getattr(self, name) < 0:
                raise ValueError(f"plant noise amplitude {name} must be non-negative")
        if not 0 <= self.phasing_loss < 1:
            raise ValueError("phasing_loss must lie in [0, 1)")
        if self.nvo_half_range <= 0 or self.phasing_width <= 0:
            raise ValueError("nvo_half_range and phasing_width must be positive")

    def noise_free(self) -> "PlantParams":
        """Return a copy with every noise amplitude set to zero."""
        return replace(self, **{name: 0.0 for name in NOISE_FIELDS})

    @property
    def noise_std(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in NOISE_FIELDS])

    @classmethod
    def sample(cls, rng: np.random.Generator, spread: float = 0.3) -> "PlantParams":
        """Draw a random parameter set by scaling each default gain by 1 +/- spread."""
        defaults = cls()
        values = {}
        for item in fields(cls):
            value = getattr(defaults, item.name)
            if item.name in POSITIVE_GAINS or item.name in NOISE_FIELDS:
                value = value * rng.uniform(1.0 - spread, 1.0 + spread)
            values[item.name] = value
        return cls(**values)


@dataclass(frozen=True)
class PlantState:
    """Residual thermal state (dimensionless, in [0, 2]) and last true IMEP."""

    t_res: float = 1.0
    last_imep: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.t_res <= 2.0:
            raise ValueError(f"thermal state {self.t_res} outside [0, 2]")


def clean_outputs(
    state: PlantState, actuation: Actuation, params: PlantParams
) -> tuple[np.ndarray, float]:
    """
    Evaluate the noise-free output maps and the next thermal state.

    Returns:
        tuple: (outputs [imep, ca50, nox, mprr], next thermal state).
    """
    nvo_norm = (actuation.nvo - params.nvo_center) / params.nvo_half_range
    burn = expit((state.t_res - params.misfire_threshold) / params.misfire_width)
    ca50_burning = (
        params.ca50_offset
        - params.ca50_nvo_gain * nvo_norm
        + params.ca50_water_gain * actuation.doi_water
        - params.ca50_residual_gain * (state.t_res - 1.0)
    )
    ca50 = burn * ca50_burning + (1.0 - burn) * params.ca50_late
    efficiency = 1.0 - params.phasing_loss * np.tanh(
        ((ca50_burning - params.phasing_optimum) / params.phasing_width) ** 2
    )
    imep = burn * (params.imep_offset + params.imep_gain * actuation.doi_fuel) * efficiency
    mprr = params.mprr_gain * imep * np.exp(-ca50 / params.mprr_decay)
    nox = (
        params.nox_gain
        * np.exp(params.nox_imep_gain * (imep - 3.0))
        * np.exp(-params.nox_ca50_gain * (ca50 - 6.0))
    )
    drive = (
        params.thermal_offset
        + params.thermal_memory * (state.t_res - 1.0)
        + params.thermal_imep_gain * (imep - 3.0)
        + params.thermal_nvo_gain * nvo_norm
        - params.thermal_water_gain * actuation.doi_water
    )
    t_next = 2.0 * expit(drive)
    return np.array([imep, ca50, nox, mprr]), float(t_next)


def plant_step(
    state: PlantState,
    actuation: Actuation,
    params: PlantParams,
    rng: np.random.Generator | None = None,
) -> tuple[PlantState, ModelOutput]:
    """
    Advance the plant by one engine cycle.

    Parameters:
        state (PlantState): Thermal state entering the cycle.
        actuation (Actuation): Actuator settings for the cycle.
        params (PlantParams): Plant parameters.
        rng (np.random.Generator | None): Noise source; required when any noise
            amplitude is positive.

    Returns:
        tuple: (next PlantState, measured ModelOutput).
    """
    outputs, t_next = clean_outputs(state, actuation, params)
    measured = outputs.copy()
    noise = params.noise_std
    if np.any(noise > 0):
        if rng is None:
            raise ValueError("a random generator is required for a noisy plant")
        measured = measured + noise * rng.standard_normal(noise.size)
        # imep, nox and mprr are non-negative by definition
        measured[[0, 2, 3]] = np.maximum(measured[[0, 2, 3]], 0.0)
    next_state = PlantState(t_res=min(max(t_next, 0.0), 2.0), last_imep=float(outputs[0]))
    return next_state, ModelOutput.from_array(measured)


def steady_output(
    params: PlantParams, actuation: Actuation, cycles: int = 200
) -> tuple[PlantState, ModelOutput]:
    """Iterate the noise-free plant at a constant actuation to its fixed point."""
    params = params.noise_free()
    state = PlantState()
    output = None
    for _ in range(cycles):
        state, output = plant_step(state, actuation, params)
    return state, output


class SurrogatePlant:
    """
    Stateful plant instance owned by one loop.

    Wraps `plant_step` with its own state and seeded generator; instances are
    stepped sequentially and never shared between threads.
    """

    def __init__(self, params: PlantParams, state: PlantState | None = None):
        self.params = params
        self.state = state or PlantState()
        self.rng = np.random.default_rng(params.seed)
        self.cycle = 0
        logger.debug("Surrogate plant seeded with %d, t_res %.3f", params.seed, self.state.t_res)

    def step(self, actuation: Actuation) -> ModelOutput:
        """Run one cycle and return the measured outputs."""
        self.state, measured = plant_step(self.state, actuation, self.params, self.rng)
        self.cycle += 1
        return measured


def excitation_array(
    n_cycles: int,
    bounds: ActuatorBounds,
    rng: np.random.Generator,
    min_hold: int = 1,
    max_hold: int = 12,
) -> np.ndarray:
    """
    Generate an amplitude-and-hold-time randomised signal for every actuator.

    Each channel holds a uniformly drawn amplitude for a uniformly drawn number of
    cycles, independently of the other channels.

    Returns:
        np.ndarray: Array of shape (n_cycles, n_channels).
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be at least 1")
    if bounds is None or len(bounds.lower) == 0:
        raise ValueError("excitation needs non-empty actuator bounds")
    if not 1 <= min_hold <= max_hold:
        raise ValueError("hold times must satisfy 1 <= min_hold <= max_hold")
    lo, hi = bounds.lo, bounds.hi
    signal = np.empty((n_cycles, lo.size))
    for channel in range(lo.size):
        start = 0
        while start < n_cycles:
            hold = int(rng.integers(min_hold, max_hold + 1))
            signal[start : start + hold, channel] = rng.uniform(lo[channel], hi[channel])
            start += hold
    return signal


def excitation_sequence(
    n_cycles: int,
    bounds: ActuatorBounds,
    rng: np.random.Generator,
    min_hold: int = 1,
    max_hold: int = 12,
) -> list[Actuation]:
    """List form of `excitation_array`."""
    signal = excitation_array(n_cycles, bounds, rng, min_hold, max_hold)
    return [Actuation.from_array(row) for row in signal]
