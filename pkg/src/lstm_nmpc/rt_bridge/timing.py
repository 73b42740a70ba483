"""
Cycle Timing.

`CycleClock` paces the plant node on an absolute schedule (cycle k is emitted
at start + k * period, so sleeps never accumulate drift) and holds the compute
budget a reply must meet. `collect_timing` summarises a run log into
`TimingStats`.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

# remaining time below which wait_until spins instead of sleeping
SPIN_THRESHOLD_S = 0.002


@dataclass(frozen=True)
class CycleClock:
    """Engine-cycle period and controller compute budget, in milliseconds."""

    period_ms: float = 80.0
    budget_ms: float = 22.0

    def __post_init__(self):
        if self.period_ms <= 0 or not 0 < self.budget_ms < self.period_ms:
            raise ValueError("clock needs 0 < budget < period")

    @property
    def period_s(self) -> float:
        return self.period_ms / 1e3

    @property
    def budget_s(self) -> float:
        return self.budget_ms / 1e3

    def emission_time(self, start: float, cycle: int) -> float:
        return start + cycle * self.period_s

    @staticmethod
    def wait_until(target: float) -> None:
        """Block until `time.perf_counter()` reaches `target`."""
        while True:
            remaining = target - time.perf_counter()
            if remaining <= 0:
                return
            if remaining > SPIN_THRESHOLD_S:
                time.sleep(remaining - SPIN_THRESHOLD_S)


@dataclass(frozen=True)
class TimingStats:
    """Solve-time distribution, round trips, deadline misses and emission jitter."""

    count: int
    mean_ms: float
    max_ms: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    misses: int
    budget_ms: float
    round_trip_mean_ms: float = float("nan")
    round_trip_max_ms: float = float("nan")
    jitter_ms: float = float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(self)])

    def to_csv(self, destination: str | PathLike) -> Path:
        path = Path(destination)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def collect_timing(log: pd.DataFrame | Sequence[float], budget_ms: float = 22.0) -> TimingStats:
    """
    Summarise a run log.

    Parameters:
        log (pd.DataFrame | Sequence[float]): A plant or controller run log with a
            `solve_time_us` column (plus optional `round_trip_ms`, `miss` and
            `jitter_ms`), or plain solve durations in milliseconds.
        budget_ms (float): Compute budget per cycle.

    Returns:
        TimingStats: Percentiles over the cycles that have a solve time. Misses
        count cycles flagged as missed or whose solve exceeded the budget.
    """
    if isinstance(log, pd.DataFrame):
        frame = log
    else:
        frame = pd.DataFrame({"solve_time_us": 1e3 * np.asarray(log, dtype=float)})
    if frame.empty:
        raise ValueError("cannot collect timing from an empty log")
    durations = frame["solve_time_us"].to_numpy(float) / 1e3
    over_budget = np.nan_to_num(durations, nan=0.0) > budget_ms
    flagged = frame["miss"].to_numpy(bool) if "miss" in frame else np.zeros(len(frame), bool)
    durations = durations[np.isfinite(durations)]
    if durations.size:
        p50, p95, p99 = np.percentile(durations, [50, 95, 99])
        mean, peak = float(durations.mean()), float(durations.max())
    else:
        p50 = p95 = p99 = mean = peak = float("nan")

    round_trip = (
        frame["round_trip_ms"].dropna().to_numpy(float) if "round_trip_ms" in frame else np.empty(0)
    )
    jitter = frame["jitter_ms"].dropna().to_numpy(float) if "jitter_ms" in frame else np.empty(0)
    return TimingStats(
        count=int(durations.size),
        mean_ms=mean,
        max_ms=peak,
        p50_ms=float(p50),
        p95_ms=float(p95),
        p99_ms=float(p99),
        misses=int(np.count_nonzero(flagged | over_budget)),
        budget_ms=budget_ms,
        round_trip_mean_ms=float(round_trip.mean()) if round_trip.size else float("nan"),
        round_trip_max_ms=float(round_trip.max()) if round_trip.size else float("nan"),
        jitter_ms=float(np.abs(jitter).max()) if jitter.size else float("nan"),
    )
