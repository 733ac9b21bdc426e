"""Seeded random generators for arrivals, device attributes, and fading.

Every experiment draws all randomness through `RngStream` objects so a run is
bit-reproducible from (seed, stream_id). Streams with distinct stream_ids are
statistically independent, which lets episodes run in parallel and lets the
same arrival sequence be replayed against different policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import ModelParams, Task

__all__ = [
    "RngStream",
    "ArrivalConfig",
    "sample_arrival",
    "sample_fading_sq",
    "pathloss_from_distance",
]


class RngStream:
    """Single-owner random stream pinned by (seed, stream_id).

    Identical (seed, stream_id) pairs always reproduce the same sequence;
    distinct stream_ids under one seed are decorrelated, so parallel episodes
    never share draws.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.seed,
                                     spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64DXSM(seq))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self) -> float:
        """Uniform draw on [0, 1)."""
        return float(self._gen.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self._gen.uniform(low, high))

    def integer(self, low: int, high: int) -> int:
        """Uniform integer on {low..high}, both ends included."""
        return int(self._gen.integers(low, high + 1))

    def exponential(self, mean: float = 1.0) -> float:
        return float(self._gen.exponential(mean))

    def exponentials(self, n: int, mean: float = 1.0) -> np.ndarray:
        return self._gen.exponential(mean, size=n)


def _disk_radius_inverse_cdf(u: float, radius: float) -> float:
    # Uniform over the disk: P[r <= t] = (t/R)^2, so r = R * sqrt(u).
    return radius * math.sqrt(u)


@dataclass(frozen=True)
class ArrivalConfig:
    """Distributional description of the arrival process.

    The spatial density defaults to uniform over the cell disk; any radial
    law can be supplied through `radius_inverse_cdf(u, cell_radius_m)`.
    """

    arrival_prob: float
    cell_radius_m: float
    pathloss_exponent: float
    min_distance_m: float
    seg_min: int
    seg_max: int
    cpu_freq_range_hz: tuple[float, float]
    cycles_per_bit_range: tuple[float, float]
    radius_inverse_cdf: Callable[[float, float], float] = _disk_radius_inverse_cdf

    def __post_init__(self):
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError("arrival_prob must lie in [0, 1]")
        if not 1 <= self.seg_min <= self.seg_max:
            raise ValueError("need 1 <= seg_min <= seg_max")

    @classmethod
    def from_params(cls, params: ModelParams) -> "ArrivalConfig":
        return cls(
            arrival_prob=params.arrival_prob,
            cell_radius_m=params.cell_radius_m,
            pathloss_exponent=params.pathloss_exponent,
            min_distance_m=params.min_distance_m,
            seg_min=params.seg_min,
            seg_max=params.seg_max,
            cpu_freq_range_hz=params.cpu_freq_range_hz,
            cycles_per_bit_range=params.cycles_per_bit_range,
        )


def pathloss_from_distance(distance_m: float, params: ModelParams) -> float:
    """Large-scale channel gain at a given distance, clamped near the origin."""
    clamped = max(distance_m, params.min_distance_m)
    return clamped ** (-params.pathloss_exponent)


def sample_arrival(rng: RngStream, config: ArrivalConfig, frame_index: int,
                   next_id: int) -> Optional[Task]:
    """Draw this frame's arrival, or None.

    Draw order is fixed (indicator, radius, segments, cpu frequency, cycles
    per bit) so a replay consumes the stream identically. The caller owns the
    monotone id counter and passes the id the task receives if it arrives.
    """
    if rng.random() >= config.arrival_prob:
        return None
    radius = config.radius_inverse_cdf(rng.random(), config.cell_radius_m)
    gain = max(radius, config.min_distance_m) ** (-config.pathloss_exponent)
    segments = rng.integer(config.seg_min, config.seg_max)
    cpu_freq = rng.uniform(*config.cpu_freq_range_hz)
    cycles = rng.uniform(*config.cycles_per_bit_range)
    return Task(id=next_id, segments=segments, cycles_per_bit=cycles,
                cpu_freq_hz=cpu_freq, pathloss=gain,
                arrival_frame=frame_index)


def sample_fading_sq(rng: RngStream) -> float:
    """Squared channel magnitude draw, exponential with unit mean."""
    return rng.exponential(1.0)
