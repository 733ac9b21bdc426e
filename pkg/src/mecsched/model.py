"""Domain types and deterministic physics of the frame-based offloading model.

A single cell serves at most one new device per frame. Each arriving task is
either computed locally on the device or offloaded to the edge server over a
shared uplink on which exactly one device may transmit per frame. Everything
in this module is a pure function of its inputs; randomness (fading draws,
arrival records) is produced elsewhere and passed in.

Conventions:
    - Edge queues hold an integer number of segments; local queues drain a
      real-valued amount per frame.
    - A device admitted in frame t has its queue installed at frame t+1 and
      cannot transmit (or compute) during its arrival frame.
    - Cost accounting offers two equivalent views: the full stage cost charges
      holding and compute power frame by frame, the reduced stage cost charges
      a task routed local once, as a discounted lump, at its arrival frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

__all__ = [
    "ModelParams",
    "Task",
    "EdgeEntry",
    "CompactState",
    "LocalEntry",
    "FullState",
    "Action",
    "paper_defaults",
    "default_power_grid",
    "channel_capacity",
    "segments_per_frame",
    "local_completion_frames",
    "local_power",
    "local_cost",
    "stage_cost_full",
    "stage_cost_reduced",
    "advance_state",
]


def default_power_grid(n_levels: int = 32,
                       low_w: float = 1e-10,
                       high_w: float = 1e-1) -> tuple[float, ...]:
    """Log-spaced receive-referred power grid for the improved policy search.

    Levels are receive powers; the policy divides by the device's pathloss to
    get the transmit power, so a wide log grid covers the pathloss dynamic
    range of the whole cell.
    """
    return tuple(np.logspace(math.log10(low_w), math.log10(high_w), n_levels))


@dataclass(frozen=True)
class ModelParams:
    """Physical and statistical constants of one experiment.

    All quantities are SI. `seg_min`/`seg_max` bound the integer task size in
    segments; `cpu_freq_range_hz` and `cycles_per_bit_range` are the supports
    of the uniform device-attribute distributions; `power_grid` is the
    receive-referred search grid of the improved policy.
    """

    frame_duration_s: float = 0.01
    bandwidth_hz: float = 1e7
    segment_bits: int = 10_000
    noise_power_w: float = 1e-9
    latency_weight: float = 0.05
    discount: float = 0.95
    switched_capacitance: float = 1.2e-28
    seg_min: int = 200
    seg_max: int = 300
    arrival_prob: float = 0.1
    admission_threshold: int = 4
    receive_power_w: float = 2.8e-9
    cell_radius_m: float = 400.0
    pathloss_exponent: float = 3.5
    min_distance_m: float = 1.0
    cpu_freq_range_hz: tuple[float, float] = (0.6e9, 1.0e9)
    cycles_per_bit_range: tuple[float, float] = (560.0, 600.0)
    power_grid: tuple[float, ...] = field(default_factory=default_power_grid)

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if not 0.0 < self.arrival_prob <= 1.0:
            raise ValueError("arrival_prob must lie in (0, 1]")
        if not 1 <= self.seg_min <= self.seg_max:
            raise ValueError("need 1 <= seg_min <= seg_max")
        if self.admission_threshold < 1:
            raise ValueError("admission_threshold must be >= 1")
        for name in ("frame_duration_s", "bandwidth_hz", "segment_bits",
                     "noise_power_w", "latency_weight", "switched_capacitance",
                     "receive_power_w", "cell_radius_m", "pathloss_exponent",
                     "min_distance_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.min_distance_m >= self.cell_radius_m:
            raise ValueError("min_distance_m must be below cell_radius_m")
        for name in ("cpu_freq_range_hz", "cycles_per_bit_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be a positive (lo, hi) pair")
        grid = self.power_grid
        if len(grid) == 0 or grid[0] <= 0:
            raise ValueError("power_grid must be nonempty and positive")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("power_grid must be strictly increasing")


def paper_defaults(**overrides) -> ModelParams:
    """The numerical-section parameter set, with keyword overrides."""
    return replace(ModelParams(), **overrides) if overrides else ModelParams()


@dataclass(frozen=True)
class Task:
    """One arriving compute task and the attributes frozen at its arrival."""

    id: int
    segments: int
    cycles_per_bit: float
    cpu_freq_hz: float
    pathloss: float
    arrival_frame: int

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if self.pathloss <= 0:
            raise ValueError("pathloss must be positive")


@dataclass(frozen=True)
class EdgeEntry:
    """A device waiting in (or at the head of) the uplink queue."""

    device_id: int
    pathloss: float
    queue_segments: int

    def __post_init__(self):
        if self.queue_segments < 1:
            raise ValueError("edge entries must hold >= 1 segment")
        if self.pathloss <= 0:
            raise ValueError("pathloss must be positive")


@dataclass(frozen=True)
class CompactState:
    """FCFS-ordered edge set with pathlosses and queue lengths.

    This is the reduced scheduling state: fading and the arrival record are
    marginalized out. Entries are kept in arrival order, which coincides with
    ascending device id because ids are issued monotonically.
    """

    entries: tuple[EdgeEntry, ...] = ()

    def __post_init__(self):
        ids = [e.device_id for e in self.entries]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("entries must be in strictly ascending id order")

    def __len__(self) -> int:
        return len(self.entries)

    def device_ids(self) -> tuple[int, ...]:
        return tuple(e.device_id for e in self.entries)

    def queues(self) -> tuple[int, ...]:
        return tuple(e.queue_segments for e in self.entries)

    def pathlosses(self) -> tuple[float, ...]:
        return tuple(e.pathloss for e in self.entries)


@dataclass(frozen=True)
class LocalEntry:
    """A device computing its own task; queue is real-valued in segments."""

    device_id: int
    queue_segments: float
    cpu_freq_hz: float
    cycles_per_bit: float

    def __post_init__(self):
        if self.queue_segments <= 0:
            raise ValueError("local entries must hold a positive queue")


@dataclass(frozen=True)
class FullState:
    """Complete per-frame system state.

    `fading` holds the current frame's squared channel magnitude for exactly
    the devices in the edge set. `arrival` is this frame's new task, if any;
    the arrival indicator is simply `arrival is not None`.
    """

    compact: CompactState = CompactState()
    fading: Mapping[int, float] = field(default_factory=dict)
    locals: tuple[LocalEntry, ...] = ()
    arrival: Optional[Task] = None

    def __post_init__(self):
        edge_ids = set(self.compact.device_ids())
        if set(self.fading) != edge_ids:
            raise ValueError("fading must cover exactly the edge entries")


@dataclass(frozen=True)
class Action:
    """One frame's decision: who transmits, at what power, and routing.

    `offload_decision` is consulted only when an arrival is present; 1 admits
    the task to the edge queue, 0 routes it to local computing.
    """

    selected_device: Optional[int] = None
    transmit_power_w: float = 0.0
    offload_decision: int = 0

    def __post_init__(self):
        if self.transmit_power_w < 0:
            raise ValueError("transmit power must be >= 0")
        if self.selected_device is None and self.transmit_power_w != 0:
            raise ValueError("transmit power requires a selected device")
        if self.offload_decision not in (0, 1):
            raise ValueError("offload_decision must be 0 or 1")


def channel_capacity(power_w: float, pathloss: float, fading_sq: float,
                     params: ModelParams) -> float:
    """Uplink capacity in bits/s for a transmit power and channel draw."""
    snr = power_w * pathloss * fading_sq / params.noise_power_w
    return params.bandwidth_hz * math.log2(1.0 + snr)


def segments_per_frame(rate_bits_per_s: float, params: ModelParams) -> int:
    """Whole segments deliverable in one frame at the given rate."""
    return int(math.floor(rate_bits_per_s * params.frame_duration_s
                          / params.segment_bits))


def local_completion_frames(segments: int, cpu_freq_hz: float,
                            cycles_per_bit: float,
                            params: ModelParams) -> int:
    """Frames needed to compute a task of `segments` locally."""
    cycles = segments * params.segment_bits * cycles_per_bit
    return int(math.ceil(cycles / (cpu_freq_hz * params.frame_duration_s)))


def local_power(cpu_freq_hz: float, params: ModelParams) -> float:
    """CPU power draw in watts at the given clock frequency."""
    return params.switched_capacitance * cpu_freq_hz ** 3


def local_cost(segments: int, cpu_freq_hz: float, cycles_per_bit: float,
               params: ModelParams) -> float:
    """Discounted lump cost of computing one task locally.

    Sums gamma^tau * (holding + CPU power) over the completion frames
    tau = 1..T_loc relative to the arrival frame; closed geometric form.
    """
    frames = local_completion_frames(segments, cpu_freq_hz, cycles_per_bit,
                                     params)
    gamma = params.discount
    per_frame = params.latency_weight + local_power(cpu_freq_hz, params)
    return gamma * (1.0 - gamma ** frames) / (1.0 - gamma) * per_frame


def stage_cost_full(state: FullState, action: Action,
                    params: ModelParams) -> float:
    """Per-frame cost with locals charged frame by frame.

    Holding for every active device (edge and local), this frame's transmit
    power, and the CPU power of every local device.
    """
    holding = params.latency_weight * (len(state.compact) + len(state.locals))
    compute = sum(local_power(entry.cpu_freq_hz, params)
                  for entry in state.locals)
    return holding + action.transmit_power_w + compute


def stage_cost_reduced(state: FullState, action: Action,
                       params: ModelParams) -> float:
    """Per-frame cost with local tasks charged once, at their arrival.

    Holding for edge devices only, this frame's transmit power, and, when an
    arrival is routed local, the whole discounted local-computing lump. Over
    a horizon on which all admitted devices depart, the discounted sums of
    the full and reduced accountings agree exactly.
    """
    cost = params.latency_weight * len(state.compact) + action.transmit_power_w
    if state.arrival is not None and action.offload_decision == 0:
        cost += local_cost(state.arrival.segments, state.arrival.cpu_freq_hz,
                           state.arrival.cycles_per_bit, params)
    return cost


def advance_state(state: FullState, action: Action,
                  next_fading: Mapping[int, float],
                  next_arrival: Optional[Task],
                  params: ModelParams) -> FullState:
    """One frame transition.

    The selected device's queue drops by the segments its current channel
    supports; a queue reaching zero departs. Local queues drain a fixed
    amount per frame and depart at zero. An arrival joins the tail of the
    edge queue (offload_decision 1) or the local set (0) with its full task
    size, becoming active next frame. `next_fading` must hold a draw for
    every device present in the resulting edge set; extra keys are ignored.
    """
    entries = state.compact.entries
    selected = action.selected_device
    if selected is not None and selected not in state.fading:
        raise ValueError("selected device is not in the edge set")

    new_entries = []
    for entry in entries:
        if entry.device_id == selected:
            rate = channel_capacity(action.transmit_power_w, entry.pathloss,
                                    state.fading[entry.device_id], params)
            sent = segments_per_frame(rate, params)
            remaining = max(entry.queue_segments - sent, 0)
            if remaining == 0:
                continue
            new_entries.append(replace(entry, queue_segments=remaining))
        else:
            new_entries.append(entry)

    drained = []
    for entry in state.locals:
        step = (entry.cpu_freq_hz * params.frame_duration_s
                / (entry.cycles_per_bit * params.segment_bits))
        remaining = entry.queue_segments - step
        if remaining > 0:
            drained.append(replace(entry, queue_segments=remaining))

    if state.arrival is not None:
        task = state.arrival
        if action.offload_decision == 1:
            new_entries.append(EdgeEntry(task.id, task.pathloss,
                                         task.segments))
        else:
            drained.append(LocalEntry(task.id, float(task.segments),
                                      task.cpu_freq_hz, task.cycles_per_bit))

    compact = CompactState(tuple(new_entries))
    fading = {e.device_id: next_fading[e.device_id] for e in new_entries}
    return FullState(compact, fading, tuple(drained), next_arrival)
