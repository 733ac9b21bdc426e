"""Scheduling policies: baseline, all-local, all-edge, one-step improved.

A policy maps the full per-frame state to one `Action`. The baseline serves
the uplink head-of-line device with channel-inversion power and admits
arrivals while fewer than K devices queue. The improved policy performs a
one-step lookahead against the baseline's closed-form value: current fading
is known at decision time, so each candidate (device, power, routing) triple
has a single deterministic successor state to evaluate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .model import (Action, CompactState, EdgeEntry, FullState, ModelParams,
                    local_cost)
from .valuefn import ValueParams, value_batch

__all__ = [
    "PolicyKind",
    "baseline_decide",
    "all_local_decide",
    "all_edge_decide",
    "improved_decide",
    "make_policy",
]


@dataclass(frozen=True)
class PolicyKind:
    """Named policy plus its optional parameter overrides.

    `receive_power_w` and `admission_threshold` override the model's values
    for the policies that use them; `power_grid` overrides the improved
    policy's receive-referred search grid.
    """

    kind: str
    receive_power_w: Optional[float] = None
    admission_threshold: Optional[int] = None
    power_grid: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in ("baseline", "all_local", "all_edge", "improved"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.power_grid is not None:
            grid = self.power_grid
            if len(grid) < 2 or grid[0] <= 0:
                raise ValueError("power_grid needs >= 2 positive levels")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError("power_grid must be strictly increasing")

    def effective_params(self, params: ModelParams) -> ModelParams:
        updates = {}
        if self.receive_power_w is not None:
            updates["receive_power_w"] = self.receive_power_w
        if self.admission_threshold is not None:
            updates["admission_threshold"] = self.admission_threshold
        if self.power_grid is not None:
            updates["power_grid"] = self.power_grid
        return replace(params, **updates) if updates else params


def baseline_decide(state: FullState, params: ModelParams) -> Action:
    """FCFS head transmits at channel-inversion power; admit below K."""
    entries = state.compact.entries
    if entries:
        head = entries[0]
        selected, power = head.device_id, params.receive_power_w / head.pathloss
    else:
        selected, power = None, 0.0
    admit = 1 if len(entries) < params.admission_threshold else 0
    return Action(selected, power, admit)


def all_local_decide(state: FullState) -> Action:
    """Every task computes on its own device; the uplink stays silent."""
    return Action(None, 0.0, 0)


def all_edge_decide(state: FullState, params: ModelParams) -> Action:
    """Every task is offloaded; uplink service as the baseline without a cap."""
    entries = state.compact.entries
    if entries:
        head = entries[0]
        selected, power = head.device_id, params.receive_power_w / head.pathloss
    else:
        selected, power = None, 0.0
    return Action(selected, power, 1)


def improved_decide(state: FullState, value_params: ValueParams,
                    power_grid=None) -> Action:
    """One-step lookahead against the baseline value function.

    Candidates are: no transmission, and for each queued device the cheapest
    grid power achieving each distinct number of delivered segments (the
    delivered count is a step function of power, so the grid collapses to a
    few distinct successors per device). Each candidate is scored as
    immediate power plus the discounted successor value, with the arrival
    either admitted or routed local; ties between routings go local. Scoring
    is deterministic: earlier candidates (FCFS device order, lower power)
    win ties.
    """
    params = value_params.params
    grid = np.asarray(power_grid if power_grid is not None
                      else params.power_grid, dtype=float)
    entries = state.compact.entries
    arrival = state.arrival
    gamma = params.discount

    selected_ids: list[Optional[int]] = [None]
    powers = [0.0]
    successors = [entries]
    for pos, entry in enumerate(entries):
        fading_sq = state.fading[entry.device_id]
        snr = grid * fading_sq / params.noise_power_w
        delivered = np.floor(params.bandwidth_hz * np.log2(1.0 + snr)
                             * params.frame_duration_s
                             / params.segment_bits).astype(np.int64)
        delivered = np.minimum(delivered, entry.queue_segments)
        transmit = grid / entry.pathloss
        cheapest: dict[int, float] = {}
        for sent, power in zip(delivered, transmit):
            if sent > 0 and int(sent) not in cheapest:
                cheapest[int(sent)] = float(power)
        for sent, power in cheapest.items():
            remaining = entry.queue_segments - sent
            if remaining == 0:
                succ = entries[:pos] + entries[pos + 1:]
            else:
                succ = (entries[:pos]
                        + (replace(entry, queue_segments=remaining),)
                        + entries[pos + 1:])
            selected_ids.append(entry.device_id)
            powers.append(float(power))
            successors.append(succ)

    power_arr = np.asarray(powers)
    if arrival is None:
        states = [CompactState(succ) for succ in successors]
        scores = power_arr + gamma * value_batch(states, value_params)
        best = int(np.argmin(scores))
        return Action(selected_ids[best], powers[best], 0)

    newcomer = EdgeEntry(arrival.id, arrival.pathloss, arrival.segments)
    admit_states = [CompactState(succ + (newcomer,)) for succ in successors]
    local_states = [CompactState(succ) for succ in successors]
    values = value_batch(admit_states + local_states, value_params)
    n = len(successors)
    lump = local_cost(arrival.segments, arrival.cpu_freq_hz,
                      arrival.cycles_per_bit, params)
    admit_scores = power_arr + gamma * values[:n]
    local_scores = lump + power_arr + gamma * values[n:]
    best_admit = int(np.argmin(admit_scores))
    best_local = int(np.argmin(local_scores))
    if admit_scores[best_admit] < local_scores[best_local]:
        return Action(selected_ids[best_admit], powers[best_admit], 1)
    return Action(selected_ids[best_local], powers[best_local], 0)


def make_policy(policy: PolicyKind, params: ModelParams,
                value_params: Optional[ValueParams] = None
                ) -> Callable[[FullState], Action]:
    """Bind a policy kind to its parameters, returning a decide function."""
    effective = policy.effective_params(params)
    if policy.kind == "baseline":
        return lambda state: baseline_decide(state, effective)
    if policy.kind == "all_local":
        return lambda state: all_local_decide(state)
    if policy.kind == "all_edge":
        return lambda state: all_edge_decide(state, effective)
    if value_params is None:
        value_params = ValueParams.from_distributions(effective)
    elif value_params.params != effective:
        value_params = replace(value_params, params=effective)
    grid = effective.power_grid
    return lambda state: improved_decide(state, value_params, grid)
