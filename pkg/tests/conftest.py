"""Shared fixtures: parameter sets and random-state helpers.

The "desk" scale (small tasks, small threshold) keeps chains tiny and
episodes fast, so statistical tests reach tight confidence intervals in
seconds; the full-scale defaults are exercised where a criterion pins them.
"""

import numpy as np
import pytest

from mecsched.model import CompactState, EdgeEntry, paper_defaults
from mecsched.stochastic import RngStream, pathloss_from_distance


DESK = dict(admission_threshold=3, seg_min=2, seg_max=6, arrival_prob=0.2)


@pytest.fixture
def desk_params():
    return paper_defaults(**DESK)


@pytest.fixture
def full_params():
    return paper_defaults()


def random_state(rng: RngStream, params, max_devices=None) -> CompactState:
    """A random edge state: disk-law pathlosses, uniform queue lengths.

    Initial devices carry non-positive ids so simulated arrivals (ids from 1)
    stay distinct and FCFS order matches ascending id order.
    """
    cap = params.admission_threshold if max_devices is None else max_devices
    size = rng.integer(0, cap)
    entries = []
    for k in range(size):
        r = params.min_distance_m + (params.cell_radius_m
                                     - params.min_distance_m) * np.sqrt(rng.random())
        entries.append(EdgeEntry(
            device_id=-(size - k),
            pathloss=pathloss_from_distance(r, params),
            queue_segments=rng.integer(1, params.seg_max)))
    return CompactState(tuple(entries))
