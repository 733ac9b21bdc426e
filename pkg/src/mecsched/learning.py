"""Online estimation of arrival statistics and gradient descent on p_r.

The estimators are plain running means fed one frame at a time: the arrival
probability updates every frame, the mean inverse pathloss and the mean
local-computing lump update only on frames with an arrival. The receive
power is tuned by projected SGD using the analytic derivative of the
empty-state discounted cost through the (count, head-queue) chain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .markov import (RESIDUAL_RTOL, ChainIndex, SolverError, build_c,
                     build_dc, build_dphi, build_phi)
from .model import ModelParams, Task
from .valuefn import ValueParams

__all__ = [
    "FrameObservation",
    "EstimatorState",
    "SgdState",
    "observed_local_cost",
    "update_estimators",
    "gradient_pr",
    "sgd_step",
]


@dataclass(frozen=True)
class FrameObservation:
    """What one frame reveals about the arrival process.

    On arrival frames the observation carries the attributes the estimators
    consume: the device's pathloss and its cpu frequency and per-bit cycle
    count. Queue length is not needed because the lump estimate averages
    over the whole task-size range analytically.
    """

    arrived: bool
    pathloss: Optional[float] = None
    cpu_freq_hz: Optional[float] = None
    cycles_per_bit: Optional[float] = None

    def __post_init__(self):
        if self.arrived:
            if self.pathloss is None or self.pathloss <= 0:
                raise ValueError("arrival needs a positive pathloss")
            if self.cpu_freq_hz is None or self.cpu_freq_hz <= 0:
                raise ValueError("arrival needs a positive cpu frequency")
            if self.cycles_per_bit is None or self.cycles_per_bit <= 0:
                raise ValueError("arrival needs a positive cycle count")

    @classmethod
    def from_arrival(cls, task: Task) -> "FrameObservation":
        return cls(arrived=True, pathloss=task.pathloss,
                   cpu_freq_hz=task.cpu_freq_hz,
                   cycles_per_bit=task.cycles_per_bit)

    @classmethod
    def none(cls) -> "FrameObservation":
        return cls(arrived=False)


@dataclass(frozen=True)
class EstimatorState:
    """Running means of the three arrival statistics.

    `frame_count` counts every observed frame, `arrival_count` only the
    frames with an arrival; each mean is exact over its own counter.
    """

    frame_count: int = 0
    arrival_count: int = 0
    p_hat: float = 0.0
    varpi_hat: float = 0.0
    cbar_hat: float = 0.0

    def __post_init__(self):
        if self.frame_count < 0 or self.arrival_count > self.frame_count:
            raise ValueError("inconsistent counters")
        if not 0.0 <= self.p_hat <= 1.0:
            raise ValueError("p_hat must lie in [0, 1]")
        if self.varpi_hat < 0 or self.cbar_hat < 0:
            raise ValueError("estimates must be >= 0")


def observed_local_cost(cpu_freq_hz: float, cycles_per_bit: float,
                        params: ModelParams) -> float:
    """Discounted local lump at observed (f, l), averaged over task sizes.

    Exact enumeration over the uniform segment-count support; each size
    contributes gamma*(1-gamma^T)/(1-gamma)*(w + kappa*f^3) with T the local
    completion frame count at that size.
    """
    gamma = params.discount
    sizes = np.arange(params.seg_min, params.seg_max + 1, dtype=float)
    frames = np.ceil(sizes * params.segment_bits * cycles_per_bit
                     / (cpu_freq_hz * params.frame_duration_s))
    per_frame = (params.latency_weight
                 + params.switched_capacitance * cpu_freq_hz ** 3)
    lump = per_frame * gamma * (1.0 - gamma ** frames) / (1.0 - gamma)
    return float(lump.mean())


def update_estimators(est: EstimatorState, obs: FrameObservation,
                      params: ModelParams) -> EstimatorState:
    """Fold one frame's observation into the running means."""
    t = est.frame_count + 1
    indicator = 1.0 if obs.arrived else 0.0
    p_hat = ((t - 1) * est.p_hat + indicator) / t
    if not obs.arrived:
        return replace(est, frame_count=t, p_hat=p_hat)
    n = est.arrival_count + 1
    varpi_hat = ((n - 1) * est.varpi_hat + 1.0 / obs.pathloss) / n
    c_obs = observed_local_cost(obs.cpu_freq_hz, obs.cycles_per_bit, params)
    cbar_hat = ((n - 1) * est.cbar_hat + c_obs) / n
    return EstimatorState(frame_count=t, arrival_count=n, p_hat=p_hat,
                          varpi_hat=varpi_hat, cbar_hat=cbar_hat)


def _lu_solve_checked(lu_piv, system: np.ndarray, rhs: np.ndarray,
                      label: str) -> np.ndarray:
    x = scipy.linalg.lu_solve(lu_piv, rhs)
    scale = max(float(np.linalg.norm(rhs, np.inf)), 1e-300)
    residual = float(np.linalg.norm(system @ x - rhs, np.inf))
    # "not <=" so a NaN residual fails verification instead of passing it
    if not residual <= RESIDUAL_RTOL * scale:
        raise SolverError(f"{label} solve residual {residual:.3e} exceeds "
                          f"{RESIDUAL_RTOL:.1e} * {scale:.3e}")
    return x


def gradient_pr(p_r: float, value_params: ValueParams,
                chain_index: Optional[ChainIndex] = None,
                entry_distribution: Optional[np.ndarray] = None) -> float:
    """Derivative of the empty-state discounted cost w.r.t. receive power.

    d/dp [v' (I-gamma*Phi)^-1 c] = v' (I-gamma*Phi)^-1
    [dc + gamma * dPhi * (I-gamma*Phi)^-1 c]; one LU factorization, two
    solves. `entry_distribution` defaults to a unit mass on the empty state.
    """
    params = value_params.params
    gamma = params.discount
    P_N = value_params.arrival_prob
    idx = chain_index if chain_index is not None else \
        ChainIndex(params.admission_threshold, params.seg_max)

    phi = build_phi(params, p_r, P_N)
    dphi = build_dphi(params, p_r, P_N)
    c = build_c(params, p_r, value_params.varpi, value_params.cbar, P_N)
    dc = build_dc(value_params.varpi, idx)

    system = np.eye(idx.n) - gamma * phi
    lu_piv = scipy.linalg.lu_factor(system)
    x = _lu_solve_checked(lu_piv, system, c, "cost-to-go")
    rhs = dc + gamma * (dphi @ x)
    y = _lu_solve_checked(lu_piv, system, rhs, "sensitivity")

    if entry_distribution is None:
        return float(y[0])
    v = np.asarray(entry_distribution, dtype=float)
    if v.shape != (idx.n,):
        raise ValueError("entry distribution has wrong length")
    return float(v @ y)


@dataclass(frozen=True)
class SgdState:
    """Projected-SGD iterate on the receive power.

    The step size is eta0/n, which sums to infinity while its squares stay
    summable. eta0 is normalized on the first step so the first move is
    eta0_scale times the starting power regardless of the gradient's units;
    iterates are projected into [p_floor, p_cap].
    """

    p_r_current: float
    iteration: int = 0
    eta0: Optional[float] = None
    eta0_scale: float = 0.5
    p_floor: float = 1e-12
    p_cap: float = 1.0
    last_gradient: float = 0.0

    def __post_init__(self):
        if not self.p_floor <= self.p_r_current <= self.p_cap:
            raise ValueError("p_r must lie in [p_floor, p_cap]")
        if self.p_floor <= 0 or self.p_cap <= self.p_floor:
            raise ValueError("need 0 < p_floor < p_cap")
        if self.eta0_scale <= 0:
            raise ValueError("eta0_scale must be positive")
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")


def sgd_step(sgd: SgdState, est: Optional[EstimatorState],
             value_params: ValueParams,
             gradient_fn: Optional[Callable[[float, ValueParams], float]]
             = None) -> SgdState:
    """One projected-SGD update, triggered once per arrival.

    With an estimator snapshot the gradient is evaluated at the current
    estimates; otherwise at the statistics already in `value_params`.
    """
    if est is not None and est.arrival_count > 0:
        vp = ValueParams.from_estimates(value_params.params, est)
    else:
        vp = value_params
    grad_of = gradient_fn if gradient_fn is not None else gradient_pr
    grad = float(grad_of(sgd.p_r_current, vp))

    n = sgd.iteration + 1
    eta0 = sgd.eta0
    if eta0 is None:
        eta0 = sgd.eta0_scale * sgd.p_r_current / max(abs(grad), 1e-300)
    p_new = sgd.p_r_current - (eta0 / n) * grad
    p_new = min(sgd.p_cap, max(sgd.p_floor, p_new))
    return replace(sgd, p_r_current=p_new, iteration=n, eta0=eta0,
                   last_gradient=grad)
