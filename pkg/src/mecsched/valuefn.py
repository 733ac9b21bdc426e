"""Closed-form discounted cost of the baseline policy from any edge state.

The baseline's value decomposes over three consecutive periods of an episode:

    period 1 (overload): more initial devices than the admission threshold,
        every arrival is routed local while the head-of-line backlog drains;
    period 2 (drain): the remaining initial devices transmit while arrivals
        may be admitted behind them, tracked by a (K+1)-state counting chain;
    period 3 (steady): only devices admitted after the start remain, governed
        by the (count, head-queue) chain solved in closed form.

Transmission times of the initial devices are collapsed to deterministic
frame counts via the fading-averaged spectral efficiency; the steady-period
chain is exact. All heavy objects (chain solve, counting-chain power tables)
are cached per parameter set, so repeated evaluation - the improved policy
calls this thousands of times per frame - costs a handful of small matrix
gathers per state.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.special

from .markov import (ChainIndex, build_c, build_phi, build_small_chain,
                     solve_discounted)
from .model import CompactState, ModelParams

__all__ = [
    "ValueParams",
    "mean_inverse_pathloss",
    "ergodic_spectral_efficiency",
    "transmission_frames",
    "expected_local_cost",
    "w1",
    "w2",
    "w3",
    "value",
    "value_batch",
    "components",
    "chain_diagnostics",
    "clear_cache",
]


@dataclass(frozen=True)
class ValueParams:
    """Model constants plus the arrival statistics the value function needs.

    `varpi` is the mean inverse pathloss of arriving devices, `cbar` the mean
    discounted local-computing lump, `arrival_prob` the per-frame arrival
    probability. They come either from the configured distributions or from
    online estimates.
    """

    params: ModelParams
    varpi: float
    cbar: float
    arrival_prob: float

    def __post_init__(self):
        if self.varpi <= 0:
            raise ValueError("varpi must be positive")
        if self.cbar < 0:
            raise ValueError("cbar must be >= 0")
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError("arrival_prob must lie in [0, 1]")

    @classmethod
    def from_distributions(cls, params: ModelParams) -> "ValueParams":
        return cls(params=params,
                   varpi=mean_inverse_pathloss(params),
                   cbar=expected_local_cost(params),
                   arrival_prob=params.arrival_prob)

    @classmethod
    def from_estimates(cls, params: ModelParams, est) -> "ValueParams":
        """Build from an estimator snapshot exposing p_hat/varpi_hat/cbar_hat."""
        return cls(params=params, varpi=est.varpi_hat, cbar=est.cbar_hat,
                   arrival_prob=est.p_hat)


@lru_cache(maxsize=256)
def mean_inverse_pathloss(params: ModelParams) -> float:
    """E[1/pathloss] of an arrival under the uniform-disk spatial law."""
    radius = params.cell_radius_m
    rmin = params.min_distance_m
    exp = params.pathloss_exponent

    def integrand(r):
        return max(r, rmin) ** exp * 2.0 * r / radius ** 2

    val, _ = scipy.integrate.quad(integrand, 0.0, radius, points=[rmin],
                                  limit=200, epsabs=0.0, epsrel=1e-11)
    return float(val)


@lru_cache(maxsize=4096)
def _ergodic_eff(snr_scale: float) -> float:
    # E[log2(1 + a X)], X ~ Exp(1), equals e^(1/a) E1(1/a) / ln 2. For small
    # a the exponential would overflow, so the scaled product switches to its
    # asymptotic series (truncated where the terms turn, well below 1e-15
    # relative at the branch point).
    x = 1.0 / snr_scale
    if x <= 300.0:
        scaled = math.exp(x) * scipy.special.exp1(x)
    else:
        scaled, term = 0.0, 1.0 / x
        for k in range(1, 13):
            scaled += term
            term *= -k / x
        return scaled / math.log(2.0)
    return scaled / math.log(2.0)


def ergodic_spectral_efficiency(p_r: float, params: ModelParams) -> float:
    """Fading-averaged spectral efficiency at receive power p_r, in b/s/Hz."""
    if p_r <= 0:
        raise ValueError("receive power must be positive")
    return _ergodic_eff(p_r / params.noise_power_w)


def transmission_frames(queue_segments: int, p_r: float,
                        params: ModelParams) -> int:
    """Deterministic frames to drain a queue at the fading-averaged rate."""
    if queue_segments < 1:
        raise ValueError("queue must hold >= 1 segment")
    eff = ergodic_spectral_efficiency(p_r, params)
    bits_per_frame = eff * params.bandwidth_hz * params.frame_duration_s
    return int(math.ceil(queue_segments * params.segment_bits
                         / bits_per_frame))


def _ceil_discount_antideriv(gamma: float, t: np.ndarray) -> np.ndarray:
    # Antiderivative of x -> gamma^ceil(x) on x >= 0: full unit intervals
    # contribute a geometric sum, the fractional tail sits one power higher.
    fl = np.floor(t)
    full = gamma * (1.0 - gamma ** fl) / (1.0 - gamma)
    return full + (t - fl) * gamma ** (fl + 1.0)


@lru_cache(maxsize=256)
def expected_local_cost(params: ModelParams, rel_tol: float = 1e-6) -> float:
    """Mean discounted local-computing lump over the task distributions.

    The cycles-per-bit average has a closed form (the completion-frame count
    is a ceiling of a uniform variable); the cpu-frequency average is a
    doubling composite Simpson rule to `rel_tol` relative accuracy; task
    sizes are enumerated exactly.
    """
    gamma = params.discount
    sizes = np.arange(params.seg_min, params.seg_max + 1, dtype=float)
    l_lo, l_hi = params.cycles_per_bit_range
    f_lo, f_hi = params.cpu_freq_range_hz
    w = params.latency_weight
    kappa = params.switched_capacitance

    def mean_over_sizes(freqs: np.ndarray) -> np.ndarray:
        # segments per frame of local compute: T = ceil(d*b_s*l/(f*T_s))
        u = (sizes[:, None] * params.segment_bits
             / (freqs[None, :] * params.frame_duration_s))
        if l_hi == l_lo:
            mean_pow = gamma ** np.ceil(u * l_lo)
        else:
            lo = _ceil_discount_antideriv(gamma, u * l_lo)
            hi = _ceil_discount_antideriv(gamma, u * l_hi)
            mean_pow = (hi - lo) / (u * (l_hi - l_lo))
        lump = gamma / (1.0 - gamma) * (1.0 - mean_pow)
        per_frame = w + kappa * freqs ** 3
        return (per_frame[None, :] * lump).mean(axis=0)

    if f_hi == f_lo:
        return float(mean_over_sizes(np.array([f_lo]))[0])

    n = 256
    prev = None
    while True:
        grid = np.linspace(f_lo, f_hi, n + 1)
        integral = scipy.integrate.simpson(mean_over_sizes(grid),
                                           x=grid) / (f_hi - f_lo)
        if prev is not None and abs(integral - prev) <= rel_tol * abs(integral):
            return float(integral)
        if n >= 1 << 14:
            return float(integral)
        prev = integral
        n *= 2


class _Workspace:
    """Per-parameter cache: chain solve plus counting-chain power tables."""

    # Sub-periods discounted below this are numerically absorbing; table
    # indices are clipped there and frame counts capped to avoid overflow.
    _TINY = 1e-18
    _FRAME_CLIP = 10 ** 15

    def __init__(self, vp: ValueParams):
        params = vp.params
        self.params = params
        self.gamma = params.discount
        self.K = params.admission_threshold
        self.w = params.latency_weight
        self.p_r = params.receive_power_w
        self.P_N = vp.arrival_prob
        self.cbar = vp.cbar

        eff = ergodic_spectral_efficiency(self.p_r, params)
        self.bits_per_frame = (eff * params.bandwidth_hz
                               * params.frame_duration_s)

        self.chain_index = ChainIndex(self.K, params.seg_max)
        self.phi = build_phi(params, self.p_r, self.P_N)
        self.c = build_c(params, self.p_r, vp.varpi, vp.cbar,
                         arrival_prob=self.P_N)
        self.x = solve_discounted(self.phi, self.c, self.gamma)
        self.x_empty = float(self.x[0])
        # Mean cost-to-go over a freshly admitted uniform head queue, per count.
        fresh = slice(params.seg_min - 1, params.seg_max)
        self.fresh_x = np.array([self.x[self.chain_index.block(z)][fresh].mean()
                                 for z in range(1, self.K + 1)])

        small = build_small_chain(params, vp.cbar, edge_count=0,
                                  arrival_prob=self.P_N)
        self.Pmat = small.Pmat
        self.Mmat = small.Mmat
        self.gvec = small.gvec
        self._mpow = [np.eye(self.K + 1)]
        self._htab = [np.zeros(self.K + 1)]
        self.mpow_arr = np.stack(self._mpow)
        self.htab_arr = np.stack(self._htab)
        self.t_cap = int(math.ceil(math.log(self._TINY)
                                   / math.log(self.gamma)))

        system = np.eye(self.chain_index.n) - self.gamma * self.phi
        self.solve_residual = float(np.linalg.norm(system @ self.x - self.c,
                                                   np.inf))
        self.row_sum_dev = float(np.max(np.abs(self.phi.sum(axis=1) - 1.0)))

    def ensure_tables(self, frames: int) -> None:
        frames = min(frames, self.t_cap)
        if frames < len(self._mpow):
            return
        while len(self._mpow) <= frames:
            t = len(self._mpow)
            self._htab.append(self._htab[-1]
                              + self.gamma ** (t - 1)
                              * (self._mpow[-1] @ self.gvec))
            self._mpow.append(self._mpow[-1] @ self.Mmat)
        self.mpow_arr = np.stack(self._mpow)
        self.htab_arr = np.stack(self._htab)

    def frames_for(self, queues: np.ndarray) -> np.ndarray:
        raw = np.ceil(queues * self.params.segment_bits / self.bits_per_frame)
        return np.minimum(raw, self._FRAME_CLIP).astype(np.int64)

    def components_batch(self, states: Sequence[CompactState]):
        n_states = len(states)
        sizes = np.array([len(s) for s in states], dtype=np.int64)
        m_max = int(sizes.max(initial=0))
        if m_max == 0:
            zero = np.zeros(n_states)
            return zero, zero.copy(), np.full(n_states, self.x_empty)

        queues = np.zeros((n_states, m_max))
        gains = np.ones((n_states, m_max))
        for i, state in enumerate(states):
            m = len(state)
            if m:
                queues[i, :m] = state.queues()
                gains[i, :m] = state.pathlosses()
        mask = np.arange(m_max)[None, :] < sizes[:, None]

        frames = self.frames_for(queues)
        frames[~mask] = 0
        ends = np.cumsum(frames, axis=1)
        starts = ends - frames
        gamma = self.gamma
        disc_start = gamma ** starts
        geo = disc_start * (1.0 - gamma ** frames) / (1.0 - gamma)

        position = np.arange(m_max)[None, :]
        overload = np.maximum(sizes - self.K, 0)
        in_p1 = mask & (position < overload[:, None])
        in_p2 = mask & ~in_p1
        power = self.p_r / gains
        active = sizes[:, None] - position

        w1 = np.sum(np.where(in_p1, geo * (power + self.w * active), 0.0),
                    axis=1)
        # Arrivals during the overload period are all routed local.
        last_p1 = np.maximum(overload - 1, 0)[:, None]
        end_p1 = np.where(overload > 0,
                          np.take_along_axis(ends, last_p1, axis=1)[:, 0], 0)
        w1 = w1 + self.P_N * self.cbar * (1.0 - gamma ** end_p1) / (1.0 - gamma)

        w2 = np.sum(np.where(in_p2, geo * power, 0.0), axis=1)
        self.ensure_tables(int(frames.max()))
        frames_idx = np.minimum(frames, self.t_cap)
        u = np.zeros((n_states, self.K + 1))
        u[np.arange(n_states), np.minimum(sizes, self.K)] = 1.0
        for j in range(m_max):
            act = in_p2[:, j]
            if not act.any():
                continue
            t_j = frames_idx[:, j]
            holding = np.einsum("sk,sk->s", u, self.htab_arr[t_j])
            w2 = w2 + np.where(act, disc_start[:, j] * holding, 0.0)
            u_next = np.einsum("sk,skl->sl", u, self.mpow_arr[t_j]) @ self.Pmat
            u = np.where(act[:, None], u_next, u)

        last = np.maximum(sizes - 1, 0)[:, None]
        end_all = np.where(sizes > 0,
                           np.take_along_axis(ends, last, axis=1)[:, 0], 0)
        w3 = gamma ** end_all * (u[:, 0] * self.x_empty
                                 + u[:, 1:] @ self.fresh_x)
        return w1, w2, w3


_WORKSPACES: "OrderedDict[ValueParams, _Workspace]" = OrderedDict()
_WORKSPACE_CAP = 16


def _workspace(vp: ValueParams) -> _Workspace:
    ws = _WORKSPACES.get(vp)
    if ws is None:
        ws = _Workspace(vp)
        _WORKSPACES[vp] = ws
        if len(_WORKSPACES) > _WORKSPACE_CAP:
            _WORKSPACES.popitem(last=False)
    else:
        _WORKSPACES.move_to_end(vp)
    return ws


def clear_cache() -> None:
    """Drop all cached workspaces (used by cache-coherence tests)."""
    _WORKSPACES.clear()


def components(state: CompactState, vp: ValueParams) -> tuple[float, float, float]:
    """The three period costs (overload, drain, steady) of one state."""
    a, b, c = _workspace(vp).components_batch([state])
    return float(a[0]), float(b[0]), float(c[0])


def w1(state: CompactState, vp: ValueParams) -> float:
    """Overload-period cost: backlog beyond the admission threshold drains
    while every arrival is routed local."""
    return components(state, vp)[0]


def w2(state: CompactState, vp: ValueParams) -> float:
    """Drain-period cost: the last initial devices transmit while admitted
    arrivals accumulate behind them."""
    return components(state, vp)[1]


def w3(state: CompactState, vp: ValueParams) -> float:
    """Steady-period cost-to-go once every initial device has departed."""
    return components(state, vp)[2]


def value(state: CompactState, vp: ValueParams) -> float:
    """Total discounted cost of the baseline policy from `state`."""
    a, b, c = components(state, vp)
    return a + b + c


def value_batch(states: Sequence[CompactState], vp: ValueParams) -> np.ndarray:
    """Vectorized `value` over many states sharing one parameter set."""
    a, b, c = _workspace(vp).components_batch(states)
    return a + b + c


def chain_diagnostics(vp: ValueParams) -> dict:
    """Numerical health of the cached chain: row sums and solve residual."""
    ws = _workspace(vp)
    return {
        "chain_dim": ws.chain_index.n,
        "phi_row_sum_max_dev": ws.row_sum_dev,
        "solve_residual": ws.solve_residual,
    }
