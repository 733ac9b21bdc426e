"""Discounted Markov reward chains behind the baseline value function.

Two chains are built here. The large chain tracks (edge-device count, head
queue length) under the baseline policy once every initially present device
has departed; its dimension is K*d_max + 1. The small (K+1)-state chain
counts edge devices while the initial backlog drains, driven only by
arrivals (births) and head departures (shifts).

State indexing of the large chain follows the contract's 1-based convention:
state 1 is the empty system (0, 0); state (zeta-1)*d_max + xi + 1 holds zeta
devices with xi segments left in the head's queue. Arrays are 0-based, so
builders subtract 1 internally.

The transition matrix is assembled from disjoint events (arrival or not,
head completes or transmits a partial amount) rather than from a literal
per-case table; this keeps rows stochastic for every parameter choice,
including the K = 1 corner where the published case ranges collide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .model import ModelParams

__all__ = [
    "SolverError",
    "ChainIndex",
    "ChainMatrices",
    "SmallChain",
    "epsilon_index",
    "alpha",
    "build_phi",
    "build_dphi",
    "build_c",
    "build_dc",
    "build_small_chain",
    "propagate_u",
    "build_v",
    "solve_discounted",
    "dump_chain",
]

RESIDUAL_RTOL = 1e-9


class SolverError(RuntimeError):
    """A linear solve failed its residual verification."""


@dataclass(frozen=True)
class ChainIndex:
    """Dimensions and indexing of the (count, head-queue) chain."""

    K: int
    d_max: int

    def __post_init__(self):
        if self.K < 1 or self.d_max < 1:
            raise ValueError("need K >= 1 and d_max >= 1")

    @property
    def n(self) -> int:
        return self.K * self.d_max + 1

    def block(self, zeta: int) -> slice:
        """0-based array slice of the states with count `zeta` >= 1."""
        if not 1 <= zeta <= self.K:
            raise ValueError("block is defined for 1 <= zeta <= K")
        start = (zeta - 1) * self.d_max + 1
        return slice(start, start + self.d_max)


def epsilon_index(zeta: int, xi: int, chain_index: ChainIndex) -> int:
    """1-based state index of (count, head queue); (0, 0) maps to 1."""
    if zeta == 0:
        if xi != 0:
            raise ValueError("count 0 requires head queue 0")
        return 1
    if not 1 <= zeta <= chain_index.K:
        raise ValueError("count out of range")
    if not 1 <= xi <= chain_index.d_max:
        raise ValueError("head queue out of range")
    return (zeta - 1) * chain_index.d_max + xi + 1


def alpha(x: float, params: ModelParams) -> float:
    """Receive power needed to move x segments in one frame.

    Inverts the capacity expression at unit channel gain: a receive power of
    alpha(x) yields exactly x*segment_bits per frame.
    """
    exponent = x * params.segment_bits / (params.bandwidth_hz
                                          * params.frame_duration_s)
    return (2.0 ** exponent - 1.0) * params.noise_power_w


def _survival(params: ModelParams, p_r: float) -> np.ndarray:
    """P[at least x segments transmitted] for x = 0..d_max at receive power p_r.

    With channel inversion the receive SNR is p_r*X/noise, X ~ Exp(1), so the
    event "frame carries >= x segments" is X >= alpha(x)/p_r.
    """
    x = np.arange(params.seg_max + 1, dtype=float)
    exponent = x * params.segment_bits / (params.bandwidth_hz
                                          * params.frame_duration_s)
    with np.errstate(over="ignore"):
        a = np.exp2(exponent) - 1.0
        out = np.exp(-a * params.noise_power_w / p_r)
    return out


def _survival_dpr(params: ModelParams, p_r: float) -> np.ndarray:
    """d/dp_r of `_survival`, elementwise; zero where survival underflows."""
    x = np.arange(params.seg_max + 1, dtype=float)
    exponent = x * params.segment_bits / (params.bandwidth_hz
                                          * params.frame_duration_s)
    with np.errstate(over="ignore", invalid="ignore"):
        a = (np.exp2(exponent) - 1.0) * params.noise_power_w
        t = a / p_r
        ds = np.where(np.isfinite(t), (t / p_r) * np.exp(-t), 0.0)
    return ds


def _assemble(params: ModelParams, P_N: float, surv: np.ndarray) -> np.ndarray:
    """Shared assembly of the large-chain matrix from a survival profile.

    Called with the survival probabilities to build the transition matrix and
    with their p_r-derivatives to build its derivative; the event weights
    (arrival probabilities, uniform spread over fresh task sizes) are the
    same linear combination in both cases.
    """
    K, d_max = params.admission_threshold, params.seg_max
    idx = ChainIndex(K, d_max)
    D = params.seg_max - params.seg_min + 1
    n = idx.n
    out = np.zeros((n, n))

    # Partial transmission: head queue xi -> xi' in 1..xi with probability
    # q(xi - xi'), the chance of exactly that many segments in one frame.
    q = surv[:-1] - surv[1:]
    lower = scipy.linalg.toeplitz(q[:d_max], np.zeros(d_max))
    # Completion: queue xi clears when the frame carries >= xi segments.
    complete = surv[1:d_max + 1]
    # Block-local columns reachable by a uniformly drawn full queue.
    fresh = slice(params.seg_min - 1, d_max)

    for zeta in range(1, K + 1):
        rows = idx.block(zeta)
        saturated = zeta == K
        # Below the threshold an arrival is admitted and raises the count;
        # at the threshold arrivals are routed local, so the row does not
        # depend on the arrival at all.
        p_stay = 1.0 if saturated else 1.0 - P_N
        out[rows, rows] += p_stay * lower
        if not saturated:
            out[rows, idx.block(zeta + 1)] += P_N * lower
            # Arrival and completion together keep the count at zeta; the
            # next head is a freshly admitted full queue.
            out[rows, idx.block(zeta)][:, fresh] += \
                (P_N / D) * complete[:, None]
        if zeta == 1:
            out[rows, 0] += p_stay * complete
        else:
            out[rows, idx.block(zeta - 1)][:, fresh] += \
                (p_stay / D) * complete[:, None]
    return out


def build_phi(params: ModelParams, p_r: float, P_N: float) -> np.ndarray:
    """Transition matrix of the (count, head-queue) chain under the baseline.

    Rows are states, columns successor states; every row sums to 1.
    """
    if p_r <= 0:
        raise ValueError("receive power must be positive")
    if not 0.0 <= P_N <= 1.0:
        raise ValueError("arrival probability must lie in [0, 1]")
    idx = ChainIndex(params.admission_threshold, params.seg_max)
    D = params.seg_max - params.seg_min + 1
    phi = _assemble(params, P_N, _survival(params, p_r))
    # Empty-system row: nothing to transmit; an arrival is admitted and
    # becomes the head with a uniform full queue next frame.
    phi[0, 0] = 1.0 - P_N
    phi[0, idx.block(1)][slice(params.seg_min - 1, params.seg_max)] = P_N / D
    return phi


def build_dphi(params: ModelParams, p_r: float, P_N: float) -> np.ndarray:
    """Entrywise derivative of the transition matrix w.r.t. receive power.

    The empty-system row is constant in p_r, so its derivative row is zero;
    every other row sums to 0.
    """
    if p_r <= 0:
        raise ValueError("receive power must be positive")
    return _assemble(params, P_N, _survival_dpr(params, p_r))


def build_c(params: ModelParams, p_r: float, varpi: float, cbar: float,
            arrival_prob: Optional[float] = None) -> np.ndarray:
    """Expected per-frame cost of each chain state.

    Holding for `zeta` devices plus the expected channel-inversion transmit
    power p_r * E[1/pathloss]; saturated states additionally pay the expected
    local lump of an arrival that cannot be admitted.
    """
    P_N = params.arrival_prob if arrival_prob is None else arrival_prob
    idx = ChainIndex(params.admission_threshold, params.seg_max)
    c = np.zeros(idx.n)
    for zeta in range(1, idx.K + 1):
        c[idx.block(zeta)] = params.latency_weight * zeta + p_r * varpi
    c[idx.block(idx.K)] += P_N * cbar
    return c


def build_dc(varpi: float, chain_index: ChainIndex) -> np.ndarray:
    """Derivative of the cost vector w.r.t. receive power: E[1/pathloss]
    in every occupied state, zero in the empty state."""
    dc = np.full(chain_index.n, varpi)
    dc[0] = 0.0
    return dc


@dataclass(frozen=True)
class SmallChain:
    """Arrival-counting chain used while the initial backlog drains.

    `u` is a distribution over counts 0..K; `Pmat` shifts the count down by
    one (a head departure at a sub-period boundary); `Mmat` applies one
    frame's possible arrival (counts below K admit, K saturates).
    """

    u: np.ndarray
    gvec: np.ndarray
    Pmat: np.ndarray
    Mmat: np.ndarray


def build_small_chain(params: ModelParams, cbar: float, edge_count: int = 0,
                      arrival_prob: Optional[float] = None) -> SmallChain:
    """The counting chain's initial distribution, costs, and matrices.

    `edge_count` is the number of edge devices present at the start of the
    counted period; the initial distribution is a unit mass at
    min(edge_count, K).
    """
    P_N = params.arrival_prob if arrival_prob is None else arrival_prob
    K = params.admission_threshold
    w = params.latency_weight

    u = np.zeros(K + 1)
    u[min(edge_count, K)] = 1.0

    gvec = w * np.arange(K + 1, dtype=float)
    gvec[K] += P_N * cbar

    Pmat = np.zeros((K + 1, K + 1))
    Pmat[0, 0] = 1.0
    for i in range(1, K + 1):
        Pmat[i, i - 1] = 1.0

    Mmat = np.zeros((K + 1, K + 1))
    for i in range(K):
        Mmat[i, i] = 1.0 - P_N
        Mmat[i, i + 1] = P_N
    Mmat[K, K] = 1.0

    return SmallChain(u=u, gvec=gvec, Pmat=Pmat, Mmat=Mmat)


def propagate_u(u: np.ndarray, Mmat: np.ndarray, Pmat: np.ndarray,
                T: int) -> np.ndarray:
    """Count distribution after T frames of arrivals and one head departure."""
    if T < 0:
        raise ValueError("T must be >= 0")
    return (u @ np.linalg.matrix_power(Mmat, T)) @ Pmat


def build_v(u_last: Optional[np.ndarray], Mmat: np.ndarray, Pmat: np.ndarray,
            T_last: int, chain_index: ChainIndex,
            params: ModelParams) -> np.ndarray:
    """Distribution over large-chain states when the initial backlog clears.

    Pass `u_last=None` for an initially empty edge set (unit mass on the
    empty state). Otherwise the count distribution after the final
    sub-period is spread uniformly over fresh head-queue sizes, because every
    device still present was admitted later and has never transmitted.
    """
    v = np.zeros(chain_index.n)
    if u_last is None:
        v[0] = 1.0
        return v
    counts = propagate_u(u_last, Mmat, Pmat, T_last)
    D = params.seg_max - params.seg_min + 1
    fresh = slice(params.seg_min - 1, params.seg_max)
    v[0] = counts[0]
    for zeta in range(1, chain_index.K + 1):
        v[chain_index.block(zeta)][fresh] = counts[zeta] / D
    return v


def solve_discounted(phi: np.ndarray, c: np.ndarray,
                     gamma: float) -> np.ndarray:
    """Expected discounted cost-to-go of every chain state.

    Solves (I - gamma*phi) x = c directly (pivoted LU) and verifies the
    residual; raises SolverError when verification fails.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    system = np.eye(phi.shape[0]) - gamma * phi
    try:
        x = scipy.linalg.solve(system, c)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"discounted solve failed: {exc}") from exc
    scale = np.linalg.norm(c, np.inf)
    residual = np.linalg.norm(system @ x - c, np.inf)
    # "not <=" so a NaN residual fails verification instead of passing it
    if not residual <= RESIDUAL_RTOL * max(scale, 1e-300):
        raise SolverError(f"discounted solve residual {residual:.3e} exceeds "
                          f"{RESIDUAL_RTOL:.1e} * {scale:.3e}")
    return x


@dataclass(frozen=True)
class ChainMatrices:
    """Bundle of the large chain's matrix, costs, and entry distributions."""

    phi: np.ndarray
    c: np.ndarray
    v: np.ndarray
    v_ref: np.ndarray


def dump_chain(path, phi: np.ndarray, c: np.ndarray, v: np.ndarray) -> None:
    """Debug dump of the chain as (row, col, value) CSV triplets.

    The cost and entry vectors are written with col = -1 and col = -2.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,col,value\n")
        rows, cols = np.nonzero(phi)
        for r, col in zip(rows, cols):
            fh.write(f"{r},{col},{float(phi[r, col])!r}\n")
        for r, val in enumerate(c):
            if val:
                fh.write(f"{r},-1,{float(val)!r}\n")
        for r, val in enumerate(v):
            if val:
                fh.write(f"{r},-2,{float(val)!r}\n")
