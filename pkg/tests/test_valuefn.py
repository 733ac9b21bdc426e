"""Closed-form value function checked against independent oracles.

Three oracle layers:
  * scalar ingredients (mean inverse pathloss, ergodic efficiency, local
    lump) against closed forms and Monte Carlo;
  * the zero-arrival case against an exact frame-by-frame cost loop
    (deterministic drain, no chain tail), which must agree to float accuracy;
  * the general case against a Monte Carlo of the collapsed process the
    decomposition describes (deterministic initial drains, live counting
    chain, live steady-period chain), a mean test at 3.5 sigma.
"""

import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st

from mecsched.markov import build_c, build_phi, solve_discounted
from mecsched.model import (CompactState, EdgeEntry, local_cost,
                            paper_defaults)
from mecsched.stochastic import RngStream
from mecsched.valuefn import (ValueParams, chain_diagnostics, clear_cache,
                              components, ergodic_spectral_efficiency,
                              expected_local_cost, mean_inverse_pathloss,
                              transmission_frames, value, value_batch, w1,
                              w2, w3)

from conftest import random_state


def make_state(queues, pathlosses):
    entries = tuple(EdgeEntry(device_id=i + 1, pathloss=g, queue_segments=q)
                    for i, (q, g) in enumerate(zip(queues, pathlosses)))
    return CompactState(entries)


class TestValueParams:
    def test_validation(self, desk_params):
        with pytest.raises(ValueError):
            ValueParams(desk_params, varpi=0.0, cbar=1.0, arrival_prob=0.2)
        with pytest.raises(ValueError):
            ValueParams(desk_params, varpi=1e8, cbar=-1.0, arrival_prob=0.2)
        with pytest.raises(ValueError):
            ValueParams(desk_params, varpi=1e8, cbar=1.0, arrival_prob=1.2)

    def test_from_distributions_wiring(self, desk_params):
        vp = ValueParams.from_distributions(desk_params)
        assert vp.varpi == mean_inverse_pathloss(desk_params)
        assert vp.cbar == expected_local_cost(desk_params)
        assert vp.arrival_prob == desk_params.arrival_prob

    def test_from_estimates_wiring(self, desk_params):
        class Snap:
            p_hat, varpi_hat, cbar_hat = 0.4, 3.3e8, 2.5

        vp = ValueParams.from_estimates(desk_params, Snap)
        assert (vp.arrival_prob, vp.varpi, vp.cbar) == (0.4, 3.3e8, 2.5)


class TestMeanInversePathloss:
    def test_matches_closed_form(self, full_params):
        # uniform disk: E[max(r, rmin)^theta] integrates in closed form
        R = full_params.cell_radius_m
        rmin = full_params.min_distance_m
        th = full_params.pathloss_exponent
        closed = (rmin ** th * rmin ** 2 / R ** 2
                  + 2.0 * (R ** (th + 2) - rmin ** (th + 2))
                  / ((th + 2) * R ** 2))
        assert mean_inverse_pathloss(full_params) == \
            pytest.approx(closed, rel=1e-9)

    def test_matches_monte_carlo(self):
        params = paper_defaults(cell_radius_m=100.0, min_distance_m=5.0,
                                pathloss_exponent=3.0)
        rng = np.random.default_rng(5)
        n = 2_000_000
        r = params.cell_radius_m * np.sqrt(rng.random(n))
        draws = np.maximum(r, params.min_distance_m) ** 3.0
        se = draws.std() / math.sqrt(n)
        assert abs(mean_inverse_pathloss(params) - draws.mean()) < 4 * se


class TestErgodicEfficiency:
    @pytest.mark.parametrize("snr", [1e-3, 0.05, 0.28, 2.8, 100.0, 1e4])
    def test_matches_quadrature(self, snr):
        import scipy.integrate
        params = paper_defaults(noise_power_w=1e-9)
        want, _ = scipy.integrate.quad(
            lambda t: math.exp(-t) * math.log2(1.0 + snr * t), 0.0, np.inf,
            epsabs=0.0, epsrel=1e-11, limit=400)
        got = ergodic_spectral_efficiency(snr * 1e-9, params)
        assert got == pytest.approx(want, rel=1e-8)

    def test_matches_exponential_integral(self):
        snr = 2.8
        closed = (math.exp(1.0 / snr) * scipy.special.exp1(1.0 / snr)
                  / math.log(2.0))
        got = ergodic_spectral_efficiency(2.8e-9, paper_defaults())
        assert got == pytest.approx(closed, rel=1e-12)

    def test_matches_monte_carlo(self, desk_params):
        rng = np.random.default_rng(11)
        n = 2_000_000
        snr = desk_params.receive_power_w / desk_params.noise_power_w
        draws = np.log2(1.0 + snr * rng.exponential(1.0, n))
        se = draws.std() / math.sqrt(n)
        got = ergodic_spectral_efficiency(desk_params.receive_power_w,
                                          desk_params)
        assert abs(got - draws.mean()) < 4 * se

    def test_rejects_nonpositive_power(self, desk_params):
        with pytest.raises(ValueError):
            ergodic_spectral_efficiency(0.0, desk_params)


class TestTransmissionFrames:
    @pytest.mark.parametrize("queue", [1, 5, 30, 100, 987])
    def test_matches_independent_ceiling(self, desk_params, queue):
        params = desk_params
        snr = params.receive_power_w / params.noise_power_w
        eff = (math.exp(1.0 / snr) * scipy.special.exp1(1.0 / snr)
               / math.log(2.0))
        frames = (queue * params.segment_bits
                  / (eff * params.bandwidth_hz * params.frame_duration_s))
        assert 0.05 < frames % 1.0 < 0.95  # away from ceiling boundaries
        assert transmission_frames(queue, params.receive_power_w, params) \
            == math.ceil(frames)

    def test_monotone_in_queue_and_power(self, desk_params):
        f = [transmission_frames(q, 1e-10, desk_params)
             for q in range(1, 60)]
        assert all(b >= a for a, b in zip(f, f[1:]))
        assert transmission_frames(40, 1e-9, desk_params) <= \
            transmission_frames(40, 1e-10, desk_params)

    def test_rejects_empty_queue(self, desk_params):
        with pytest.raises(ValueError):
            transmission_frames(0, 1e-9, desk_params)


class TestExpectedLocalCost:
    def test_point_mass_ranges_are_exact(self):
        params = paper_defaults(seg_min=2, seg_max=6,
                                cpu_freq_range_hz=(0.8e9, 0.8e9),
                                cycles_per_bit_range=(580.0, 580.0))
        want = np.mean([local_cost(d, 0.8e9, 580.0, params)
                        for d in range(2, 7)])
        assert expected_local_cost(params) == pytest.approx(want, rel=1e-12)

    def test_matches_monte_carlo(self, desk_params):
        params = desk_params
        rng = np.random.default_rng(23)
        n = 2_000_000
        d = rng.integers(params.seg_min, params.seg_max + 1, n)
        l_lo, l_hi = params.cycles_per_bit_range
        f_lo, f_hi = params.cpu_freq_range_hz
        ell = rng.uniform(l_lo, l_hi, n)
        f = rng.uniform(f_lo, f_hi, n)
        gamma = params.discount
        T = np.ceil(d * params.segment_bits * ell
                    / (f * params.frame_duration_s))
        lump = (gamma * (1.0 - gamma ** T) / (1.0 - gamma)
                * (params.latency_weight
                   + params.switched_capacitance * f ** 3))
        se = lump.std() / math.sqrt(n)
        assert abs(expected_local_cost(params) - lump.mean()) < 4 * se


def exact_zero_arrival_value(state, vp):
    """Frame-by-frame discounted cost when no device ever arrives."""
    params = vp.params
    eff = ergodic_spectral_efficiency(params.receive_power_w, params)
    bpf = eff * params.bandwidth_hz * params.frame_duration_s
    total, t, m = 0.0, 0, len(state)
    for j, (q, g) in enumerate(zip(state.queues(), state.pathlosses())):
        for _ in range(math.ceil(q * params.segment_bits / bpf)):
            total += params.discount ** t * (params.receive_power_w / g
                                             + params.latency_weight * (m - j))
            t += 1
    return total


class TestZeroArrivalExact:
    @pytest.mark.parametrize("queues", [(3,), (6, 2), (5, 5, 2),
                                        (6, 4, 3, 2, 5)])
    def test_value_equals_frame_loop(self, queues):
        params = paper_defaults(admission_threshold=3, seg_min=2, seg_max=6,
                                receive_power_w=1e-10)
        gains = [1e-9 * (1 + k) for k in range(len(queues))]
        state = make_state(queues, gains)
        vp = ValueParams(params, varpi=mean_inverse_pathloss(params),
                         cbar=1.7, arrival_prob=0.0)
        want = exact_zero_arrival_value(state, vp)
        assert value(state, vp) == pytest.approx(want, rel=1e-10)
        assert w3(state, vp) == 0.0  # empty chain is free without arrivals

    def test_overload_split(self):
        params = paper_defaults(admission_threshold=2, seg_min=2, seg_max=6,
                                receive_power_w=1e-10)
        queues, gains = (6, 4, 3, 2, 5), [2e-9] * 5
        state = make_state(queues, gains)
        vp = ValueParams(params, varpi=mean_inverse_pathloss(params),
                         cbar=1.7, arrival_prob=0.0)
        head = make_state(queues[:3], gains[:3])  # the part beyond K
        # with zero arrivals the overload cost is the same frame loop
        # restricted to the first m-K positions, at full holding
        eff = ergodic_spectral_efficiency(params.receive_power_w, params)
        bpf = eff * params.bandwidth_hz * params.frame_duration_s
        total, t = 0.0, 0
        for j in range(3):
            for _ in range(math.ceil(queues[j] * params.segment_bits / bpf)):
                total += params.discount ** t * (
                    params.receive_power_w / gains[j]
                    + params.latency_weight * (5 - j))
                t += 1
        assert w1(state, vp) == pytest.approx(total, rel=1e-10)
        assert w1(head, vp) > 0.0 or len(head) > params.admission_threshold


def collapsed_mc_value(state, vp, episodes, horizon, seed):
    """Monte Carlo of the collapsed process the decomposition describes.

    Initial devices drain deterministically at the fading-averaged rate;
    arrivals run live (admitted below the threshold, shed local at it);
    after the initial backlog clears, the (count, head-queue) chain runs
    with real fading, fresh uniform queues, and disk-law transmit powers.
    """
    params = vp.params
    rng = np.random.default_rng(seed)
    K, gamma, w = (params.admission_threshold, params.discount,
                   params.latency_weight)
    p_r, P_N, cbar = params.receive_power_w, vp.arrival_prob, vp.cbar
    eff = ergodic_spectral_efficiency(p_r, params)
    bpf = eff * params.bandwidth_hz * params.frame_duration_s
    queues = np.asarray(state.queues(), dtype=float)
    gains = np.asarray(state.pathlosses(), dtype=float)
    m = len(queues)
    total = np.zeros(episodes)
    t = 0
    count = np.full(episodes, min(m, K))
    for j in range(m):
        overloaded = j < m - K
        for _ in range(math.ceil(queues[j] * params.segment_bits / bpf)):
            disc = gamma ** t
            arr = rng.random(episodes) < P_N
            if overloaded:
                total += disc * (p_r / gains[j] + w * (m - j))
                total += disc * cbar * arr
            else:
                total += disc * (p_r / gains[j] + w * count)
                total += disc * cbar * (arr & (count == K))
                count = count + (arr & (count < K))
            t += 1
        if not overloaded:
            count -= 1

    lo, hi = params.seg_min, params.seg_max
    th = params.pathloss_exponent

    def draw_heads():
        q = rng.integers(lo, hi + 1, episodes)
        r = params.cell_radius_m * np.sqrt(rng.random(episodes))
        return q, np.maximum(r, params.min_distance_m) ** th

    head_q, head_inv = draw_heads()
    for _ in range(horizon):
        disc = gamma ** t
        occ = count > 0
        total += disc * (w * count + np.where(occ, p_r * head_inv, 0.0))
        x = rng.exponential(1.0, episodes)
        sent = np.floor(params.bandwidth_hz
                        * np.log2(1.0 + p_r * x / params.noise_power_w)
                        * params.frame_duration_s / params.segment_bits)
        depart = occ & (sent >= head_q)
        arr = rng.random(episodes) < P_N
        total += disc * cbar * (arr & (count == K))
        count = count - depart + (arr & (count < K))
        head_q = np.where(occ & ~depart, head_q - sent, head_q)
        new_q, new_inv = draw_heads()
        refresh = (depart | ~occ) & (count > 0)
        head_q = np.where(refresh, new_q, head_q)
        head_inv = np.where(refresh, new_inv, head_inv)
        t += 1
    return total


class TestCollapsedProcessOracle:
    @pytest.mark.parametrize("queues,seed", [((5, 3), 101), ((4,), 103)])
    def test_within_threshold(self, queues, seed):
        params = paper_defaults(admission_threshold=3, seg_min=2, seg_max=6,
                                arrival_prob=0.2, receive_power_w=1e-10)
        gains = [3e-9 * (k + 1) for k in range(len(queues))]
        state = make_state(queues, gains)
        vp = ValueParams.from_distributions(params)
        draws = collapsed_mc_value(state, vp, episodes=4000, horizon=800,
                                   seed=seed)
        se = draws.std() / math.sqrt(len(draws))
        z = (value(state, vp) - draws.mean()) / se
        assert abs(z) < 3.5

    def test_overloaded_state(self):
        params = paper_defaults(admission_threshold=3, seg_min=2, seg_max=6,
                                arrival_prob=0.3, receive_power_w=1e-10)
        queues = (6, 3, 5, 2, 4)
        gains = [2e-9, 4e-9, 3e-9, 6e-9, 5e-9]
        state = make_state(queues, gains)
        vp = ValueParams.from_distributions(params)
        draws = collapsed_mc_value(state, vp, episodes=4000, horizon=800,
                                   seed=107)
        se = draws.std() / math.sqrt(len(draws))
        z = (value(state, vp) - draws.mean()) / se
        assert abs(z) < 3.5


class TestChainConsistency:
    def test_empty_state_equals_chain_solve(self, desk_params):
        params = desk_params
        vp = ValueParams.from_distributions(params)
        phi = build_phi(params, params.receive_power_w, params.arrival_prob)
        c = build_c(params, params.receive_power_w, vp.varpi, vp.cbar)
        x = solve_discounted(phi, c, params.discount)
        state = CompactState(())
        a, b, cc = components(state, vp)
        assert (a, b) == (0.0, 0.0)
        assert cc == pytest.approx(float(x[0]), rel=1e-12)

    def test_batch_matches_singles(self, desk_params):
        vp = ValueParams.from_distributions(desk_params)
        rng = RngStream(77, 0)
        states = [random_state(rng, desk_params, max_devices=5)
                  for _ in range(12)]
        batch = value_batch(states, vp)
        singles = np.array([value(s, vp) for s in states])
        # batched GEMMs may round differently from single-state GEMVs
        np.testing.assert_allclose(batch, singles, rtol=1e-13, atol=0.0)

    def test_cache_clear_reproduces(self, desk_params):
        vp = ValueParams.from_distributions(desk_params)
        state = make_state((4, 2), (2e-9, 5e-9))
        before = value(state, vp)
        clear_cache()
        assert value(state, vp) == before

    def test_diagnostics_report_healthy_chain(self, desk_params):
        vp = ValueParams.from_distributions(desk_params)
        diag = chain_diagnostics(vp)
        K, d = desk_params.admission_threshold, desk_params.seg_max
        assert diag["chain_dim"] == K * d + 1
        assert diag["phi_row_sum_max_dev"] <= 1e-12
        assert diag["solve_residual"] <= 1e-9 * max(1.0, 1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 20))
def test_components_are_nonnegative(seed):
    params = paper_defaults(admission_threshold=3, seg_min=2, seg_max=6,
                            arrival_prob=0.25)
    vp = ValueParams.from_distributions(params)
    state = random_state(RngStream(seed, 0), params, max_devices=6)
    a, b, c = components(state, vp)
    assert a >= 0.0 and b >= 0.0 and c > 0.0
    assert math.isfinite(a + b + c)
    if len(state) <= params.admission_threshold:
        assert a == 0.0
    else:
        assert a > 0.0
