"""Symmetric-subspace simulator vs closed forms and the dense tensor oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqem.states import (
    SymmetricState,
    ZeroProbabilityError,
    collapse,
    dense_oracle,
    detection_probability,
    product_state,
    sine_state,
    wigner_d,
    wigner_d_matrix,
)


def wigner_d_sum_oracle(j, m, mp, beta):
    """Direct log-factorial summation of the textbook Wigner-d series."""
    smin = max(0, round(mp - m))
    smax = round(min(j + mp, j - m))
    pref = 0.5 * (
        math.lgamma(j + m + 1)
        + math.lgamma(j - m + 1)
        + math.lgamma(j + mp + 1)
        + math.lgamma(j - mp + 1)
    )
    c, s = math.cos(beta / 2), math.sin(beta / 2)
    total = []
    for k in range(smin, smax + 1):
        ln = pref - (
            math.lgamma(j + mp - k + 1)
            + math.lgamma(k + 1)
            + math.lgamma(m - mp + k + 1)
            + math.lgamma(j - m - k + 1)
        )
        pc = 2 * j - m + mp - 2 * k
        ps = m - mp + 2 * k
        cterm = 1.0 if (c == 0.0 and pc == 0) else c**pc
        total.append((-1.0) ** round(m - mp + k) * math.exp(ln) * cterm * s**ps)
    return math.fsum(total)


def sine_amp_oracle(n):
    """Term-by-term evaluation of the sine-state definition via the sum oracle."""
    j = n / 2
    amp = np.zeros(n + 1, dtype=complex)
    for idx in range(n + 1):
        for k in range(n + 1):
            amp[idx] += (
                math.sin((k + 1) * math.pi / (n + 2))
                * np.exp(1j * math.pi * (k - idx) / 2)
                * wigner_d_sum_oracle(j, idx - j, k - j, math.pi / 2)
            )
    return amp / math.sqrt(n / 2 + 1)


def random_state(n, rng):
    amp = rng.standard_normal(n + 1) + 1j * rng.standard_normal(n + 1)
    amp /= np.linalg.norm(amp)
    return SymmetricState(remaining=n, amp=amp)


class TestWignerD:
    def test_half_spin_closed_form(self):
        assert wigner_d(0.5, 0.5, 0.5, math.pi / 2) == pytest.approx(
            math.cos(math.pi / 4), abs=1e-15
        )

    def test_spin_one_diagonal(self):
        assert wigner_d(1, 0, 0, math.pi / 2) == pytest.approx(0.0, abs=1e-15)
        for beta in (0.3, 1.1, 2.7):
            assert wigner_d(1, 0, 0, beta) == pytest.approx(math.cos(beta), abs=1e-14)

    def test_against_sum_oracle_spot(self):
        assert wigner_d(10, 3, -2, math.pi / 2) == pytest.approx(
            wigner_d_sum_oracle(10, 3, -2, math.pi / 2), abs=1e-12
        )

    def test_against_sum_oracle_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            twoj = int(rng.integers(1, 25))
            j = twoj / 2
            ms = np.arange(-j, j + 1)
            m, mp = rng.choice(ms), rng.choice(ms)
            beta = rng.uniform(0, math.pi)
            assert wigner_d(j, m, mp, beta) == pytest.approx(
                wigner_d_sum_oracle(j, m, mp, beta), abs=1e-12
            )

    @pytest.mark.parametrize("j", [0.5, 1, 4.5, 10, 25, 50])
    def test_orthogonality(self, j):
        d = wigner_d_matrix(j, math.pi / 2)
        assert np.abs(d @ d.T - np.eye(d.shape[0])).max() < 1e-10

    def test_stable_at_2j_200(self):
        # the naive series loses ~30 digits here; orthogonality survives only
        # with a stable evaluation
        d = wigner_d_matrix(100, math.pi / 2)
        assert np.abs(d @ d.T - np.eye(201)).max() < 1e-10

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            wigner_d(1, 2, 0, 0.5)
        with pytest.raises(ValueError):
            wigner_d(1, 0, -2, 0.5)
        with pytest.raises(ValueError):
            wigner_d(0.75, 0.25, 0.25, 0.5)
        with pytest.raises(ValueError):
            wigner_d(1, 0.5, 0, 0.5)


class TestSineState:
    def test_normalized(self):
        for n in (1, 4, 17, 60, 100):
            assert abs(sine_state(n).norm_sq - 1.0) < 1e-10

    def test_matches_direct_summation_n1(self):
        np.testing.assert_allclose(sine_state(1).amp, sine_amp_oracle(1), atol=1e-12)

    def test_matches_direct_summation_n6(self):
        np.testing.assert_allclose(sine_state(6).amp, sine_amp_oracle(6), atol=1e-12)

    def test_profile_symmetry_n6(self):
        amp = sine_state(6).amp
        np.testing.assert_allclose(np.abs(amp), np.abs(amp[::-1]), atol=1e-10)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            sine_state(0)
        with pytest.raises(ValueError):
            sine_state(101)

    def test_product_state(self):
        st_ = product_state(5)
        assert st_.remaining == 5
        assert st_.amp[0] == 1.0 and np.all(st_.amp[1:] == 0)


class TestDetectionAndCollapse:
    def test_single_photon_closed_form(self):
        st_ = SymmetricState(1, np.array([1.0, 0.0], dtype=complex))
        for theta in (0.0, 0.3, 0.7, 2.0, 5.5):
            assert detection_probability(st_, theta, 0) == pytest.approx(
                math.cos(theta) ** 2, abs=1e-12
            )
            assert detection_probability(st_, theta, 1) == pytest.approx(
                math.sin(theta) ** 2, abs=1e-12
            )

    @given(
        n=st.integers(min_value=1, max_value=10),
        theta=st.floats(min_value=-10, max_value=10, allow_nan=False),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_povm_completeness(self, n, theta, seed):
        st_ = random_state(n, np.random.default_rng(seed))
        p0 = detection_probability(st_, theta, 0)
        p1 = detection_probability(st_, theta, 1)
        assert abs(p0 + p1 - 1.0) < 1e-12

    def test_phase_covariance_mod_2pi(self):
        st_ = sine_state(5)
        for theta in (0.1, 1.7, 3.0):
            assert detection_probability(st_, theta, 0) == pytest.approx(
                detection_probability(st_, theta + 2 * math.pi, 0), abs=1e-12
            )

    def test_sine3_against_dense(self):
        st_ = sine_state(3)
        p_sym = detection_probability(st_, 0.7, 0)
        p_dense = sum(
            dense_oracle(3, [0.7, 0.0, 0.0], [0, a, b])
            for a in (0, 1)
            for b in (0, 1)
        )
        assert p_sym == pytest.approx(p_dense, abs=1e-10)

    def test_collapse_to_vacuum(self):
        st_ = sine_state(1)
        for port in (0, 1):
            out = collapse(st_, 0.4, port)
            assert out.remaining == 0
            assert len(out.amp) == 1
            assert abs(abs(out.amp[0]) - 1.0) < 1e-10

    def test_repeated_collapse_terminates(self):
        rng = np.random.default_rng(3)
        st_ = sine_state(7)
        while st_.remaining:
            st_ = collapse(st_, rng.uniform(0, 2 * math.pi), int(rng.integers(2)))
        assert st_.remaining == 0

    def test_norm_preserved_along_chain(self):
        rng = np.random.default_rng(5)
        st_ = sine_state(8)
        while st_.remaining:
            st_ = collapse(st_, rng.uniform(0, 2 * math.pi), int(rng.integers(2)))
            assert abs(st_.norm_sq - 1.0) < 1e-10

    def test_zero_probability_branch_raises(self):
        st_ = SymmetricState(1, np.array([1.0, 0.0], dtype=complex))
        with pytest.raises(ZeroProbabilityError):
            collapse(st_, 0.0, 1)  # sin(0) = 0: port 1 impossible

    def test_collapse_amplitudes_match_dense_n5(self):
        # evolve the dense 2^N state alongside the symmetric chain and compare
        from aqem.states import _dense_dicke

        rng = np.random.default_rng(11)
        n = 5
        thetas = rng.uniform(0, 2 * math.pi, n)
        outcomes = rng.integers(0, 2, n)
        st_ = sine_state(n)
        psi = _dense_dicke(n, st_.amp)
        for theta, port in zip(thetas, outcomes):
            st_ = collapse(st_, theta, int(port))
            ct, s = math.cos(theta), math.sin(theta)
            branch = np.asarray(
                ct * psi[0] + s * psi[1] if port == 0 else -s * psi[0] + ct * psi[1]
            )
            psi = branch / np.linalg.norm(branch.reshape(-1))
            np.testing.assert_allclose(
                np.asarray(psi).reshape(-1),
                _dense_dicke(st_.remaining, st_.amp).reshape(-1),
                atol=1e-9,
            )


class TestDenseOracle:
    def test_single_photon_agreement(self):
        st_ = sine_state(1)
        p = detection_probability(st_, 0.0, 0)
        assert dense_oracle(1, [0.0], [0]) == pytest.approx(p, abs=1e-12)

    def test_total_probability_n4(self):
        total = sum(
            dense_oracle(4, [0.0] * 4, [int(b) for b in f"{idx:04b}"])
            for idx in range(16)
        )
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_matches_stepwise_product_n6(self):
        rng = np.random.default_rng(7)
        thetas = rng.uniform(0, 2 * math.pi, 6)
        outcomes = [int(x) for x in rng.integers(0, 2, 6)]
        prob = 1.0
        st_ = sine_state(6)
        for theta, port in zip(thetas, outcomes):
            prob *= detection_probability(st_, theta, port)
            st_ = collapse(st_, theta, port)
        assert dense_oracle(6, thetas, outcomes) == pytest.approx(prob, abs=1e-9)

    def test_resource_limit(self):
        with pytest.raises(ValueError):
            dense_oracle(9, [0.0] * 9, [0] * 9)


def test_schur_weyl_equivalence_property():
    """Symmetric-subspace chains equal the dense oracle for N <= 6."""
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        thetas = rng.uniform(0, 2 * math.pi, n)
        outcomes = [int(x) for x in rng.integers(0, 2, n)]
        prob = 1.0
        st_ = sine_state(n)
        for theta, port in zip(thetas, outcomes):
            prob *= detection_probability(st_, theta, port)
            st_ = collapse(st_, theta, port)
        assert abs(prob - dense_oracle(n, thetas, outcomes)) < 1e-9
