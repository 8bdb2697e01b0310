"""Transducer loss against hand values, the enumeration oracle, and finite
differences."""

import math

import numpy as np
import pytest

from rnntkit.errors import ContractError
from rnntkit.numcore import derive_seed, finite_diff_gradient, make_rng, softmax
from rnntkit.transducer import (
    PosteriorLattice,
    enumerate_alignments,
    rnnt_grad,
    rnnt_loss,
    rnnt_loss_bruteforce,
)


def random_logits(rng, T, U, K):
    return rng.normal(size=(T, U + 1, K))


def lattice_of(logits):
    return PosteriorLattice(softmax(logits))


def random_instance(rng):
    T = int(rng.integers(1, 5))
    U = int(rng.integers(0, 4))
    K = int(rng.integers(2, 5))
    logits = random_logits(rng, T, U, K)
    target = rng.integers(1, K, size=U).tolist()
    return lattice_of(logits), target, logits


class TestHandValues:
    def test_t1_u0_single_path(self):
        probs = np.array([[[0.7, 0.2, 0.1]]])
        lat = PosteriorLattice(probs)
        assert rnnt_loss(lat, []) == pytest.approx(-math.log(0.7), rel=1e-12)
        assert rnnt_loss_bruteforce(lat, []) == pytest.approx(-math.log(0.7), rel=1e-12)

    def test_t2_u1_uniform_is_ln4(self):
        # Two alignments (label-blank-blank, blank-label-blank), each 0.5^3.
        probs = np.full((2, 2, 2), 0.5)
        lat = PosteriorLattice(probs)
        assert rnnt_loss(lat, [1]) == pytest.approx(math.log(4.0), rel=1e-12)
        assert rnnt_loss_bruteforce(lat, [1]) == pytest.approx(math.log(4.0), rel=1e-12)

    def test_no_frames(self):
        lat = PosteriorLattice(np.zeros((0, 2, 3)))
        assert rnnt_loss(lat, [1]) == math.inf
        assert rnnt_loss_bruteforce(lat, [1]) == math.inf
        empty = PosteriorLattice(np.zeros((0, 1, 3)))
        assert rnnt_loss(empty, []) == 0.0
        assert rnnt_loss_bruteforce(empty, []) == 0.0


class TestEnumeration:
    def test_alignment_count(self):
        # Non-decreasing emission frames: multisets of size U from T frames.
        for T in range(1, 5):
            for U in range(0, 4):
                n = sum(1 for _ in enumerate_alignments(T, U))
                assert n == math.comb(T + U - 1, U)

    def test_t2_u1_enumerates_two_paths(self):
        assert list(enumerate_alignments(2, 1)) == [(0,), (1,)]

    def test_size_bound(self):
        lat = lattice_of(np.zeros((10, 4, 3)))
        with pytest.raises(ContractError):
            rnnt_loss_bruteforce(lat, [1, 2, 1])


class TestContracts:
    def test_blank_in_target(self):
        lat = lattice_of(np.zeros((2, 2, 3)))
        with pytest.raises(ContractError):
            rnnt_loss(lat, [0])

    def test_target_length_mismatch(self):
        lat = lattice_of(np.zeros((2, 2, 3)))
        with pytest.raises(ContractError):
            rnnt_loss(lat, [1, 2])

    def test_target_id_out_of_range(self):
        lat = lattice_of(np.zeros((2, 2, 3)))
        with pytest.raises(ContractError):
            rnnt_loss(lat, [3])


class TestAgainstBruteforce:
    def test_random_instances(self):
        for trial in range(60):
            rng = make_rng(derive_seed(11, "loss-vs-bruteforce", trial))
            lat, target, _ = random_instance(rng)
            a = rnnt_loss(lat, target)
            b = rnnt_loss_bruteforce(lat, target)
            assert a == pytest.approx(b, rel=1e-9)

    def test_engineered_zero_probabilities(self):
        # A lattice cell with zero probability must not break the log DP.
        probs = np.array([[[1.0, 0.0], [0.5, 0.5]], [[0.5, 0.5], [1.0, 0.0]]])
        lat = PosteriorLattice(probs)
        a = rnnt_loss(lat, [1])
        b = rnnt_loss_bruteforce(lat, [1])
        assert a == pytest.approx(b, rel=1e-12)
        # Only blank-label-blank survives: 1.0 * 0.5 * 1.0.
        assert a == pytest.approx(-math.log(0.5), rel=1e-12)


class TestGradient:
    def test_t1_u0_gradient_slice(self):
        logits = np.array([[[0.3, -0.2, 0.1]]])
        lat = lattice_of(logits)
        g = rnnt_grad(lat, [])
        p = lat.probs[0, 0]
        # Single path through blank: d(-log p_blank)/dlogit = p - onehot(blank).
        expected = p - np.eye(3)[0]
        np.testing.assert_allclose(g[0, 0], expected, atol=1e-12)

    def test_matches_finite_differences(self):
        for trial in range(25):
            rng = make_rng(derive_seed(13, "grad-vs-fd", trial))
            lat, target, logits = random_instance(rng)
            analytic = rnnt_grad(lat, target)

            def f(flat, shape=logits.shape, y=tuple(target)):
                return rnnt_loss(lattice_of(flat.reshape(shape)), list(y))

            numeric = finite_diff_gradient(f, logits.ravel()).reshape(logits.shape)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

    def test_slices_sum_to_zero(self):
        for trial in range(20):
            rng = make_rng(derive_seed(17, "grad-sum", trial))
            lat, target, _ = random_instance(rng)
            g = rnnt_grad(lat, target)
            np.testing.assert_allclose(g.sum(axis=2), 0.0, atol=1e-12)

    def test_zero_paths_gives_zero_gradient(self):
        # Blank impossible everywhere at u=U: no alignment can finish.
        probs = np.zeros((1, 1, 2))
        probs[0, 0] = [0.0, 1.0]
        lat = PosteriorLattice(probs)
        assert rnnt_loss(lat, []) == math.inf
        np.testing.assert_array_equal(rnnt_grad(lat, []), np.zeros((1, 1, 2)))
