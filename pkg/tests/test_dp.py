import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_lattice
from vaealign.dp import (
    InfeasibleLatticeError,
    backward,
    band_mask,
    brute_force_best_path,
    brute_force_logsum,
    brute_force_occupancy,
    forward_backward,
    forward_sum,
    iter_paths,
    occupancy,
    viterbi,
)


def logsumexp(values):
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


class TestForwardSum:
    def test_single_cell(self):
        loss, fwd = forward_sum([[math.log(0.5)]])
        assert loss == pytest.approx(0.693147, abs=1e-6)
        assert fwd.log_z == pytest.approx(math.log(0.5))

    def test_uniform_counts_paths(self):
        loss, _ = forward_sum(np.zeros((3, 2)))
        assert loss == pytest.approx(-math.log(2), abs=1e-12)

    def test_matches_enumeration(self, rng):
        lb = random_lattice(rng, 5, 3)
        loss, _ = forward_sum(lb)
        assert -loss == pytest.approx(brute_force_logsum(lb), rel=1e-9)

    def test_infeasible(self):
        with pytest.raises(InfeasibleLatticeError, match="no feasible path"):
            forward_sum(np.zeros((2, 3)))

    def test_alpha_band(self, rng):
        lb = random_lattice(rng, 7, 4)
        _, fwd = forward_sum(lb)
        assert fwd.alpha[0, 0] == lb[0, 0]
        assert np.all(np.isneginf(fwd.alpha[~band_mask(7, 4)]))
        assert np.all(np.isfinite(fwd.alpha[band_mask(7, 4)]))

    def test_neg_inf_entries(self):
        lb = np.zeros((4, 2))
        lb[1:3, 1] = -np.inf  # only path left: stay in state 0 until the last frame
        loss, _ = forward_sum(lb)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_long_lattice_is_stable(self, rng):
        lb = random_lattice(rng, 2000, 150, -50, 0)
        loss, gamma = forward_backward(lb)
        assert np.isfinite(loss)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)


class TestBackward:
    def test_terminal_zero(self, rng):
        assert backward(random_lattice(rng, 6, 3))[-1, -1] == 0.0

    def test_diagonal_lattice(self, rng):
        lb = random_lattice(rng, 5, 5)
        beta = backward(lb)
        for t in range(5):
            assert beta[t, t] == pytest.approx(sum(lb[s, s] for s in range(t + 1, 5)), abs=1e-12)

    def test_forward_backward_identity(self, rng):
        lb = random_lattice(rng, 6, 3)
        _, fwd = forward_sum(lb)
        beta = backward(lb)
        ref = brute_force_logsum(lb)
        for t in range(6):
            row = [a + b for a, b in zip(fwd.alpha[t], beta[t]) if np.isfinite(a + b)]
            assert logsumexp(row) == pytest.approx(ref, abs=1e-9)
        assert np.all(fwd.alpha + beta <= fwd.log_z + 1e-9)


class TestOccupancy:
    def test_endpoints(self, rng):
        _, gamma = forward_backward(random_lattice(rng, 8, 4))
        assert gamma[0, 0] == pytest.approx(1.0)
        assert gamma[-1, -1] == pytest.approx(1.0)

    def test_symmetric_paths(self):
        _, gamma = forward_backward(np.zeros((3, 2)))
        assert gamma[1, 0] == pytest.approx(0.5)
        assert gamma[1, 1] == pytest.approx(0.5)

    def test_matches_enumeration(self, rng):
        lb = random_lattice(rng, 5, 4)
        _, gamma = forward_backward(lb)
        np.testing.assert_allclose(gamma, brute_force_occupancy(lb), atol=1e-9)

    def test_zero_outside_band(self, rng):
        _, gamma = forward_backward(random_lattice(rng, 9, 4))
        assert np.all(gamma[~band_mask(9, 4)] == 0.0)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_probability_lattice(self):
        lb = np.zeros((3, 2))
        lb[:, 1] = -np.inf
        loss, fwd = forward_sum(lb)
        assert loss == np.inf
        with pytest.raises(InfeasibleLatticeError, match="zero-probability"):
            occupancy(fwd, backward(lb))

    def test_finite_difference_gradient(self, rng):
        lb = random_lattice(rng, 6, 3)
        _, gamma = forward_backward(lb)
        h = 1e-5
        mask = band_mask(6, 3)
        for t, k in itertools.product(range(6), range(3)):
            if not mask[t, k]:
                continue
            up, down = lb.copy(), lb.copy()
            up[t, k] += h
            down[t, k] -= h
            num = (forward_sum(up)[0] - forward_sum(down)[0]) / (2 * h)
            assert num == pytest.approx(-gamma[t, k], abs=1e-4)


class TestViterbi:
    def test_diagonal(self, rng):
        path = viterbi(random_lattice(rng, 4, 4))
        assert path.states.tolist() == [0, 1, 2, 3]

    def test_single_state(self, rng):
        assert viterbi(random_lattice(rng, 6, 1)).states.tolist() == [0] * 6

    def test_matches_exhaustive(self, rng):
        lb = random_lattice(rng, 7, 4)
        path, best = viterbi(lb), brute_force_best_path(lb)
        assert path.log_score == best.log_score
        np.testing.assert_array_equal(path.states, best.states)

    def test_ties_prefer_staying(self):
        # all paths tie; staying as long as possible at the end means jumping early
        path = viterbi(np.zeros((5, 3)))
        assert path.states.tolist() == [0, 1, 2, 2, 2]
        assert brute_force_best_path(np.zeros((5, 3))).states.tolist() == [0, 1, 2, 2, 2]

    def test_integer_lattices_with_ties(self, rng):
        for _ in range(200):
            n_frames = int(rng.integers(1, 9))
            n_states = int(rng.integers(1, min(n_frames, 5) + 1))
            lb = rng.integers(-2, 1, size=(n_frames, n_states)).astype(float)
            path, best = viterbi(lb), brute_force_best_path(lb)
            assert path.log_score == best.log_score
            np.testing.assert_array_equal(path.states, best.states)

    def test_infeasible(self):
        with pytest.raises(InfeasibleLatticeError):
            viterbi(np.zeros((1, 2)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 15), st.integers(0, 2**31 - 1))
    def test_path_invariants(self, n_frames, n_states, seed):
        n_states = min(n_states, n_frames)
        lb = random_lattice(np.random.default_rng(seed), n_frames, n_states)
        s = viterbi(lb).states
        assert s[0] == 0 and s[-1] == n_states - 1
        assert set(np.diff(s).tolist()) <= {0, 1}
        assert set(s.tolist()) == set(range(n_states))


class TestBruteForce:
    def test_path_count(self):
        assert len(list(iter_paths(5, 3))) == math.comb(4, 2) == 6

    def test_two_by_two(self):
        assert list(iter_paths(2, 2)) == [(0, 1)]

    def test_uniform_logsum(self):
        assert brute_force_logsum(np.zeros((4, 2))) == pytest.approx(math.log(3))

    def test_guard(self):
        with pytest.raises(ValueError, match="oracle too large"):
            brute_force_logsum(np.zeros((13, 2)))
        with pytest.raises(ValueError, match="oracle too large"):
            brute_force_occupancy(np.zeros((10, 7)))


def test_oracle_equivalence_sweep():
    rng = np.random.default_rng(99)
    for _ in range(300):
        n_frames = int(rng.integers(1, 9))
        n_states = int(rng.integers(1, min(n_frames, 5) + 1))
        lb = random_lattice(rng, n_frames, n_states)
        loss, gamma = forward_backward(lb)
        assert -loss == pytest.approx(brute_force_logsum(lb), rel=1e-9)
        np.testing.assert_allclose(gamma, brute_force_occupancy(lb), atol=1e-9)
        assert viterbi(lb).log_score == brute_force_best_path(lb).log_score
