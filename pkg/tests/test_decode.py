import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaealign.decode import (
    BoundarySet,
    MetricsReport,
    Segment,
    boundary_errors,
    corpus_metrics,
    metrics,
    path_to_boundaries,
)
from vaealign.lattice import expand_to_states

error_lists = st.lists(st.floats(-500, 500, allow_nan=False), min_size=1, max_size=60)


def oracle_metrics(errors):
    """Sort-based reference: mean, middle order statistic, threshold counts."""
    a = sorted(abs(e) for e in errors)
    n = len(a)
    median = a[n // 2] if n % 2 else (a[n // 2 - 1] + a[n // 2]) / 2
    return (sum(a) / n, median, 100.0 * sum(x > 20 for x in a) / n, 100.0 * sum(x > 50 for x in a) / n)


class TestPathToBoundaries:
    def test_worked_example(self):
        # states 1..6 (one-based) for two phonemes of three states each
        states = expand_to_states(["a", "b"], 3)
        bset = path_to_boundaries(np.array([1, 1, 2, 3, 4, 4, 5, 6]) - 1, states)
        assert [(s.phoneme, s.start_frame, s.end_frame) for s in bset.segments] == [
            ("a", 0, 4), ("b", 4, 8)]
        assert bset.segments[1].start_sec(0.010) * 1000 == pytest.approx(40.0)

    def test_single_state_per_phoneme(self):
        states = expand_to_states(["a", "b", "c"], 1)
        bset = path_to_boundaries([0, 0, 1, 2, 2, 2], states)
        np.testing.assert_array_equal(bset.starts, [0, 2, 3])

    def test_repeated_phoneme_kept_separate(self):
        states = expand_to_states(["a", "a"], 2)
        bset = path_to_boundaries([0, 1, 1, 2, 3], states)
        assert bset.phonemes == ["a", "a"]
        np.testing.assert_array_equal(bset.starts, [0, 3])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            path_to_boundaries([0, 5], expand_to_states(["a"], 2))

    def test_incomplete_path(self):
        with pytest.raises(ValueError):
            path_to_boundaries([0, 1], expand_to_states(["a", "b"], 2))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 6), min_size=1, max_size=12), st.integers(1, 4))
    def test_segments_tile_frames(self, state_durations, s):
        n_states = len(state_durations)
        n_states -= n_states % s
        if n_states == 0:
            return
        state_durations = state_durations[:n_states]
        states = expand_to_states([f"p{i}" for i in range(n_states // s)], s)
        path = np.repeat(np.arange(n_states), state_durations)
        bset = path_to_boundaries(path, states)
        assert bset.n_frames == len(path)
        phone_durs = np.add.reduceat(state_durations, np.arange(0, n_states, s))
        np.testing.assert_array_equal(bset.starts, np.concatenate([[0], np.cumsum(phone_durs)[:-1]]))


class TestBoundarySet:
    def test_gap_rejected(self):
        with pytest.raises(ValueError, match="contiguous"):
            BoundarySet((Segment("a", 0, 2), Segment("b", 3, 4)))

    def test_empty_segment_rejected(self):
        with pytest.raises(ValueError):
            BoundarySet((Segment("a", 0, 2), Segment("b", 2, 2)))

    def test_must_start_at_zero(self):
        with pytest.raises(ValueError):
            BoundarySet((Segment("a", 1, 2),))

    def test_from_durations(self):
        bset = BoundarySet.from_durations(["a", "b", "c"], [3, 2, 4])
        np.testing.assert_array_equal(bset.starts, [0, 3, 5])
        assert bset.n_frames == 9


class TestMetrics:
    def test_reference_row(self):
        assert metrics([0, 10, 25, 60]) == MetricsReport(23.75, 17.5, 50.0, 25.0, 4)

    def test_threshold_is_strict(self):
        assert metrics([20.0, -20.0]).tol20_pct == 0.0
        assert metrics([50.0]).tol50_pct == 0.0
        r = metrics([20.000001])
        assert r.tol20_pct == 100.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no boundaries"):
            metrics([])

    def test_kv_format(self):
        assert metrics([0.0]).as_kv() == "mae_ms=0.00 median_ms=0.00 tol20=0.00 tol50=0.00"

    @settings(max_examples=100, deadline=None)
    @given(error_lists)
    def test_matches_oracle(self, errors):
        r = metrics(errors)
        np.testing.assert_allclose((r.mae_ms, r.median_ms, r.tol20_pct, r.tol50_pct),
                                   oracle_metrics(errors), rtol=1e-12, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(error_lists)
    def test_sign_symmetry_and_nesting(self, errors):
        r = metrics(errors)
        assert metrics([-e for e in errors]) == r
        assert r.tol20_pct >= r.tol50_pct
        assert 0 <= r.median_ms <= max(abs(e) for e in errors)


class TestBoundaryErrors:
    def test_two_frame_error_is_exactly_20ms(self):
        ref = BoundarySet.from_durations(["a", "b"], [3, 3])
        pred = BoundarySet.from_durations(["a", "b"], [5, 1])
        np.testing.assert_array_equal(boundary_errors(pred, ref), [20.0])
        assert metrics(boundary_errors(pred, ref)).tol20_pct == 0.0

    def test_phoneme_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            boundary_errors(BoundarySet.from_durations(["a"], [2]),
                            BoundarySet.from_durations(["b"], [2]))

    def test_only_inner_boundaries(self):
        ref = BoundarySet.from_durations(["a", "b", "c"], [2, 2, 2])
        assert boundary_errors(ref, ref).shape == (2,)

    def test_corpus_pools_boundaries(self):
        r1 = BoundarySet.from_durations(["a", "b"], [3, 3])
        p1 = BoundarySet.from_durations(["a", "b"], [4, 2])
        r2 = BoundarySet.from_durations(["a", "b", "c"], [2, 2, 2])
        p2 = BoundarySet.from_durations(["a", "b", "c"], [2, 8, 2])
        pooled = corpus_metrics({"u1": (p1, r1), "u2": (p2, r2)})
        # errors 10, 0, 60 ms pooled rather than averaged per utterance
        assert pooled == metrics([10.0, 0.0, 60.0])
        assert pooled.n_boundaries == 3
