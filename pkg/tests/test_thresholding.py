import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrvote.thresholding import (DegenerateScoresError, between_class_variance, decide, otsu_threshold,
                                   score_histogram)

from . import oracle


class TestHistogram:
    def test_edges_and_last_bin_closed(self):
        h = score_histogram([0.0, 0.01, 0.5, 1.0], bins=100)
        assert h.bins[0] == 1 and h.bins[1] == 1 and h.bins[50] == 1 and h.bins[99] == 1
        assert h.total == 4

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            score_histogram([1.2])
        with pytest.raises(ValueError):
            score_histogram([float("nan")])


class TestOtsu:
    def test_two_spikes(self):
        s = [0.1] * 50 + [0.9] * 50
        t = otsu_threshold(s)
        assert 0.1 < t <= 0.9
        mask, _ = decide(s)
        assert mask.tolist() == [False] * 50 + [True] * 50

    def test_two_gaussians(self, rng):
        a = np.clip(rng.normal(0.3, 0.05, 5000), 0, 1)
        b = np.clip(rng.normal(0.7, 0.05, 5000), 0, 1)
        mask, _ = decide(np.r_[a, b])
        wrong = np.sum(mask[:5000]) + np.sum(~mask[5000:])
        assert wrong / 10000 < 0.01

    def test_single_outlier(self):
        t = otsu_threshold([0.2] * 99 + [0.95])
        mask, _ = decide([0.2] * 99 + [0.95])
        assert 0.2 < t <= 0.95
        assert mask.sum() == 1

    def test_lowest_maximizer_on_ties(self):
        # every boundary between the two spikes maximizes the variance equally
        assert otsu_threshold([0.105, 0.905]) == 0.11

    def test_shift_by_whole_bins(self, rng):
        s = np.r_[rng.uniform(0.1, 0.3, 200), rng.uniform(0.5, 0.7, 200)]
        # shift along bin centers so every score keeps its position inside its bin
        bins = np.floor(s * 100)
        frac = s * 100 - bins
        shifted = (bins + 20 + frac) / 100
        assert score_histogram(shifted).bins[20:].tolist() == score_histogram(s).bins[:80].tolist()
        assert otsu_threshold(shifted) == pytest.approx(otsu_threshold(s) + 0.2, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=300), st.sampled_from([10, 37, 100]))
    def test_matches_exhaustive_search(self, scores, bins):
        want_t, want_var = oracle.otsu(scores, bins)
        if want_var <= 0:
            with pytest.raises(DegenerateScoresError):
                otsu_threshold(scores, bins)
            return
        t = otsu_threshold(scores, bins)
        var = between_class_variance(score_histogram(scores, bins))
        assert var[round(t * bins) - 1] == pytest.approx(want_var, rel=1e-9)
        assert t == pytest.approx(want_t, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=300))
    def test_threshold_is_a_bin_boundary(self, scores):
        try:
            t = otsu_threshold(scores)
        except DegenerateScoresError:
            return
        assert 0 < t < 1
        assert round(t * 100) == pytest.approx(t * 100, abs=1e-9)


class TestDegenerate:
    @pytest.mark.parametrize("scores", [[], [0.5], [0.3, 0.3, 0.3]])
    def test_raises(self, scores):
        with pytest.raises(DegenerateScoresError):
            otsu_threshold(scores)

    def test_same_bin_raises(self):
        with pytest.raises(DegenerateScoresError):
            otsu_threshold([0.501, 0.502])

    def test_decide_policies(self):
        mask, t = decide([0.4, 0.4])
        assert not mask.any() and np.isnan(t)
        mask, _ = decide([0.4, 0.4], on_degenerate="all")
        assert mask.all()
        with pytest.raises(ValueError):
            decide([0.4, 0.4], on_degenerate="some")
