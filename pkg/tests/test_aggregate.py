import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.special import logsumexp

import oracles
from uqseg.aggregate import (
    image_raw_scores,
    lse_score,
    minmax_normalize,
    rank_scores,
    score_set,
    select_rejected,
)
from uqseg.metrics import AtlasScore

finite = st.floats(-50, 50, allow_nan=False)
score_sets = st.dictionaries(st.text("abcdef", min_size=1, max_size=4), finite, min_size=1, max_size=30)


class TestLse:
    def test_single_pixel(self):
        assert lse_score(np.array([[0.37]])) == 0.37

    def test_uniform(self):
        c, n = 0.3, 64
        assert lse_score(np.full((8, 8), c)) == pytest.approx(c + math.log(n), abs=1e-12)

    def test_two_pixels(self):
        assert lse_score(np.array([[0.0, math.log(3)]])) == pytest.approx(math.log(4), abs=1e-12)

    def test_matches_scalar_oracle_and_scipy(self):
        u = np.random.default_rng(0).random((17, 13)) * math.log(2)
        expected = oracles.logsumexp(u.ravel().tolist())
        assert lse_score(u) == pytest.approx(expected, abs=1e-12)
        assert lse_score(u) == pytest.approx(float(logsumexp(u)), abs=1e-12)

    def test_order_independent_bitwise(self):
        rng = np.random.default_rng(1)
        u = rng.random(5000)
        assert lse_score(u) == lse_score(rng.permutation(u))

    def test_shift(self):
        u = np.random.default_rng(2).random((9, 9))
        assert lse_score(u + 0.25) == pytest.approx(lse_score(u) + 0.25, abs=1e-12)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=200))
    def test_bounds(self, values):
        u = np.array(values)
        n = len(values)
        s = lse_score(u)
        assert math.log(n) + u.min() - 1e-12 <= s <= math.log(n) + u.max() + 1e-12

    def test_empty(self):
        with pytest.raises(ValueError):
            lse_score(np.zeros((0,)))

    @pytest.mark.slow
    def test_no_overflow_at_ten_million_pixels(self):
        u = np.full(10**7, math.log(2))
        assert lse_score(u) == pytest.approx(math.log(2) + math.log(1e7), abs=1e-9)


class TestMinmax:
    def test_affine(self):
        assert minmax_normalize([2, 4, 6]) == [0.0, 0.5, 1.0]

    def test_flat(self):
        assert minmax_normalize([3, 3, 3]) == [0.0, 0.0, 0.0]

    def test_singleton(self):
        assert minmax_normalize([7]) == [0.0]

    @given(st.lists(finite, min_size=1, max_size=40))
    def test_range_and_order(self, xs):
        ys = minmax_normalize(xs)
        assert all(0.0 <= y <= 1.0 for y in ys)
        for i in range(len(xs)):
            for j in range(len(xs)):
                if xs[i] < xs[j]:
                    assert ys[i] <= ys[j]


class TestScoreSet:
    def test_single_image(self):
        (s,) = score_set({"a": np.full((3, 3), 0.2)}, "entropy")
        assert (s.normalized, s.rank) == (0.0, 1)

    def test_three_uniform_maps(self):
        recs = {"a": np.full((4, 4), 0.1), "b": np.full((4, 4), 0.2), "c": np.full((4, 4), 0.3)}
        out = {s.image_id: s for s in score_set(recs, "variance")}
        assert [out[k].normalized for k in "abc"] == pytest.approx([0.0, 0.5, 1.0], abs=1e-12)
        assert [out[k].rank for k in "abc"] == [3, 2, 1]

    def test_atlas(self):
        recs = {"a": AtlasScore(0.5, 1.0), "b": AtlasScore(0.5, 0.8), "c": AtlasScore(0.5, 0.5)}
        out = {s.image_id: s for s in score_set(recs, "atlas@0.5")}
        assert [out[k].raw for k in "abc"] == pytest.approx([0.0, 0.2, 0.5])
        assert [out[k].normalized for k in "abc"] == pytest.approx([0.0, 0.4, 1.0])

    def test_mixed_kinds_rejected(self):
        with pytest.raises(ValueError):
            score_set({"a": np.zeros((2, 2)), "b": AtlasScore(0.5, 0.5)}, "entropy")
        with pytest.raises(ValueError):
            score_set({"a": np.zeros((2, 2))}, "atlas@0.5")
        with pytest.raises(ValueError):
            score_set({"a": AtlasScore(0.1, 0.5)}, "atlas@0.5")

    def test_ties_by_image_id(self):
        out = rank_scores({"b": 1.0, "a": 1.0, "c": 0.0}, "m")
        assert [s.image_id for s in out] == ["a", "b", "c"]

    @given(score_sets, st.randoms(use_true_random=False))
    def test_permutation_invariance(self, raw, rnd):
        items = list(raw.items())
        rnd.shuffle(items)
        a = {s.image_id: (s.normalized, s.rank) for s in rank_scores(raw, "m")}
        b = {s.image_id: (s.normalized, s.rank) for s in rank_scores(dict(items), "m")}
        assert a == b

    @given(score_sets)
    def test_ranks_are_a_permutation_consistent_with_scores(self, raw):
        out = rank_scores(raw, "m")
        assert sorted(s.rank for s in out) == list(range(1, len(raw) + 1))
        for prev, cur in zip(out, out[1:]):
            assert prev.normalized >= cur.normalized


class TestSelectRejected:
    def scores(self, n):
        return rank_scores({f"img{i:02d}": float(i) for i in range(n)}, "m")

    def test_none(self):
        rejected, retained = select_rejected(self.scores(10), 0.0)
        assert rejected == [] and len(retained) == 10

    def test_twenty_percent(self):
        scores = self.scores(10)
        rejected, _ = select_rejected(scores, 0.2)
        ranks = {s.image_id: s.rank for s in scores}
        assert sorted(ranks[i] for i in rejected) == [1, 2]

    def test_all(self):
        rejected, retained = select_rejected(self.scores(10), 1.0)
        assert len(rejected) == 10 and retained == []

    @given(score_sets, st.floats(0, 1), st.sampled_from(["exp", "cube", "affine"]))
    def test_invariant_under_increasing_transform(self, raw, f, name):
        fn = {"exp": lambda x: math.exp(x / 10), "cube": lambda x: x**3, "affine": lambda x: 3 * x - 7}[name]
        transformed = {k: fn(v) for k, v in raw.items()}
        # only meaningful if the transform stays strictly increasing in floating point
        xs = sorted(set(raw.values()))
        assume(all(fn(a) < fn(b) for a, b in zip(xs, xs[1:])))
        a = select_rejected(rank_scores(raw, "m"), f)
        b = select_rejected(rank_scores(transformed, "m"), f)
        assert a == b


def test_image_raw_scores():
    rng = np.random.default_rng(3)
    stack = rng.random((4, 6, 6))
    ref = stack.mean(axis=0) >= 0.5
    out = image_raw_scores(stack, ref, ["variance", "atlas@0.5"])
    expected_var = oracles.logsumexp([v for row in oracles.pixelwise(stack.tolist(), oracles.variance) for v in row])
    assert out["variance"] == pytest.approx(expected_var, abs=1e-12)
    assert out["atlas@0.5"] == 0.0
    with pytest.raises(ValueError):
        image_raw_scores(stack, None, ["atlas@0.5"])
