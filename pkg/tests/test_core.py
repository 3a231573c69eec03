import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from workchoice.core import (
    DataValidationError,
    Individual,
    Zone,
    build_dataset,
    log_sum_exp,
    softmax,
    split_dataset,
    split_indices,
    zone_distance,
)

from factories import random_dataset


def _person(pid=0, home=0, work=None, weight=1.0):
    return Individual(pid, home, work, 1, 0, 1, 0, 5, 1, weight=weight)


class TestRecords:
    def test_negative_jobs_rejected(self):
        with pytest.raises(DataValidationError):
            Zone(0, 0.0, 0.0, (1, -1, 0, 0, 0, 0, 0))

    def test_jobs_need_seven_counts(self):
        with pytest.raises(DataValidationError):
            Zone(0, 0.0, 0.0, (1, 2, 3))

    @pytest.mark.parametrize(
        "field,value",
        [("household_type", 7), ("has_kids", 2), ("income_class", 0), ("employment", 5), ("gender", -1)],
    )
    def test_category_range(self, field, value):
        kwargs = dict(household_type=1, has_kids=0, has_car=1, gender=0, income_class=5, employment=1)
        kwargs[field] = value
        with pytest.raises(DataValidationError):
            Individual(0, 0, None, weight=1.0, **kwargs)

    @pytest.mark.parametrize("w", [0.0, -1.0, float("nan")])
    def test_weight_positive(self, w):
        with pytest.raises(DataValidationError):
            _person(weight=w)


class TestBuildDataset:
    zones = [Zone(0, 0.0, 0.0, (1, 0, 0, 0, 0, 0, 0)), Zone(1, 3.0, 4.0, (0, 2, 0, 0, 0, 0, 0))]

    def test_minimal(self):
        ds = build_dataset(self.zones, [_person()], np.zeros((1, 2)))
        assert (ds.n_individuals, ds.n_zones) == (1, 2)

    def test_shape_mismatch(self):
        with pytest.raises(DataValidationError, match="shape"):
            build_dataset(self.zones, [_person()], np.zeros((1, 3)))

    def test_dangling_home(self):
        with pytest.raises(DataValidationError, match="home_zone 5"):
            build_dataset(self.zones, [_person(home=5)], np.zeros((1, 2)))

    def test_dangling_work(self):
        with pytest.raises(DataValidationError, match="work_zone"):
            build_dataset(self.zones, [_person(work=2)], np.zeros((1, 2)))

    def test_non_finite_accessibility(self):
        with pytest.raises(DataValidationError):
            build_dataset(self.zones, [_person()], np.array([[0.0, np.inf]]))

    def test_duplicate_person(self):
        with pytest.raises(DataValidationError, match="duplicate"):
            build_dataset(self.zones, [_person(0), _person(0)], np.zeros((2, 2)))

    def test_non_contiguous_ids(self):
        zones = [self.zones[0], Zone(2, 0.0, 0.0, (1,) * 7)]
        with pytest.raises(DataValidationError):
            build_dataset(zones, [_person()], np.zeros((1, 2)))

    def test_arrays_read_only(self):
        ds = build_dataset(self.zones, [_person()], np.zeros((1, 2)))
        with pytest.raises(ValueError):
            ds.accessibility[0, 0] = 1.0

    def test_require_choices(self):
        ds = build_dataset(self.zones, [_person()], np.zeros((1, 2)))
        with pytest.raises(DataValidationError, match="person 0"):
            ds.require_choices()


class TestSplit:
    @pytest.mark.parametrize("n,frac,sizes", [(100, 0.75, (75, 25)), (6204, 0.75, (4653, 1551))])
    def test_sizes(self, n, frac, sizes):
        a, b = split_indices(n, frac, seed=3)
        assert (a.size, b.size) == sizes

    def test_deterministic(self):
        assert all(np.array_equal(x, y) for x, y in zip(split_indices(4, 0.5, 9), split_indices(4, 0.5, 9)))

    @given(st.integers(1, 300), st.floats(0.01, 0.99), st.integers(0, 2**64 - 1))
    def test_partition(self, n, frac, seed):
        a, b = split_indices(n, frac, seed)
        assert np.intersect1d(a, b).size == 0
        assert np.array_equal(np.sort(np.concatenate([a, b])), np.arange(n))

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_range(self, frac):
        with pytest.raises(ValueError):
            split_indices(10, frac, 0)

    def test_rows_follow_individuals(self):
        ds = random_dataset(seed=1, n_people=40)
        train, val = split_dataset(ds, 0.75, seed=2)
        row_of = {p.person_id: i for i, p in enumerate(ds.individuals)}
        for part in (train, val):
            for i, p in enumerate(part.individuals):
                assert np.array_equal(part.accessibility[i], ds.accessibility[row_of[p.person_id]])


class TestZoneDistance:
    @pytest.mark.parametrize("a,b,d", [((0, 0), (3, 4), 5.0), ((1, 1), (4, 5), 5.0), ((2, 2), (2, 2), 0.0)])
    def test_examples(self, a, b, d):
        za, zb = Zone(0, *map(float, a), (0,) * 7), Zone(1, *map(float, b), (0,) * 7)
        assert zone_distance(za, zb) == d

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_symmetric(self, x1, y1, x2, y2):
        a, b = Zone(0, x1, y1, (0,) * 7), Zone(1, x2, y2, (0,) * 7)
        assert zone_distance(a, b) == zone_distance(b, a)


finite = st.floats(-20, 20, allow_nan=False)


class TestLogSumExp:
    def test_examples(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)
        assert log_sum_exp([0.0, -np.inf]) == 0.0
        assert log_sum_exp([-np.inf, -np.inf]) == -np.inf

    @given(arrays(np.float64, st.integers(1, 50), elements=finite))
    def test_matches_naive(self, v):
        assert log_sum_exp(v) == pytest.approx(math.log(np.sum(np.exp(v))), abs=1e-12)

    def test_axis(self):
        m = np.array([[0.0, 0.0], [1.0, -np.inf]])
        np.testing.assert_allclose(log_sum_exp(m, axis=1), [math.log(2), 1.0], atol=1e-15)


class TestSoftmax:
    def test_examples(self):
        np.testing.assert_allclose(softmax([0.0] * 4), [0.25] * 4, atol=1e-15)
        np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15)
        p = softmax([5.0, -np.inf])
        assert p[0] == 1.0 and p[1] == 0.0

    def test_all_minus_inf(self):
        with pytest.raises(ValueError):
            softmax([-np.inf, -np.inf])

    @given(arrays(np.float64, st.integers(1, 2000), elements=st.floats(-700, 700)))
    def test_sums_to_one(self, v):
        assert abs(softmax(v).sum() - 1.0) < 1e-12

    @given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-50, 50)), st.floats(-1e3, 1e3))
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(softmax(v + c), softmax(v), rtol=0, atol=1e-12)


class TestFingerprint:
    def test_sensitive_to_weights(self):
        ds = random_dataset(seed=4)
        people = list(ds.individuals)
        p = people[0]
        people[0] = Individual(p.person_id, p.home_zone, p.work_zone, *p.attributes(), weight=p.weight * 2)
        other = build_dataset(ds.zones, people, ds.accessibility)
        assert other.fingerprint() != ds.fingerprint()
        assert random_dataset(seed=4).fingerprint() == ds.fingerprint()
