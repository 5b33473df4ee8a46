import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adakrig.doe import (
    Design,
    Domain,
    DuplicatePointWarning,
    augment_design,
    is_latin,
    maximin_lhd,
    min_intersite_distance,
)
from adakrig.errors import ArgumentError, DomainError


def brute_force_min_distance(points):
    return min(
        np.sqrt(np.sum((a - b) ** 2)) for a, b in itertools.combinations(points, 2)
    )


def count_bins(unit_points):
    n = unit_points.shape[0]
    bins = np.floor(unit_points * n).astype(int)
    return [np.bincount(bins[:, k], minlength=n) for k in range(unit_points.shape[1])]


def test_domain_rejects_empty_interval():
    with pytest.raises(ArgumentError):
        Domain([0.0, 1.0], [1.0, 1.0])


def test_single_point_design():
    design = maximin_lhd(1, Domain.unit(3), np.random.default_rng(0))
    assert len(design) == 1
    assert is_latin(design.unit_points)


def test_four_points_fill_every_bin():
    design = maximin_lhd(4, Domain.unit(2), np.random.default_rng(1))
    for counts in count_bins(design.unit_points):
        np.testing.assert_array_equal(counts, np.ones(4))


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 15),
    q=st.integers(1, 4),
    seed=st.integers(0, 2**32 - 1),
)
def test_latin_property_and_domain_membership(n, q, seed):
    rng = np.random.default_rng(seed)
    lower = rng.uniform(-5, 5, q)
    domain = Domain(lower, lower + rng.uniform(0.1, 10, q))
    design = maximin_lhd(n, domain, rng, iterations=50)
    assert len(design) == n
    assert all(np.array_equal(c, np.ones(n)) for c in count_bins(design.unit_points))
    assert np.all(design.points > domain.lo) and np.all(design.points < domain.hi)
    assert set(design.tags) == {"initial-LHD"}


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 12), q=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_maximin_distance_never_decreases(n, q, seed):
    _, history = maximin_lhd(
        n, Domain.unit(q), np.random.default_rng(seed), iterations=200, return_history=True
    )
    assert np.all(np.diff(history) >= 0)


def test_optimised_beats_random_start_over_twenty_seeds():
    for seed in range(20):
        design, history = maximin_lhd(
            10, Domain.unit(2), np.random.default_rng(seed), 1000, return_history=True
        )
        assert min_intersite_distance(design) >= history[0]


def test_same_seed_same_design():
    a = maximin_lhd(8, Domain.unit(2), np.random.default_rng(7))
    b = maximin_lhd(8, Domain.unit(2), np.random.default_rng(7))
    np.testing.assert_array_equal(a.points, b.points)


def test_min_distance_trivial_cases():
    assert min_intersite_distance([[0.0, 0.0], [0.0, 0.0]]) == 0.0
    assert min_intersite_distance([[0.0, 0.0], [1.0, 1.0]]) == pytest.approx(np.sqrt(2))
    with pytest.raises(ArgumentError):
        min_intersite_distance([[0.5, 0.5]])


def test_min_distance_matches_brute_force():
    pts = np.random.default_rng(3).random((5, 3))
    assert min_intersite_distance(pts) == pytest.approx(brute_force_min_distance(pts), rel=1e-14)


def test_min_distance_of_design_uses_unit_scale():
    domain = Domain([0.0, 0.0], [10.0, 1.0])
    design = Design(domain, [[0.0, 0.0], [10.0, 1.0]])
    assert min_intersite_distance(design) == pytest.approx(np.sqrt(2))


def test_augment_empty_design():
    empty = Design(Domain.unit(2), np.empty((0, 2)))
    grown = augment_design(empty, [0.3, 0.4], tag="ECD")
    assert len(grown) == 1 and grown.tags == ("ECD",)
    assert len(empty) == 0


def test_augment_keeps_input_unchanged():
    base = Design(Domain.unit(1), [[0.1], [0.9]], [[1.0], [2.0]])
    grown = augment_design(base, [0.5], [3.0], tag="WIMSE")
    assert len(base) == 2 and base.evaluations.shape == (2, 1)
    np.testing.assert_array_equal(grown.evaluations.ravel(), [1.0, 2.0, 3.0])
    assert grown.tags == ("manual", "manual", "WIMSE")


def test_augment_duplicate_is_flagged_not_rejected():
    base = Design(Domain.unit(1), [[0.1], [0.9]])
    with pytest.warns(DuplicatePointWarning):
        grown = augment_design(base, [0.9])
    assert len(grown) == 3


def test_augment_errors():
    base = Design(Domain.unit(1), [[0.1]], [[1.0]])
    with pytest.raises(DomainError):
        augment_design(base, [1.5], [0.0])
    with pytest.raises(ArgumentError):
        augment_design(base, [0.5], [0.0], tag="guess")
    with pytest.raises(ArgumentError):
        augment_design(base, [0.5])


def test_design_rejects_points_outside_domain():
    with pytest.raises(DomainError):
        Design(Domain.unit(2), [[0.5, 1.2]])


def test_five_lhd_plus_five_criterion_points():
    design = maximin_lhd(5, Domain.unit(2), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    with warnings.catch_warnings():
        warnings.simplefilter("error", DuplicatePointWarning)
        for _ in range(5):
            design = augment_design(design, rng.random(2), tag="ECD")
    assert design.tags == ("initial-LHD",) * 5 + ("ECD",) * 5


def test_csv_and_json_roundtrip():
    domain = Domain([0.0, -1.0], [2.0, 1.0])
    design = maximin_lhd(6, domain, np.random.default_rng(2))
    design = design.with_evaluations(np.arange(12.0).reshape(6, 2) / 7)
    again = Design.from_csv(design.to_csv(), domain)
    np.testing.assert_array_equal(again.points, design.points)
    np.testing.assert_array_equal(again.evaluations, design.evaluations)
    back = Design.from_json(design.to_json())
    assert back.tags == design.tags
    np.testing.assert_array_equal(back.points, design.points)


def test_csv_with_too_few_columns():
    with pytest.raises(ArgumentError):
        Design.from_csv("z1\n0.5\n", Domain.unit(2))
