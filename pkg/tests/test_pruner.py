import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jobpruner.pruner import (AUTO, PruneConfig, PruneError, prune,
                              reduction_fraction)
from jobpruner.space import (ParamDomain, SearchSpace, enumerate_points,
                             is_subspace, space_size)

from _util import grid_space, random_record, random_space, record_of, ref_prune


class TestPruneConfig:
    def test_fixed_aggressiveness_bounds(self):
        with pytest.raises(PruneError):
            PruneConfig(aggressiveness=1.5)
        with pytest.raises(PruneError):
            PruneConfig(aggressiveness=-0.1)

    def test_auto_is_accepted(self):
        assert PruneConfig(aggressiveness=AUTO).aggressiveness == AUTO

    def test_cap_bounds(self):
        with pytest.raises(PruneError):
            PruneConfig(cap=2.0)


class TestPrune:
    def test_cutoff_is_fraction_of_prior_max(self):
        # prior max 0.4 at aggressiveness 0.5 -> cutoff 0.2: values whose
        # prior outputs all fell below 0.2 disappear
        space = grid_space(4)
        prior = record_of(space, [((0,), 0.1), ((1,), 0.15), ((2,), 0.3), ((3,), 0.4)])
        outcome = prune(prior, space, 0.5)
        assert outcome.new_space.domains[0].values == (2, 3)
        assert outcome.removed == {"p0": [0, 1]}

    def test_zero_aggressiveness_removes_nothing(self):
        space = grid_space(3, 3)
        rng = np.random.default_rng(0)
        prior = record_of(space, [(p, rng.uniform()) for p in enumerate_points(space)])
        outcome = prune(prior, space, 0.0)
        assert outcome.new_space.domains == space.domains
        assert outcome.reduction == 0.0

    def test_bad_column_removed(self):
        space = grid_space(3, 3)
        pairs = []
        for i, j in enumerate_points(space):
            pairs.append(((i, j), 0.1 if j == 2 else 1.0))
        outcome = prune(record_of(space, pairs), space, 0.5)
        assert outcome.new_space.domains[1].values == (0, 1)
        assert outcome.reduction == pytest.approx(1 / 3)

    def test_values_without_prior_evidence_survive(self):
        space = grid_space(3)
        prior = record_of(space, [((0,), 1.0), ((1,), 0.0)])  # value 2 untouched
        outcome = prune(prior, space, 0.5)
        assert 2 in outcome.new_space.domains[0].values
        assert outcome.new_space.domains[0].values == (0, 2)

    def test_domain_never_empties(self):
        space = grid_space(3)
        prior = record_of(space, [((0,), 0.1), ((1,), 0.5), ((2,), 0.2)])
        outcome = prune(prior, space, 1.0)
        # everything is below cutoff except the maximum itself; the best
        # value survives the empty-domain guard
        assert outcome.new_space.domains[0].values == (1,)

    def test_negative_outputs_keep_top_band(self):
        space = grid_space(4)
        prior = record_of(space, [((0,), -4.0), ((1,), -3.0), ((2,), -2.0), ((3,), -1.0)])
        # shifted outputs are 0,1,2,3 -> cutoff 0.5 * 3 = 1.5
        outcome = prune(prior, space, 0.5)
        assert outcome.new_space.domains[0].values == (2, 3)

    def test_structural_mismatch_rejected(self):
        space = grid_space(3)
        prior = record_of(space, [((0,), 1.0)])
        with pytest.raises(PruneError):
            prune(prior, grid_space(4), 0.5)

    def test_invalid_aggressiveness_rejected(self):
        space = grid_space(3)
        prior = record_of(space, [((0,), 1.0)])
        with pytest.raises(PruneError):
            prune(prior, space, 1.5)

    def test_min_evidence_knob(self):
        space = grid_space(3)
        prior = record_of(space, [((0,), 0.1), ((1,), 1.0)])
        # value 0 has a single bad observation: removed at the default
        # minimum evidence of 1, kept when two observations are required
        assert 0 not in prune(prior, space, 0.5).new_space.domains[0].values
        assert 0 in prune(prior, space, 0.5, min_evidence=2).new_space.domains[0].values

    def test_prune_of_pruned_space(self):
        space = grid_space(4, 4)
        rng = np.random.default_rng(2)
        prior = record_of(space, [(p, rng.uniform()) for p in enumerate_points(space)])
        once = prune(prior, space, 0.7).new_space
        again = prune(prior, once, 0.7).new_space
        assert again.domains == once.domains  # idempotent


class TestReductionFraction:
    def test_identity(self):
        space = grid_space(4, 4)
        assert reduction_fraction(space, space) == 0.0

    def test_arithmetic(self):
        before = grid_space(10, 10)
        after = SearchSpace((ParamDomain("p0", tuple(range(5))),
                             ParamDomain("p1", tuple(range(5)))))
        assert reduction_fraction(before, after) == pytest.approx(0.75)

    def test_one_value_removed_per_dimension(self):
        before = grid_space(4, 4)
        after = SearchSpace((ParamDomain("p0", (0, 1, 2)),
                             ParamDomain("p1", (1, 2, 3))))
        assert reduction_fraction(before, after) == pytest.approx(1 - 9 / 16)

    def test_not_a_subset_rejected(self):
        with pytest.raises(PruneError):
            reduction_fraction(grid_space(3), grid_space(4))


class TestOracleEquivalence:
    def test_randomized_instances_match_reference(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            space = random_space(rng, max_points=200, allow_categorical=True)
            prior = random_record(rng, space)
            p_aggr = float(rng.uniform(0, 1))
            outcome = prune(prior, space, p_aggr)
            expected = ref_prune(prior, space, p_aggr)
            got = [d.values for d in outcome.new_space.domains]
            assert got == expected, (space.cardinalities, p_aggr)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000),
       p1=st.floats(0, 1), p2=st.floats(0, 1))
def test_monotone_and_subset_properties(seed, p1, p2):
    rng = np.random.default_rng(seed)
    space = random_space(rng, max_points=150)
    prior = random_record(rng, space)
    if max(j.output for j in prior.jobs) <= 0:
        return
    lo, hi = min(p1, p2), max(p1, p2)
    weak = prune(prior, space, lo).new_space
    strong = prune(prior, space, hi).new_space
    assert is_subspace(weak, space)
    assert is_subspace(strong, weak)
    assert all(d.cardinality >= 1 for d in strong.domains)
    assert space_size(strong) >= 1
