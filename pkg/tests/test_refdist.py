import math

import numpy as np
import pytest

from coalition_attrib.data import (Bernoulli, Dataset, Normal,
                                   ParametricSpec, Uniform)
from coalition_attrib.errors import (InvalidReferenceModeError,
                                     GraphSchemaMismatchError, NoSupportError,
                                     QuadratureUnavailableError)
from coalition_attrib.graph import CausalGraph
from coalition_attrib.refdist import (ReferenceDistribution,
                                      conditional_support,
                                      conditional_weights,
                                      gaussian_conditional, impute,
                                      interventional_support)
from coalition_attrib.rng import stream
from coalition_attrib.schema import Feature, FeatureSchema

S2 = FeatureSchema((Feature("a"), Feature("b")))


def normal_pair(corr):
    cov = np.array([[1.0, corr], [corr, 1.0]])
    return ParametricSpec(S2, (Normal(0, 1), Normal(0, 1)), covariance=cov)


def toy_dataset(n=400, corr=0.8, seed=5):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2))
    rows = z.copy()
    rows[:, 1] = corr * z[:, 0] + math.sqrt(1 - corr ** 2) * z[:, 1]
    return Dataset(S2, rows)


class TestValidation:
    def test_unknown_mode(self):
        with pytest.raises(InvalidReferenceModeError):
            ReferenceDistribution("bogus", toy_dataset())

    def test_bandwidth_positive(self):
        with pytest.raises(InvalidReferenceModeError):
            ReferenceDistribution("conditional-empirical", toy_dataset(),
                                  bandwidth=0.0)

    def test_bandwidth_only_for_empirical(self):
        with pytest.raises(InvalidReferenceModeError):
            ReferenceDistribution("marginal", toy_dataset(), bandwidth=1.0)

    def test_conditional_empirical_needs_dataset(self):
        with pytest.raises(InvalidReferenceModeError):
            ReferenceDistribution("conditional-empirical", normal_pair(0.5))

    def test_conditional_gaussian_needs_all_normal(self):
        spec = ParametricSpec(S2, (Uniform(0, 1), Normal(0, 1)))
        with pytest.raises(InvalidReferenceModeError):
            ReferenceDistribution("conditional-gaussian", spec)
        with pytest.raises(InvalidReferenceModeError):
            ReferenceDistribution("conditional-gaussian", toy_dataset())

    def test_interventional_needs_matching_graph(self):
        with pytest.raises(InvalidReferenceModeError):
            ReferenceDistribution("interventional-dag", toy_dataset())
        wrong = CausalGraph(("a", "c"), ())
        with pytest.raises(GraphSchemaMismatchError):
            ReferenceDistribution("interventional-dag", toy_dataset(),
                                  graph=wrong)

    def test_graph_forbidden_elsewhere(self):
        g = CausalGraph.empty(S2)
        with pytest.raises(InvalidReferenceModeError):
            ReferenceDistribution("marginal", toy_dataset(), graph=g)

    def test_silverman_bandwidth_default(self):
        ds = toy_dataset(n=200)
        ref = ReferenceDistribution("conditional-empirical", ds)
        sd = ds.rows[:, 0].std(ddof=1)
        assert ref.bandwidths[0] == pytest.approx(
            1.06 * sd * 200 ** (-1 / 5))

    def test_bandwidth_override(self):
        ref = ReferenceDistribution("conditional-empirical", toy_dataset(),
                                    bandwidth=0.5)
        assert np.all(ref.bandwidths == 0.5)

    def test_neighbor_default(self):
        ref = ReferenceDistribution("conditional-empirical",
                                    toy_dataset(n=1000))
        assert ref.neighbor_count == 32  # max(20, ceil(sqrt(1000)))
        small = ReferenceDistribution("conditional-empirical",
                                      toy_dataset(n=10))
        assert small.neighbor_count == 10  # capped at n

    def test_binary_feature_gets_zero_bandwidth(self):
        schema = FeatureSchema((Feature("x", kind="binary"), Feature("y")))
        ds = Dataset(schema, np.array([[0.0, 1.0], [1.0, 2.0], [1.0, 3.0]]))
        ref = ReferenceDistribution("conditional-empirical", ds)
        assert ref.bandwidths[0] == 0.0
        assert ref.bandwidths[1] > 0.0


class TestConditionalEmpirical:
    def test_empty_coalition_keeps_all_rows(self):
        ds = toy_dataset(n=300)
        ref = ReferenceDistribution("conditional-empirical", ds)
        keep, probs = conditional_support(ref, 0, np.zeros(2))
        assert keep.size == 300
        assert np.allclose(sorted(probs), sorted(ds.weights))

    def test_full_coalition_imputes_x_exactly(self):
        x = np.array([0.7, -0.3])
        for ref in (
            ReferenceDistribution("marginal", toy_dataset()),
            ReferenceDistribution("conditional-empirical", toy_dataset()),
            ReferenceDistribution("conditional-gaussian", normal_pair(0.8)),
        ):
            rows = impute(ref, 0b11, x, 50, stream(0, "t"))
            assert np.array_equal(rows, np.tile(x, (50, 1)))

    def test_huge_bandwidth_full_neighbors_is_marginal(self):
        ds = toy_dataset(n=150)
        ref = ReferenceDistribution("conditional-empirical", ds,
                                    bandwidth=1e6, neighbors=150)
        w = conditional_weights(ref, 0b01, np.array([0.3, 0.0]))
        assert np.allclose(w / w.sum(), ds.weights, atol=1e-9)

    def test_kernel_prefers_near_rows(self):
        ds = toy_dataset(n=500)
        ref = ReferenceDistribution("conditional-empirical", ds)
        x = np.array([1.0, 0.0])
        keep, probs = conditional_support(ref, 0b01, x)
        assert keep.size <= ref.neighbor_count
        picked = ds.rows[keep, 0]
        others = np.delete(ds.rows[:, 0], keep)
        # every retained row is closer to x1 than every rejected one
        assert np.abs(picked - 1.0).max() <= np.abs(others - 1.0).min() + 1e-12

    def test_empirical_tracks_exact_gaussian(self):
        corr = 0.8
        rng = np.random.default_rng(42)
        z = rng.standard_normal((4000, 2))
        rows = z.copy()
        rows[:, 1] = corr * z[:, 0] + math.sqrt(1 - corr ** 2) * z[:, 1]
        ds = Dataset(S2, rows)
        ref = ReferenceDistribution("conditional-empirical", ds,
                                    neighbors=400)
        x = np.array([1.0, 0.0])
        drawn = impute(ref, 0b01, x, 20000, stream(3, "t"))
        # kernel smoothing attenuates the slope a little; this is a
        # tracking check, not a convergence-rate claim
        assert abs(drawn[:, 1].mean() - corr * 1.0) < 0.1

    def test_exact_match_no_support(self):
        schema = FeatureSchema((Feature("s", kind="binary"), Feature("y")))
        ds = Dataset(schema, np.array([[0.0, 1.0], [0.0, 2.0]]))
        ref = ReferenceDistribution("conditional-empirical", ds)
        with pytest.raises(NoSupportError) as err:
            conditional_support(ref, 0b01, np.array([1.0, 0.0]))
        assert "s=1.0" in str(err.value)


class TestConditionalGaussian:
    def test_closed_form_two_by_two(self):
        spec = normal_pair(0.8)
        mean, cov, b_idx = gaussian_conditional(spec, 0b01,
                                                np.array([1.0, 0.0]))
        assert b_idx == (1,)
        assert mean[0] == pytest.approx(0.8)
        assert cov[0, 0] == pytest.approx(1 - 0.64)

    def test_perfect_correlation_collapses(self):
        spec = normal_pair(1.0)
        x = np.array([0.6, 0.0])
        rows = impute(ReferenceDistribution("conditional-gaussian", spec),
                      0b01, x, 200, stream(1, "t"))
        assert np.allclose(rows[:, 1], 0.6, atol=1e-9)

    def test_draw_moments(self):
        spec = normal_pair(0.5)
        ref = ReferenceDistribution("conditional-gaussian", spec)
        rows = impute(ref, 0b01, np.array([2.0, 0.0]), 100_000,
                      stream(2, "t"))
        se = math.sqrt(1 - 0.25) / math.sqrt(100_000)
        assert abs(rows[:, 1].mean() - 1.0) < 4 * se
        assert abs(rows[:, 1].std() - math.sqrt(0.75)) < 0.01


class TestModeCoincidence:
    def test_empty_coalition_means_agree(self):
        ds = toy_dataset(n=250)
        g = CausalGraph(("a", "b"), (("a", "b"),))
        refs = [
            ReferenceDistribution("marginal", ds),
            ReferenceDistribution("conditional-empirical", ds),
            ReferenceDistribution("interventional-dag", ds, graph=g),
        ]
        x = np.array([9.9, -9.9])  # far away; must not matter at S = empty
        means = []
        for i, ref in enumerate(refs):
            rows = impute(ref, 0, x, 100_000, stream(10 + i, "t"))
            means.append(rows.mean(axis=0))
        se = ds.rows.std(axis=0) / math.sqrt(100_000) * 3
        for got in means[1:]:
            assert np.all(np.abs(got - means[0]) < 3 * se + 1e-3)


class TestInterventional:
    def chain(self):
        schema = FeatureSchema((Feature("a", kind="binary"),
                                Feature("b", kind="binary")))
        ds = Dataset(schema, np.array([[0.0, 0.0], [1.0, 1.0]]))
        g = CausalGraph(("a", "b"), (("a", "b"),))
        return ReferenceDistribution("interventional-dag", ds, graph=g)

    def test_descendants_respond(self):
        ref = self.chain()
        rows = impute(ref, 0b01, np.array([1.0, 0.0]), 500, stream(4, "t"))
        assert np.all(rows[:, 0] == 1.0)
        assert np.all(rows[:, 1] == 1.0)  # b tracks its parent exactly

    def test_non_descendants_keep_marginal(self):
        ref = self.chain()
        rows = impute(ref, 0b10, np.array([0.0, 1.0]), 40_000,
                      stream(5, "t"))
        assert np.all(rows[:, 1] == 1.0)
        # do(b) does not reach upstream a
        assert abs(rows[:, 0].mean() - 0.5) < 3 * 0.5 / math.sqrt(40_000)

    def test_support_enumeration_matches_impute(self):
        ref = self.chain()
        rows, probs = interventional_support(ref, 0b01,
                                             np.array([1.0, 0.0]), 1000)
        assert probs.sum() == pytest.approx(1.0)
        exact = (probs[:, None] * rows).sum(axis=0)
        assert np.allclose(exact, [1.0, 1.0], atol=1e-12)

    def test_parametric_independent_reduces_to_marginal(self):
        schema = FeatureSchema((Feature("a"), Feature("b")))
        spec = ParametricSpec(schema, (Normal(0, 1), Normal(5, 2)))
        g = CausalGraph(("a", "b"), (("a", "b"),))
        ref = ReferenceDistribution("interventional-dag", spec, graph=g)
        rows = impute(ref, 0b01, np.array([3.0, 0.0]), 50_000,
                      stream(6, "t"))
        assert np.all(rows[:, 0] == 3.0)
        assert abs(rows[:, 1].mean() - 5.0) < 4 * 2 / math.sqrt(50_000)

    def test_parametric_coupled_gaussian_mechanism(self):
        spec = normal_pair(0.8)
        g = CausalGraph(("a", "b"), (("a", "b"),))
        ref = ReferenceDistribution("interventional-dag", spec, graph=g)
        rows = impute(ref, 0b01, np.array([2.0, 0.0]), 50_000,
                      stream(7, "t"))
        se = math.sqrt(1 - 0.64) / math.sqrt(50_000)
        assert abs(rows[:, 1].mean() - 1.6) < 4 * se
        # reverse intervention: a is upstream, stays marginal
        rows = impute(ref, 0b10, np.array([0.0, 2.0]), 50_000,
                      stream(8, "t"))
        assert abs(rows[:, 0].mean()) < 4 / math.sqrt(50_000)

    def test_parametric_coupled_has_no_exact_support(self):
        spec = normal_pair(0.8)
        g = CausalGraph(("a", "b"), (("a", "b"),))
        ref = ReferenceDistribution("interventional-dag", spec, graph=g)
        with pytest.raises(QuadratureUnavailableError):
            interventional_support(ref, 0b01, np.array([1.0, 0.0]), 1000)

    def test_term_cap_enforced(self):
        rng = np.random.default_rng(9)
        schema = FeatureSchema((Feature("a"), Feature("b")))
        ds = Dataset(schema, rng.normal(size=(200, 2)))
        g = CausalGraph(("a", "b"), (("a", "b"),))
        ref = ReferenceDistribution("interventional-dag", ds, graph=g)
        with pytest.raises(QuadratureUnavailableError):
            interventional_support(ref, 0b01, np.array([0.0, 0.0]), 10)
