import math
from fractions import Fraction

import numpy as np
import pytest

from coalition_attrib.data import (Bernoulli, Dataset, Normal,
                                   ParametricSpec, Uniform)
from coalition_attrib.dsl import (Arith, Const, ModelExpr, parse_model,
                                  random_expr, swap_features, to_source)
from coalition_attrib.engine import (Coalition, EngineConfig,
                                     _ExtensionCounter, asymmetric_shapley,
                                     causal_shapley, coalition_deltas,
                                     exact_shapley, sampled_shapley,
                                     shapley_coalition_weights,
                                     value_function)
from coalition_attrib.errors import (EngineError, InvalidReferenceModeError,
                                     TooManyFeaturesError)
from coalition_attrib.graph import CausalGraph
from coalition_attrib.refdist import ReferenceDistribution
from coalition_attrib.rng import stream
from coalition_attrib.schema import Feature, FeatureSchema, Instance


def make_schema(m):
    return FeatureSchema(tuple(Feature(f"x{i}") for i in range(m)))


def random_dataset(schema, rng, n=None):
    n = n or int(rng.integers(8, 25))
    return Dataset(schema, rng.normal(size=(n, schema.m)))


S2 = make_schema(2)
LINEAR = parse_model("x0 + x1", S2)
UNIFORMS = ParametricSpec(S2, (Uniform(-1.0, 2.0), Uniform(0.0, 3.0)))
MARGINAL = ReferenceDistribution("marginal", UNIFORMS)
ORIGIN = Instance(S2, np.zeros(2))


class TestCoalition:
    def test_members_and_size(self):
        c = Coalition.from_indices(4, [0, 2])
        assert c.members == (0, 2)
        assert c.size == 2
        assert c.contains(2) and not c.contains(1)

    def test_from_names(self):
        schema = make_schema(3)
        c = Coalition.from_names(schema, ["x2", "x0"])
        assert c.members == (0, 2)

    def test_complement(self):
        c = Coalition.from_indices(3, [1])
        assert c.complement().members == (0, 2)

    def test_add_remove(self):
        c = Coalition.empty(3).add(1).add(2).remove(1)
        assert c.members == (2,)

    def test_bounds(self):
        with pytest.raises(EngineError):
            Coalition(8, 3)
        with pytest.raises(EngineError):
            Coalition.from_indices(2, [5])


class TestValueFunction:
    def test_full_coalition_is_model_output(self):
        inst = Instance(S2, np.array([0.3, 0.4]))
        est = value_function(LINEAR, MARGINAL, inst, Coalition.full(2))
        assert est.backend == "direct"
        assert est.value == pytest.approx(0.7)

    def test_empty_coalition_is_base_rate(self):
        est = value_function(LINEAR, MARGINAL, ORIGIN, Coalition.empty(2))
        assert est.value == pytest.approx(2.0, abs=1e-12)
        assert est.backend == "quadrature"

    def test_dataset_enumeration(self):
        rng = np.random.default_rng(0)
        ds = random_dataset(S2, rng, n=10)
        ref = ReferenceDistribution("marginal", ds)
        est = value_function(LINEAR, ref, ORIGIN, Coalition.from_indices(2, [0]))
        want = ds.rows[:, 1].mean()  # x0 clamped to 0
        assert est.value == pytest.approx(want, abs=1e-12)
        assert est.backend == "enumeration"

    def test_sampled_estimator_has_error_bar(self):
        est = value_function(LINEAR, MARGINAL, ORIGIN, Coalition.empty(2),
                             estimator="sampled", draws=4000, seed=1)
        assert est.backend == "monte-carlo"
        assert abs(est.value - 2.0) < 4 * est.standard_error


class TestExactShapley:
    def test_weights_sum_to_one(self):
        for m in range(1, 8):
            w = shapley_coalition_weights(m)
            total = sum(Fraction(v) * math.comb(m - 1, s)
                        for s, v in enumerate(w))
            assert abs(float(total) - 1.0) < 1e-12

    def test_closed_form_linear_uniform(self):
        rep = exact_shapley(LINEAR, MARGINAL, ORIGIN)
        assert abs(rep.phi[0] + 0.5) <= 1e-9
        assert abs(rep.phi[1] + 1.5) <= 1e-9
        assert rep.base == pytest.approx(2.0, abs=1e-12)
        assert rep.mode == "marginal"

    def test_weighted_and_grouped_agree(self):
        rng = np.random.default_rng(8)
        for m in (2, 3, 5):
            schema = make_schema(m)
            ds = random_dataset(schema, rng)
            ref = ReferenceDistribution("marginal", ds)
            model = ModelExpr(random_expr(schema, rng, depth=4), schema)
            inst = Instance(schema, rng.normal(size=m))
            a = exact_shapley(model, ref, inst, combination="weighted")
            b = exact_shapley(model, ref, inst, combination="grouped")
            assert np.allclose(a.phi, b.phi, atol=1e-12)

    def test_efficiency_exact(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            m = int(rng.integers(2, 6))
            schema = make_schema(m)
            ds = random_dataset(schema, rng)
            ref = ReferenceDistribution("marginal", ds)
            model = ModelExpr(random_expr(schema, rng, depth=4), schema)
            inst = Instance(schema, rng.normal(size=m))
            rep = exact_shapley(model, ref, inst)
            assert abs(rep.efficiency_residual()) <= 1e-9

    def test_dummy_exact_zero(self):
        rng = np.random.default_rng(22)
        schema = make_schema(4)
        ds = random_dataset(schema, rng)
        ref = ReferenceDistribution("marginal", ds)
        model = parse_model("x0 * x2 + x2 ^ 2", schema)  # x1, x3 unread
        inst = Instance(schema, rng.normal(size=4))
        rep = exact_shapley(model, ref, inst)
        assert rep.phi[1] == 0.0
        assert rep.phi[3] == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(23)
        schema = make_schema(3)
        base_rows = rng.normal(size=(12, 3))
        swapped = base_rows.copy()
        swapped[:, [0, 1]] = swapped[:, [1, 0]]
        ds = Dataset(schema, np.vstack([base_rows, swapped]))
        ref = ReferenceDistribution("marginal", ds)
        f = parse_model("x0 * x1 + x0 + x1 + x2", schema)
        inst = Instance(schema, np.array([0.7, 0.7, -0.2]))
        rep = exact_shapley(f, ref, inst)
        assert abs(rep.phi[0] - rep.phi[1]) <= 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(24)
        schema = make_schema(3)
        ds = random_dataset(schema, rng)
        ref = ReferenceDistribution("marginal", ds)
        f = ModelExpr(random_expr(schema, rng, depth=4), schema)
        g = ModelExpr(random_expr(schema, rng, depth=4), schema)
        combo = ModelExpr(
            Arith("+", Arith("*", Const(2.0), f.root),
                  Arith("*", Const(-0.5), g.root)), schema)
        inst = Instance(schema, rng.normal(size=3))
        pf = exact_shapley(f, ref, inst).phi
        pg = exact_shapley(g, ref, inst).phi
        pc = exact_shapley(combo, ref, inst).phi
        assert np.allclose(pc, 2.0 * pf - 0.5 * pg, atol=1e-9)

    def test_feature_count_cutoff(self):
        schema = make_schema(5)
        ds = Dataset(schema, np.zeros((1, 5)) + 0.5)
        ref = ReferenceDistribution("marginal", ds)
        model = parse_model("x0", schema)
        inst = Instance(schema, np.zeros(5))
        config = EngineConfig(max_exact_features=4)
        with pytest.raises(TooManyFeaturesError):
            exact_shapley(model, ref, inst, config)

    def test_conditional_empirical_mode_tag(self):
        rng = np.random.default_rng(31)
        ds = random_dataset(S2, rng)
        ref = ReferenceDistribution("conditional-empirical", ds)
        rep = exact_shapley(LINEAR, ref, ORIGIN)
        assert rep.mode == "conditional"
        assert abs(rep.efficiency_residual()) <= 1e-9

    def test_conditional_gaussian_quadrature(self):
        cov = np.array([[1.0, 0.6], [0.6, 1.0]])
        spec = ParametricSpec(S2, (Normal(0, 1), Normal(0, 1)),
                              covariance=cov)
        ref = ReferenceDistribution("conditional-gaussian", spec)
        inst = Instance(S2, np.array([1.0, 1.0]))
        rep = exact_shapley(LINEAR, ref, inst)
        # hand enumeration: v(0)=0, v({j})=x_j+0.6 x_j, v(full)=2
        # phi_j = 1/2(1.6) + 1/2(2 - 1.6) = 1.0 each
        assert np.allclose(rep.phi, [1.0, 1.0], atol=1e-9)
        assert abs(rep.efficiency_residual()) <= 1e-9


class TestSampledShapley:
    def test_matches_exact_within_error(self):
        exact = exact_shapley(LINEAR, MARGINAL, ORIGIN)
        rep = sampled_shapley(LINEAR, MARGINAL, ORIGIN, 20_000, 10, seed=0)
        for j in range(2):
            assert abs(rep.phi[j] - exact.phi[j]) < 4 * rep.standard_errors[j]
        assert rep.estimator["type"] == "sampled"

    def test_efficiency_telescopes_exactly(self):
        rep = sampled_shapley(LINEAR, MARGINAL, ORIGIN, 500, 4, seed=2)
        # every permutation walk ends at f(x), so the residual is pure
        # float reassociation, orders of magnitude below the SE
        assert abs(rep.efficiency_residual()) < 1e-12

    def test_worker_invariance_marginal(self):
        kw = dict(permutations=3000, draws=6, seed=5)
        a = sampled_shapley(LINEAR, MARGINAL, ORIGIN, workers=1, **kw)
        b = sampled_shapley(LINEAR, MARGINAL, ORIGIN, workers=4, **kw)
        assert np.array_equal(a.phi, b.phi)
        assert np.array_equal(a.standard_errors, b.standard_errors)
        assert a.base == b.base

    def test_worker_invariance_conditional(self):
        rng = np.random.default_rng(6)
        ds = random_dataset(S2, rng, n=30)
        ref = ReferenceDistribution("conditional-empirical", ds)
        kw = dict(permutations=200, draws=8, seed=5)
        a = sampled_shapley(LINEAR, ref, ORIGIN, workers=1, **kw)
        b = sampled_shapley(LINEAR, ref, ORIGIN, workers=3, **kw)
        assert np.array_equal(a.phi, b.phi)

    def test_workers_env_fallback(self, monkeypatch):
        monkeypatch.setenv("COALITION_ATTRIB_WORKERS", "2")
        a = sampled_shapley(LINEAR, MARGINAL, ORIGIN, 1000, 4, seed=9)
        monkeypatch.setenv("COALITION_ATTRIB_WORKERS", "1")
        b = sampled_shapley(LINEAR, MARGINAL, ORIGIN, 1000, 4, seed=9)
        assert np.array_equal(a.phi, b.phi)

    def test_seed_changes_estimate(self):
        a = sampled_shapley(LINEAR, MARGINAL, ORIGIN, 500, 4, seed=0)
        b = sampled_shapley(LINEAR, MARGINAL, ORIGIN, 500, 4, seed=1)
        assert not np.array_equal(a.phi, b.phi)

    def test_parameter_validation(self):
        with pytest.raises(EngineError):
            sampled_shapley(LINEAR, MARGINAL, ORIGIN, 0, 4)
        with pytest.raises(EngineError):
            sampled_shapley(LINEAR, MARGINAL, ORIGIN, 10, 0)

    def test_single_permutation_has_nan_free_body(self):
        rep = sampled_shapley(LINEAR, MARGINAL, ORIGIN, 1, 4, seed=0)
        body = rep.to_body()
        assert body["features"][0]["standard_error"] is None


class TestExtensionCounter:
    def test_counts_chain(self):
        schema = make_schema(3)
        g = CausalGraph(("x0", "x1", "x2"), (("x0", "x1"), ("x1", "x2")))
        counter = _ExtensionCounter(g, schema)
        assert counter.count_up(counter.full) == 1

    def test_counts_empty_graph(self):
        schema = make_schema(4)
        counter = _ExtensionCounter(CausalGraph.empty(schema), schema)
        assert counter.count_up(counter.full) == 24

    def test_prefix_weights_total_one_per_feature(self):
        schema = make_schema(4)
        g = CausalGraph(("x0", "x1", "x2", "x3"),
                        (("x0", "x1"), ("x0", "x2")))
        counter = _ExtensionCounter(g, schema)
        for j in range(4):
            total = Fraction(0)
            for mask in range(1 << 4):
                if mask >> j & 1:
                    continue
                w = counter.prefix_weight(mask, j)
                if w is not None:
                    total += w
            assert total == 1

    def test_empty_graph_weights_are_symmetric_shapley(self):
        schema = make_schema(5)
        counter = _ExtensionCounter(CausalGraph.empty(schema), schema)
        w = shapley_coalition_weights(5)
        for mask in (0, 0b00110, 0b01111):
            got = counter.prefix_weight(mask, 4)
            assert float(got) == w[bin(mask).count("1")]

    def test_sampled_extensions_respect_graph(self):
        schema = make_schema(4)
        g = CausalGraph(("x0", "x1", "x2", "x3"),
                        (("x0", "x2"), ("x1", "x3")))
        counter = _ExtensionCounter(g, schema)
        for i in range(100):
            order = counter.sample_order(stream(0, "order", i))
            pos = {int(v): t for t, v in enumerate(order)}
            assert pos[0] < pos[2]
            assert pos[1] < pos[3]


class TestAsymmetric:
    def chain_setup(self):
        schema = FeatureSchema((Feature("x0", kind="binary"),
                                Feature("x1", kind="binary")))
        ds = Dataset(schema, np.array([[0.0, 0.0], [1.0, 1.0]]))
        graph = CausalGraph(("x0", "x1"), (("x0", "x1"),))
        model = parse_model("x1", schema)
        inst = Instance(schema, np.array([1.0, 1.0]))
        ref = ReferenceDistribution("conditional-empirical", ds)
        return model, ref, inst, graph, schema

    def test_chain_oracle(self):
        model, ref, inst, graph, _ = self.chain_setup()
        rep = asymmetric_shapley(model, ref, inst, graph)
        assert abs(rep.phi[0] - 0.5) <= 1e-9
        assert abs(rep.phi[1]) <= 1e-9
        assert rep.mode == "asymmetric"

    def test_empty_graph_equals_symmetric_bitwise(self):
        model, ref, inst, _, schema = self.chain_setup()
        empty = CausalGraph.empty(schema)
        a = asymmetric_shapley(model, ref, inst, empty)
        s = exact_shapley(model, ref, inst)
        assert np.array_equal(a.phi, s.phi)

    def test_needs_conditional_reference(self):
        model, _, inst, graph, schema = self.chain_setup()
        ds = Dataset(schema, np.array([[0.0, 0.0], [1.0, 1.0]]))
        marginal = ReferenceDistribution("marginal", ds)
        with pytest.raises(InvalidReferenceModeError):
            asymmetric_shapley(model, marginal, inst, graph)

    def test_sampled_agrees_with_exact(self):
        model, ref, inst, graph, _ = self.chain_setup()
        exact = asymmetric_shapley(model, ref, inst, graph)
        rep = asymmetric_shapley(model, ref, inst, graph,
                                 estimator="sampled", permutations=400,
                                 draws=16, seed=0)
        # the single linear extension makes this exact up to draw noise
        for j in range(2):
            se = max(rep.standard_errors[j], 1e-12)
            assert abs(rep.phi[j] - exact.phi[j]) < 4 * se + 0.05

    def test_sampled_worker_invariance(self):
        model, ref, inst, graph, _ = self.chain_setup()
        kw = dict(estimator="sampled", permutations=300, draws=8, seed=3)
        a = asymmetric_shapley(model, ref, inst, graph, workers=1, **kw)
        b = asymmetric_shapley(model, ref, inst, graph, workers=4, **kw)
        assert np.array_equal(a.phi, b.phi)

    def test_ordering_cutoff(self):
        schema = make_schema(3)
        ds = Dataset(schema, np.zeros((2, 3)))
        ref = ReferenceDistribution("conditional-empirical", ds)
        graph = CausalGraph.empty(schema)
        model = parse_model("x0", schema)
        inst = Instance(schema, np.zeros(3))
        config = EngineConfig(max_ordering_features=2)
        with pytest.raises(TooManyFeaturesError):
            asymmetric_shapley(model, ref, inst, graph, config)


class TestCausal:
    def chain_setup(self):
        schema = FeatureSchema((Feature("x0", kind="binary"),
                                Feature("x1", kind="binary")))
        ds = Dataset(schema, np.array([[0.0, 0.0], [1.0, 1.0]]))
        graph = CausalGraph(("x0", "x1"), (("x0", "x1"),))
        ref = ReferenceDistribution("interventional-dag", ds, graph=graph)
        model = parse_model("x1", schema)
        inst = Instance(schema, np.array([1.0, 1.0]))
        return model, ref, inst, graph, schema

    def test_chain_splits_credit(self):
        model, ref, inst, graph, _ = self.chain_setup()
        rep = causal_shapley(model, ref, inst, graph)
        assert np.allclose(rep.phi, [0.25, 0.25], atol=1e-9)
        assert rep.mode == "causal"

    def test_empty_graph_equals_marginal(self):
        model, _, inst, _, schema = self.chain_setup()
        ds = Dataset(schema, np.array([[0.0, 0.0], [1.0, 1.0]]))
        empty_ref = ReferenceDistribution(
            "interventional-dag", ds, graph=CausalGraph.empty(schema))
        marginal = ReferenceDistribution("marginal", ds)
        a = causal_shapley(model, empty_ref, inst)
        b = exact_shapley(model, marginal, inst)
        assert np.allclose(a.phi, b.phi, atol=1e-12)

    def test_needs_interventional_reference(self):
        model, _, inst, graph, schema = self.chain_setup()
        ds = Dataset(schema, np.array([[0.0, 0.0], [1.0, 1.0]]))
        with pytest.raises(InvalidReferenceModeError):
            causal_shapley(model, ReferenceDistribution("marginal", ds),
                           inst, graph)

    def test_graph_argument_must_match(self):
        model, ref, inst, _, schema = self.chain_setup()
        other = CausalGraph.empty(schema)
        with pytest.raises(InvalidReferenceModeError):
            causal_shapley(model, ref, inst, other)

    def test_sampled_tracks_exact(self):
        model, ref, inst, graph, _ = self.chain_setup()
        exact = causal_shapley(model, ref, inst, graph)
        rep = causal_shapley(model, ref, inst, graph, estimator="sampled",
                             permutations=2000, draws=8, seed=0)
        for j in range(2):
            assert abs(rep.phi[j] - exact.phi[j]) < 4 * rep.standard_errors[j]


class TestCoalitionDeltas:
    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(30)
        schema = make_schema(4)
        ds = random_dataset(schema, rng)
        ref = ReferenceDistribution("marginal", ds)
        model = ModelExpr(random_expr(schema, rng, depth=3), schema)
        inst = Instance(schema, rng.normal(size=4))
        rep = coalition_deltas(model, ref, inst, "x2")
        assert sum(e.weight for e in rep.entries) == pytest.approx(1.0)
        assert len(rep.entries) == 8

    def test_phi_matches_exact_shapley(self):
        rng = np.random.default_rng(33)
        schema = make_schema(3)
        ds = random_dataset(schema, rng)
        ref = ReferenceDistribution("marginal", ds)
        model = ModelExpr(random_expr(schema, rng, depth=4), schema)
        inst = Instance(schema, rng.normal(size=3))
        rep = coalition_deltas(model, ref, inst, "x1")
        full = exact_shapley(model, ref, inst)
        assert rep.phi == pytest.approx(full.phi[1], abs=1e-12)

    def test_cancellation_flag_requires_balanced_large_deltas(self):
        # x1's deltas cancel: -x2 below threshold,  +3 x2 above it
        schema = make_schema(2)
        model = parse_model(
            "indicator(x0 > 1) * 3 * x1 - indicator(x0 <= 1) * x1", schema)
        spec = ParametricSpec(schema, (Normal(1, 1), Normal(1, 1)))
        ref = ReferenceDistribution("marginal", spec)
        inst = Instance(schema, np.array([0.5, 0.5]))
        rep = coalition_deltas(model, ref, inst, "x1")
        assert rep.cancellation
        assert abs(rep.phi) <= 1e-6
        assert rep.max_abs_delta == pytest.approx(0.5, abs=1e-6)
        # an influential feature with aligned deltas is not flagged
        plain = coalition_deltas(LINEAR, MARGINAL,
                                 Instance(S2, np.array([2.0, 2.0])), "x0")
        assert not plain.cancellation
