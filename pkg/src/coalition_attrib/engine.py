"""Shapley attribution engine.

The value of a coalition S at observation x is

    v(S) = E[f(x_S, Z)],    Z ~ reference distribution for the dropped
                            features given the coalition

and a feature's attribution averages its marginal contribution
v(S + j) - v(S) over coalitions with the exact Shapley weights
|S|! (M - |S| - 1)! / M!, equivalently over uniformly random orderings.
Asymmetric attribution restricts the orderings to linear extensions of a
causal graph; causal attribution keeps symmetric orderings but reads the
value function interventionally.

Exact backends (quadrature over parametric sources, weighted enumeration
over datasets) make v(S) deterministic; the sampled estimator walks
random permutations and is unbiased with a per-feature standard error.
Estimates are bit-reproducible for a fixed seed regardless of worker
count: every permutation draws from its own counter-based stream and all
reductions run over fixed pairwise trees.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import backend
from .data import Dataset, ParametricSpec, sample
from .dsl import ModelExpr, compile_program, scan_discontinuities
from .errors import (ConfigError, EngineError, InvalidReferenceModeError,
                     QuadratureUnavailableError, TooManyFeaturesError)
from .graph import CausalGraph
from .integrate import gaussian_conditional_value, tensor_value
from .refdist import (ReferenceDistribution, conditional_support, impute,
                      interventional_support)
from .report import AttributionReport, DeltaEntry, DeltaReport
from .rng import stream
from .schema import FeatureSchema, Instance

_WORKERS_ENV = "COALITION_ATTRIB_WORKERS"
_CHUNK = 512  # permutations per compiled walk batch


@dataclass(frozen=True)
class Coalition:
    """An included-feature set, stored as a bitmask over schema positions."""

    mask: int
    m: int

    def __post_init__(self):
        if not 0 < self.m:
            raise EngineError("coalition dimension must be positive")
        if not 0 <= self.mask < (1 << self.m):
            raise EngineError(f"mask {self.mask:#x} out of range for "
                              f"{self.m} features")

    @classmethod
    def empty(cls, m: int) -> "Coalition":
        return cls(0, m)

    @classmethod
    def full(cls, m: int) -> "Coalition":
        return cls((1 << m) - 1, m)

    @classmethod
    def from_indices(cls, m: int, indices) -> "Coalition":
        mask = 0
        for j in indices:
            if not 0 <= j < m:
                raise EngineError(f"feature index {j} out of range")
            mask |= 1 << j
        return cls(mask, m)

    @classmethod
    def from_names(cls, schema: FeatureSchema, names) -> "Coalition":
        return cls.from_indices(schema.m,
                                (schema.index(n) for n in names))

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    @property
    def members(self) -> Tuple[int, ...]:
        return tuple(j for j in range(self.m) if self.mask >> j & 1)

    def contains(self, j: int) -> bool:
        return bool(self.mask >> j & 1)

    def add(self, j: int) -> "Coalition":
        return Coalition(self.mask | (1 << j), self.m)

    def remove(self, j: int) -> "Coalition":
        return Coalition(self.mask & ~(1 << j), self.m)

    def complement(self) -> "Coalition":
        return Coalition(self.mask ^ ((1 << self.m) - 1), self.m)


@dataclass(frozen=True)
class EngineConfig:
    """Tunables shared by the attribution operations.

    quadrature_order is the per-feature Gauss rule order; dense_order is
    the floor applied when an integration range had to be split at model
    breakpoints.  The feature-count cutoffs guard against accidental
    exponential blowups and can simply be raised when the cost is
    intended.  cancellation_factor sets the delta-materiality threshold
    tau = factor * max |v(S)|; a delta report flags cancellation when
    some |delta| exceeds tau while |phi| stays below
    cancellation_phi_ratio * max |delta|.
    """

    quadrature_order: int = 32
    dense_order: int = 64
    max_quadrature_nodes: int = 2_000_000
    max_exact_features: int = 25
    max_ordering_features: int = 10
    interventional_max_terms: int = 200_000
    cancellation_factor: float = 0.05
    cancellation_phi_ratio: float = 0.05
    workers: Optional[int] = None


@dataclass(frozen=True)
class ValueFunctionEstimate:
    """One v(S) evaluation with its provenance."""

    coalition: Coalition
    value: float
    backend: str  # direct | quadrature | enumeration | monte-carlo
    draws: Optional[int] = None
    standard_error: Optional[float] = None


_MODE_TAG = {
    "marginal": "marginal",
    "conditional-empirical": "conditional",
    "conditional-gaussian": "conditional",
    "interventional-dag": "causal",
}


def mode_tag(ref: ReferenceDistribution) -> str:
    """Report label for a reference mode."""
    return _MODE_TAG[ref.mode]


def _check_aligned(model: ModelExpr, ref: ReferenceDistribution,
                   instance: Instance):
    if model.schema.names != ref.schema.names:
        raise EngineError("model and reference schemas disagree")
    if instance.schema.names != model.schema.names:
        raise EngineError("instance and model schemas disagree")


def _resolve_workers(explicit: Optional[int],
                     config: EngineConfig) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    if config.workers is not None:
        return max(1, int(config.workers))
    env = os.environ.get(_WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("workers",
                              f"{_WORKERS_ENV}={env!r} is not an integer")
    return 1


# --- exact value functions -------------------------------------------------


class _ExactValueProvider:
    """Caches exact v(S) over all coalitions for one (model, ref, x).

    Picks the exact backend from the source/mode pair and raises
    QuadratureUnavailableError when none exists (parametric source under
    an interventional reference with coupling covariance).  v(full) is
    f(x) by construction, not by integration.
    """

    def __init__(self, model: ModelExpr, ref: ReferenceDistribution,
                 instance: Instance, config: EngineConfig):
        _check_aligned(model, ref, instance)
        self.program = compile_program(model)
        self.x = np.array(instance.values, dtype=np.float64)
        self.fx = float(backend.eval_rows(self.program,
                                          self.x.reshape(1, -1))[0])
        self.m = model.schema.m
        self.full_mask = (1 << self.m) - 1
        self.config = config
        self._cache: Dict[int, float] = {}
        src = ref.source
        if isinstance(src, Dataset):
            self.backend_name = "enumeration"
            if ref.mode == "marginal":
                self._value = self._marginal_rows(src)
            elif ref.mode == "conditional-empirical":
                self._value = self._conditional_rows(ref, src)
            elif ref.mode == "interventional-dag":
                self._value = self._interventional_rows(ref)
            else:
                raise InvalidReferenceModeError(
                    f"mode {ref.mode!r} has no dataset backend")
        else:
            self.backend_name = "quadrature"
            thresholds, rough = scan_discontinuities(model)
            if ref.mode == "marginal" or (
                    ref.mode == "interventional-dag"
                    and src.covariance is None):
                # independent features: interventions reduce to marginals
                self._value = self._tensor(src, thresholds, rough)
            elif ref.mode == "conditional-gaussian":
                self._value = self._gaussian(src, bool(thresholds or rough))
            else:
                raise QuadratureUnavailableError(
                    f"no exact backend for mode {ref.mode!r} over a "
                    "parametric source with coupled features; use the "
                    "sampled estimator")

    def _marginal_rows(self, src: Dataset) -> Callable[[int], float]:
        w = np.array(src.weights)
        wsum = backend.pairwise_sum(w)

        def value(mask: int) -> float:
            rows = src.rows.copy()
            for i in range(self.m):
                if mask >> i & 1:
                    rows[:, i] = self.x[i]
            vals = backend.eval_rows(self.program, rows)
            return backend.pairwise_sum(w * vals) / wsum

        return value

    def _conditional_rows(self, ref: ReferenceDistribution,
                          src: Dataset) -> Callable[[int], float]:
        def value(mask: int) -> float:
            keep, probs = conditional_support(ref, mask, self.x)
            rows = src.rows[keep].copy()
            for i in range(self.m):
                if mask >> i & 1:
                    rows[:, i] = self.x[i]
            vals = backend.eval_rows(self.program, rows)
            return (backend.pairwise_sum(probs * vals)
                    / backend.pairwise_sum(probs))

        return value

    def _interventional_rows(self, ref: ReferenceDistribution
                             ) -> Callable[[int], float]:
        def value(mask: int) -> float:
            rows, probs = interventional_support(
                ref, mask, self.x, self.config.interventional_max_terms)
            vals = backend.eval_rows(self.program, rows)
            return (backend.pairwise_sum(probs * vals)
                    / backend.pairwise_sum(probs))

        return value

    def _tensor(self, src: ParametricSpec, thresholds,
                rough) -> Callable[[int], float]:
        cfg = self.config

        def value(mask: int) -> float:
            return tensor_value(self.program, self.x, mask, src, thresholds,
                                rough, cfg.quadrature_order, cfg.dense_order,
                                cfg.max_quadrature_nodes)

        return value

    def _gaussian(self, src: ParametricSpec,
                  has_disc: bool) -> Callable[[int], float]:
        cfg = self.config

        def value(mask: int) -> float:
            return gaussian_conditional_value(
                self.program, self.x, mask, src, has_disc,
                cfg.quadrature_order, cfg.dense_order,
                cfg.max_quadrature_nodes)

        return value

    def __call__(self, mask: int) -> float:
        got = self._cache.get(mask)
        if got is None:
            got = self.fx if mask == self.full_mask else self._value(mask)
            self._cache[mask] = got
        return got


def value_function(model: ModelExpr, ref: ReferenceDistribution,
                   instance: Instance, coalition: Coalition,
                   config: Optional[EngineConfig] = None,
                   estimator: str = "exact", draws: int = 1000,
                   seed: int = 0) -> ValueFunctionEstimate:
    """Evaluate v(S) for one coalition.

    estimator "exact" uses the quadrature/enumeration backend for the
    source; "sampled" Monte Carlo averages ``draws`` imputations.  The
    full coalition always returns f(x) exactly, with backend "direct".
    """
    config = config or EngineConfig()
    _check_aligned(model, ref, instance)
    if coalition.m != model.schema.m:
        raise EngineError("coalition dimension disagrees with schema")
    program = compile_program(model)
    x = np.array(instance.values, dtype=np.float64)
    if coalition.mask == (1 << coalition.m) - 1:
        fx = float(backend.eval_rows(program, x.reshape(1, -1))[0])
        return ValueFunctionEstimate(coalition, fx, "direct")
    if estimator == "exact":
        provider = _ExactValueProvider(model, ref, instance, config)
        return ValueFunctionEstimate(coalition, provider(coalition.mask),
                                     provider.backend_name)
    if estimator != "sampled":
        raise EngineError(f"unknown estimator {estimator!r}")
    if draws < 1:
        raise EngineError("draws must be >= 1")
    rows = impute(ref, coalition.mask, x, draws, stream(seed, "value.draw"))
    vals = backend.eval_rows(program, rows)
    mean = backend.pairwise_sum(vals) / draws
    if draws > 1:
        resid = vals - mean
        se = math.sqrt(backend.pairwise_sum(resid * resid)
                       / (draws - 1) / draws)
    else:
        se = None
    return ValueFunctionEstimate(coalition, mean, "monte-carlo",
                                 draws=draws, standard_error=se)


# --- weight combinations ---------------------------------------------------


def shapley_coalition_weights(m: int) -> List[float]:
    """w_s = s! (m - s - 1)! / m! as exactly rounded floats."""
    return [float(Fraction(math.factorial(s) * math.factorial(m - 1 - s),
                           math.factorial(m))) for s in range(m)]


def _combine_weighted(values: np.ndarray, m: int) -> np.ndarray:
    """Weighted-coalition form: phi_j = sum_S w_|S| (v(S + j) - v(S))."""
    w = shapley_coalition_weights(m)
    phi = np.empty(m)
    n_terms = 1 << (m - 1)
    terms = np.empty(n_terms)
    for j in range(m):
        bit = 1 << j
        k = 0
        for mask in range(1 << m):
            if mask & bit:
                continue
            terms[k] = w[mask.bit_count()] * (values[mask | bit]
                                              - values[mask])
            k += 1
        phi[j] = backend.pairwise_sum(terms)
    return phi


def _combine_grouped(values: np.ndarray, m: int) -> np.ndarray:
    """Size-grouped form: average over |S| of the average contribution
    among coalitions of that size.  Equal to the weighted form up to
    floating-point regrouping."""
    phi = np.empty(m)
    for j in range(m):
        bit = 1 << j
        by_size: List[List[float]] = [[] for _ in range(m)]
        for mask in range(1 << m):
            if mask & bit:
                continue
            by_size[mask.bit_count()].append(values[mask | bit]
                                             - values[mask])
        size_means = np.array([
            backend.pairwise_sum(np.asarray(diffs))
            / math.comb(m - 1, s)
            for s, diffs in enumerate(by_size)])
        phi[j] = backend.pairwise_sum(size_means) / m
    return phi


_COMBINATIONS = {"weighted": _combine_weighted, "grouped": _combine_grouped}


# --- exact attribution -----------------------------------------------------


def exact_shapley(model: ModelExpr, ref: ReferenceDistribution,
                  instance: Instance,
                  config: Optional[EngineConfig] = None,
                  combination: str = "weighted") -> AttributionReport:
    """Exact Shapley attributions by full coalition enumeration.

    Enumerates all 2^M coalitions (cutoff: config.max_exact_features)
    with the exact value backend, then combines the contribution
    differences under exact rational Shapley weights.  ``combination``
    selects the weighted-coalition or the size-grouped formulation; the
    two agree to floating-point regrouping and both are exposed so the
    equivalence is testable.
    """
    config = config or EngineConfig()
    m = model.schema.m
    if m > config.max_exact_features:
        raise TooManyFeaturesError(m, config.max_exact_features)
    if combination not in _COMBINATIONS:
        raise EngineError(f"unknown combination {combination!r}")
    provider = _ExactValueProvider(model, ref, instance, config)
    values = np.array([provider(mask) for mask in range(1 << m)])
    phi = _COMBINATIONS[combination](values, m)
    return AttributionReport(
        feature_names=model.schema.names,
        instance_values=np.array(instance.values),
        mode=mode_tag(ref),
        estimator={"type": "exact", "value_backend": provider.backend_name,
                   "combination": combination,
                   "quadrature_order": config.quadrature_order},
        base=float(values[0]),
        phi=phi,
        model_output=provider.fx,
    )


# --- sampled attribution ---------------------------------------------------


def _run_chunks(fill: Callable[[int, int], None], total: int, workers: int):
    if workers <= 1 or total <= 1:
        fill(0, total)
        return
    per = math.ceil(total / workers)
    spans = [(s, min(s + per, total)) for s in range(0, total, per)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for _ in pool.map(lambda span: fill(*span), spans):
            pass


def _sampled_report(model: ModelExpr, ref_mode_label: str, estimator: dict,
                    instance: Instance, contributions: np.ndarray,
                    base_vals: np.ndarray, fx: float) -> AttributionReport:
    p = contributions.shape[0]
    cols = np.ascontiguousarray(contributions.T)
    phi = backend.pairwise_sum_axis1(cols) / p
    base = backend.pairwise_sum(base_vals) / p
    if p > 1:
        resid = cols - phi[:, None]
        var = backend.pairwise_sum_axis1(resid * resid) / (p - 1)
        se = np.sqrt(var / p)
        bresid = base_vals - base
        base_se = math.sqrt(backend.pairwise_sum(bresid * bresid)
                            / (p - 1) / p)
    else:
        se = np.full(contributions.shape[1], np.nan)
        base_se = float("nan")
    return AttributionReport(
        feature_names=model.schema.names,
        instance_values=np.array(instance.values),
        mode=ref_mode_label,
        estimator=estimator,
        base=float(base),
        phi=phi,
        model_output=fx,
        standard_errors=se,
        base_standard_error=float(base_se),
    )


def sampled_shapley(model: ModelExpr, ref: ReferenceDistribution,
                    instance: Instance, permutations: int, draws: int,
                    seed: int = 0, config: Optional[EngineConfig] = None,
                    workers: Optional[int] = None) -> AttributionReport:
    """Permutation-sampling Shapley estimate with per-feature errors.

    Walks ``permutations`` uniformly random feature orderings; each step
    re-estimates the value function from ``draws`` imputations and the
    step difference is credited to the entering feature.  Marginal
    references reuse one reference draw set along the whole walk (the
    conditional law never changes), other modes redraw per step.  The
    estimate is unbiased; standard errors come from the per-permutation
    contribution spread (ddof 1).  Fixed permutation count, no adaptive
    stopping.  Bit-reproducible for a fixed seed, any worker count.
    """
    config = config or EngineConfig()
    _check_aligned(model, ref, instance)
    if permutations < 1:
        raise EngineError("permutations must be >= 1")
    if draws < 1:
        raise EngineError("draws must be >= 1")
    m = model.schema.m
    program = compile_program(model)
    x = np.array(instance.values, dtype=np.float64)
    fx = float(backend.eval_rows(program, x.reshape(1, -1))[0])
    contributions = np.empty((permutations, m))
    base_vals = np.empty(permutations)

    if ref.mode == "marginal":
        src = ref.source

        def fill(start: int, stop: int):
            for s in range(start, stop, _CHUNK):
                e = min(s + _CHUNK, stop)
                orders = np.empty((e - s, m), dtype=np.int64)
                rows3 = np.empty((e - s, draws, m))
                for i, p in enumerate(range(s, e)):
                    orders[i] = stream(seed, "sampled.perm",
                                       p).permutation(m)
                    rows3[i] = sample(src, draws,
                                      stream(seed, "sampled.draw",
                                             p * (m + 1)))
                deltas, bases = backend.walk_chunk(program, rows3, orders,
                                                   x, fx)
                contributions[s:e] = deltas
                base_vals[s:e] = bases
    else:
        def order_fn(p: int) -> np.ndarray:
            return stream(seed, "sampled.perm", p).permutation(m)

        fill = _make_generic_fill(program, ref, x, fx, draws, seed, order_fn,
                                  contributions, base_vals)

    _run_chunks(fill, permutations, _resolve_workers(workers, config))
    return _sampled_report(
        model, mode_tag(ref),
        {"type": "sampled", "permutations": permutations, "draws": draws,
         "seed": seed},
        instance, contributions, base_vals, fx)


def _make_generic_fill(program, ref, x, fx, draws, seed, order_fn,
                       contributions, base_vals):
    """Walk permutations with per-step conditional redraws."""
    m = x.shape[0]

    def fill(start: int, stop: int):
        for p in range(start, stop):
            order = order_fn(p)
            rows = impute(ref, 0, x, draws,
                          stream(seed, "sampled.draw", p * (m + 1)))
            v_prev = backend.pairwise_sum(
                backend.eval_rows(program, rows)) / draws
            base_vals[p] = v_prev
            mask = 0
            for t in range(m):
                j = int(order[t])
                mask |= 1 << j
                if t == m - 1:
                    v = fx
                else:
                    rows = impute(ref, mask, x, draws,
                                  stream(seed, "sampled.draw",
                                         p * (m + 1) + t + 1))
                    v = backend.pairwise_sum(
                        backend.eval_rows(program, rows)) / draws
                contributions[p, j] = v - v_prev
                v_prev = v

    return fill


# --- ordering-restricted attribution ---------------------------------------


class _ExtensionCounter:
    """Linear-extension counting DP over subsets of graph nodes."""

    def __init__(self, graph: CausalGraph, schema: FeatureSchema):
        graph.check_schema(schema)
        m = schema.m
        self.m = m
        self.parents_mask = [0] * m
        self.children_mask = [0] * m
        for p, c in graph.edges:
            self.parents_mask[schema.index(c)] |= 1 << schema.index(p)
            self.children_mask[schema.index(p)] |= 1 << schema.index(c)
        self.full = (1 << m) - 1
        self._up: Dict[int, int] = {0: 1}
        self._down: Dict[int, int] = {0: 1}

    def count_up(self, remaining: int) -> int:
        """Extensions of the not-yet-placed set (parents outside it are
        considered placed)."""
        got = self._up.get(remaining)
        if got is not None:
            return got
        total = 0
        for v in range(self.m):
            bit = 1 << v
            if remaining & bit and not self.parents_mask[v] & remaining:
                total += self.count_up(remaining ^ bit)
        self._up[remaining] = total
        return total

    def count_down(self, placed: int) -> int:
        """Orderings of a downward-closed placed set."""
        got = self._down.get(placed)
        if got is not None:
            return got
        total = 0
        for v in range(self.m):
            bit = 1 << v
            if placed & bit and not self.children_mask[v] & placed:
                total += self.count_down(placed ^ bit)
        self._down[placed] = total
        return total

    def is_downset(self, mask: int) -> bool:
        for v in range(self.m):
            if mask >> v & 1 and self.parents_mask[v] & ~mask:
                return False
        return True

    def prefix_weight(self, mask: int, j: int) -> Optional[Fraction]:
        """P(prefix set = mask, next = j) under a uniform extension."""
        bit = 1 << j
        if mask & bit or not self.is_downset(mask):
            return None
        if self.parents_mask[j] & ~mask:
            return None
        rest = self.full ^ mask ^ bit
        return Fraction(self.count_down(mask) * self.count_up(rest),
                        self.count_up(self.full))

    def sample_order(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform linear extension via sequential DP probabilities."""
        order = np.empty(self.m, dtype=np.int64)
        remaining = self.full
        for t in range(self.m):
            total = float(self.count_up(remaining))
            r = rng.random() * total
            acc = 0.0
            picked = -1
            for v in range(self.m):
                bit = 1 << v
                if remaining & bit and not self.parents_mask[v] & remaining:
                    acc += float(self.count_up(remaining ^ bit))
                    picked = v
                    if r < acc:
                        break
            order[t] = picked
            remaining ^= 1 << picked
        return order


def asymmetric_shapley(model: ModelExpr, ref: ReferenceDistribution,
                       instance: Instance, graph: CausalGraph,
                       config: Optional[EngineConfig] = None,
                       estimator: str = "exact",
                       permutations: int = 10_000, draws: int = 32,
                       seed: int = 0,
                       workers: Optional[int] = None) -> AttributionReport:
    """Asymmetric Shapley: orderings restricted to the graph's linear
    extensions, value function conditional by observation.

    Causally upstream features are always inserted before their
    descendants, so upstream features absorb the effects they transmit.
    The exact path averages over all linear extensions through a subset
    DP (cutoff: config.max_ordering_features); the sampled path draws
    extensions uniformly.
    """
    config = config or EngineConfig()
    _check_aligned(model, ref, instance)
    if ref.mode not in ("conditional-empirical", "conditional-gaussian"):
        raise InvalidReferenceModeError(
            "asymmetric attribution needs a conditional reference, got "
            f"mode {ref.mode!r}")
    counter = _ExtensionCounter(graph, model.schema)
    m = model.schema.m
    estimator_meta = {"type": estimator, "orderings": "graph-restricted"}

    if estimator == "exact":
        if m > config.max_ordering_features:
            raise TooManyFeaturesError(m, config.max_ordering_features,
                                       what="linear-extension enumeration")
        provider = _ExactValueProvider(model, ref, instance, config)
        values = np.array([provider(mask) for mask in range(1 << m)])
        phi = np.empty(m)
        terms: List[float] = []
        for j in range(m):
            bit = 1 << j
            terms.clear()
            for mask in range(1 << m):
                if mask & bit:
                    continue
                w = counter.prefix_weight(mask, j)
                if w is not None:
                    terms.append(float(w) * (values[mask | bit]
                                             - values[mask]))
            phi[j] = backend.pairwise_sum(np.asarray(terms))
        estimator_meta.update(value_backend=provider.backend_name,
                              quadrature_order=config.quadrature_order)
        return AttributionReport(
            feature_names=model.schema.names,
            instance_values=np.array(instance.values),
            mode="asymmetric",
            estimator=estimator_meta,
            base=float(values[0]),
            phi=phi,
            model_output=provider.fx,
        )

    if estimator != "sampled":
        raise EngineError(f"unknown estimator {estimator!r}")
    if permutations < 1 or draws < 1:
        raise EngineError("permutations and draws must be >= 1")
    program = compile_program(model)
    x = np.array(instance.values, dtype=np.float64)
    fx = float(backend.eval_rows(program, x.reshape(1, -1))[0])
    contributions = np.empty((permutations, m))
    base_vals = np.empty(permutations)

    def order_fn(p: int) -> np.ndarray:
        return counter.sample_order(stream(seed, "sampled.order", p))

    fill = _make_generic_fill(program, ref, x, fx, draws, seed, order_fn,
                              contributions, base_vals)
    _run_chunks(fill, permutations, _resolve_workers(workers, config))
    estimator_meta.update(permutations=permutations, draws=draws, seed=seed)
    report = _sampled_report(model, "asymmetric", estimator_meta, instance,
                             contributions, base_vals, fx)
    return report


def causal_shapley(model: ModelExpr, ref: ReferenceDistribution,
                   instance: Instance, graph: Optional[CausalGraph] = None,
                   config: Optional[EngineConfig] = None,
                   estimator: str = "exact",
                   permutations: int = 10_000, draws: int = 32,
                   seed: int = 0,
                   workers: Optional[int] = None) -> AttributionReport:
    """Causal Shapley: symmetric orderings, interventional value function.

    The reference must be interventional-dag; ``graph`` may restate the
    reference's graph for clarity but must then be identical.
    """
    config = config or EngineConfig()
    if ref.mode != "interventional-dag":
        raise InvalidReferenceModeError(
            f"causal attribution needs an interventional-dag reference, "
            f"got mode {ref.mode!r}")
    if graph is not None and (graph.nodes != ref.graph.nodes
                              or set(graph.edges) != set(ref.graph.edges)):
        raise InvalidReferenceModeError(
            "graph argument disagrees with the reference's graph")
    if estimator == "exact":
        return replace(exact_shapley(model, ref, instance, config),
                       mode="causal")
    if estimator != "sampled":
        raise EngineError(f"unknown estimator {estimator!r}")
    return replace(
        sampled_shapley(model, ref, instance, permutations, draws, seed,
                        config, workers),
        mode="causal")


# --- per-coalition deltas ---------------------------------------------------


def coalition_deltas(model: ModelExpr, ref: ReferenceDistribution,
                     instance: Instance, feature: str,
                     config: Optional[EngineConfig] = None) -> DeltaReport:
    """Every contribution delta of one feature, with its Shapley weight.

    Surfaces cancellation: a feature whose attribution is near zero while
    individual coalition deltas are large is locally influential even
    though the weighted average hides it.  The report flags cancellation
    when max |delta| exceeds tau = cancellation_factor * max |v(S)| and
    |phi| is below cancellation_phi_ratio * max |delta|.
    """
    config = config or EngineConfig()
    m = model.schema.m
    if m > config.max_exact_features:
        raise TooManyFeaturesError(m, config.max_exact_features)
    j = model.schema.index(feature)
    bit = 1 << j
    provider = _ExactValueProvider(model, ref, instance, config)
    values = np.array([provider(mask) for mask in range(1 << m)])
    weights = shapley_coalition_weights(m)
    entries = []
    terms = np.empty(1 << (m - 1))
    k = 0
    for mask in range(1 << m):
        if mask & bit:
            continue
        delta = float(values[mask | bit] - values[mask])
        w = weights[mask.bit_count()]
        members = tuple(model.schema.features[i].name
                        for i in range(m) if mask >> i & 1)
        entries.append(DeltaEntry(members=members, weight=w, delta=delta))
        terms[k] = w * delta
        k += 1
    phi = float(backend.pairwise_sum(terms))
    max_abs_delta = max((abs(e.delta) for e in entries), default=0.0)
    tau = config.cancellation_factor * float(np.max(np.abs(values)))
    cancellation = (max_abs_delta > tau
                    and abs(phi) <= config.cancellation_phi_ratio
                    * max_abs_delta)
    return DeltaReport(
        feature=feature,
        mode=mode_tag(ref),
        entries=tuple(entries),
        phi=phi,
        tau=tau,
        max_abs_delta=max_abs_delta,
        cancellation=cancellation,
        base=float(values[0]),
        model_output=provider.fx,
    )
