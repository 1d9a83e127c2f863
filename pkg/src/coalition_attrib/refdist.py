"""Reference distributions: what "removing a feature" means.

A value function evaluates the model with the out-of-coalition features
replaced by draws from a reference distribution.  The four modes differ
in what that distribution is:

marginal
    Out-of-coalition features keep their joint source distribution,
    ignoring the observed values (the do-operator on the coalition).
    Breaks correlations by construction.
conditional-empirical
    Out-of-coalition features are drawn from dataset rows reweighted by
    similarity to the observation on the coalition: exact match on
    binary/categorical coordinates, a Gaussian kernel on continuous ones,
    restricted to the top-k weighted rows.
conditional-gaussian
    Exact conditional of a joint Gaussian parametric source.
interventional-dag
    Ancestral sampling under do(coalition = observation): coalition
    members are clamped, their non-descendants keep the source
    distribution, and descendants are redrawn from their parent
    conditionals in topological order.

Kernel bandwidth defaults to the Silverman rule 1.06 sigma n^(-1/5) per
continuous feature and the neighbor count to max(20, ceil(sqrt(n)));
both can be overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from .data import Dataset, Normal, ParametricSpec, Source, psd_factor, sample
from .errors import (InvalidReferenceModeError, NoSupportError,
                     QuadratureUnavailableError)
from .graph import CausalGraph
from .schema import FeatureSchema

MODES = ("marginal", "conditional-empirical", "conditional-gaussian",
         "interventional-dag")


def _mask_indices(mask: int, m: int) -> Tuple[int, ...]:
    return tuple(j for j in range(m) if mask >> j & 1)


@dataclass(frozen=True, eq=False)
class ReferenceDistribution:
    """A feature-removal semantics bound to a data source.

    Parameters
    ----------
    mode : str
        One of :data:`MODES`.
    source : Dataset or ParametricSpec
    bandwidth : float, optional
        Kernel bandwidth override (> 0) shared by all continuous
        features; empirical conditioning only.
    neighbors : int, optional
        Top-k restriction override (>= 1); empirical conditioning only.
    graph : CausalGraph, optional
        Required for interventional-dag; nodes must equal the schema.
    """

    mode: str
    source: Source
    bandwidth: Optional[float] = None
    neighbors: Optional[int] = None
    graph: Optional[CausalGraph] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidReferenceModeError(
                f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise InvalidReferenceModeError("bandwidth must be > 0")
        if self.neighbors is not None and self.neighbors < 1:
            raise InvalidReferenceModeError("neighbors must be >= 1")
        uses_kernel = self.mode == "conditional-empirical" or (
            self.mode == "interventional-dag"
            and isinstance(self.source, Dataset))
        if not uses_kernel and (self.bandwidth is not None
                                or self.neighbors is not None):
            raise InvalidReferenceModeError(
                f"bandwidth/neighbors do not apply to mode {self.mode!r}")
        if self.mode == "conditional-empirical" and not isinstance(
                self.source, Dataset):
            raise InvalidReferenceModeError(
                "conditional-empirical requires a dataset source")
        if self.mode == "conditional-gaussian":
            if not isinstance(self.source, ParametricSpec) or not all(
                    isinstance(law, Normal) for law in self.source.laws):
                raise InvalidReferenceModeError(
                    "conditional-gaussian requires an all-Normal "
                    "parametric source")
        if self.mode == "interventional-dag":
            if self.graph is None:
                raise InvalidReferenceModeError(
                    "interventional-dag requires a causal graph")
            self.graph.check_schema(self.schema)
        elif self.graph is not None:
            raise InvalidReferenceModeError(
                f"a causal graph does not apply to mode {self.mode!r}")

    @property
    def schema(self) -> FeatureSchema:
        return self.source.schema

    @cached_property
    def bandwidths(self) -> np.ndarray:
        """Per-feature kernel bandwidths; 0 means exact match."""
        m = self.schema.m
        out = np.zeros(m)
        if not isinstance(self.source, Dataset):
            return out
        rows = self.source.rows
        n = self.source.n
        for i, f in enumerate(self.schema.features):
            if f.kind != "continuous":
                continue
            if self.bandwidth is not None:
                out[i] = self.bandwidth
            else:
                sd = float(np.std(rows[:, i], ddof=1)) if n > 1 else 0.0
                out[i] = 1.06 * sd * n ** (-0.2)
        return out

    @cached_property
    def neighbor_count(self) -> int:
        if not isinstance(self.source, Dataset):
            return 0
        if self.neighbors is not None:
            return min(self.neighbors, self.source.n)
        return min(max(20, math.ceil(math.sqrt(self.source.n))),
                   self.source.n)


# --- empirical conditioning ------------------------------------------------


def conditional_weights(ref: ReferenceDistribution, mask: int,
                        x: np.ndarray) -> np.ndarray:
    """Unnormalized row weights for conditioning on x over the coalition."""
    src = ref.source
    w = np.array(src.weights, dtype=np.float64)
    h = ref.bandwidths
    for i in _mask_indices(mask, ref.schema.m):
        col = src.rows[:, i]
        if ref.schema.features[i].kind != "continuous" or h[i] == 0.0:
            w *= (col == x[i])
        else:
            z = (col - x[i]) / h[i]
            w *= np.exp(-0.5 * z * z)
    return w


def conditional_support(ref: ReferenceDistribution, mask: int,
                        x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Top-k conditioned support: (row indices, normalized probabilities).

    The empty coalition applies no kernel, so every row stays in play
    and the law coincides with the marginal.  Raises NoSupportError when
    every row weight vanishes.
    """
    w = conditional_weights(ref, mask, x)
    k = ref.source.n if mask == 0 else ref.neighbor_count
    return _topk_support(w, k, ref.schema, mask, x)


def _topk_support(w: np.ndarray, k: int, schema, mask: int,
                  x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-w, kind="stable")[:k]
    keep = order[w[order] > 0.0]
    if keep.size == 0:
        members = ", ".join(
            f"{schema.features[i].name}={x[i]}"
            for i in _mask_indices(mask, schema.m))
        raise NoSupportError(
            f"no reference rows carry weight after conditioning on {members}")
    probs = w[keep] / w[keep].sum()
    return keep, probs


# --- gaussian conditioning -------------------------------------------------


def gaussian_conditional(spec: ParametricSpec, mask: int,
                         x: np.ndarray) -> Tuple[np.ndarray, np.ndarray,
                                                 Tuple[int, ...]]:
    """Conditional law of the dropped block given the coalition block.

    Returns (mean, covariance, dropped feature indices).  The pseudo-
    inverse handles singular coalition blocks (perfectly correlated
    features), in which case the conditional collapses onto the
    consistent affine subspace.
    """
    m = spec.schema.m
    mu = spec.means
    cov = spec.covariance
    if cov is None:
        cov = np.diag([law.sd ** 2 for law in spec.laws])
    a_idx = np.array(_mask_indices(mask, m), dtype=np.intp)
    b_idx = np.array([j for j in range(m) if not mask >> j & 1],
                     dtype=np.intp)
    if a_idx.size == 0:
        return mu[b_idx], cov[np.ix_(b_idx, b_idx)], tuple(b_idx)
    caa = cov[np.ix_(a_idx, a_idx)]
    cba = cov[np.ix_(b_idx, a_idx)]
    gain = cba @ np.linalg.pinv(caa, hermitian=True)
    mean = mu[b_idx] + gain @ (x[a_idx] - mu[a_idx])
    cc = cov[np.ix_(b_idx, b_idx)] - gain @ cba.T
    cc = 0.5 * (cc + cc.T)
    return mean, cc, tuple(b_idx)


# --- imputation ------------------------------------------------------------


def impute_marginal(ref: ReferenceDistribution, mask: int, x: np.ndarray,
                    count: int, rng: np.random.Generator) -> np.ndarray:
    """Coalition clamped to x, everything else drawn from the source."""
    rows = sample(ref.source, count, rng)
    for i in _mask_indices(mask, ref.schema.m):
        rows[:, i] = x[i]
    return rows


def impute_conditional(ref: ReferenceDistribution, mask: int, x: np.ndarray,
                       count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw the dropped block conditionally on the coalition block."""
    if ref.mode == "conditional-gaussian":
        mean, cov, b_idx = gaussian_conditional(ref.source, mask, x)
        rows = np.tile(x, (count, 1))
        if len(b_idx):
            z = rng.standard_normal((count, len(b_idx)))
            rows[:, list(b_idx)] = mean + z @ psd_factor(cov).T
        return rows
    keep, probs = conditional_support(ref, mask, x)
    idx = rng.choice(keep, size=count, replace=True, p=probs)
    rows = ref.source.rows[idx].copy()
    for i in _mask_indices(mask, ref.schema.m):
        rows[:, i] = x[i]
    return rows


def impute_interventional_dag(ref: ReferenceDistribution, mask: int,
                              x: np.ndarray, count: int,
                              rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling under do(coalition = x).

    Non-descendants of the coalition keep their joint source draw;
    descendants are redrawn in topological order from their parent
    conditionals (empirical kernel conditionals for datasets, exact
    Gaussian conditionals for covariance-coupled parametric sources).
    """
    schema = ref.schema
    graph = ref.graph
    s_names = {schema.features[i].name
               for i in _mask_indices(mask, schema.m)}
    rows = sample(ref.source, count, rng)
    for i in _mask_indices(mask, schema.m):
        rows[:, i] = x[i]
    desc = graph.descendants(s_names)
    if not desc:
        return rows
    src = ref.source
    if isinstance(src, ParametricSpec) and src.covariance is None:
        # independent features: the marginal redraw already in place is
        # exactly the parent conditional
        return rows
    for name in graph.topological_order:
        if name not in desc:
            continue
        d = schema.index(name)
        pa_idx = [schema.index(p) for p in graph.parents(name)]
        if isinstance(src, ParametricSpec):
            rows[:, d] = _gaussian_node_draw(src, d, pa_idx,
                                             rows[:, pa_idx], rng)
        else:
            rows[:, d] = _empirical_node_draw(ref, d, pa_idx, rows, s_names,
                                              rng)
    return rows


def _gaussian_node_draw(spec: ParametricSpec, d: int, pa_idx, pa_vals,
                        rng: np.random.Generator) -> np.ndarray:
    count = pa_vals.shape[0]
    cov = spec.covariance
    mu = spec.means
    if not pa_idx:
        return mu[d] + math.sqrt(cov[d, d]) * rng.standard_normal(count)
    cpp = cov[np.ix_(pa_idx, pa_idx)]
    cdp = cov[d, pa_idx]
    gain = cdp @ np.linalg.pinv(cpp, hermitian=True)
    mean = mu[d] + (pa_vals - mu[pa_idx]) @ gain
    var = max(float(cov[d, d] - gain @ cdp), 0.0)
    return mean + math.sqrt(var) * rng.standard_normal(count)


def _empirical_node_draw(ref: ReferenceDistribution, d: int, pa_idx,
                         rows: np.ndarray, s_names,
                         rng: np.random.Generator) -> np.ndarray:
    """Per-row draw of node d from its empirical parent conditional.

    Rows sharing a parent tuple are grouped so the kernel weights are
    computed once per distinct parent value combination.
    """
    src = ref.source
    schema = ref.schema
    count = rows.shape[0]
    out = np.empty(count)
    pa_block = rows[:, pa_idx]
    uniq, inverse = np.unique(pa_block, axis=0, return_inverse=True)
    pa_mask = 0
    for i in pa_idx:
        pa_mask |= 1 << i
    for g in range(uniq.shape[0]):
        member = np.flatnonzero(inverse == g)
        xg = np.zeros(schema.m)
        xg[pa_idx] = uniq[g]
        w = conditional_weights(ref, pa_mask, xg)
        keep, probs = _topk_support(w, ref.neighbor_count, schema,
                                    pa_mask, xg)
        picked = rng.choice(keep, size=member.size, replace=True, p=probs)
        out[member] = src.rows[picked, d]
    return out


def impute(ref: ReferenceDistribution, mask: int, x: np.ndarray, count: int,
           rng: np.random.Generator) -> np.ndarray:
    """Mode dispatch; rows have the coalition clamped to x exactly."""
    if ref.mode == "marginal":
        return impute_marginal(ref, mask, x, count, rng)
    if ref.mode in ("conditional-empirical", "conditional-gaussian"):
        return impute_conditional(ref, mask, x, count, rng)
    return impute_interventional_dag(ref, mask, x, count, rng)


# --- exact interventional support ------------------------------------------


def interventional_support(ref: ReferenceDistribution, mask: int,
                           x: np.ndarray, max_terms: int
                           ) -> Tuple[np.ndarray, np.ndarray]:
    """Exact weighted enumeration of do(coalition = x) over a dataset.

    Every source row seeds a branch carrying its weight; each descendant
    of the coalition then splits the branch over its conditional support
    given the branch's realized parent values.  Returns (rows, weights)
    with weights summing to 1.

    Raises QuadratureUnavailableError when the source is parametric with
    a coupling covariance (no closed enumeration) or when the branch
    count would exceed ``max_terms``.
    """
    schema = ref.schema
    src = ref.source
    if isinstance(src, ParametricSpec):
        raise QuadratureUnavailableError(
            "exact interventional enumeration needs a dataset source")
    s_idx = _mask_indices(mask, schema.m)
    s_names = {schema.features[i].name for i in s_idx}
    rows = src.rows.copy()
    for i in s_idx:
        rows[:, i] = x[i]
    weights = np.array(src.weights, dtype=np.float64)
    desc = ref.graph.descendants(s_names)
    # cache: parent-value tuple -> (values of d, probabilities)
    for name in ref.graph.topological_order:
        if name not in desc:
            continue
        d = schema.index(name)
        pa_idx = [schema.index(p) for p in ref.graph.parents(name)]
        pa_mask = 0
        for i in pa_idx:
            pa_mask |= 1 << i
        support_cache: dict = {}
        new_rows = []
        new_weights = []
        total = 0
        for b in range(rows.shape[0]):
            key = tuple(rows[b, pa_idx])
            if key not in support_cache:
                xg = np.zeros(schema.m)
                xg[pa_idx] = key
                w = conditional_weights(ref, pa_mask, xg)
                keep, probs = _topk_support(w, ref.neighbor_count, schema,
                                            pa_mask, xg)
                support_cache[key] = (src.rows[keep, d], probs)
            vals, probs = support_cache[key]
            total += vals.size
            if total > max_terms:
                raise QuadratureUnavailableError(
                    "interventional enumeration exceeds "
                    f"{max_terms} terms; use the sampled estimator")
            block = np.tile(rows[b], (vals.size, 1))
            block[:, d] = vals
            new_rows.append(block)
            new_weights.append(weights[b] * probs)
        rows = np.concatenate(new_rows, axis=0)
        weights = np.concatenate(new_weights)
    return rows, weights / weights.sum()
