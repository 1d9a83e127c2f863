"""Deterministic integration of model expectations.

Value functions over parametric sources are tensor-product quadratures:
one probabilist-normalized rule per dropped feature, Gauss-Legendre for
Uniform, Gauss-Hermite for Normal, {0, 1} enumeration for Bernoulli.
Indicator models are only piecewise polynomial, so a rule's integration
range is split at the model's axis-aligned breakpoints before applying
the rule per segment; Normal ranges are clipped at 8.5 sigma (truncated
mass below 1e-16) and integrated per segment against the density with a
dense Gauss-Legendre rule.  Discontinuities not of the simple
``feature OP constant`` form cannot be split this way; those features
fall back to a dense undivided rule and accuracy is then approximate
(documented limitation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

from . import backend
from .data import Bernoulli, Normal, ParametricSpec, Uniform
from .dsl import Program
from .errors import QuadratureUnavailableError
from .refdist import gaussian_conditional

_CLIP_SIGMA = 8.5
_MAX_SEGMENT_SIGMA = 4.0


@lru_cache(maxsize=64)
def _leggauss(order: int):
    return leggauss(order)


@lru_cache(maxsize=64)
def _hermgauss(order: int):
    return hermgauss(order)


@dataclass(frozen=True, eq=False)
class FeatureRule:
    nodes: np.ndarray
    weights: np.ndarray


def _segments(lo: float, hi: float, cuts: Sequence[float],
              max_width: Optional[float]) -> List[Tuple[float, float]]:
    points = [lo] + [c for c in sorted(set(cuts)) if lo < c < hi] + [hi]
    out = []
    for u, v in zip(points[:-1], points[1:]):
        if max_width is None or v - u <= max_width:
            out.append((u, v))
        else:
            pieces = math.ceil((v - u) / max_width)
            edges = np.linspace(u, v, pieces + 1)
            out.extend(zip(edges[:-1], edges[1:]))
    return out


def uniform_rule(law: Uniform, cuts: Sequence[float],
                 order: int) -> FeatureRule:
    t, w = _leggauss(order)
    nodes, weights = [], []
    for u, v in _segments(law.low, law.high, cuts, None):
        nodes.append(0.5 * (u + v) + 0.5 * (v - u) * t)
        weights.append(w * (v - u) / (2.0 * (law.high - law.low)))
    return FeatureRule(np.concatenate(nodes), np.concatenate(weights))


def normal_segment_rule(law: Normal, cuts: Sequence[float],
                        order: int) -> FeatureRule:
    """Density-weighted Gauss-Legendre over breakpoint-split segments."""
    t, w = _leggauss(order)
    lo = law.mean - _CLIP_SIGMA * law.sd
    hi = law.mean + _CLIP_SIGMA * law.sd
    norm = 1.0 / (law.sd * math.sqrt(2.0 * math.pi))
    nodes, weights = [], []
    for u, v in _segments(lo, hi, cuts, _MAX_SEGMENT_SIGMA * law.sd):
        z = 0.5 * (u + v) + 0.5 * (v - u) * t
        pdf = norm * np.exp(-0.5 * ((z - law.mean) / law.sd) ** 2)
        nodes.append(z)
        weights.append(w * (v - u) / 2.0 * pdf)
    return FeatureRule(np.concatenate(nodes), np.concatenate(weights))


def feature_rule(law, cuts: Sequence[float], rough: bool, order: int,
                 dense_order: int) -> FeatureRule:
    """Quadrature/enumeration rule for one dropped feature."""
    if isinstance(law, Bernoulli):
        return FeatureRule(np.array([0.0, 1.0]),
                           np.array([1.0 - law.p, law.p]))
    if isinstance(law, Uniform):
        if rough:
            return uniform_rule(law, cuts, max(order, dense_order))
        return uniform_rule(law, cuts, order)
    if cuts or rough:
        return normal_segment_rule(law, cuts, max(order, dense_order))
    t, w = _hermgauss(order)
    return FeatureRule(law.mean + law.sd * math.sqrt(2.0) * t,
                       w / math.sqrt(math.pi))


def _tensor(rules: Sequence[FeatureRule],
            max_nodes: int) -> Tuple[List[np.ndarray], np.ndarray]:
    total = 1
    for r in rules:
        total *= r.nodes.size
        if total > max_nodes:
            raise QuadratureUnavailableError(
                f"quadrature grid exceeds {max_nodes} nodes; lower the "
                "order or use the sampled estimator")
    cols: List[np.ndarray] = []
    weights = np.ones(1)
    block = total
    for r in rules:
        k = r.nodes.size
        block //= k
        reps = total // (k * block)
        cols.append(np.tile(np.repeat(r.nodes, block), reps))
        weights = (weights[:, None] * r.weights[None, :]).ravel()
    return cols, weights


def tensor_value(program: Program, x: np.ndarray, mask: int,
                 spec: ParametricSpec,
                 thresholds: Dict[int, Tuple[float, ...]],
                 rough: FrozenSet[int], order: int, dense_order: int,
                 max_nodes: int) -> float:
    """v(S) under an independent parametric source, by tensor quadrature."""
    m = spec.schema.m
    dropped = [j for j in range(m) if not mask >> j & 1]
    if not dropped:
        return float(backend.eval_rows(program, x.reshape(1, -1))[0])
    rules = [feature_rule(spec.laws[j], thresholds.get(j, ()), j in rough,
                          order, dense_order) for j in dropped]
    cols, weights = _tensor(rules, max_nodes)
    rows = np.tile(x, (weights.size, 1))
    for j, col in zip(dropped, cols):
        rows[:, j] = col
    vals = backend.eval_rows(program, rows)
    return (backend.pairwise_sum(weights * vals)
            / backend.pairwise_sum(weights))


def gaussian_conditional_value(program: Program, x: np.ndarray, mask: int,
                               spec: ParametricSpec, has_discontinuity: bool,
                               order: int, dense_order: int,
                               max_nodes: int) -> float:
    """v(S) under the exact Gaussian conditional, by rotated quadrature.

    The conditional covariance is eigendecomposed; Gauss-Hermite runs
    along each principal axis with positive variance, degenerate axes
    collapse to their mean.  Polynomial models integrate exactly; models
    with discontinuities get a dense rule but the breakpoints are not
    axis-aligned after rotation, so accuracy is approximate there.
    """
    m = spec.schema.m
    dropped = [j for j in range(m) if not mask >> j & 1]
    if not dropped:
        return float(backend.eval_rows(program, x.reshape(1, -1))[0])
    mean, cov, b_idx = gaussian_conditional(spec, mask, x)
    eig, axes = np.linalg.eigh(cov)
    scale = max(float(eig[-1]), 0.0)
    k = max(order, dense_order) if has_discontinuity else order
    t, w = _hermgauss(k)
    rules = []
    for lam in eig:
        if scale <= 0.0 or lam < 1e-14 * scale:
            rules.append(FeatureRule(np.zeros(1), np.ones(1)))
        else:
            rules.append(FeatureRule(math.sqrt(2.0 * lam) * t,
                                     w / math.sqrt(math.pi)))
    cols, weights = _tensor(rules, max_nodes)
    z = np.stack(cols, axis=1)  # principal-axis coordinates
    block = mean + z @ axes.T
    rows = np.tile(x, (weights.size, 1))
    rows[:, list(b_idx)] = block
    vals = backend.eval_rows(program, rows)
    return (backend.pairwise_sum(weights * vals)
            / backend.pairwise_sum(weights))
