"""Diagnostics built on top of the attribution engine.

Three screens: a counterfactual-fairness necessary check (marginal
attribution of a protected feature across a cohort), a marginal-versus-
conditional disagreement report for correlated features, and a property
validator that checks the Shapley axioms hold numerically for a given
model and reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import backend
from .data import Dataset, ParametricSpec
from .dsl import (Arith, Compare, Const, Extremum, Indicator, ModelExpr, Neg,
                  Power, Var, random_expr, referenced_features, swap_features)
from .engine import (EngineConfig, _ExactValueProvider, exact_shapley,
                     shapley_coalition_weights)
from .errors import EngineError, InvalidReferenceModeError
from .refdist import ReferenceDistribution
from .rng import stream
from .schema import Instance

FAIRNESS_CAVEAT = (
    "PASS is a necessary signal only, not a certificate: zero marginal "
    "attribution for the sensitive feature at every audited row does not "
    "establish counterfactual fairness of the underlying mechanism.")


def _phi_single(provider: _ExactValueProvider, m: int, j: int) -> float:
    weights = shapley_coalition_weights(m)
    bit = 1 << j
    terms = np.empty(1 << (m - 1))
    k = 0
    for mask in range(1 << m):
        if mask & bit:
            continue
        terms[k] = weights[mask.bit_count()] * (provider(mask | bit)
                                                - provider(mask))
        k += 1
    return float(backend.pairwise_sum(terms))


@dataclass(frozen=True)
class FairnessScreenResult:
    sensitive: str
    tolerance: float
    rows_total: int
    rows: Tuple[Tuple[int, float], ...]  # (row index, phi)
    verdict: str  # PASS | FAIL
    max_abs_phi: float
    caveat: str = FAIRNESS_CAVEAT

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_body(self) -> dict:
        return {
            "kind": "fairness-screen",
            "sensitive": self.sensitive,
            "tolerance": self.tolerance,
            "rows_total": self.rows_total,
            "rows_audited": len(self.rows),
            "rows": [{"row": int(i), "phi": float(phi)}
                     for i, phi in self.rows],
            "max_abs_phi": float(self.max_abs_phi),
            "verdict": self.verdict,
            "caveat": self.caveat,
        }


def counterfactual_fairness_screen(model: ModelExpr, dataset: Dataset,
                                   sensitive: str, tolerance: float = 1e-6,
                                   max_rows: int = 200, seed: int = 0,
                                   config: Optional[EngineConfig] = None
                                   ) -> FairnessScreenResult:
    """Audit the marginal attribution of a protected feature on a cohort.

    For every audited row the sensitive feature's marginal (do-operator)
    Shapley value is computed exactly; any magnitude above ``tolerance``
    fails the screen.  A nonzero value witnesses that intervening on the
    feature moves the model's output, so FAIL is actionable.  PASS is
    only a necessary condition and the result says so in its caveat:
    the screen examines the model at the audited inputs, not the process
    that generated the data.

    Cohorts larger than ``max_rows`` are subsampled without replacement,
    deterministically in ``seed``.
    """
    config = config or EngineConfig()
    j = dataset.schema.index(sensitive)
    n = dataset.n
    if n <= max_rows:
        picked = np.arange(n)
    else:
        rng = stream(seed, "fairness.rows")
        picked = np.sort(rng.choice(n, size=max_rows, replace=False))
    ref = ReferenceDistribution("marginal", dataset)
    m = dataset.schema.m
    audited: List[Tuple[int, float]] = []
    for i in picked:
        instance = Instance(dataset.schema, dataset.rows[int(i)])
        provider = _ExactValueProvider(model, ref, instance, config)
        audited.append((int(i), _phi_single(provider, m, j)))
    max_abs = max((abs(phi) for _, phi in audited), default=0.0)
    verdict = "PASS" if max_abs <= tolerance else "FAIL"
    return FairnessScreenResult(
        sensitive=sensitive, tolerance=tolerance, rows_total=n,
        rows=tuple(audited), verdict=verdict, max_abs_phi=max_abs)


@dataclass(frozen=True)
class ModeComparisonResult:
    feature_names: Tuple[str, ...]
    gap_threshold: float
    instances: int
    per_feature_gap: Tuple[float, ...]
    flagged: Tuple[str, ...]
    max_gap: float
    marginal_phi: Tuple[Tuple[float, ...], ...]  # per instance
    conditional_phi: Tuple[Tuple[float, ...], ...]

    def to_body(self) -> dict:
        features = []
        for i, name in enumerate(self.feature_names):
            features.append({
                "name": name,
                "max_gap": float(self.per_feature_gap[i]),
                "flagged": name in self.flagged,
                "phi_marginal": [float(row[i]) for row in self.marginal_phi],
                "phi_conditional": [float(row[i])
                                    for row in self.conditional_phi],
            })
        return {
            "kind": "mode-comparison",
            "gap_threshold": self.gap_threshold,
            "instances": self.instances,
            "max_gap": float(self.max_gap),
            "flagged": list(self.flagged),
            "features": features,
        }


def compare_modes(model: ModelExpr, marginal_ref: ReferenceDistribution,
                  conditional_ref: ReferenceDistribution,
                  instances: Sequence[Instance],
                  gap_threshold: float = 0.1,
                  config: Optional[EngineConfig] = None
                  ) -> ModeComparisonResult:
    """Exact attributions under both removal semantics, side by side.

    Correlated features make the choice of reference load-bearing: the
    marginal (interventional) reading credits only features the model
    reads, the conditional reading spreads credit across correlated
    proxies.  A feature is flagged when the two disagree by more than
    ``gap_threshold`` at any of the given instances.  Flagged features
    mean the explanation depends on the removal semantics, so the mode
    should be chosen for the question at hand rather than by default.
    """
    config = config or EngineConfig()
    if marginal_ref.mode != "marginal":
        raise InvalidReferenceModeError(
            f"first reference must be marginal, got {marginal_ref.mode!r}")
    if conditional_ref.mode not in ("conditional-empirical",
                                    "conditional-gaussian"):
        raise InvalidReferenceModeError(
            "second reference must be conditional, got "
            f"{conditional_ref.mode!r}")
    if not instances:
        raise EngineError("compare_modes needs at least one instance")
    marg_rows = []
    cond_rows = []
    for instance in instances:
        marg_rows.append(tuple(
            exact_shapley(model, marginal_ref, instance, config).phi))
        cond_rows.append(tuple(
            exact_shapley(model, conditional_ref, instance, config).phi))
    names = model.schema.names
    gaps = tuple(
        max(abs(mr[i] - cr[i]) for mr, cr in zip(marg_rows, cond_rows))
        for i in range(len(names)))
    flagged = tuple(name for name, gap in zip(names, gaps)
                    if gap > gap_threshold)
    return ModeComparisonResult(
        feature_names=names, gap_threshold=gap_threshold,
        instances=len(instances), per_feature_gap=gaps, flagged=flagged,
        max_gap=max(gaps), marginal_phi=tuple(marg_rows),
        conditional_phi=tuple(cond_rows))


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    status: str  # pass | fail | not-applicable
    worst_error: Optional[float]
    detail: str


@dataclass(frozen=True)
class ValidationResult:
    checks: Tuple[PropertyCheck, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def to_body(self) -> dict:
        return {
            "kind": "validation",
            "tolerance": self.tolerance,
            "passed": self.passed,
            "properties": [
                {"property": c.name, "status": c.status,
                 "worst_error": (None if c.worst_error is None
                                 else float(c.worst_error)),
                 "detail": c.detail}
                for c in self.checks
            ],
        }


def _commutative_key(node) -> tuple:
    """Canonical tuple for an AST, sorting commutative operand pairs."""
    if isinstance(node, Const):
        return ("const", node.value)
    if isinstance(node, Var):
        return ("var", node.index)
    if isinstance(node, Neg):
        return ("neg", _commutative_key(node.operand))
    if isinstance(node, Indicator):
        return ("ind", _commutative_key(node.operand))
    if isinstance(node, Power):
        return ("pow", _commutative_key(node.base), node.exponent)
    if isinstance(node, Arith):
        left, right = (_commutative_key(node.left),
                       _commutative_key(node.right))
        if node.op in "+*" and right < left:
            left, right = right, left
        return ("arith", node.op, left, right)
    if isinstance(node, Compare):
        left, right = (_commutative_key(node.left),
                       _commutative_key(node.right))
        if node.op == "==" and right < left:
            left, right = right, left
        return ("cmp", node.op, left, right)
    assert isinstance(node, Extremum)
    left, right = _commutative_key(node.left), _commutative_key(node.right)
    if right < left:
        left, right = right, left
    return ("ext", node.op, left, right)


def _symmetric_positions(model: ModelExpr,
                         ref: ReferenceDistribution) -> List[Tuple[int, int]]:
    """Position pairs that are exchangeable in both model and reference.

    Model invariance is decided structurally: swapping the two names must
    give back the same AST up to reordering of commutative operands.
    This misses algebraic identities across different tree shapes, which
    only makes the check conservative (never wrongly applicable).
    """
    schema = model.schema
    src = ref.source
    reference_key = _commutative_key(model.root)
    pairs = []
    for i in range(schema.m):
        for j in range(i + 1, schema.m):
            fi, fj = schema.features[i], schema.features[j]
            if fi.kind != fj.kind or fi.levels != fj.levels:
                continue
            swapped = swap_features(model, fi.name, fj.name)
            if _commutative_key(swapped.root) != reference_key:
                continue
            if _source_exchangeable(src, i, j):
                pairs.append((i, j))
    return pairs


def _source_exchangeable(src, i: int, j: int) -> bool:
    if isinstance(src, Dataset):
        rows = src.rows
        swapped = rows.copy()
        swapped[:, [i, j]] = swapped[:, [j, i]]
        order_a = np.lexsort(rows.T[::-1])
        order_b = np.lexsort(swapped.T[::-1])
        return (np.array_equal(rows[order_a], swapped[order_b])
                and np.allclose(src.weights[order_a],
                                src.weights[order_b], atol=1e-12))
    spec: ParametricSpec = src
    if spec.laws[i] != spec.laws[j]:
        return False
    if spec.covariance is None:
        return True
    perm = np.arange(spec.schema.m)
    perm[[i, j]] = perm[[j, i]]
    permuted = spec.covariance[np.ix_(perm, perm)]
    return np.allclose(permuted, spec.covariance, atol=1e-12)


def _dummy_positions(model: ModelExpr,
                     ref: ReferenceDistribution) -> Tuple[List[int], str]:
    """Positions whose attribution must be exactly zero, or a reason."""
    schema = model.schema
    used = referenced_features(model)
    unused = [i for i in range(schema.m)
              if schema.features[i].name not in used]
    if ref.mode in ("conditional-empirical", "conditional-gaussian"):
        return [], ("conditional references violate the dummy axiom by "
                    "design: an unread feature still moves the "
                    "conditional law of correlated read features")
    if not unused:
        return [], "every feature is read by the model"
    if ref.mode == "interventional-dag":
        kept = []
        for i in unused:
            name = schema.features[i].name
            downstream = ref.graph.descendants([name])
            if not downstream & used:
                kept.append(i)
        if not kept:
            return [], ("no unread feature without read causal "
                        "descendants; interventions on such features "
                        "legitimately move the output")
        return kept, ""
    return unused, ""


def validate_properties(model: ModelExpr, ref: ReferenceDistribution,
                        instances: Sequence[Instance], seed: int = 0,
                        tolerance: float = 1e-9,
                        config: Optional[EngineConfig] = None
                        ) -> ValidationResult:
    """Numerically check the Shapley axioms on exact attributions.

    Efficiency and linearity are always checkable.  Symmetry needs a
    position pair that both the model and the source treat exchangeably,
    and only binds at instances giving the pair equal values.  The dummy
    axiom needs a feature the model never reads, and is skipped outright
    for conditional references (where it fails by design, which is a
    property of the mode, not a bug).  Checks that cannot bind are
    reported not-applicable rather than silently passed.
    """
    config = config or EngineConfig()
    if not instances:
        raise EngineError("validate_properties needs at least one instance")
    schema = model.schema
    reports = [exact_shapley(model, ref, instance, config)
               for instance in instances]
    checks: List[PropertyCheck] = []

    worst = max(abs(r.efficiency_residual()) for r in reports)
    checks.append(PropertyCheck(
        "efficiency", "pass" if worst <= tolerance else "fail", worst,
        "model_output equals base plus the attribution total"))

    pairs = _symmetric_positions(model, ref)
    sym_errors = []
    for i, j in pairs:
        for instance, report in zip(instances, reports):
            if instance.values[i] == instance.values[j]:
                sym_errors.append(abs(report.phi[i] - report.phi[j]))
    if not pairs:
        checks.append(PropertyCheck(
            "symmetry", "not-applicable", None,
            "no feature pair is exchangeable in both model and source"))
    elif not sym_errors:
        checks.append(PropertyCheck(
            "symmetry", "not-applicable", None,
            "exchangeable pairs exist but no instance gives them equal "
            "values"))
    else:
        worst = max(sym_errors)
        checks.append(PropertyCheck(
            "symmetry", "pass" if worst <= tolerance else "fail", worst,
            f"{len(pairs)} exchangeable pair(s) get equal attributions"))

    dummies, reason = _dummy_positions(model, ref)
    if not dummies:
        checks.append(PropertyCheck("dummy", "not-applicable", None, reason))
    else:
        worst = max(abs(report.phi[i]) for report in reports
                    for i in dummies)
        names = ", ".join(schema.features[i].name for i in dummies)
        checks.append(PropertyCheck(
            "dummy", "pass" if worst <= tolerance else "fail", worst,
            f"unread features ({names}) get zero attribution"))

    partner = ModelExpr(
        random_expr(schema, stream(seed, "validate.partner"), depth=3),
        schema)
    a, b = 1.25, -0.75
    combined = ModelExpr(
        Arith("+", Arith("*", Const(a), model.root),
              Arith("*", Const(b), partner.root)), schema)
    lin_errors = []
    for instance in instances:
        phi_f = exact_shapley(model, ref, instance, config).phi
        phi_g = exact_shapley(partner, ref, instance, config).phi
        phi_c = exact_shapley(combined, ref, instance, config).phi
        lin_errors.append(float(np.max(np.abs(
            phi_c - (a * phi_f + b * phi_g)))))
    worst = max(lin_errors)
    checks.append(PropertyCheck(
        "linearity", "pass" if worst <= tolerance else "fail", worst,
        "attributions of 1.25*f - 0.75*g combine linearly"))

    return ValidationResult(checks=tuple(checks), tolerance=tolerance)
