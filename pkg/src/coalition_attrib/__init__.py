"""Shapley feature attribution under interchangeable removal references.

Models are small arithmetic expressions over named features; coalitions
of dropped features are filled in from a marginal, conditional, or
interventional reference distribution; attributions come out exact (by
quadrature or enumeration) or sampled with standard errors.  See the
README for the expression grammar, the reference modes, and the CLI.
"""

from ._version import __version__
from .data import Bernoulli, Dataset, Normal, ParametricSpec, Uniform, load_csv
from .diagnostics import (FairnessScreenResult, ModeComparisonResult,
                          ValidationResult, compare_modes,
                          counterfactual_fairness_screen,
                          validate_properties)
from .dsl import ModelExpr, eval_model, parse_model, referenced_features, to_source
from .engine import (Coalition, EngineConfig, ValueFunctionEstimate,
                     asymmetric_shapley, causal_shapley, coalition_deltas,
                     exact_shapley, sampled_shapley, value_function)
from .errors import CoalitionAttribError
from .graph import CausalGraph
from .refdist import ReferenceDistribution
from .report import AttributionReport, DeltaReport, write_report
from .schema import Feature, FeatureSchema, Instance

__all__ = [
    "__version__",
    "AttributionReport",
    "Bernoulli",
    "CausalGraph",
    "Coalition",
    "CoalitionAttribError",
    "Dataset",
    "DeltaReport",
    "EngineConfig",
    "FairnessScreenResult",
    "Feature",
    "FeatureSchema",
    "Instance",
    "ModeComparisonResult",
    "ModelExpr",
    "Normal",
    "ParametricSpec",
    "ReferenceDistribution",
    "Uniform",
    "ValidationResult",
    "ValueFunctionEstimate",
    "asymmetric_shapley",
    "causal_shapley",
    "coalition_deltas",
    "compare_modes",
    "counterfactual_fairness_screen",
    "eval_model",
    "exact_shapley",
    "load_csv",
    "parse_model",
    "referenced_features",
    "sampled_shapley",
    "to_source",
    "validate_properties",
    "value_function",
    "write_report",
]
