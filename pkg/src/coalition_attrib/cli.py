"""Batch command line interface.

Every run is driven by a JSON config file; command line flags only
override run circumstances (seed, output, format, workers), never the
analysis itself.  Subcommands:

    explain          Shapley attributions for one observation
    deltas           per-coalition contribution breakdown of one feature
    fairness-screen  marginal attribution audit of a protected feature
    compare-modes    marginal versus conditional attribution gaps
    validate         numeric check of the Shapley axioms

Exit codes: 0 success, 1 invalid configuration or data, 2 computation
failure.  Errors are reported as one JSON object per line on stderr.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import backend
from ._version import __version__
from .data import (Bernoulli, Dataset, Normal, ParametricSpec, Uniform,
                   load_csv)
from .diagnostics import (compare_modes, counterfactual_fairness_screen,
                          validate_properties)
from .dsl import ModelExpr, parse_model
from .engine import (EngineConfig, asymmetric_shapley, causal_shapley,
                     coalition_deltas, exact_shapley, sampled_shapley)
from .errors import CoalitionAttribError, ConfigError
from .graph import CausalGraph
from .refdist import ReferenceDistribution
from .report import write_report
from .schema import Feature, FeatureSchema, Instance

_COMMANDS = ("explain", "deltas", "fairness-screen", "compare-modes",
             "validate")

_TOP_KEYS = ("model", "features", "data", "reference", "instance",
             "instances", "estimator", "seed", "quadrature_order",
             "workers", "options", "output", "format")

_OPTION_KEYS = {
    "explain": ("combination",),
    "deltas": ("feature", "cancellation_factor", "cancellation_phi_ratio"),
    "fairness-screen": ("sensitive", "tolerance", "max_rows"),
    "compare-modes": ("gap_threshold",),
    "validate": ("tolerance",),
}


def _check_keys(mapping: dict, allowed: Sequence[str], path: str):
    for key in mapping:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, "unknown key")


def _expect(condition: bool, path: str, message: str):
    if not condition:
        raise ConfigError(path, message)


def _number(value, path: str) -> float:
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool),
            path, "expected a number")
    return float(value)


def _integer(value, path: str) -> int:
    _expect(isinstance(value, int) and not isinstance(value, bool),
            path, "expected an integer")
    return value


def load_config(path: str) -> dict:
    """Read and minimally shape-check a run config file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            cfg = json.load(handle)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}")
    _expect(isinstance(cfg, dict), "config", "top level must be an object")
    _check_keys(cfg, _TOP_KEYS, "")
    return cfg


# --- section builders ------------------------------------------------------


def _build_schema(cfg: dict) -> Optional[FeatureSchema]:
    spec = cfg.get("features")
    if spec is None:
        return None
    _expect(isinstance(spec, list) and spec, "features",
            "expected a non-empty list of feature objects")
    feats = []
    for i, item in enumerate(spec):
        where = f"features[{i}]"
        _expect(isinstance(item, dict), where, "expected an object")
        _check_keys(item, ("name", "kind", "levels"), where)
        _expect("name" in item, where, "missing name")
        name = item["name"]
        _expect(isinstance(name, str), f"{where}.name", "expected a string")
        kind = item.get("kind", "continuous")
        levels = item.get("levels")
        if levels is not None:
            _expect(isinstance(levels, list)
                    and all(isinstance(v, str) for v in levels),
                    f"{where}.levels", "expected a list of level labels")
            levels = tuple(levels)
        feats.append(Feature(name=name, kind=kind, levels=levels))
    return FeatureSchema(tuple(feats))


_LAW_BUILDERS = {
    "uniform": lambda v, p: Uniform(_number(v[0], p), _number(v[1], p))
    if isinstance(v, list) and len(v) == 2
    else _bad_law(p, "uniform expects [low, high]"),
    "normal": lambda v, p: Normal(_number(v[0], p), _number(v[1], p))
    if isinstance(v, list) and len(v) == 2
    else _bad_law(p, "normal expects [mean, sd]"),
    "bernoulli": lambda v, p: Bernoulli(_number(v, p)),
}


def _bad_law(path: str, message: str):
    raise ConfigError(path, message)


def _build_law(spec, path: str):
    _expect(isinstance(spec, dict) and len(spec) == 1, path,
            "expected exactly one of uniform, normal, bernoulli")
    (kind, value), = spec.items()
    _expect(kind in _LAW_BUILDERS, f"{path}.{kind}", "unknown law")
    return _LAW_BUILDERS[kind](value, f"{path}.{kind}")


def _build_source(cfg: dict, schema: Optional[FeatureSchema],
                  base_dir: str):
    """Returns (source, schema); schema may be inferred from the data."""
    data = cfg.get("data")
    _expect(isinstance(data, dict), "data", "expected an object")
    _check_keys(data, ("csv", "parametric"), "data")
    _expect(("csv" in data) != ("parametric" in data), "data",
            "expected exactly one of csv, parametric")

    if "csv" in data:
        spec = data["csv"]
        if isinstance(spec, str):
            spec = {"path": spec}
        _expect(isinstance(spec, dict), "data.csv",
                "expected a path or an object")
        _check_keys(spec, ("path", "weight_column", "schema_inference"),
                    "data.csv")
        _expect("path" in spec, "data.csv", "missing path")
        path = os.path.join(base_dir, spec["path"])
        dataset = load_csv(
            path,
            schema_inference=spec.get("schema_inference", schema is None),
            schema=schema,
            weight_column=spec.get("weight_column"))
        return dataset, dataset.schema

    spec = data["parametric"]
    _expect(isinstance(spec, dict), "data.parametric", "expected an object")
    _check_keys(spec, ("laws", "covariance"), "data.parametric")
    laws_cfg = spec.get("laws")
    _expect(isinstance(laws_cfg, dict) and laws_cfg, "data.parametric.laws",
            "expected a mapping of feature name to law")
    if schema is None:
        feats = []
        for name, law_spec in laws_cfg.items():
            law = _build_law(law_spec, f"data.parametric.laws.{name}")
            kind = "binary" if isinstance(law, Bernoulli) else "continuous"
            feats.append(Feature(name=name, kind=kind))
        schema = FeatureSchema(tuple(feats))
    laws = []
    for feat in schema.features:
        _expect(feat.name in laws_cfg, "data.parametric.laws",
                f"missing law for feature {feat.name!r}")
        laws.append(_build_law(laws_cfg[feat.name],
                               f"data.parametric.laws.{feat.name}"))
    _expect(len(laws_cfg) == schema.m, "data.parametric.laws",
            "law provided for an unknown feature")
    cov = spec.get("covariance")
    if cov is not None:
        _expect(isinstance(cov, list), "data.parametric.covariance",
                "expected a matrix as a list of rows")
        cov = np.asarray(cov, dtype=np.float64)
        _expect(cov.ndim == 2, "data.parametric.covariance",
                "expected a matrix as a list of rows")
    return ParametricSpec(schema, tuple(laws), covariance=cov), schema


def _build_graph(spec, base_dir: str) -> CausalGraph:
    if isinstance(spec, str):
        return CausalGraph.load(os.path.join(base_dir, spec))
    if isinstance(spec, dict):
        return CausalGraph.from_mapping(spec)
    raise ConfigError("reference.graph",
                      "expected a file path or a graph object")


@dataclass
class _Reference:
    mode_name: str  # marginal | conditional | asymmetric | causal
    ref: ReferenceDistribution
    graph: Optional[CausalGraph]


def _conditional_ref(source, bandwidth, neighbors) -> ReferenceDistribution:
    if isinstance(source, Dataset):
        return ReferenceDistribution("conditional-empirical", source,
                                     bandwidth=bandwidth,
                                     neighbors=neighbors)
    all_normal = all(isinstance(law, Normal) for law in source.laws)
    _expect(all_normal, "reference.mode",
            "conditional removal over a parametric source needs "
            "all-normal laws")
    _expect(bandwidth is None and neighbors is None, "reference.bandwidth",
            "bandwidth and neighbors only apply to dataset sources")
    return ReferenceDistribution("conditional-gaussian", source)


def _build_reference(cfg: dict, source, base_dir: str) -> _Reference:
    spec = cfg.get("reference", {"mode": "marginal"})
    _expect(isinstance(spec, dict), "reference", "expected an object")
    _check_keys(spec, ("mode", "bandwidth", "neighbors", "graph"),
                "reference")
    mode = spec.get("mode", "marginal")
    _expect(mode in ("marginal", "conditional", "asymmetric", "causal"),
            "reference.mode",
            "expected marginal, conditional, asymmetric, or causal")
    bandwidth = spec.get("bandwidth")
    if bandwidth is not None:
        bandwidth = _number(bandwidth, "reference.bandwidth")
    neighbors = spec.get("neighbors")
    if neighbors is not None:
        neighbors = _integer(neighbors, "reference.neighbors")
    graph = None
    if "graph" in spec:
        graph = _build_graph(spec["graph"], base_dir)

    if mode == "marginal":
        _expect(graph is None, "reference.graph",
                "marginal removal takes no graph")
        _expect(bandwidth is None and neighbors is None,
                "reference.bandwidth",
                "bandwidth and neighbors only apply to conditional "
                "removal over a dataset")
        return _Reference(mode, ReferenceDistribution("marginal", source),
                          None)
    if mode == "conditional":
        _expect(graph is None, "reference.graph",
                "conditional removal takes no graph")
        return _Reference(mode,
                          _conditional_ref(source, bandwidth, neighbors),
                          None)
    _expect(graph is not None, "reference.graph",
            f"{mode} attribution needs a causal graph")
    if mode == "asymmetric":
        return _Reference(mode,
                          _conditional_ref(source, bandwidth, neighbors),
                          graph)
    ref = ReferenceDistribution("interventional-dag", source,
                                bandwidth=bandwidth, neighbors=neighbors,
                                graph=graph)
    return _Reference(mode, ref, graph)


def _build_instance(form, schema: FeatureSchema, source,
                    path: str) -> Instance:
    if isinstance(form, dict):
        if set(form) == {"row"}:
            row = _integer(form["row"], f"{path}.row")
            _expect(isinstance(source, Dataset), f"{path}.row",
                    "row lookup needs csv data")
            _expect(0 <= row < source.n, f"{path}.row",
                    f"row {row} out of range for {source.n} rows")
            return Instance(schema, source.rows[row])
        return Instance.from_mapping(schema, form)
    if isinstance(form, list):
        _expect(len(form) == schema.m, path,
                f"expected {schema.m} values, got {len(form)}")
        values = [_number(v, f"{path}[{i}]") for i, v in enumerate(form)]
        return Instance(schema, np.asarray(values))
    raise ConfigError(path, "expected a mapping of feature values, a "
                            "{\"row\": i} reference, or a list")


def _build_instances(cfg: dict, schema: FeatureSchema, source,
                     required: bool) -> List[Instance]:
    if "instances" in cfg:
        forms = cfg["instances"]
        _expect(isinstance(forms, list) and forms, "instances",
                "expected a non-empty list")
        return [_build_instance(form, schema, source, f"instances[{i}]")
                for i, form in enumerate(forms)]
    if "instance" in cfg:
        return [_build_instance(cfg["instance"], schema, source, "instance")]
    if required:
        raise ConfigError("instance", "this command needs an instance")
    return []


def _build_estimator(cfg: dict) -> dict:
    spec = cfg.get("estimator", {"kind": "exact"})
    _expect(isinstance(spec, dict), "estimator", "expected an object")
    _check_keys(spec, ("kind", "permutations", "draws"), "estimator")
    kind = spec.get("kind", "exact")
    _expect(kind in ("exact", "sampled"), "estimator.kind",
            "expected exact or sampled")
    if kind == "exact":
        _check_keys(spec, ("kind",), "estimator")
        return {"kind": "exact"}
    permutations = _integer(spec.get("permutations", 2000),
                            "estimator.permutations")
    draws = _integer(spec.get("draws", 32), "estimator.draws")
    _expect(permutations >= 1, "estimator.permutations", "must be >= 1")
    _expect(draws >= 1, "estimator.draws", "must be >= 1")
    return {"kind": "sampled", "permutations": permutations, "draws": draws}


def _build_options(cfg: dict, command: str) -> dict:
    options = cfg.get("options", {})
    _expect(isinstance(options, dict), "options", "expected an object")
    _check_keys(options, _OPTION_KEYS[command], "options")
    return options


# --- per-command planning --------------------------------------------------


@dataclass
class _Plan:
    execute: Callable[[], dict]
    output: Optional[str]
    fmt: str
    metadata: dict


def _engine_config(cfg: dict, options: dict,
                   workers: Optional[int]) -> EngineConfig:
    kwargs = {}
    if "quadrature_order" in cfg:
        order = _integer(cfg["quadrature_order"], "quadrature_order")
        _expect(order >= 1, "quadrature_order", "must be >= 1")
        kwargs["quadrature_order"] = order
    if workers is not None:
        kwargs["workers"] = workers
    for key in ("cancellation_factor", "cancellation_phi_ratio"):
        if key in options:
            kwargs[key] = _number(options[key], f"options.{key}")
    return EngineConfig(**kwargs)


def _prepare(args: argparse.Namespace) -> _Plan:
    cfg = load_config(args.config)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    command = args.command
    options = _build_options(cfg, command)

    seed = cfg.get("seed", 0)
    seed = _integer(seed, "seed")
    if args.seed is not None:
        seed = args.seed
    workers = args.workers
    if workers is None and "workers" in cfg:
        workers = _integer(cfg["workers"], "workers")
    fmt = cfg.get("format", "json")
    _expect(fmt in ("json", "csv"), "format", "expected json or csv")
    if args.format is not None:
        fmt = args.format
    output = args.output
    if output is None and "output" in cfg:
        output = cfg["output"]
        _expect(isinstance(output, str), "output", "expected a path")
        # config-relative, so a config directory stays self-contained;
        # the --output flag resolves against the caller's cwd as usual
        if not os.path.isabs(output):
            output = os.path.join(base_dir, output)

    engine_config = _engine_config(cfg, options, workers)

    schema = _build_schema(cfg)
    source, schema = _build_source(cfg, schema, base_dir)

    model_spec = cfg.get("model")
    _expect(model_spec is not None, "model", "missing model expression")
    if isinstance(model_spec, dict):
        _check_keys(model_spec, ("file",), "model")
        _expect("file" in model_spec, "model", "expected a string or "
                                               "{\"file\": path}")
        try:
            with open(os.path.join(base_dir, model_spec["file"]),
                      encoding="utf-8") as handle:
                model_text = handle.read()
        except OSError as exc:
            raise ConfigError("model.file", str(exc))
    else:
        _expect(isinstance(model_spec, str), "model",
                "expected a string or {\"file\": path}")
        model_text = model_spec
    model = parse_model(model_text, schema)

    estimator = _build_estimator(cfg)

    metadata = {
        "command": command,
        "created_at": datetime.datetime.now(datetime.timezone.utc)
        .isoformat(),
        "package_version": __version__,
        "kernel_backend": backend.ACTIVE,
        "seed": seed,
        "workers": workers,
        "config": os.path.abspath(args.config),
    }

    if command == "explain":
        reference = _build_reference(cfg, source, base_dir)
        instance = _build_instances(cfg, schema, source, required=True)[0]
        execute = _plan_explain(model, reference, instance, estimator, seed,
                                engine_config, workers, options)
    elif command == "deltas":
        reference = _build_reference(cfg, source, base_dir)
        _expect(reference.mode_name != "asymmetric", "reference.mode",
                "deltas support marginal, conditional, and causal modes")
        _expect(estimator["kind"] == "exact", "estimator.kind",
                "deltas are exact only")
        _expect("feature" in options, "options.feature",
                "missing feature to break down")
        instance = _build_instances(cfg, schema, source, required=True)[0]
        feature = options["feature"]
        _expect(isinstance(feature, str), "options.feature",
                "expected a feature name")
        schema.index(feature)  # unknown name fails during preparation
        execute = (lambda: coalition_deltas(
            model, reference.ref, instance, feature,
            engine_config).to_body())
    elif command == "fairness-screen":
        _expect(isinstance(source, Dataset), "data",
                "fairness screening audits a csv cohort")
        _expect(estimator["kind"] == "exact", "estimator.kind",
                "the fairness screen is exact only")
        _expect("sensitive" in options, "options.sensitive",
                "missing sensitive feature name")
        sensitive = options["sensitive"]
        _expect(isinstance(sensitive, str), "options.sensitive",
                "expected a feature name")
        schema.index(sensitive)
        tolerance = _number(options.get("tolerance", 1e-6),
                            "options.tolerance")
        max_rows = _integer(options.get("max_rows", 200),
                            "options.max_rows")
        execute = (lambda: counterfactual_fairness_screen(
            model, source, sensitive, tolerance=tolerance,
            max_rows=max_rows, seed=seed, config=engine_config).to_body())
    elif command == "compare-modes":
        _expect(estimator["kind"] == "exact", "estimator.kind",
                "mode comparison is exact only")
        spec = cfg.get("reference", {})
        _expect(isinstance(spec, dict), "reference", "expected an object")
        _check_keys(spec, ("mode", "bandwidth", "neighbors"), "reference")
        _expect(spec.get("mode", "conditional") == "conditional",
                "reference.mode",
                "mode comparison builds its own marginal and conditional "
                "references; only conditional parameters apply")
        bandwidth = spec.get("bandwidth")
        if bandwidth is not None:
            bandwidth = _number(bandwidth, "reference.bandwidth")
        neighbors = spec.get("neighbors")
        if neighbors is not None:
            neighbors = _integer(neighbors, "reference.neighbors")
        marginal_ref = ReferenceDistribution("marginal", source)
        conditional_ref = _conditional_ref(source, bandwidth, neighbors)
        instances = _build_instances(cfg, schema, source, required=True)
        gap = _number(options.get("gap_threshold", 0.1),
                      "options.gap_threshold")
        execute = (lambda: compare_modes(
            model, marginal_ref, conditional_ref, instances,
            gap_threshold=gap, config=engine_config).to_body())
    else:  # validate
        reference = _build_reference(cfg, source, base_dir)
        _expect(reference.mode_name != "asymmetric", "reference.mode",
                "axiom validation covers the symmetric operator; use "
                "marginal, conditional, or causal")
        _expect(estimator["kind"] == "exact", "estimator.kind",
                "axiom validation is exact only")
        instances = _build_instances(cfg, schema, source, required=True)
        tolerance = _number(options.get("tolerance", 1e-9),
                            "options.tolerance")
        execute = (lambda: validate_properties(
            model, reference.ref, instances, seed=seed,
            tolerance=tolerance, config=engine_config).to_body())

    return _Plan(execute=execute, output=output, fmt=fmt, metadata=metadata)


def _plan_explain(model: ModelExpr, reference: _Reference,
                  instance: Instance, estimator: dict, seed: int,
                  engine_config: EngineConfig, workers: Optional[int],
                  options: dict) -> Callable[[], dict]:
    sampled = estimator["kind"] == "sampled"
    combination = options.get("combination", "weighted")
    _expect(combination in ("weighted", "grouped"), "options.combination",
            "expected weighted or grouped")

    def execute() -> dict:
        if reference.mode_name == "asymmetric":
            if sampled:
                report = asymmetric_shapley(
                    model, reference.ref, instance, reference.graph,
                    engine_config, estimator="sampled",
                    permutations=estimator["permutations"],
                    draws=estimator["draws"], seed=seed, workers=workers)
            else:
                report = asymmetric_shapley(
                    model, reference.ref, instance, reference.graph,
                    engine_config)
        elif reference.mode_name == "causal":
            if sampled:
                report = causal_shapley(
                    model, reference.ref, instance, reference.graph,
                    engine_config, estimator="sampled",
                    permutations=estimator["permutations"],
                    draws=estimator["draws"], seed=seed, workers=workers)
            else:
                report = causal_shapley(model, reference.ref, instance,
                                        reference.graph, engine_config)
        elif sampled:
            report = sampled_shapley(
                model, reference.ref, instance,
                estimator["permutations"], estimator["draws"], seed=seed,
                config=engine_config, workers=workers)
        else:
            report = exact_shapley(model, reference.ref, instance,
                                   engine_config, combination=combination)
        return report.to_body()

    return execute


# --- entry point -----------------------------------------------------------


def _emit_error(exc: BaseException, stage: str):
    payload = {"error": type(exc).__name__, "message": str(exc),
               "stage": stage}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coalition-attrib",
        description="Shapley attribution for expression models under "
                    "interchangeable feature-removal references.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "explain": "attribute one observation's prediction to features",
        "deltas": "break one feature's attribution into coalition deltas",
        "fairness-screen": "audit a protected feature across a cohort",
        "compare-modes": "contrast marginal and conditional attributions",
        "validate": "check the Shapley axioms numerically",
    }
    for name in _COMMANDS:
        cmd = sub.add_parser(name, help=helps[name])
        cmd.add_argument("--config", required=True,
                         help="JSON run configuration")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--output", default=None,
                         help="report path (default: config output or "
                              "stdout)")
        cmd.add_argument("--format", choices=("json", "csv"), default=None,
                         help="report format (default: config format or "
                              "json)")
        cmd.add_argument("--workers", type=int, default=None,
                         help="worker threads for sampling (results do "
                              "not depend on this)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        plan = _prepare(args)
    except CoalitionAttribError as exc:
        _emit_error(exc, "configuration")
        return 1
    try:
        body = plan.execute()
    except CoalitionAttribError as exc:
        _emit_error(exc, "computation")
        return 2
    try:
        write_report(body, path=plan.output, fmt=plan.fmt,
                     metadata=plan.metadata)
    except OSError as exc:
        _emit_error(exc, "output")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
