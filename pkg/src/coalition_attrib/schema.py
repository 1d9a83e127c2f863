"""Feature schemas and observed instances.

A :class:`FeatureSchema` is an ordered list of named features, each
continuous, binary, or categorical with an explicit level list.  All data
structures downstream (datasets, parametric sources, instances, reports)
are indexed by schema position, so the schema fixes both the dimension M
and the meaning of every column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Tuple

import numpy as np

from .errors import (ConfigError, MissingFeatureError, UnknownFeatureError)

KINDS = ("continuous", "binary", "categorical")

# names claimed by the model DSL; a feature with one of these names would be
# unparseable as a bare reference
RESERVED_NAMES = frozenset({"indicator", "min", "max"})

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*\Z")


@dataclass(frozen=True)
class Feature:
    """One named feature.

    Parameters
    ----------
    name : str
        Identifier, unique within a schema.  Must match
        ``[A-Za-z_][A-Za-z_0-9]*`` and not collide with DSL builtins.
    kind : str
        One of ``"continuous"``, ``"binary"``, ``"categorical"``.
    levels : tuple of str, optional
        Level labels, required iff kind is categorical.  Categorical cells
        are stored as 0-based level indices.
    """

    name: str
    kind: str = "continuous"
    levels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise ConfigError("features", f"invalid feature name {self.name!r}")
        if self.name in RESERVED_NAMES:
            raise ConfigError(
                "features", f"feature name {self.name!r} is a DSL builtin")
        if self.kind not in KINDS:
            raise ConfigError(
                "features", f"unknown feature kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels or len(self.levels) < 2:
                raise ConfigError(
                    "features",
                    f"categorical feature {self.name!r} needs >= 2 levels")
            object.__setattr__(self, "levels", tuple(self.levels))
        elif self.levels is not None:
            raise ConfigError(
                "features",
                f"levels given for non-categorical feature {self.name!r}")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list; the shared coordinate system of a run."""

    features: Tuple[Feature, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if len(self.features) < 1:
            raise ConfigError("features", "schema needs at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(
                "features", f"duplicate feature name(s): {', '.join(dupes)}")

    @cached_property
    def _index(self) -> dict:
        return {f.name: i for i, f in enumerate(self.features)}

    @property
    def m(self) -> int:
        return len(self.features)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownFeatureError(0, name) from None

    def feature(self, name: str) -> Feature:
        return self.features[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def kinds(self) -> Tuple[str, ...]:
        return tuple(f.kind for f in self.features)

    def validate_value(self, i: int, value: float, where: str = "instance"):
        """Check a single cell against feature i; raise ConfigError if bad."""
        f = self.features[i]
        if not np.isfinite(value):
            raise ConfigError(where, f"non-finite value for {f.name!r}")
        if f.kind == "binary" and value not in (0.0, 1.0):
            raise ConfigError(
                where, f"binary feature {f.name!r} must be 0 or 1, got {value}")
        if f.kind == "categorical":
            if value != int(value) or not (0 <= int(value) < len(f.levels)):
                raise ConfigError(
                    where,
                    f"categorical feature {f.name!r} takes level indices "
                    f"0..{len(f.levels) - 1}, got {value}")


@dataclass(frozen=True, eq=False)
class Instance:
    """A single observation x to be explained, complete under its schema."""

    schema: FeatureSchema
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.schema.m,):
            raise ConfigError(
                "instance",
                f"expected {self.schema.m} values, got shape {vals.shape}")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        for i in range(self.schema.m):
            self.schema.validate_value(i, float(vals[i]))

    @classmethod
    def from_mapping(cls, schema: FeatureSchema,
                     mapping: Mapping[str, float]) -> "Instance":
        for name in mapping:
            if name not in schema:
                raise UnknownFeatureError(0, name)
        vals = np.empty(schema.m, dtype=np.float64)
        for i, f in enumerate(schema.features):
            if f.name not in mapping:
                raise MissingFeatureError(f.name)
            vals[i] = float(mapping[f.name])
        return cls(schema, vals)

    def as_mapping(self) -> dict:
        return {f.name: float(self.values[i])
                for i, f in enumerate(self.schema.features)}

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.schema.index(name)])
