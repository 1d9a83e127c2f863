"""Reference data sources.

Two kinds of source feed the attribution engine: an empirical
:class:`Dataset` (rows plus optional nonnegative weights) and a
:class:`ParametricSpec` (per-feature laws, independent unless a joint
Gaussian covariance couples the Normal features).  Both expose sampling;
parametric sources additionally expose deterministic quadrature rules.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple, Union

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

from .errors import (CsvFormatError, DataIoError, InvalidLawError,
                     NonNumericCellError, RaggedRowError,
                     UnsupportedLawError)
from .schema import Feature, FeatureSchema

# --- parametric laws -------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    """Uniform law on the open-ended interval [low, high), low < high."""

    low: float
    high: float

    def __post_init__(self):
        if not (np.isfinite(self.low) and np.isfinite(self.high)
                and self.low < self.high):
            raise InvalidLawError(
                f"Uniform needs low < high, got ({self.low}, {self.high})")


@dataclass(frozen=True)
class Normal:
    """Normal law with mean and standard deviation sd > 0."""

    mean: float
    sd: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.sd)
                and self.sd > 0):
            raise InvalidLawError(
                f"Normal needs sd > 0, got ({self.mean}, {self.sd})")


@dataclass(frozen=True)
class Bernoulli:
    """Bernoulli law; p is the probability of 1."""

    p: float

    def __post_init__(self):
        if not (np.isfinite(self.p) and 0.0 <= self.p <= 1.0):
            raise InvalidLawError(f"Bernoulli needs p in [0, 1], got {self.p}")


Law = Union[Uniform, Normal, Bernoulli]


def law_mean(law: Law) -> float:
    if isinstance(law, Uniform):
        return 0.5 * (law.low + law.high)
    if isinstance(law, Normal):
        return law.mean
    return law.p


def law_sd(law: Law) -> float:
    if isinstance(law, Uniform):
        return (law.high - law.low) / np.sqrt(12.0)
    if isinstance(law, Normal):
        return law.sd
    return float(np.sqrt(law.p * (1.0 - law.p)))


# --- empirical dataset -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Weighted empirical reference sample.

    rows is (n, m) float64 in schema column order; categorical cells hold
    0-based level indices.  weights default to uniform; they must be
    nonnegative with positive total.  Missing values are rejected up
    front: every cell must be finite.
    """

    schema: FeatureSchema
    rows: np.ndarray = field(repr=False)
    weights: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(
            np.asarray(self.rows, dtype=np.float64))
        if rows.ndim != 2 or rows.shape[1] != self.schema.m:
            raise InvalidLawError(
                f"rows must be (n, {self.schema.m}), got {rows.shape}")
        if rows.shape[0] < 1:
            raise InvalidLawError("dataset needs at least one row")
        if not np.isfinite(rows).all():
            raise InvalidLawError("dataset contains missing/non-finite cells")
        for i, f in enumerate(self.schema.features):
            col = rows[:, i]
            if f.kind == "binary" and not np.isin(col, (0.0, 1.0)).all():
                raise InvalidLawError(
                    f"binary column {f.name!r} has values outside {{0, 1}}")
            if f.kind == "categorical":
                if not ((col == np.floor(col)).all()
                        and col.min() >= 0
                        and col.max() < len(f.levels)):
                    raise InvalidLawError(
                        f"categorical column {f.name!r} has invalid levels")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

        if self.weights is None:
            w = np.full(rows.shape[0], 1.0 / rows.shape[0])
        else:
            w = np.ascontiguousarray(np.asarray(self.weights, np.float64))
            if w.shape != (rows.shape[0],):
                raise InvalidLawError("weights must be one per row")
            if not np.isfinite(w).all() or (w < 0).any():
                raise InvalidLawError("weights must be finite and nonnegative")
            total = w.sum()
            if total <= 0:
                raise InvalidLawError("weights must have positive total")
            w = w / total
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.rows.shape[0]


# --- parametric spec -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParametricSpec:
    """Closed-form reference distribution, one law per feature.

    Features are independent unless ``covariance`` is given, in which
    case all laws must be Normal and the joint law is the corresponding
    Gaussian.  The covariance must be symmetric positive semidefinite;
    singular covariances (perfectly collinear features) are accepted, the
    diagonal must agree with the per-law variances.
    """

    schema: FeatureSchema
    laws: Tuple[Law, ...]
    covariance: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(self.laws))
        if len(self.laws) != self.schema.m:
            raise InvalidLawError(
                f"need {self.schema.m} laws, got {len(self.laws)}")
        for f, law in zip(self.schema.features, self.laws):
            if f.kind == "categorical":
                raise InvalidLawError(
                    f"no parametric law for categorical feature {f.name!r}")
            if f.kind == "binary" and not isinstance(law, Bernoulli):
                raise InvalidLawError(
                    f"binary feature {f.name!r} needs a Bernoulli law")
            if f.kind == "continuous" and isinstance(law, Bernoulli):
                raise InvalidLawError(
                    f"continuous feature {f.name!r} cannot be Bernoulli")
        if self.covariance is not None:
            cov = np.ascontiguousarray(
                np.asarray(self.covariance, dtype=np.float64))
            m = self.schema.m
            if cov.shape != (m, m):
                raise InvalidLawError(f"covariance must be ({m}, {m})")
            if not all(isinstance(law, Normal) for law in self.laws):
                raise InvalidLawError(
                    "covariance coupling requires all-Normal laws")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise InvalidLawError("covariance must be symmetric")
            eig = np.linalg.eigvalsh(cov)
            scale = max(float(eig[-1]), 1.0)
            if eig[0] < -1e-10 * scale:
                raise InvalidLawError("covariance must be positive "
                                      f"semidefinite (min eigenvalue {eig[0]})")
            for i, law in enumerate(self.laws):
                if abs(cov[i, i] - law.sd ** 2) > 1e-9 * max(1.0, law.sd ** 2):
                    raise InvalidLawError(
                        f"covariance diagonal [{i}] disagrees with sd^2 of "
                        f"{self.schema.features[i].name!r}")
            cov.setflags(write=False)
            object.__setattr__(self, "covariance", cov)

    @cached_property
    def means(self) -> np.ndarray:
        return np.array([law_mean(law) for law in self.laws])

    @cached_property
    def _psd_factor(self) -> np.ndarray:
        return psd_factor(self.covariance)


Source = Union[Dataset, ParametricSpec]


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """A with A A^T = cov, via eigendecomposition; tolerates singular cov."""
    w, u = np.linalg.eigh(cov)
    w = np.clip(w, 0.0, None)
    return u * np.sqrt(w)


# --- CSV loading -----------------------------------------------------------


def load_csv(path, schema_inference: bool = True,
             schema: Optional[FeatureSchema] = None,
             weight_column: Optional[str] = None) -> Dataset:
    """Load a reference dataset from CSV.

    The first row must be a header of feature names.  With
    ``schema_inference`` on, a column whose values all lie in {0, 1}
    becomes binary and every other column continuous; with it off all
    columns are continuous.  Passing ``schema`` skips inference and
    validates the header against it (same names, same order).
    ``weight_column`` names an optional column of row weights that is not
    part of the schema.

    Raises
    ------
    DataIoError, RaggedRowError, NonNumericCellError
    """
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataIoError(f"{path}: empty file, header required")
            header = [h.strip() for h in header]
            raw = []
            for line_no, cells in enumerate(reader, start=2):
                if not cells:
                    continue  # blank trailing line
                if len(cells) != len(header):
                    raise RaggedRowError(line_no, len(header), len(cells))
                row = []
                for col_no, cell in enumerate(cells, start=1):
                    try:
                        row.append(float(cell))
                    except ValueError:
                        raise NonNumericCellError(line_no, col_no) from None
                raw.append(row)
    except OSError as exc:
        raise DataIoError(f"cannot read {path}: {exc}") from exc

    if not raw:
        raise DataIoError(f"{path}: no data rows")
    matrix = np.asarray(raw, dtype=np.float64)

    weights = None
    if weight_column is not None:
        if weight_column not in header:
            raise CsvFormatError(
                f"{path}: weight column {weight_column!r} not in header")
        wi = header.index(weight_column)
        weights = matrix[:, wi]
        keep = [i for i in range(len(header)) if i != wi]
        header = [header[i] for i in keep]
        matrix = matrix[:, keep]

    if schema is not None:
        if tuple(header) != schema.names:
            raise CsvFormatError(
                f"{path}: header {tuple(header)} does not match schema "
                f"{schema.names}")
    else:
        feats = []
        for i, name in enumerate(header):
            col = matrix[:, i]
            if schema_inference and np.isin(col, (0.0, 1.0)).all():
                feats.append(Feature(name, "binary"))
            else:
                feats.append(Feature(name, "continuous"))
        schema = FeatureSchema(tuple(feats))

    return Dataset(schema, matrix, weights)


# --- sampling --------------------------------------------------------------


def sample(source: Source, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` rows from a source; returns (count, m) float64.

    Datasets are resampled with replacement proportionally to their
    weights.  Parametric sources draw each feature from its law in schema
    order, or from the joint Gaussian when a covariance is present.
    Deterministic given the generator state.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if isinstance(source, Dataset):
        idx = rng.choice(source.n, size=count, replace=True, p=source.weights)
        return source.rows[idx].copy()

    m = source.schema.m
    if source.covariance is not None:
        z = rng.standard_normal((count, m))
        return source.means + z @ source._psd_factor.T
    out = np.empty((count, m), dtype=np.float64)
    for i, law in enumerate(source.laws):
        if isinstance(law, Uniform):
            out[:, i] = rng.uniform(law.low, law.high, count)
        elif isinstance(law, Normal):
            out[:, i] = law.mean + law.sd * rng.standard_normal(count)
        else:
            out[:, i] = (rng.random(count) < law.p).astype(np.float64)
    return out


# --- quadrature rules ------------------------------------------------------


def quadrature_nodes(spec: ParametricSpec, feature: str,
                     order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Probabilist-normalized quadrature rule for one feature's law.

    Gauss-Legendre for Uniform, Gauss-Hermite for Normal (scaled to the
    law's mean and sd; under a joint covariance the marginal sd is the
    diagonal entry).  A rule with k nodes integrates polynomials up to
    degree 2k-1 exactly against the law, and its weights sum to 1 within
    1e-12.  Bernoulli features are enumerated, not integrated; asking for
    a rule raises UnsupportedLawError.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    law = spec.laws[spec.schema.index(feature)]
    if isinstance(law, Bernoulli):
        raise UnsupportedLawError(
            f"feature {feature!r} is Bernoulli; enumerate {{0, 1}} with "
            "weights (1-p, p) instead of integrating")
    if isinstance(law, Uniform):
        return uniform_gauss_legendre(law.low, law.high, order)
    return normal_gauss_hermite(law.mean, law.sd, order)


def uniform_gauss_legendre(low: float, high: float,
                           order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule mapped to [low, high], weights summing to 1."""
    t, w = leggauss(order)
    nodes = 0.5 * (low + high) + 0.5 * (high - low) * t
    return nodes, 0.5 * w


def normal_gauss_hermite(mean: float, sd: float,
                         order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite rule scaled to N(mean, sd^2), weights summing to 1."""
    t, w = hermgauss(order)
    nodes = mean + sd * np.sqrt(2.0) * t
    return nodes, w / np.sqrt(np.pi)
