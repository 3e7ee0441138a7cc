"""Datasets, model specifications and estimate containers."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ParseError, UnknownColumnError, ValidationError


class Dataset:
    """Immutable column table of ``n`` real-valued observations.

    Columns are float64 arrays flagged read-only. Binary columns are declared
    by the caller and validated to hold only 0.0 / 1.0. Latent columns are
    kept for oracle computations but can never be referenced by a model.
    """

    def __init__(
        self,
        columns: Mapping[str, Iterable[float]],
        binary: Iterable[str] = (),
        latent: Iterable[str] = (),
    ):
        if not columns:
            raise ValidationError("dataset needs at least one column")
        cols: dict[str, np.ndarray] = {}
        n = None
        for name, values in columns.items():
            arr = np.array(values, dtype=float)
            if arr.ndim != 1:
                raise ValidationError(f"column {name!r} is not one-dimensional")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValidationError(
                    f"column {name!r} has {arr.shape[0]} entries, expected {n}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"column {name!r} has missing or non-finite values")
            arr.flags.writeable = False
            cols[name] = arr
        if n < 1:
            raise ValidationError("dataset must have at least one row")

        binary = frozenset(binary)
        latent = frozenset(latent)
        for name in binary | latent:
            if name not in cols:
                raise UnknownColumnError(name)
        for name in binary:
            v = cols[name]
            if not np.all((v == 0.0) | (v == 1.0)):
                raise ValidationError(f"binary column {name!r} has values outside {{0, 1}}")

        self._columns = cols
        self._n = int(n)
        self._binary = binary
        self._latent = latent
        # memo slots: canonical row order and unweighted GLM fits
        self._canonical: tuple[Dataset, np.ndarray] | None = None
        self._is_canonical = False
        self._fit_cache: dict = {}

    @property
    def n(self) -> int:
        return self._n

    @property
    def names(self) -> list[str]:
        return list(self._columns)

    @property
    def binary(self) -> frozenset[str]:
        return self._binary

    @property
    def latent(self) -> frozenset[str]:
        return self._latent

    @property
    def columns(self) -> Mapping[str, np.ndarray]:
        return dict(self._columns)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise UnknownColumnError(name) from None

    def __contains__(self, name: object) -> bool:
        return name in self._columns

    def __len__(self) -> int:
        return self._n

    def __repr__(self) -> str:
        return f"Dataset(n={self._n}, columns={self.names})"

    def is_binary(self, name: str) -> bool:
        self[name]
        return name in self._binary

    def require(self, names: Iterable[str]) -> None:
        """Raise if any name is missing or refers to a latent column."""
        for name in names:
            self[name]
            if name in self._latent:
                raise ValidationError(f"column {name!r} is latent and cannot be used by an estimator")

    def take(self, rows: np.ndarray) -> "Dataset":
        """New dataset made of the given row indices (repeats allowed)."""
        rows = np.asarray(rows)
        cols = {k: v[rows] for k, v in self._columns.items()}
        return Dataset._trusted(cols, self._binary, self._latent)

    def observed(self) -> "Dataset":
        """Copy without latent columns."""
        cols = {k: v for k, v in self._columns.items() if k not in self._latent}
        return Dataset._trusted(cols, self._binary - self._latent, frozenset())

    def with_columns(self, new: Mapping[str, Iterable[float]], binary: Iterable[str] = ()) -> "Dataset":
        cols = dict(self._columns)
        cols.update(new)
        return Dataset(cols, binary=set(self._binary) | set(binary), latent=self._latent)

    def canonical(self) -> tuple["Dataset", np.ndarray]:
        """Rows sorted lexicographically, plus the permutation used.

        Estimators work on this view so that their output does not depend on
        the order in which rows were supplied. ``perm[i]`` is the original
        index of sorted row ``i``.
        """
        if self._is_canonical:
            return self, np.arange(self._n)
        if self._canonical is None:
            keys = [self._columns[k] for k in sorted(self._columns, reverse=True)]
            perm = np.lexsort(keys)
            view = self.take(perm)
            view._is_canonical = True
            self._canonical = (view, perm)
        return self._canonical

    @classmethod
    def _trusted(cls, cols, binary, latent) -> "Dataset":
        # skips validation for subsets of an already-validated dataset
        obj = cls.__new__(cls)
        for v in cols.values():
            v.flags.writeable = False
        obj._columns = cols
        obj._n = int(next(iter(cols.values())).shape[0])
        obj._binary = frozenset(binary)
        obj._latent = frozenset(latent)
        obj._canonical = None
        obj._is_canonical = False
        obj._fit_cache = {}
        if obj._n < 1:
            raise ValidationError("dataset must have at least one row")
        return obj


def load_csv(path: str | Path, binary_columns: Sequence[str] = ()) -> Dataset:
    """Read a numeric CSV with a header row."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise ValidationError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: missing or non-finite values are not supported")
    return Dataset({h: data[:, j] for j, h in enumerate(header)}, binary=binary_columns)


def write_csv(data: Dataset, path: str | Path, include_latent: bool = True) -> None:
    names = [k for k in data.names if include_latent or k not in data.latent]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        cols = [data[k] for k in names]
        for i in range(data.n):
            writer.writerow([format(c[i], ".17g") for c in cols])


class ModelKind(str, enum.Enum):
    BACKDOOR = "backdoor"
    FRONTDOOR = "frontdoor"
    IV = "iv"


class EstimatorStyle(str, enum.Enum):
    INFLUENCE = "influence"
    PLUGIN = "plugin"


@dataclass(frozen=True)
class ModelSpec:
    """A candidate identification model and the variables its test uses.

    ``adjustment`` is the backdoor adjustment set W for backdoor models and
    the baseline covariates C for frontdoor and IV models. ``anchor`` is the
    anchor variable Z (the instrument itself for IV). IV models carry the
    mediators too, because their validity test reuses the frontdoor
    constraint.
    """

    kind: ModelKind
    treatment: str
    outcome: str
    anchor: str
    adjustment: tuple[str, ...] = ()
    mediators: tuple[str, ...] = ()
    label: str = ""
    estimator: EstimatorStyle = EstimatorStyle.PLUGIN

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "estimator", EstimatorStyle(self.estimator))
        object.__setattr__(self, "adjustment", tuple(self.adjustment))
        object.__setattr__(self, "mediators", tuple(self.mediators))
        if not self.label:
            object.__setattr__(self, "label", self.kind.value)
        if not self.anchor:
            raise ValidationError(f"{self.label}: an anchor variable is required for the validity test")
        if self.kind is ModelKind.FRONTDOOR and not self.mediators:
            raise ValidationError(f"{self.label}: frontdoor models need at least one mediator")
        if self.kind is ModelKind.IV and not self.mediators:
            raise ValidationError(f"{self.label}: IV models need mediators for their validity test")
        if self.kind is ModelKind.BACKDOOR and self.mediators:
            raise ValidationError(f"{self.label}: backdoor models take no mediators")
        if self.kind is not ModelKind.BACKDOOR and self.estimator is EstimatorStyle.INFLUENCE:
            raise ValidationError(
                f"{self.label}: influence-function estimators exist only for backdoor models"
            )
        used = self.variables
        if len(set(used)) != len(used):
            raise ValidationError(f"{self.label}: a variable is used in more than one role")

    @property
    def variables(self) -> list[str]:
        return [self.treatment, self.outcome, self.anchor, *self.adjustment, *self.mediators]


class EstimateMethod(str, enum.Enum):
    INFLUENCE_FUNCTION = "influence_function"
    PLUGIN_PARAMETRIC = "plugin_parametric"


@dataclass
class EstimateWithIF:
    """Point estimate with optional per-observation influence values."""

    value: float
    influence: np.ndarray | None = None
    method: EstimateMethod = EstimateMethod.PLUGIN_PARAMETRIC
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.value = float(self.value)
        if self.influence is not None:
            phi = np.asarray(self.influence, dtype=float)
            m, sd = float(np.mean(phi)), float(np.std(phi))
            if abs(m) > 1e-8 * (1.0 + sd):
                raise ValidationError(f"influence values have mean {m:.3e}, expected ~0")
            self.influence = phi

    @property
    def n(self) -> int | None:
        return None if self.influence is None else self.influence.shape[0]

    def se(self) -> float | None:
        if self.influence is None:
            return None
        return float(np.sqrt(np.mean(self.influence**2) / self.influence.shape[0]))


class InferenceBranch(str, enum.Enum):
    WALD = "wald"
    BOOTSTRAP = "bootstrap"
    SUBSAMPLE = "subsample"


@dataclass
class ModelResult:
    label: str
    beta: float
    psi: float
    weight: float
    kernel_mass: float = math.nan
    psi_ci: tuple[float, float] | None = None
    psi_ci_method: str | None = None


@dataclass
class TriangulationResult:
    per_model: list[ModelResult]
    psi_combined: float
    kernel_a: float
    lam: float
    degenerate_flag: bool
    inference_branch: InferenceBranch
    se: float | None = None
    ci: tuple[float, float] | None = None
    ci_rescaled: tuple[float, float] | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.per_model])

    def to_dict(self) -> dict:
        return {
            "per_model": [
                {
                    "label": m.label,
                    "psi": m.psi,
                    "psi_ci": list(m.psi_ci) if m.psi_ci is not None else None,
                    "psi_ci_method": m.psi_ci_method,
                    "beta": m.beta,
                    "kernel_mass": m.kernel_mass,
                    "weight": m.weight,
                }
                for m in self.per_model
            ],
            "combined": {
                "psi_n": self.psi_combined,
                "se": self.se,
                "ci": list(self.ci) if self.ci is not None else None,
                "ci_rescaled": list(self.ci_rescaled) if self.ci_rescaled is not None else None,
                "degenerate_flag": self.degenerate_flag,
                "inference_branch": self.inference_branch.value,
                "kernel_a": self.kernel_a,
                "lambda": self.lam,
            },
            "diagnostics": self.diagnostics,
        }
