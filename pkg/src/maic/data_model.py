"""Containers and file ingestion for patient-level and aggregate study data.

An indirect comparison pairs one study with individual patient data (IPD:
per-patient outcome, arm code, covariates) with one study reported only as
aggregate summaries (AGD: per-arm counts, outcome mean/variance, covariate
means and optionally variances).  All containers are immutable after
construction and validated eagerly; covariates are aligned by declared name.
"""

from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyStudy,
    InvalidArmCode,
    MissingColumn,
    MissingVariance,
    NegativeVariance,
    NonNumericValue,
    SchemaError,
)


class OutcomeKind(enum.Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


class MomentSpec(enum.Enum):
    """Which covariate moments the weights must balance.

    FIRST balances centered first moments; FIRST_AND_SECOND additionally
    balances the squares of each covariate (no cross-products).
    """

    FIRST = "first"
    FIRST_AND_SECOND = "first+second"


@dataclass(frozen=True)
class IpdRecord:
    """One patient: outcome, arm code (0 comparator, 1 active), covariates."""

    y: float
    z: int
    x: tuple[float, ...]


@dataclass(frozen=True)
class IpdStudy:
    """Patient-level study.  Arm codes are 0 (common comparator, optional)
    and 1 (active treatment).  Row order is preserved from the source."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...]
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=int)
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise DimensionMismatch("covariate matrix must be 2-dimensional")
        if len(y) == 0:
            raise EmptyStudy("IPD study has no records")
        if not (len(y) == len(z) == x.shape[0]):
            raise DimensionMismatch("y, z, x must have equal length")
        if x.shape[1] != len(self.covariate_names):
            raise DimensionMismatch(
                f"{x.shape[1]} covariate columns vs "
                f"{len(self.covariate_names)} covariate names"
            )
        bad = set(np.unique(z)) - {0, 1}
        if bad:
            raise InvalidArmCode(f"arm codes must be 0 or 1, got {sorted(bad)}")
        if not np.any(z == 1):
            raise EmptyStudy("IPD study has no active-arm (z=1) records")
        if self.outcome_kind is OutcomeKind.BINARY and not np.isin(y, (0.0, 1.0)).all():
            raise NonNumericValue("binary outcome must be coded 0/1")
        for arr in (y, z, x):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def has_comparator(self) -> bool:
        return bool(np.any(self.z == 0))

    @property
    def records(self) -> list[IpdRecord]:
        return [
            IpdRecord(float(yi), int(zi), tuple(xi))
            for yi, zi, xi in zip(self.y, self.z, self.x)
        ]

    @classmethod
    def from_records(cls, records, covariate_names, outcome_kind=OutcomeKind.CONTINUOUS):
        if not records:
            raise EmptyStudy("no records supplied")
        y = np.array([r.y for r in records], dtype=float)
        z = np.array([r.z for r in records], dtype=int)
        x = np.array([r.x for r in records], dtype=float)
        return cls(y, z, x, tuple(covariate_names), outcome_kind)

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariate_names),
            "outcome_kind": self.outcome_kind.value,
            "y": self.y.tolist(),
            "z": self.z.tolist(),
            "x": self.x.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IpdStudy":
        return cls(
            np.asarray(d["y"], dtype=float),
            np.asarray(d["z"], dtype=int),
            np.asarray(d["x"], dtype=float),
            tuple(d["covariates"]),
            OutcomeKind(d["outcome_kind"]),
        )


@dataclass(frozen=True)
class AgdArm:
    """Published summaries for one arm of the aggregate-data study."""

    n: int
    y_mean: float
    y_var: float | None
    x_mean: np.ndarray
    x_var: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1:
            raise SchemaError("arm sample size must be positive")
        if self.y_var is not None:
            if self.y_var < 0:
                raise NegativeVariance(f"y_var = {self.y_var} < 0")
            if self.n < 2:
                raise SchemaError("n >= 2 required when y_var is supplied")
        x_mean = np.asarray(self.x_mean, dtype=float)
        x_mean.setflags(write=False)
        object.__setattr__(self, "x_mean", x_mean)
        if self.x_var is not None:
            x_var = np.asarray(self.x_var, dtype=float)
            if len(x_var) != len(x_mean):
                raise DimensionMismatch("x_var length differs from x_mean")
            if np.any(x_var < 0):
                raise NegativeVariance("x_var has a negative entry")
            if self.n < 2:
                raise SchemaError("n >= 2 required when x_var is supplied")
            x_var.setflags(write=False)
            object.__setattr__(self, "x_var", x_var)

    @property
    def p(self) -> int:
        return len(self.x_mean)

    def to_dict(self) -> dict:
        d = {"n": self.n, "y_mean": self.y_mean, "x_mean": self.x_mean.tolist()}
        if self.y_var is not None:
            d["y_var"] = self.y_var
        if self.x_var is not None:
            d["x_var"] = self.x_var.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgdArm":
        try:
            return cls(
                n=int(d["n"]),
                y_mean=float(d["y_mean"]),
                y_var=float(d["y_var"]) if "y_var" in d and d["y_var"] is not None else None,
                x_mean=np.asarray(d["x_mean"], dtype=float),
                x_var=np.asarray(d["x_var"], dtype=float) if d.get("x_var") is not None else None,
            )
        except KeyError as e:
            raise SchemaError(f"AGD arm missing field {e}") from None
        except (TypeError, ValueError) as e:
            raise SchemaError(f"AGD arm has a non-numeric field: {e}") from None


@dataclass(frozen=True)
class AgdStudy:
    """Aggregate-data study: the active arm (z=2) and, when reported, the
    common comparator arm (z=0)."""

    active_arm: AgdArm
    comparator_arm: AgdArm | None
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        p = len(self.covariate_names)
        if self.active_arm.p != p:
            raise DimensionMismatch(
                f"active arm has {self.active_arm.p} covariate means, expected {p}"
            )
        if self.comparator_arm is not None and self.comparator_arm.p != p:
            raise DimensionMismatch(
                f"comparator arm has {self.comparator_arm.p} covariate means, expected {p}"
            )

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    @property
    def arms(self) -> list[AgdArm]:
        out = [self.active_arm]
        if self.comparator_arm is not None:
            out.append(self.comparator_arm)
        return out

    @property
    def n_total(self) -> int:
        return sum(a.n for a in self.arms)

    def check_alignment(self, ipd: IpdStudy) -> None:
        """Covariate names (and order) must match the paired IPD study."""
        if tuple(self.covariate_names) != tuple(ipd.covariate_names):
            raise DimensionMismatch(
                "IPD/AGD covariate names differ: "
                f"{list(ipd.covariate_names)} vs {list(self.covariate_names)}"
            )

    def to_dict(self) -> dict:
        arms = {"active": self.active_arm.to_dict()}
        if self.comparator_arm is not None:
            arms["comparator"] = self.comparator_arm.to_dict()
        return {"covariates": list(self.covariate_names), "arms": arms}

    @classmethod
    def from_dict(cls, d: dict) -> "AgdStudy":
        try:
            covariates = tuple(d["covariates"])
            arms = d["arms"]
            active = AgdArm.from_dict(arms["active"])
        except KeyError as e:
            raise SchemaError(f"AGD document missing {e}") from None
        comparator = None
        if "comparator" in arms and arms["comparator"] is not None:
            comparator = AgdArm.from_dict(arms["comparator"])
        return cls(active, comparator, covariates)


@dataclass(frozen=True)
class TrialRecords:
    """Raw per-patient records of the aggregate-data trial (arm codes 0/2).
    Only available in simulation; used by the full-influence benchmark."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=int))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))


def load_ipd(
    path,
    outcome: str = "y",
    arm: str = "z",
    covariates: list[str] | None = None,
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS,
) -> IpdStudy:
    """Load an IPD study from a headered CSV file.

    `covariates` selects and orders the covariate columns; by default every
    column other than the outcome and arm columns is used, in file order.
    Missing or non-numeric values in mapped columns are rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyStudy(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        if covariates is None:
            covariates = [c for c in header if c not in (outcome, arm)]
        for col in [outcome, arm, *covariates]:
            if col not in header:
                raise MissingColumn(f"{path}: column {col!r} not found")
        rows_y, rows_z, rows_x = [], [], []
        for lineno, row in enumerate(reader, start=2):
            def grab(col):
                raw = (row.get(col) or "").strip()
                if raw == "":
                    raise NonNumericValue(f"{path}:{lineno}: missing value in {col!r}")
                try:
                    return float(raw)
                except ValueError:
                    raise NonNumericValue(
                        f"{path}:{lineno}: non-numeric value {raw!r} in {col!r}"
                    ) from None

            zi = grab(arm)
            if zi not in (0.0, 1.0):
                raise InvalidArmCode(f"{path}:{lineno}: arm code {zi} not in {{0, 1}}")
            rows_y.append(grab(outcome))
            rows_z.append(int(zi))
            rows_x.append([grab(c) for c in covariates])
    if not rows_y:
        raise EmptyStudy(f"{path}: no data rows")
    return IpdStudy(
        np.array(rows_y), np.array(rows_z), np.array(rows_x),
        tuple(covariates), outcome_kind,
    )


def load_agd(path) -> AgdStudy:
    """Load an AGD study from its JSON document."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top-level JSON value must be an object")
    study = AgdStudy.from_dict(doc)
    for arm in study.arms:
        if arm.y_var is None:
            warnings.warn(
                f"{path}: arm without y_var; binary-outcome fallback "
                "ybar(1-ybar)*n/(n-1) will be used where a variance is needed",
                stacklevel=2,
            )
    return study


def pooled_target_moments(agd: AgdStudy, spec: MomentSpec) -> np.ndarray:
    """Target moment vector for the weight solver, pooled across AGD arms.

    First moments are the n-weighted pool of arm covariate means.  Second
    moments (squares) are pooled per arm as mean^2 + var*(n-1)/n, converting
    the reported sample variance to the population second moment, then
    n-weighted across arms.
    """
    arms = agd.arms
    n = np.array([a.n for a in arms], dtype=float)
    w = n / n.sum()
    first = np.sum([wi * a.x_mean for wi, a in zip(w, arms)], axis=0)
    if spec is MomentSpec.FIRST:
        return first
    for a in arms:
        if a.x_var is None:
            raise MissingVariance(
                "first+second moment matching requires x_var on every AGD arm"
            )
    second = np.sum(
        [wi * (a.x_mean**2 + a.x_var * (a.n - 1) / a.n) for wi, a in zip(w, arms)],
        axis=0,
    )
    return np.concatenate([first, second])
