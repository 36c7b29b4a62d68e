"""Domain-level survey datasets: containers, validation, and delimited-file IO.

A dataset holds one row per domain with a direct point estimate ``y``, a
direct variance estimate ``v``, a respondent count ``n``, mean-model
covariates ``x`` and (for the variance co-model) variance-model covariates
``z``.  The file format is delimited text with a mandatory header
``domain_id,y,v,n,x_1..x_Px,z_1..z_Pz``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised when a dataset or parameter block fails validation."""


def standardized_counts(n: np.ndarray) -> np.ndarray:
    """Map respondent counts to the unit interval.

    Uses ``(n_i - (min n - 1)) / (max n - min n)``, then clamps to
    ``[1/max(n), 1]`` so the variance-likelihood shape parameter stays
    positive and no value exceeds one.  When all counts are equal the
    result is all ones (maximal-information convention).
    """
    n = np.asarray(n, dtype=float)
    if n.size == 0:
        return n.copy()
    lo, hi = float(n.min()), float(n.max())
    if hi == lo:
        return np.ones_like(n)
    raw = (n - (lo - 1.0)) / (hi - lo)
    return np.clip(raw, 1.0 / hi, 1.0)


@dataclass(frozen=True)
class DomainObservation:
    """One domain's direct estimates and design information."""

    domain_id: int
    y: float
    v: float
    x: np.ndarray
    z: np.ndarray = field(default_factory=lambda: np.empty(0))
    n: int = 1

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        # v = 0 is tolerated in containers for zero-noise limiting cases;
        # the model densities reject it.
        if self.v < 0:
            raise DataError(f"domain {self.domain_id}: v must be nonnegative, got {self.v}")
        if self.n < 1:
            raise DataError(f"domain {self.domain_id}: n must be >= 1, got {self.n}")


@dataclass
class Dataset:
    """Column-oriented collection of domain observations.

    ``n_star`` (standardized respondent counts) is derived at construction
    and kept consistent with ``n``.
    """

    domain_id: np.ndarray
    y: np.ndarray
    v: np.ndarray
    n: np.ndarray
    x: np.ndarray  # shape (N, P_x)
    z: np.ndarray  # shape (N, P_z); P_z may be 0
    n_star: np.ndarray = field(init=False)

    def __post_init__(self):
        self.domain_id = np.asarray(self.domain_id, dtype=int)
        self.y = np.asarray(self.y, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.n = np.asarray(self.n, dtype=int)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.z = np.asarray(self.z, dtype=float).reshape(len(self.y), -1)
        if self.x.shape[0] != len(self.y):
            self.x = self.x.T
        self._validate()
        self.n_star = standardized_counts(self.n)

    def _validate(self):
        n_rows = len(self.y)
        for name in ("domain_id", "v", "n"):
            if len(getattr(self, name)) != n_rows:
                raise DataError(f"column '{name}' has length {len(getattr(self, name))}, expected {n_rows}")
        if self.x.shape[0] != n_rows or self.z.shape[0] != n_rows:
            raise DataError("covariate matrices must have one row per domain")
        if np.any(self.v < 0):
            bad = int(self.domain_id[np.argmax(self.v < 0)])
            raise DataError(f"domain {bad}: v must be nonnegative")
        if np.any(self.n < 1):
            bad = int(self.domain_id[np.argmax(self.n < 1)])
            raise DataError(f"domain {bad}: n must be >= 1")

    @property
    def n_domains(self) -> int:
        return len(self.y)

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    def observations(self) -> list[DomainObservation]:
        return [
            DomainObservation(
                domain_id=int(self.domain_id[i]),
                y=float(self.y[i]),
                v=float(self.v[i]),
                x=self.x[i],
                z=self.z[i],
                n=int(self.n[i]),
            )
            for i in range(self.n_domains)
        ]

    def replace_direct(self, y: np.ndarray, v: np.ndarray | None = None) -> "Dataset":
        """Copy of this dataset with new direct estimates (covariates kept)."""
        return Dataset(
            domain_id=self.domain_id.copy(),
            y=np.asarray(y, dtype=float),
            v=self.v.copy() if v is None else np.asarray(v, dtype=float),
            n=self.n.copy(),
            x=self.x.copy(),
            z=self.z.copy(),
        )


def from_observations(observations: list[DomainObservation]) -> Dataset:
    if not observations:
        raise DataError("cannot build a dataset from zero observations")
    p_x = len(observations[0].x)
    p_z = len(observations[0].z)
    for obs in observations:
        if len(obs.x) != p_x or len(obs.z) != p_z:
            raise DataError(f"domain {obs.domain_id}: covariate lengths differ from first domain")
    return Dataset(
        domain_id=np.array([o.domain_id for o in observations]),
        y=np.array([o.y for o in observations]),
        v=np.array([o.v for o in observations]),
        n=np.array([o.n for o in observations]),
        x=np.array([o.x for o in observations]).reshape(len(observations), p_x),
        z=np.array([o.z for o in observations]).reshape(len(observations), p_z),
    )


def dataset_header(p_x: int, p_z: int) -> list[str]:
    cols = ["domain_id", "y", "v", "n"]
    cols += [f"x_{j + 1}" for j in range(p_x)]
    cols += [f"z_{j + 1}" for j in range(p_z)]
    return cols


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset_header(dataset.p_x, dataset.p_z))
        for i in range(dataset.n_domains):
            row = [
                int(dataset.domain_id[i]),
                f"{dataset.y[i]:.17g}",
                f"{dataset.v[i]:.17g}",
                int(dataset.n[i]),
            ]
            row += [f"{value:.17g}" for value in dataset.x[i]]
            row += [f"{value:.17g}" for value in dataset.z[i]]
            writer.writerow(row)


def read_dataset(path: str | Path) -> Dataset:
    """Read a delimited dataset file; the header row is mandatory."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset file") from None
        header = [h.strip() for h in header]
        if header[:4] != ["domain_id", "y", "v", "n"]:
            raise DataError(f"{path}: header must start with domain_id,y,v,n; got {header[:4]}")
        p_x = sum(1 for h in header if h.startswith("x_"))
        p_z = sum(1 for h in header if h.startswith("z_"))
        if len(header) != 4 + p_x + p_z:
            raise DataError(f"{path}: unrecognized columns in header {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise DataError(f"{path}: no data rows")
    try:
        domain_id = np.array([int(r[0]) for r in rows])
        y = np.array([float(r[1]) for r in rows])
        v = np.array([float(r[2]) for r in rows])
        n = np.array([int(r[3]) for r in rows])
        x = np.array([[float(c) for c in r[4 : 4 + p_x]] for r in rows]).reshape(len(rows), p_x)
        z = np.array([[float(c) for c in r[4 + p_x :]] for r in rows]).reshape(len(rows), p_z)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc
    return Dataset(domain_id=domain_id, y=y, v=v, n=n, x=x, z=z)
