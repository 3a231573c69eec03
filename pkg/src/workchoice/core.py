"""Domain records, dataset assembly and the shared probability kernels."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import MASK64, Rng, splitmix64

OCCUPATIONS = (
    "restaurant",
    "shopping",
    "office",
    "education",
    "health",
    "business",
    "recreation",
)
N_OCCUPATIONS = len(OCCUPATIONS)

# Individual attributes in file/feature order with their inclusive code ranges.
ATTRIBUTE_RANGES = {
    "household_type": (1, 6),
    "has_kids": (0, 1),
    "has_car": (0, 1),
    "gender": (0, 1),
    "income_class": (1, 11),
    "employment": (1, 4),
}
ATTRIBUTES = tuple(ATTRIBUTE_RANGES)


class DataValidationError(ValueError):
    """Inconsistent or out-of-range input data."""


@dataclass(frozen=True)
class Zone:
    zone_id: int
    x_km: float
    y_km: float
    jobs: tuple[int, ...]

    def __post_init__(self):
        if len(self.jobs) != N_OCCUPATIONS:
            raise DataValidationError(
                f"zone {self.zone_id}: expected {N_OCCUPATIONS} job counts, got {len(self.jobs)}"
            )
        if any(j < 0 for j in self.jobs):
            raise DataValidationError(f"zone {self.zone_id}: negative job count")

    @property
    def total_jobs(self) -> int:
        return sum(self.jobs)


@dataclass(frozen=True)
class Individual:
    person_id: int
    home_zone: int
    work_zone: int | None
    household_type: int
    has_kids: int
    has_car: int
    gender: int
    income_class: int
    employment: int
    weight: float = 1.0

    def __post_init__(self):
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise DataValidationError(
                f"person {self.person_id}: weight must be positive, got {self.weight}"
            )
        for name, (lo, hi) in ATTRIBUTE_RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise DataValidationError(
                    f"person {self.person_id}: {name}={value} outside [{lo}, {hi}]"
                )

    def attributes(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in ATTRIBUTES)

    def with_work_zone(self, work_zone: int | None) -> "Individual":
        return Individual(
            self.person_id,
            self.home_zone,
            work_zone,
            *self.attributes(),
            weight=self.weight,
        )


class Dataset:
    """Zones, individuals and their N x J accessibility block.

    Instances are treated as immutable; the numpy views exposed here are
    marked read-only.  Use :func:`build_dataset` to construct one with
    validation.
    """

    def __init__(self, zones, individuals, accessibility, zone_labels=None):
        self.zones: tuple[Zone, ...] = tuple(zones)
        self.individuals: tuple[Individual, ...] = tuple(individuals)
        acc = np.array(accessibility, dtype=np.float64, copy=True)
        acc.setflags(write=False)
        self.accessibility = acc
        # original file ids, position = dense zone index
        self.zone_labels: tuple[int, ...] = (
            tuple(zone_labels) if zone_labels is not None else tuple(range(len(self.zones)))
        )

        self.jobs = _frozen(np.array([z.jobs for z in self.zones], dtype=np.float64).reshape(-1, N_OCCUPATIONS))
        self.centroids = _frozen(np.array([(z.x_km, z.y_km) for z in self.zones], dtype=np.float64).reshape(-1, 2))
        ind = self.individuals
        self.home = _frozen(np.array([p.home_zone for p in ind], dtype=np.int64))
        self.work = _frozen(
            np.array([-1 if p.work_zone is None else p.work_zone for p in ind], dtype=np.int64)
        )
        self.attributes = _frozen(
            np.array([p.attributes() for p in ind], dtype=np.int64).reshape(-1, len(ATTRIBUTES))
        )
        self.weights = _frozen(np.array([p.weight for p in ind], dtype=np.float64))

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def n_individuals(self) -> int:
        return len(self.individuals)

    def attribute(self, name: str) -> np.ndarray:
        return self.attributes[:, ATTRIBUTES.index(name)]

    @property
    def has_car(self) -> np.ndarray:
        return self.attribute("has_car")

    @property
    def gender(self) -> np.ndarray:
        return self.attribute("gender")

    @property
    def has_choices(self) -> bool:
        return self.n_individuals > 0 and bool(np.all(self.work >= 0))

    def require_choices(self) -> None:
        missing = np.flatnonzero(self.work < 0)
        if missing.size:
            pid = self.individuals[missing[0]].person_id
            raise DataValidationError(
                f"{missing.size} individuals have no observed work zone (first: person {pid})"
            )

    def total_jobs(self) -> np.ndarray:
        return self.jobs.sum(axis=1)

    def home_distances(self) -> np.ndarray:
        """Euclidean distance from each individual's home zone to every zone, (N, J)."""
        home_xy = self.centroids[self.home]
        diff = home_xy[:, None, :] - self.centroids[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.zones,
            [self.individuals[i] for i in idx],
            self.accessibility[idx],
            self.zone_labels,
        )

    def with_work_zones(self, work_zones) -> "Dataset":
        work_zones = np.asarray(work_zones, dtype=np.int64)
        if work_zones.shape != (self.n_individuals,):
            raise DataValidationError("work zone vector length does not match individuals")
        people = [p.with_work_zone(int(w)) for p, w in zip(self.individuals, work_zones)]
        return build_dataset(self.zones, people, self.accessibility, self.zone_labels)

    def fingerprint(self) -> str:
        """SHA-256 over a canonical little-endian encoding of all contents."""
        h = hashlib.sha256()
        h.update(np.asarray(self.zone_labels, dtype="<i8").tobytes())
        h.update(self.jobs.astype("<f8").tobytes())
        h.update(self.centroids.astype("<f8").tobytes())
        h.update(np.array([p.person_id for p in self.individuals], dtype="<i8").tobytes())
        h.update(self.home.astype("<i8").tobytes())
        h.update(self.work.astype("<i8").tobytes())
        h.update(self.attributes.astype("<i8").tobytes())
        h.update(self.weights.astype("<f8").tobytes())
        h.update(self.accessibility.astype("<f8").tobytes())
        return h.hexdigest()


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_dataset(
    zones: Sequence[Zone],
    individuals: Sequence[Individual],
    accessibility,
    zone_labels=None,
) -> Dataset:
    """Cross-validate the three inputs and assemble a :class:`Dataset`.

    Raises
    ------
    DataValidationError
        On non-contiguous zone ids, a dangling zone reference, a
        non-positive weight, a non-finite accessibility entry or a matrix
        whose shape does not match N x J.
    """
    zones = list(zones)
    individuals = list(individuals)
    J, N = len(zones), len(individuals)
    if J == 0:
        raise DataValidationError("dataset needs at least one zone")
    ids = [z.zone_id for z in zones]
    if ids != list(range(J)):
        raise DataValidationError("zone ids must be unique and contiguous from 0 in order")
    acc = np.asarray(accessibility, dtype=np.float64)
    if acc.ndim != 2 or acc.shape != (N, J):
        raise DataValidationError(
            f"accessibility shape {acc.shape} does not match ({N} individuals, {J} zones)"
        )
    if not np.all(np.isfinite(acc)):
        raise DataValidationError("accessibility contains non-finite entries")
    seen = set()
    for p in individuals:
        if p.person_id in seen:
            raise DataValidationError(f"duplicate person id {p.person_id}")
        seen.add(p.person_id)
        if not 0 <= p.home_zone < J:
            raise DataValidationError(f"person {p.person_id}: home_zone {p.home_zone} does not exist")
        if p.work_zone is not None and not 0 <= p.work_zone < J:
            raise DataValidationError(f"person {p.person_id}: work_zone {p.work_zone} does not exist")
        if not p.weight > 0:
            raise DataValidationError(f"person {p.person_id}: non-positive weight")
    if zone_labels is not None and len(zone_labels) != J:
        raise DataValidationError("zone label map length does not match zone count")
    return Dataset(zones, individuals, acc, zone_labels)


def split_dataset(dataset: Dataset, train_fraction: float = 0.75, seed: int = 0):
    """Seeded random train/validation partition of the individuals.

    The train part holds ``round(N * train_fraction)`` individuals taken
    from the front of a seeded permutation; accessibility rows follow
    their individuals.
    """
    train_idx, val_idx = split_indices(dataset.n_individuals, train_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(val_idx)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(n * train_fraction + 0.5))
    perm = Rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def zone_distance(zone_a: Zone, zone_b: Zone) -> float:
    return math.hypot(zone_a.x_km - zone_b.x_km, zone_a.y_km - zone_b.y_km)


def log_sum_exp(values, axis=None):
    """``log(sum(exp(values)))`` with a max shift; all ``-inf`` gives ``-inf``."""
    v = np.asarray(values, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(utilities, axis: int = -1) -> np.ndarray:
    """Choice probabilities ``exp(V) / sum(exp(V))`` along ``axis``.

    ``-inf`` utilities get probability exactly 0.  Raises ``ValueError`` if
    every utility in a slice is ``-inf``.
    """
    v = np.asarray(utilities, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    if np.any(~np.isfinite(m)):
        raise ValueError("softmax needs at least one finite utility per slice")
    e = np.exp(v - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def split_seed_streams(seed: int, n: int) -> list[int]:
    """``n`` independent 64-bit child seeds derived from ``seed`` via splitmix64."""
    x = int(seed) & MASK64
    out = []
    for _ in range(n):
        x, z = splitmix64(x)
        out.append(z)
    return out
