"""Synthetic city, population, accessibility and ground-truth choice oracles.

Attributes are drawn independently from their marginals; the real survey
data they stand in for is correlated, but independence is enough for
recovery and model-ordering checks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    ATTRIBUTE_RANGES,
    ATTRIBUTES,
    N_OCCUPATIONS,
    OCCUPATIONS,
    Dataset,
    Individual,
    Zone,
    build_dataset,
    softmax,
    split_seed_streams,
)
from .nested_logit import NlParams, chosen_log_probabilities, nl_utilities
from .rng import Rng

# Category counts of the 6,204 surveyed workers, used as default marginals.
SURVEY_COUNTS = {
    "household_type": (1072, 2441, 102, 768, 92, 1729),
    "has_kids": (3513, 2691),
    "has_car": (1998, 4206),
    "gender": (2781, 3423),
    "income_class": (12, 28, 43, 115, 319, 557, 954, 2154, 1378, 405, 239),
    "employment": (5350, 818, 29, 7),
}


def _normalised(counts) -> tuple[float, ...]:
    total = float(sum(counts))
    return tuple(c / total for c in counts)


DEFAULT_MARGINALS = {name: _normalised(c) for name, c in SURVEY_COUNTS.items()}

DEFAULT_ORACLE_PARAMS = NlParams((0.5,) * 6, 1.2, 0.6, -0.1)


@dataclass(frozen=True)
class CityConfig:
    """Square-cell lattice of zones with jobs concentrated around a CBD.

    ``job_scale`` is the expected city-wide total per occupation (a scalar
    applies to all seven).  Each zone's expected count falls off as
    ``exp(-distance_decay * distance_to_cbd)``.  ``mix_dispersion`` is the
    log-scale spread of a mean-one lognormal factor per zone and occupation
    so that zones differ in job mix, not only in size.
    """

    grid_rows: int = 10
    grid_cols: int = 10
    cbd_zone: int | None = None
    job_scale: float | tuple[float, ...] = 20000.0
    distance_decay: float = 0.15
    cell_size_km: float = 1.0
    mix_dispersion: float = 2.0

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1 or self.grid_rows * self.grid_cols < 2:
            raise ValueError("city needs at least 2 zones")
        if not self.cell_size_km > 0:
            raise ValueError("cell_size_km must be positive")
        if self.distance_decay < 0 or self.mix_dispersion < 0:
            raise ValueError("distance_decay and mix_dispersion must be nonnegative")
        if np.any(np.asarray(self.job_scales) < 0):
            raise ValueError("job_scale must be nonnegative")
        if self.cbd_zone is not None and not 0 <= self.cbd_zone < self.n_zones:
            raise ValueError(f"cbd_zone {self.cbd_zone} outside the grid")

    @property
    def n_zones(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def job_scales(self) -> np.ndarray:
        s = np.broadcast_to(np.asarray(self.job_scale, dtype=np.float64), (N_OCCUPATIONS,))
        return s.copy()

    @property
    def cbd(self) -> int:
        if self.cbd_zone is not None:
            return self.cbd_zone
        return (self.grid_rows // 2) * self.grid_cols + self.grid_cols // 2

    @classmethod
    def from_dict(cls, d: dict) -> "CityConfig":
        d = dict(d)
        if isinstance(d.get("job_scale"), list):
            d["job_scale"] = tuple(d["job_scale"])
        return cls(**d)


@dataclass(frozen=True)
class PopulationConfig:
    n_individuals: int = 1000
    marginals: dict = field(default_factory=lambda: dict(DEFAULT_MARGINALS))
    weight_mu: float = -0.03125  # mean-one lognormal at sigma 0.25
    weight_sigma: float = 0.25

    def __post_init__(self):
        if self.n_individuals < 1:
            raise ValueError("n_individuals must be at least 1")
        if self.weight_sigma < 0:
            raise ValueError("weight_sigma must be nonnegative")
        for name in ATTRIBUTES:
            probs = self.marginals.get(name)
            lo, hi = ATTRIBUTE_RANGES[name]
            if probs is None or len(probs) != hi - lo + 1:
                raise ValueError(f"marginal for {name} needs {hi - lo + 1} probabilities")
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                raise ValueError(f"marginal for {name} must be nonnegative and sum to 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationConfig":
        d = dict(d)
        marg = dict(DEFAULT_MARGINALS)
        marg.update({k: tuple(v) for k, v in d.pop("marginals", {}).items()})
        return cls(marginals=marg, **d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["marginals"] = {k: list(v) for k, v in self.marginals.items()}
        return out


@dataclass(frozen=True)
class AccessibilityConfig:
    a0: float = 0.0
    decay: float = 0.3
    noise_sigma: float = 3.0

    def __post_init__(self):
        if not self.decay > 0:
            raise ValueError("accessibility decay must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def generate_city(config: CityConfig, seed: int) -> list[Zone]:
    rng = Rng(seed)
    rows, cols, cell = config.grid_rows, config.grid_cols, config.cell_size_km
    r, c = np.divmod(np.arange(config.n_zones), cols)
    x = (c + 0.5) * cell
    y = (r + 0.5) * cell
    d = np.hypot(x - x[config.cbd], y - y[config.cbd])
    profile = np.exp(-config.distance_decay * d)
    profile /= profile.sum()
    means = profile[:, None] * config.job_scales[None, :]
    if config.mix_dispersion > 0:
        s = config.mix_dispersion
        means = means * rng.lognormal(means.size, -0.5 * s * s, s).reshape(means.shape)
    counts = rng.poisson(means)
    return [
        Zone(int(j), float(x[j]), float(y[j]), tuple(int(v) for v in counts[j]))
        for j in range(config.n_zones)
    ]


def generate_population(config: PopulationConfig, zones, seed: int) -> list[Individual]:
    """Independent attribute draws, uniform home zones, lognormal weights.

    Work zones are left empty; :func:`simulate_choices` fills them.
    """
    rng = Rng(seed)
    n = config.n_individuals
    cols = {}
    for name in ATTRIBUTES:
        lo, _ = ATTRIBUTE_RANGES[name]
        cols[name] = rng.categorical(config.marginals[name], n) + lo
    homes = rng.categorical(np.ones(len(zones)), n)
    weights = rng.lognormal(n, config.weight_mu, config.weight_sigma)
    return [
        Individual(
            person_id=i,
            home_zone=int(homes[i]),
            work_zone=None,
            weight=float(weights[i]),
            **{name: int(cols[name][i]) for name in ATTRIBUTES},
        )
        for i in range(n)
    ]


def generate_accessibility(zones, individuals, decay: float, noise_sigma: float, seed: int, a0: float = 0.0) -> np.ndarray:
    """``A[n, j] = a0 - decay * distance(home_n, j) + noise``, shape (N, J)."""
    if not decay > 0:
        raise ValueError("accessibility decay must be positive")
    xy = np.array([(z.x_km, z.y_km) for z in zones])
    home = np.array([p.home_zone for p in individuals], dtype=np.int64)
    diff = xy[home][:, None, :] - xy[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    acc = a0 - decay * dist
    if noise_sigma > 0:
        acc = acc + Rng(seed).normal(acc.size, 0.0, noise_sigma).reshape(acc.shape)
    return acc


class NonlinearOracle:
    """Nested logit utility plus two terms the nested logit cannot express.

        v_nj = v^NL_nj + gamma * has_car_n * log(1 + office_jobs_j)
                       + delta * gender_n * A_nj ** 2
    """

    model_kind = "nonlinear_oracle"

    def __init__(self, params: NlParams, gamma: float, delta: float):
        self.params = params
        self.gamma = float(gamma)
        self.delta = float(delta)

    def utilities(self, dataset: Dataset) -> np.ndarray:
        office = np.log1p(dataset.jobs[:, OCCUPATIONS.index("office")])
        car = dataset.has_car.astype(np.float64)
        gender = dataset.gender.astype(np.float64)
        V = nl_utilities(self.params, dataset)
        V = V + self.gamma * car[:, None] * office[None, :]
        V = V + self.delta * gender[:, None] * dataset.accessibility**2
        return V

    def probabilities(self, dataset: Dataset) -> np.ndarray:
        if not np.any(dataset.jobs.sum(axis=1) > 0):
            raise ValueError("no zone has any jobs")
        return softmax(self.utilities(dataset), axis=1)

    def log_probabilities_chosen(self, dataset: Dataset) -> np.ndarray:
        return chosen_log_probabilities(self.utilities(dataset), dataset)


@dataclass(frozen=True)
class Oracle:
    """Ground-truth choice process: ``kind`` is ``"nl"`` or ``"nonlinear"``."""

    kind: str = "nl"
    params: NlParams = field(default_factory=lambda: DEFAULT_ORACLE_PARAMS)
    gamma: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("nl", "nonlinear"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")

    def model(self):
        from .nested_logit import NestedLogitModel

        if self.kind == "nl":
            return NestedLogitModel(self.params)
        return NonlinearOracle(self.params, self.gamma, self.delta)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "params": self.params.to_dict()}
        if self.kind == "nonlinear":
            d.update(gamma=self.gamma, delta=self.delta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Oracle":
        params = NlParams.from_dict(d["params"]) if "params" in d else DEFAULT_ORACLE_PARAMS
        return cls(d.get("kind", "nl"), params, float(d.get("gamma", 0.0)), float(d.get("delta", 0.0)))


def simulate_choices(oracle, dataset: Dataset, seed: int) -> Dataset:
    """Draw one work zone per individual from the oracle's probabilities."""
    model = oracle.model() if isinstance(oracle, Oracle) else oracle
    if not np.any(dataset.jobs.sum(axis=1) > 0):
        raise ValueError("oracle assigns zero probability everywhere: no zone has jobs")
    probs = model.probabilities(dataset)
    draws = Rng(seed).choice_rows(probs, 1)[:, 0]
    return dataset.with_work_zones(draws)


def simulate_dataset(
    city: CityConfig,
    population: PopulationConfig,
    accessibility: AccessibilityConfig,
    oracle: Oracle,
    seed: int,
) -> Dataset:
    """Full synthetic dataset; each stage draws from its own split seed."""
    city_seed, pop_seed, acc_seed, choice_seed = split_seed_streams(seed, 4)
    zones = generate_city(city, city_seed)
    people = generate_population(population, zones, pop_seed)
    acc = generate_accessibility(
        zones, people, accessibility.decay, accessibility.noise_sigma, acc_seed, accessibility.a0
    )
    return simulate_choices(oracle, build_dataset(zones, people, acc), choice_seed)

