"""Two-level nested logit workplace choice model.

Zone ``j`` is the upper-level alternative and the occupation types inside
it form the nest.  The systematic utility of zone ``j`` for person ``n`` is

    v_nj = (beta_a + beta_acr * has_car_n) * A_nj
           + lam * log(sum_k exp(alpha_k / lam + log N_jk))

with recreation as the reference occupation (``alpha_7 = 0``).  Estimation
works on the unconstrained vector ``(alpha_1..alpha_6, log lam, beta_a,
beta_acr)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import OCCUPATIONS, Dataset, log_sum_exp, softmax
from .metrics import null_loglikelihood
from .optim import LbfgsSettings, lbfgs_minimize

PARAM_NAMES = (
    "alpha_restaurant",
    "alpha_shopping",
    "alpha_office",
    "alpha_education",
    "alpha_health",
    "alpha_business",
    "lambda",
    "beta_a",
    "beta_acr",
)
N_FREE_ALPHA = len(OCCUPATIONS) - 1


class ZeroProbabilityError(ValueError):
    """An observed choice has probability zero under the model."""


class HessianError(np.linalg.LinAlgError):
    """The log-likelihood Hessian is not negative definite."""


@dataclass(frozen=True)
class NlParams:
    alpha: tuple[float, ...] = (0.0,) * N_FREE_ALPHA
    lam: float = 1.0
    beta_a: float = 0.0
    beta_acr: float = 0.0

    def __post_init__(self):
        if len(self.alpha) != N_FREE_ALPHA:
            raise ValueError(f"alpha needs {N_FREE_ALPHA} entries (recreation is the reference)")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    @property
    def full_alpha(self) -> np.ndarray:
        return np.append(np.asarray(self.alpha, dtype=np.float64), 0.0)

    def to_theta(self) -> np.ndarray:
        return np.array([*self.alpha, math.log(self.lam), self.beta_a, self.beta_acr])

    @classmethod
    def from_theta(cls, theta) -> "NlParams":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(
            tuple(float(a) for a in theta[:N_FREE_ALPHA]),
            float(math.exp(theta[N_FREE_ALPHA])),
            float(theta[N_FREE_ALPHA + 1]),
            float(theta[N_FREE_ALPHA + 2]),
        )

    def values(self) -> np.ndarray:
        """Parameters in reporting scale, ordered as :data:`PARAM_NAMES`."""
        return np.array([*self.alpha, self.lam, self.beta_a, self.beta_acr])

    def to_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, (float(v) for v in self.values())))

    @classmethod
    def from_dict(cls, d: dict) -> "NlParams":
        return cls(
            tuple(float(d[name]) for name in PARAM_NAMES[:N_FREE_ALPHA]),
            float(d["lambda"]),
            float(d["beta_a"]),
            float(d["beta_acr"]),
        )


def occupation_logsum(alpha, lam: float, job_counts) -> float:
    """``lam * log(sum_k exp(alpha_k / lam + log N_k))`` over occupations with jobs.

    ``alpha`` may hold 6 entries (recreation taken as 0) or all 7.
    Returns ``-inf`` when the zone has no jobs at all.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.size == N_FREE_ALPHA:
        alpha = np.append(alpha, 0.0)
    jobs = np.asarray(job_counts, dtype=np.float64)
    if jobs.shape != (len(OCCUPATIONS),) or np.any(jobs < 0):
        raise ValueError("job_counts must be 7 nonnegative counts")
    with np.errstate(divide="ignore"):
        terms = alpha / lam + np.log(jobs)
    return lam * log_sum_exp(terms)


def _zone_terms(params: NlParams, jobs: np.ndarray):
    """Per-zone logsums and their derivatives w.r.t. (alpha_1..6, log lam).

    Returns ``(logsum (J,), dlogsum (J, 7))``; rows of empty zones are
    ``-inf`` and zero respectively.
    """
    lam = params.lam
    alpha = params.full_alpha
    with np.errstate(divide="ignore"):
        u = alpha[None, :] / lam + np.log(jobs)
    nonempty = np.any(jobs > 0, axis=1)
    S = np.full(jobs.shape[0], -np.inf)
    deriv = np.zeros((jobs.shape[0], N_FREE_ALPHA + 1))
    if np.any(nonempty):
        un = u[nonempty]
        S_n = log_sum_exp(un, axis=1)
        shares = np.exp(un - S_n[:, None])
        S[nonempty] = S_n
        deriv[nonempty, :N_FREE_ALPHA] = shares[:, :N_FREE_ALPHA]
        # d(lam * S)/d log lam = lam * S - sum_k shares_k * alpha_k
        deriv[nonempty, N_FREE_ALPHA] = lam * S_n - shares @ alpha
    return lam * S, deriv


def nl_systematic_utility(params: NlParams, accessibility_value: float, has_car: int, zone) -> float:
    jobs = zone.jobs if hasattr(zone, "jobs") else zone
    logsum = occupation_logsum(params.alpha, params.lam, jobs)
    if logsum == -np.inf:
        return -np.inf
    return (params.beta_a + params.beta_acr * has_car) * accessibility_value + logsum


def nl_utilities(params: NlParams, dataset: Dataset) -> np.ndarray:
    """Utility matrix (N, J); zones without jobs are ``-inf``."""
    logsum, _ = _zone_terms(params, dataset.jobs)
    coef = params.beta_a + params.beta_acr * dataset.has_car
    return coef[:, None] * dataset.accessibility + logsum[None, :]


def nl_probabilities(params: NlParams, dataset: Dataset) -> np.ndarray:
    if not np.any(dataset.jobs.sum(axis=1) > 0):
        raise ValueError("no zone has any jobs")
    return softmax(nl_utilities(params, dataset), axis=1)


def nl_choice_probabilities(params: NlParams, dataset: Dataset, individual: int) -> np.ndarray:
    """Probability vector over zones for one individual (row index)."""
    if not np.any(dataset.jobs.sum(axis=1) > 0):
        raise ValueError("no zone has any jobs")
    logsum, _ = _zone_terms(params, dataset.jobs)
    coef = params.beta_a + params.beta_acr * dataset.has_car[individual]
    return softmax(coef * dataset.accessibility[individual] + logsum)


def chosen_log_probabilities(utilities: np.ndarray, dataset: Dataset) -> np.ndarray:
    """``log Pr(chosen)`` per individual from a utility matrix.

    Raises :class:`ZeroProbabilityError` naming the first individual whose
    observed zone has probability zero.
    """
    dataset.require_choices()
    lse = log_sum_exp(utilities, axis=1)
    chosen = utilities[np.arange(dataset.n_individuals), dataset.work]
    bad = np.flatnonzero(~np.isfinite(chosen))
    if bad.size:
        p = dataset.individuals[bad[0]]
        raise ZeroProbabilityError(
            f"person {p.person_id} chose zone {p.work_zone}, which has probability 0"
        )
    return chosen - lse


def nl_log_likelihood(params: NlParams, dataset: Dataset) -> float:
    """Weighted log-likelihood ``sum_n w_n log Pr(work_n | home_n)``."""
    logp = chosen_log_probabilities(nl_utilities(params, dataset), dataset)
    return float(dataset.weights @ logp)


def nl_loglik_and_gradient(theta, dataset: Dataset) -> tuple[float, np.ndarray]:
    """Log-likelihood and its analytic gradient in the unconstrained vector."""
    params = NlParams.from_theta(theta)
    logsum, dzone = _zone_terms(params, dataset.jobs)
    car = dataset.has_car.astype(np.float64)
    A = dataset.accessibility
    V = (params.beta_a + params.beta_acr * car)[:, None] * A + logsum[None, :]
    logp = chosen_log_probabilities(V, dataset)
    w = dataset.weights
    ll = float(w @ logp)

    P = softmax(V, axis=1)
    rows = np.arange(dataset.n_individuals)
    J = dataset.n_zones
    chosen_w = np.bincount(dataset.work, weights=w, minlength=J)
    expected_w = w @ P
    grad = np.empty(N_FREE_ALPHA + 3)
    grad[: N_FREE_ALPHA + 1] = (chosen_w - expected_w) @ dzone
    a_resid = A[rows, dataset.work] - np.einsum("nj,nj->n", P, A)
    grad[N_FREE_ALPHA + 1] = w @ a_resid
    grad[N_FREE_ALPHA + 2] = (w * car) @ a_resid
    return ll, grad


def nl_gradient(params: NlParams, dataset: Dataset) -> np.ndarray:
    """Gradient of :func:`nl_log_likelihood` w.r.t. (alpha_1..6, log lam, beta_a, beta_acr)."""
    return nl_loglik_and_gradient(params.to_theta(), dataset)[1]


def hessian_from_gradient(grad_fn, x, rel_step: float = 1e-5) -> np.ndarray:
    """Symmetrised central-difference Hessian of an analytic gradient."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        h = rel_step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        H[:, i] = (np.asarray(grad_fn(xp)) - np.asarray(grad_fn(xm))) / (2.0 * h)
    return 0.5 * (H + H.T)


def std_errors_from_loglik_gradient(grad_fn, x, rel_step: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Standard errors ``sqrt(diag(inv(-H)))`` and the covariance matrix.

    Raises :class:`HessianError` unless ``-H`` is positive definite.
    """
    H = hessian_from_gradient(grad_fn, x, rel_step)
    info = -H
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError as exc:
        raise HessianError("log-likelihood Hessian is not negative definite") from exc
    cov = np.linalg.inv(info)
    return np.sqrt(np.diag(cov)), cov


def nl_std_errors(params: NlParams, dataset: Dataset) -> np.ndarray:
    """Standard errors in reporting scale (lambda via the delta method)."""
    se, _ = std_errors_from_loglik_gradient(
        lambda t: nl_loglik_and_gradient(t, dataset)[1], params.to_theta()
    )
    se = se.copy()
    se[N_FREE_ALPHA] *= params.lam
    return se


@dataclass
class EstimationResult:
    params: NlParams
    std_errors: np.ndarray | None
    ll_final: float
    ll_null: float
    n_obs: int
    converged: bool
    iterations: int
    message: str = ""
    settings: LbfgsSettings = field(default_factory=LbfgsSettings)

    @property
    def t_values(self) -> np.ndarray | None:
        if self.std_errors is None:
            return None
        return self.params.values() / self.std_errors

    @property
    def t_against_1(self) -> float | None:
        """``(lambda - 1) / se(lambda)``: test of the MNL restriction."""
        if self.std_errors is None:
            return None
        return (self.params.lam - 1.0) / self.std_errors[N_FREE_ALPHA]

    @property
    def hessian_ok(self) -> bool:
        return self.std_errors is not None


def estimate_nl(
    dataset: Dataset,
    init: NlParams | None = None,
    settings: LbfgsSettings = LbfgsSettings(),
) -> EstimationResult:
    """Maximum likelihood estimation with L-BFGS.

    Starts from all-zero coefficients with ``lam = 1`` unless ``init`` is
    given.  A run that hits the iteration limit or a failed line search is
    returned with ``converged=False``; a Hessian that is not negative
    definite leaves ``std_errors`` as ``None``.
    """
    dataset.require_choices()
    theta0 = (init or NlParams()).to_theta()

    def objective(theta):
        ll, g = nl_loglik_and_gradient(theta, dataset)
        return -ll, -g

    res = lbfgs_minimize(objective, theta0, settings)
    params = NlParams.from_theta(res.x)
    try:
        se = nl_std_errors(params, dataset)
    except HessianError:
        se = None
    return EstimationResult(
        params=params,
        std_errors=se,
        ll_final=-res.fun,
        ll_null=null_loglikelihood(dataset),
        n_obs=dataset.n_individuals,
        converged=res.converged,
        iterations=res.iterations,
        message=res.message,
        settings=settings,
    )


class NestedLogitModel:
    """Fitted (or known) nested logit parameters usable as a choice model."""

    model_kind = "nested_logit"

    def __init__(self, params: NlParams, estimation: EstimationResult | None = None):
        self.params = params
        self.estimation = estimation

    def probabilities(self, dataset: Dataset) -> np.ndarray:
        return nl_probabilities(self.params, dataset)

    def log_probabilities_chosen(self, dataset: Dataset) -> np.ndarray:
        return chosen_log_probabilities(nl_utilities(self.params, dataset), dataset)

