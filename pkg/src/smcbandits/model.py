"""Probabilistic bandit model: parameter layout, links, likelihood, priors, dynamics.

Every arm ``k`` (1-based at the public surface) has a coefficient row
``beta[k-1]`` of length ``d``; coordinate 0 of every context is the intercept.
Optional shared coefficients ``tau`` act on the leading ``shared_dim`` context
coordinates of every arm, and ``phi`` holds hierarchical hyperparameters.

The single-particle functions (``expected_reward``, ``log_likelihood``, ...)
are thin wrappers over batch routines that operate on stacked particle arrays
of shape ``(N, K, d)``, ``(N, s)`` and ``(N, h)``; the SMC engine uses the
batch routines directly.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np
from scipy import special

from .errors import ContractError, InvalidInputError

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)
_LOG_2PI = math.log(2.0 * math.pi)

ArrayLike = Union[float, np.ndarray]


class Link(str, Enum):
    PROBIT = "probit"
    LOGIT = "logit"


# ---------------------------------------------------------------------------
# link functions
# ---------------------------------------------------------------------------


def _cdf(link: Link, u: np.ndarray) -> np.ndarray:
    if link is Link.PROBIT:
        return special.ndtr(u)
    return special.expit(u)


def link_eval(link: Link | str, u: ArrayLike) -> ArrayLike:
    """Map a linear predictor to a success probability.

    Probit uses the standard normal CDF, logit the logistic function.  Accepts
    scalars or arrays; scalars come back as ``float``.
    """
    link = Link(link)
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("link_eval requires a finite linear predictor")
    out = _cdf(link, arr)
    return float(out) if out.ndim == 0 else out


def link_inverse(link: Link | str, p: ArrayLike) -> ArrayLike:
    """Inverse link; ``p`` is clamped to ``[1e-12, 1 - 1e-12]`` first."""
    link = Link(link)
    arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInputError("link_inverse requires probabilities in [0, 1]")
    arr = np.clip(arr, PROB_FLOOR, 1.0 - PROB_FLOOR)
    out = special.ndtri(arr) if link is Link.PROBIT else special.logit(arr)
    return float(out) if out.ndim == 0 else out


def clamped_prob(link: Link, eta: np.ndarray) -> np.ndarray:
    return np.clip(_cdf(link, eta), PROB_FLOOR, 1.0 - PROB_FLOOR)


def bernoulli_loglik(link: Link, eta: np.ndarray, y) -> np.ndarray:
    """Clamped Bernoulli log-likelihood of reward(s) ``y`` at predictor ``eta``.

    Both links are symmetric, so ``1 - F(eta) = F(-eta)`` gives the failure
    probability without cancellation.
    """
    sign = np.where(np.asarray(y) > 0, 1.0, -1.0)
    q = np.clip(_cdf(link, sign * eta), PROB_FLOOR, 1.0 - PROB_FLOOR)
    return np.log(q)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


def _as_float_array(x, ndim: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim != ndim:
        raise InvalidInputError(f"{name} must have {ndim} dimension(s), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParamVector:
    """One particle: arm coefficients, shared coefficients, hyperparameters."""

    beta: np.ndarray
    tau: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "beta", _as_float_array(self.beta, 2, "beta"))
        object.__setattr__(self, "tau", _as_float_array(self.tau, 1, "tau"))
        object.__setattr__(self, "phi", _as_float_array(self.phi, 1, "phi"))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta.ravel(), self.tau, self.phi])

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return (
            np.array_equal(self.beta, other.beta)
            and np.array_equal(self.tau, other.tau)
            and np.array_equal(self.phi, other.phi)
        )


@dataclass(frozen=True, eq=False)
class InteractionRecord:
    """A single (context, arm, reward) observation; ``arm`` is 1-based."""

    context: np.ndarray
    arm: int
    reward: int
    time_index: int = 1

    def __post_init__(self):
        object.__setattr__(self, "context", _as_float_array(self.context, 1, "context"))
        if int(self.arm) != self.arm or self.arm < 1:
            raise InvalidInputError(f"arm must be a positive integer, got {self.arm!r}")
        if self.reward not in (0, 1):
            raise InvalidInputError(f"reward must be 0 or 1, got {self.reward!r}")
        if int(self.time_index) != self.time_index or self.time_index < 1:
            raise InvalidInputError(f"time_index must be >= 1, got {self.time_index!r}")
        object.__setattr__(self, "arm", int(self.arm))
        object.__setattr__(self, "reward", int(self.reward))
        object.__setattr__(self, "time_index", int(self.time_index))

    def __eq__(self, other):
        if not isinstance(other, InteractionRecord):
            return NotImplemented
        return (
            np.array_equal(self.context, other.context)
            and (self.arm, self.reward, self.time_index)
            == (other.arm, other.reward, other.time_index)
        )


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


def _vec(value, length: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(length, float(arr))
    if arr.shape != (length,):
        raise InvalidInputError(f"{name} has length {arr.size}, expected {length}")
    return arr


def _normal_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _freeze(value):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    return tuple(float(v) for v in arr.ravel())


@dataclass(frozen=True)
class IndependentNormalPrior:
    """Independent Gaussian prior on every ``beta`` and ``tau`` coordinate.

    ``mean`` and ``variance`` are scalars (broadcast) or vectors of length
    ``K*d + s`` in the order ``beta.ravel()`` then ``tau``.
    """

    mean: float | tuple = 0.0
    variance: float | tuple = 10.0

    hier_dim = 0
    kind = "independent-normal"

    def __post_init__(self):
        object.__setattr__(self, "mean", _freeze(self.mean))
        object.__setattr__(self, "variance", _freeze(self.variance))
        var = np.asarray(self.variance)
        if not np.all(np.isfinite(var)) or np.any(var <= 0):
            raise InvalidInputError("prior variances must be finite and strictly positive")
        if not np.all(np.isfinite(np.asarray(self.mean))):
            raise InvalidInputError("prior means must be finite")

    def validate(self, K: int, d: int, s: int) -> None:
        self.moments(K, d, s)

    def moments(self, K: int, d: int, s: int) -> tuple[np.ndarray, np.ndarray]:
        n = K * d + s
        return _vec(self.mean, n, "prior mean"), _vec(self.variance, n, "prior variance")

    def sample_batch(self, K, d, s, n, rng):
        mean, var = self.moments(K, d, s)
        draws = mean + np.sqrt(var) * rng.standard_normal((n, mean.size))
        return draws[:, : K * d].reshape(n, K, d), draws[:, K * d:], np.zeros((n, 0))

    def logdensity_batch(self, beta, tau, phi):
        n, K, d = beta.shape
        mean, var = self.moments(K, d, tau.shape[1])
        flat = np.concatenate([beta.reshape(n, -1), tau], axis=1)
        return _normal_logpdf(flat, mean, var).sum(axis=1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean, "variance": self.variance}


@dataclass(frozen=True)
class HierarchicalNormalPrior:
    """Slopes in ``slope_columns`` share a Gaussian with random mean and scale.

    ``phi = (nu, log sigma2)`` with ``nu ~ N(nu_mean, nu_variance)``.  The slope
    variance ``sigma2`` is held fixed unless ``log_sigma2_variance`` is given,
    in which case ``log sigma2 ~ N(log(sigma2), log_sigma2_variance)``.  All
    remaining ``beta`` entries and ``tau`` get ``N(base_mean, base_variance)``.
    """

    slope_columns: tuple = (1,)
    nu_mean: float = 0.0
    nu_variance: float = 1.0
    sigma2: float = 1.0
    log_sigma2_variance: float | None = None
    base_mean: float = 0.0
    base_variance: float = 10.0

    hier_dim = 2
    kind = "hierarchical-normal"

    def __post_init__(self):
        object.__setattr__(self, "slope_columns", tuple(int(c) for c in self.slope_columns))
        variances = [self.nu_variance, self.sigma2, self.base_variance]
        if self.log_sigma2_variance is not None:
            variances.append(self.log_sigma2_variance)
        if any(not math.isfinite(v) or v <= 0 for v in variances):
            raise InvalidInputError("hierarchical prior variances must be strictly positive")
        if not self.slope_columns:
            raise InvalidInputError("slope_columns must not be empty")

    @property
    def sigma2_fixed(self) -> bool:
        return self.log_sigma2_variance is None

    def validate(self, K: int, d: int, s: int) -> None:
        if any(c < 0 or c >= d for c in self.slope_columns):
            raise InvalidInputError(f"slope_columns {self.slope_columns} outside [0, {d})")

    def _mask(self, d: int) -> np.ndarray:
        mask = np.zeros(d, dtype=bool)
        mask[list(self.slope_columns)] = True
        return mask

    def sample_batch(self, K, d, s, n, rng):
        nu = self.nu_mean + math.sqrt(self.nu_variance) * rng.standard_normal(n)
        log_s2 = np.full(n, math.log(self.sigma2))
        if not self.sigma2_fixed:
            log_s2 = log_s2 + math.sqrt(self.log_sigma2_variance) * rng.standard_normal(n)
        base = self.base_mean + math.sqrt(self.base_variance) * rng.standard_normal((n, K, d))
        slopes = nu[:, None, None] + np.exp(0.5 * log_s2)[:, None, None] * rng.standard_normal((n, K, d))
        beta = np.where(self._mask(d), slopes, base)
        tau = self.base_mean + math.sqrt(self.base_variance) * rng.standard_normal((n, s))
        return beta, tau, np.column_stack([nu, log_s2])

    def logdensity_batch(self, beta, tau, phi):
        n, K, d = beta.shape
        mask = self._mask(d)
        nu, log_s2 = phi[:, 0], phi[:, 1]
        out = _normal_logpdf(nu, self.nu_mean, self.nu_variance)
        if self.sigma2_fixed:
            ok = np.isclose(log_s2, math.log(self.sigma2), rtol=0.0, atol=1e-12)
            out = np.where(ok, out, -np.inf)
        else:
            out = out + _normal_logpdf(log_s2, math.log(self.sigma2), self.log_sigma2_variance)
        s2 = np.exp(log_s2)[:, None]
        out = out + _normal_logpdf(beta[:, :, mask].reshape(n, -1), nu[:, None], s2).sum(axis=1)
        out = out + _normal_logpdf(
            beta[:, :, ~mask].reshape(n, -1), self.base_mean, self.base_variance
        ).sum(axis=1)
        out = out + _normal_logpdf(tau, self.base_mean, self.base_variance).sum(axis=1)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "slope_columns": list(self.slope_columns),
            "nu_mean": self.nu_mean,
            "nu_variance": self.nu_variance,
            "sigma2": self.sigma2,
            "log_sigma2_variance": self.log_sigma2_variance,
            "base_mean": self.base_mean,
            "base_variance": self.base_variance,
        }


PriorSpec = Union[IndependentNormalPrior, HierarchicalNormalPrior]


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomWalkDynamics:
    """Gaussian random walk on the parameters.

    A scalar ``step_variance`` applies to every ``beta`` coordinate and leaves
    ``tau``/``phi`` static; a vector gives one variance per flattened
    coordinate (``beta.ravel()``, ``tau``, ``phi``).  Zero freezes a coordinate.
    """

    step_variance: float | tuple = 1.0

    kind = "random-walk"

    def __post_init__(self):
        object.__setattr__(self, "step_variance", _freeze(self.step_variance))
        var = np.asarray(self.step_variance)
        if not np.all(np.isfinite(var)) or np.any(var < 0):
            raise InvalidInputError("step variances must be finite and non-negative")

    def variances(self, K: int, d: int, s: int, h: int) -> np.ndarray:
        var = np.asarray(self.step_variance, dtype=float)
        if var.ndim == 0:
            return np.concatenate([np.full(K * d, float(var)), np.zeros(s + h)])
        return _vec(var, K * d + s + h, "step_variance")

    def propagate_batch(self, beta, tau, phi, rng):
        n, K, d = beta.shape
        sd = np.sqrt(self.variances(K, d, tau.shape[1], phi.shape[1]))
        # frozen coordinates draw nothing, keeping the RNG stream identical to the static path
        live = np.flatnonzero(sd > 0)
        noise = np.zeros((n, sd.size))
        noise[:, live] = sd[live] * rng.standard_normal((n, live.size))
        kd, s = K * d, tau.shape[1]
        return (
            beta + noise[:, :kd].reshape(n, K, d),
            tau + noise[:, kd:kd + s],
            phi + noise[:, kd + s:],
        )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "step_variance": self.step_variance}


# ---------------------------------------------------------------------------
# observation model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationModel:
    """Binary-reward GLM bandit: ``P(y=1 | arm k, x) = link(beta_k . x + tau . x[:s])``."""

    K: int
    d: int
    link: Link = Link.PROBIT
    prior: PriorSpec = field(default_factory=IndependentNormalPrior)
    dynamics: RandomWalkDynamics | None = None
    shared_dim: int = 0
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "link", Link(self.link))
        if self.K < 1 or self.d < 1:
            raise InvalidInputError(f"need K >= 1 and d >= 1, got K={self.K}, d={self.d}")
        if not 0 <= self.shared_dim <= self.d:
            raise InvalidInputError("shared_dim must lie in [0, d]")
        self.prior.validate(self.K, self.d, self.shared_dim)
        if self.dynamics is not None:
            self.dynamics.variances(self.K, self.d, self.shared_dim, self.hier_dim)

    @property
    def hier_dim(self) -> int:
        return self.prior.hier_dim

    @property
    def is_dynamic(self) -> bool:
        return self.dynamics is not None

    def without_dynamics(self) -> "ObservationModel":
        return ObservationModel(self.K, self.d, self.link, self.prior, None, self.shared_dim, self.intercept)

    def check_context(self, context) -> np.ndarray:
        x = np.asarray(context, dtype=float)
        if x.shape != (self.d,):
            raise InvalidInputError(f"context must have length {self.d}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("context contains non-finite entries")
        if self.intercept and x[0] != 1.0:
            raise InvalidInputError("context[0] is the intercept slot and must equal 1")
        return x

    def check_arm(self, arm: int) -> int:
        if int(arm) != arm or not 1 <= arm <= self.K:
            raise InvalidInputError(f"arm must be an integer in [1, {self.K}], got {arm!r}")
        return int(arm)

    def check_record(self, record: InteractionRecord) -> InteractionRecord:
        self.check_context(record.context)
        self.check_arm(record.arm)
        return record

    def check_params(self, params: ParamVector) -> ParamVector:
        if params.beta.shape != (self.K, self.d):
            raise InvalidInputError(f"beta must have shape ({self.K}, {self.d}), got {params.beta.shape}")
        if params.tau.shape != (self.shared_dim,) or params.phi.shape != (self.hier_dim,):
            raise InvalidInputError("tau/phi lengths do not match the model")
        return params

    def linear_predictor(self, beta: np.ndarray, tau: np.ndarray, context: np.ndarray) -> np.ndarray:
        """Per-arm predictors; ``beta`` is ``(K, d)`` or ``(N, K, d)``."""
        eta = beta @ context
        if self.shared_dim:
            eta = eta + (tau @ context[: self.shared_dim])[..., None]
        return eta

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "d": self.d,
            "link": self.link.value,
            "prior": self.prior.to_dict(),
            "dynamics": None if self.dynamics is None else self.dynamics.to_dict(),
            "shared_dim": self.shared_dim,
            "intercept": self.intercept,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# single-particle operations
# ---------------------------------------------------------------------------


def expected_reward(model: ObservationModel, params: ParamVector, arm: int, context) -> float:
    """Success probability of ``arm`` under ``params``, clamped away from 0 and 1."""
    model.check_params(params)
    k = model.check_arm(arm) - 1
    x = model.check_context(context)
    eta = model.linear_predictor(params.beta, params.tau, x)[k]
    return float(clamped_prob(model.link, eta))


def log_likelihood(model: ObservationModel, params: ParamVector, record: InteractionRecord) -> float:
    model.check_params(params)
    model.check_record(record)
    eta = model.linear_predictor(params.beta, params.tau, record.context)[record.arm - 1]
    return float(bernoulli_loglik(model.link, eta, record.reward))


def prior_sample(prior: PriorSpec, model: ObservationModel, rng: np.random.Generator) -> ParamVector:
    beta, tau, phi = prior.sample_batch(model.K, model.d, model.shared_dim, 1, rng)
    return ParamVector(beta[0], tau[0], phi[0])


def prior_logdensity(prior: PriorSpec, params: ParamVector) -> float:
    if params.phi.shape != (prior.hier_dim,):
        raise InvalidInputError(f"phi must have length {prior.hier_dim} for a {prior.kind} prior")
    K, d = params.beta.shape
    prior.validate(K, d, params.tau.size)
    return float(prior.logdensity_batch(params.beta[None], params.tau[None], params.phi[None])[0])


def dynamics_propagate(
    dynamics: RandomWalkDynamics | None, params: ParamVector, rng: np.random.Generator
) -> ParamVector:
    if dynamics is None:
        raise ContractError("dynamics_propagate called on a model without dynamics")
    beta, tau, phi = dynamics.propagate_batch(params.beta[None], params.tau[None], params.phi[None], rng)
    return ParamVector(beta[0], tau[0], phi[0])


def prior_from_dict(spec: dict) -> PriorSpec:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == IndependentNormalPrior.kind:
        return IndependentNormalPrior(**spec)
    if kind == HierarchicalNormalPrior.kind:
        spec["slope_columns"] = tuple(spec.get("slope_columns", (1,)))
        return HierarchicalNormalPrior(**spec)
    raise InvalidInputError(f"unknown prior kind {kind!r}")


def model_from_dict(spec: dict) -> ObservationModel:
    """Inverse of :meth:`ObservationModel.to_dict`."""
    dyn = spec.get("dynamics")
    dynamics = None
    if dyn is not None:
        if dyn.get("kind", RandomWalkDynamics.kind) != RandomWalkDynamics.kind:
            raise InvalidInputError(f"unknown dynamics kind {dyn['kind']!r}")
        dynamics = RandomWalkDynamics(dyn["step_variance"])
    return ObservationModel(
        K=int(spec["K"]),
        d=int(spec["d"]),
        link=Link(spec.get("link", "probit")),
        prior=prior_from_dict(spec["prior"]),
        dynamics=dynamics,
        shared_dim=int(spec.get("shared_dim", 0)),
        intercept=bool(spec.get("intercept", True)),
    )
