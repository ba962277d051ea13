"""Bandit policies behind a common select/update interface.

Every policy owns its random stream and returns 1-based arms.  ``select``
never commits state; ``update`` is the only mutating call, which is what the
replay evaluator relies on when it skips rows.
"""
from __future__ import annotations

import hashlib
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple

import numpy as np
from scipy import linalg, special

from .errors import ConfigurationError, ContractError, InvalidInputError, NumericalError
from .model import (
    IndependentNormalPrior,
    InteractionRecord,
    Link,
    ObservationModel,
    RandomWalkDynamics,
    link_eval,
)
from .smc import (
    History,
    MoveKernel,
    absorb_dynamic,
    absorb_static,
    argmax_random,
    init_particles,
    propagate,
    thompson_select,
)

POLICY_KINDS = ("smc-static", "smc-dynamic", "beta-ts", "eps-greedy", "ucb", "random", "fixed")


class Policy(ABC):
    kind = "abstract"

    def __init__(self, model: ObservationModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng

    @abstractmethod
    def select(self, context) -> int:
        """Return the arm (1-based) to play for ``context``."""

    @abstractmethod
    def update(self, record: InteractionRecord) -> "Policy":
        """Absorb an observed reward for the arm that was played."""

    def _state_arrays(self) -> Iterable[np.ndarray]:
        return ()

    def state_digest(self) -> str:
        """Hash of the learnable state (the random stream is excluded)."""
        h = hashlib.sha256()
        for a in self._state_arrays():
            a = np.ascontiguousarray(a)
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()


def policy_select(policy: Policy, context) -> int:
    policy = require_policy(policy)
    return policy.select(policy.model.check_context(context))


def policy_update(policy: Policy, record: InteractionRecord) -> Policy:
    policy = require_policy(policy)
    policy.model.check_record(record)
    return policy.update(record)


# ---------------------------------------------------------------------------
# trivial and conjugate policies
# ---------------------------------------------------------------------------


class RandomPolicy(Policy):
    kind = "random"

    def select(self, context) -> int:
        return int(self.rng.integers(self.model.K)) + 1

    def update(self, record):
        return self


class FixedArmPolicy(Policy):
    """Always plays one arm; a deterministic control for replay checks."""

    kind = "fixed"

    def __init__(self, model, rng, arm: int = 1):
        super().__init__(model, rng)
        self.arm = model.check_arm(arm)

    def select(self, context) -> int:
        return self.arm

    def update(self, record):
        return self


class BetaCounts(NamedTuple):
    alpha: np.ndarray
    beta: np.ndarray


def beta_posterior(prior: tuple[float, float], successes: int, trials: int) -> tuple[float, float]:
    """Conjugate update: ``Beta(a0, a1)`` after ``s`` successes in ``n`` trials."""
    a0, a1 = prior
    if a0 <= 0 or a1 <= 0:
        raise InvalidInputError("Beta prior shapes must be positive")
    if not 0 <= successes <= trials:
        raise InvalidInputError(f"need 0 <= successes <= trials, got {successes}/{trials}")
    return (a0 + successes, a1 + trials - successes)


class BetaTSPolicy(Policy):
    """Thompson sampling with independent Beta posteriors; contexts are ignored."""

    kind = "beta-ts"

    def __init__(self, model, rng, alpha0: float = 1.0, alpha1: float = 1.0):
        super().__init__(model, rng)
        if alpha0 <= 0 or alpha1 <= 0:
            raise InvalidInputError("Beta prior shapes must be positive")
        self.counts = BetaCounts(np.full(model.K, float(alpha0)), np.full(model.K, float(alpha1)))

    def select(self, context) -> int:
        draws = self.rng.beta(self.counts.alpha, self.counts.beta)
        return argmax_random(draws, self.rng) + 1

    def update(self, record):
        k = record.arm - 1
        alpha, beta = self.counts.alpha.copy(), self.counts.beta.copy()
        alpha[k] += record.reward
        beta[k] += 1 - record.reward
        self.counts = BetaCounts(alpha, beta)
        return self

    def _state_arrays(self):
        return self.counts


# ---------------------------------------------------------------------------
# GLM baselines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitEntry:
    """MAP coefficients and Laplace covariance for one arm."""

    beta: np.ndarray
    cov: np.ndarray
    converged: bool = True
    iterations: int = 0


def _arm_prior(prior, K: int, d: int, arm: int) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(prior, IndependentNormalPrior):
        raise ConfigurationError("GLM baselines need an independent-normal prior")
    mean, var = prior.moments(K, d, 0)
    return mean.reshape(K, d)[arm - 1], var.reshape(K, d)[arm - 1]


def _glm_terms(link: Link, eta: np.ndarray, y: np.ndarray):
    """Log-likelihood, score and negative curvature per record."""
    s = np.where(y > 0, 1.0, -1.0)
    v = s * eta
    if link is Link.PROBIT:
        logcdf = special.log_ndtr(v)
        lam = np.exp(-0.5 * v * v - 0.5 * math.log(2 * math.pi) - logcdf)
        return logcdf, s * lam, lam * (lam + v)
    p = special.expit(eta)
    return special.log_expit(v), s * special.expit(-v), p * (1.0 - p)


def map_fit(
    history: History,
    arm: int,
    prior=None,
    link: Link = Link.PROBIT,
    init: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> FitEntry:
    """Damped Newton MAP fit of one arm's GLM coefficients under a Gaussian prior.

    Stops once the gradient norm of the log posterior is at most ``tol``; on
    hitting ``max_iter`` the best iterate is returned with ``converged=False``.
    """
    link = Link(link)
    prior = IndependentNormalPrior(0.0, 10.0) if prior is None else prior
    mu, var = _arm_prior(prior, history.K, history.d, arm)
    prec = 1.0 / var
    X, y = history.arm_data(arm)
    b = mu.copy() if init is None else np.array(init, dtype=float)

    def evaluate(b):
        ll, score, curv = _glm_terms(link, X @ b, y)
        dev = b - mu
        value = ll.sum() - 0.5 * np.sum(prec * dev * dev)
        grad = X.T @ score - prec * dev
        hess = (X.T * curv) @ X + np.diag(prec)
        return value, grad, hess

    value, grad, hess = evaluate(b)
    it = 0
    while it < max_iter and np.linalg.norm(grad) > tol:
        it += 1
        step = linalg.solve(hess, grad, assume_a="pos")
        slope = grad @ step
        t = 1.0
        while True:
            cand = b + t * step
            c_value, c_grad, c_hess = evaluate(cand)
            if c_value >= value + 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if c_value < value:
            break  # no further progress at working precision
        b, value, grad, hess = cand, c_value, c_grad, c_hess
    cov = linalg.inv(hess)
    converged = bool(np.linalg.norm(grad) <= tol)
    return FitEntry(b, 0.5 * (cov + cov.T), converged, it)


def _check_psd(cov: np.ndarray) -> None:
    if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
        raise NumericalError("covariance is not symmetric positive semi-definite")


def ucb_score(fit: FitEntry, context, confidence: float, link: Link = Link.PROBIT) -> float:
    """Upper confidence bound on the success probability (one-sided interval)."""
    if not 0.0 < confidence < 1.0:
        raise InvalidInputError("confidence must lie in (0, 1)")
    x = np.asarray(context, dtype=float)
    _check_psd(fit.cov)
    spread = math.sqrt(max(float(x @ fit.cov @ x), 0.0))
    z = float(special.ndtri(confidence))
    return link_eval(link, float(x @ fit.beta) + z * spread)


def eps_greedy_select(
    fits: list[FitEntry],
    context,
    epsilon: float,
    rng: np.random.Generator,
    link: Link = Link.PROBIT,
    exclude_greedy: bool = False,
) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidInputError("epsilon must lie in [0, 1]")
    x = np.asarray(context, dtype=float)
    explore = rng.random() < epsilon
    greedy = argmax_random(np.array([f.beta @ x for f in fits]), rng)
    if not explore:
        return greedy + 1
    K = len(fits)
    if exclude_greedy and K > 1:
        others = [k for k in range(K) if k != greedy]
        return int(rng.choice(others)) + 1
    return int(rng.integers(K)) + 1


class _GLMPolicy(Policy):
    def __init__(self, model, rng):
        super().__init__(model, rng)
        if model.shared_dim:
            raise ConfigurationError("GLM baselines do not model shared coefficients")
        self.history = History(model.K, model.d)
        self.fits = [map_fit(self.history, k + 1, model.prior, model.link) for k in range(model.K)]

    def update(self, record):
        self.history.append(record)
        k = record.arm
        self.fits[k - 1] = map_fit(self.history, k, self.model.prior, self.model.link, init=self.fits[k - 1].beta)
        return self

    def _state_arrays(self):
        out = [self.history.arrays()[0], self.history.arrays()[2]]
        for f in self.fits:
            out += [f.beta, f.cov]
        return out


class EpsGreedyPolicy(_GLMPolicy):
    kind = "eps-greedy"

    def __init__(self, model, rng, epsilon: float = 0.1, exclude_greedy: bool = False):
        super().__init__(model, rng)
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidInputError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon
        self.exclude_greedy = exclude_greedy

    def select(self, context) -> int:
        x = self.model.check_context(context)
        return eps_greedy_select(self.fits, x, self.epsilon, self.rng, self.model.link, self.exclude_greedy)


class UCBPolicy(_GLMPolicy):
    kind = "ucb"

    def __init__(self, model, rng, confidence: float = 0.95):
        super().__init__(model, rng)
        if not 0.0 < confidence < 1.0:
            raise InvalidInputError("confidence must lie in (0, 1)")
        self.confidence = confidence
        self._z = float(special.ndtri(confidence))

    def select(self, context) -> int:
        x = self.model.check_context(context)
        # rank on the linear scale; the link is monotone
        bounds = np.array([f.beta @ x + self._z * math.sqrt(max(x @ f.cov @ x, 0.0)) for f in self.fits])
        return argmax_random(bounds, self.rng) + 1


# ---------------------------------------------------------------------------
# SMC policies
# ---------------------------------------------------------------------------


class SMCStaticPolicy(Policy):
    """Thompson sampling from a resample-move particle approximation."""

    kind = "smc-static"

    def __init__(
        self,
        model,
        rng,
        n_particles: int = 500,
        threshold: float | None = None,
        kernel: MoveKernel | None = None,
        scheme: str = "multinomial",
        strict: bool = True,
    ):
        model = model.without_dynamics() if model.is_dynamic else model
        super().__init__(model, rng)
        self.threshold = threshold
        self.kernel = kernel or MoveKernel()
        self.scheme = scheme
        self.strict = strict
        self.history = History(model.K, model.d)
        self.particles = init_particles(model, n_particles, rng)
        self.resampled = False

    def select(self, context) -> int:
        return thompson_select(self.particles, context, self.rng)

    def update(self, record):
        self.particles, self.resampled = absorb_static(
            self.particles, record, self.history, self.rng, self.threshold, self.kernel, self.scheme, self.strict
        )
        return self

    def _state_arrays(self):
        return self.particles.state_arrays()


class SMCDynamicPolicy(Policy):
    """Thompson sampling for drifting parameters.

    ``select`` propagates a tentative copy of the particles; ``update`` commits
    that copy (or propagates afresh if no selection preceded it).
    """

    kind = "smc-dynamic"

    def __init__(
        self,
        model,
        rng,
        n_particles: int = 500,
        threshold: float | None = None,
        scheme: str = "multinomial",
        step_variance: float = 1.0,
        strict: bool = True,
    ):
        if not model.is_dynamic:
            model = ObservationModel(
                model.K, model.d, model.link, model.prior, RandomWalkDynamics(step_variance),
                model.shared_dim, model.intercept,
            )
        super().__init__(model, rng)
        self.threshold = threshold
        self.scheme = scheme
        self.strict = strict
        self.particles = init_particles(model, n_particles, rng)
        self._pending = None
        self.resampled = False

    def select(self, context) -> int:
        self._pending = propagate(self.particles, self.rng)
        return thompson_select(self._pending, context, self.rng)

    def update(self, record):
        prop = self._pending if self._pending is not None else propagate(self.particles, self.rng)
        self._pending = None
        self.particles, self.resampled = absorb_dynamic(
            prop, record, self.rng, self.threshold, self.scheme, self.strict
        )
        return self

    def _state_arrays(self):
        return self.particles.state_arrays()


# ---------------------------------------------------------------------------
# construction from configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SMCSettings:
    n_particles: int = 500
    threshold: float | None = None
    scheme: str = "multinomial"
    kernel: str = "probit-gibbs"
    sweeps: int = 1
    step_scale: float = 0.1
    strict: bool = True

    def move_kernel(self) -> MoveKernel:
        return MoveKernel(self.kernel, self.sweeps, self.step_scale)


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    params: dict = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigurationError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "eps-greedy":
            return f"eps-greedy({self.params.get('epsilon', 0.1)})"
        if self.kind == "ucb":
            return f"ucb({self.params.get('confidence', 0.95)})"
        if self.kind == "fixed":
            return f"fixed({self.params.get('arm', 1)})"
        return self.kind


def build_policy(
    spec: PolicySpec, model: ObservationModel, rng: np.random.Generator, smc: SMCSettings | None = None
) -> Policy:
    smc = smc or SMCSettings()
    p: dict[str, Any] = dict(spec.params)
    try:
        if spec.kind == "random":
            return RandomPolicy(model, rng)
        if spec.kind == "fixed":
            return FixedArmPolicy(model, rng, **p)
        if spec.kind == "beta-ts":
            return BetaTSPolicy(model, rng, **p)
        if spec.kind == "eps-greedy":
            return EpsGreedyPolicy(model.without_dynamics(), rng, **p)
        if spec.kind == "ucb":
            return UCBPolicy(model.without_dynamics(), rng, **p)
        if spec.kind == "smc-static":
            return SMCStaticPolicy(
                model, rng, smc.n_particles, smc.threshold, smc.move_kernel(), smc.scheme, smc.strict
            )
        return SMCDynamicPolicy(
            model, rng, smc.n_particles, smc.threshold, smc.scheme, p.pop("step_variance", 1.0), smc.strict
        )
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for policy {spec.kind!r}: {exc}") from exc


def require_policy(policy) -> Policy:
    if not isinstance(policy, Policy):
        raise ContractError(f"expected an initialised Policy, got {type(policy).__name__}")
    return policy
