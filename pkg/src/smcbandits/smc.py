"""Weighted particle approximation of the bandit posterior.

Implements the static resample-move bandit loop (reweight, monitor the
effective sample size, resample and rejuvenate with a posterior-invariant
kernel) and the dynamic variant (propagate through the parameter dynamics,
reweight, resample).  Weights are kept in the log domain and normalised after
every operation.

Particle arrays are stacked: ``beta`` is ``(N, K, d)``, ``tau`` ``(N, s)`` and
``phi`` ``(N, h)``.  All operations return new :class:`ParticleSet` objects and
never write into the arrays of their input.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import linalg, special

from .errors import (
    ConfigurationError,
    ContractError,
    DegeneracyError,
    InvalidInputError,
    NumericalError,
)
from .model import (
    LOG_FLOOR,
    IndependentNormalPrior,
    InteractionRecord,
    Link,
    ObservationModel,
    ParamVector,
    bernoulli_loglik,
    model_from_dict,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "smcbandits-checkpoint"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# history
# ---------------------------------------------------------------------------


class _Rows:
    """Append-only row buffer with amortised doubling."""

    def __init__(self, width: int):
        self._data = np.empty((8, width))
        self.n = 0

    def append(self, row) -> None:
        if self.n == self._data.shape[0]:
            grown = np.empty((2 * self.n, self._data.shape[1]))
            grown[: self.n] = self._data[: self.n]
            self._data = grown
        self._data[self.n] = row
        self.n += 1

    @property
    def view(self) -> np.ndarray:
        return self._data[: self.n]

    def copy(self) -> "_Rows":
        out = _Rows(self._data.shape[1])
        out._data = self._data[: max(self.n, 8)].copy()
        out.n = self.n
        return out


class History:
    """Accepted interaction records, indexed globally and per arm.

    The probit Gibbs kernel needs the raw per-arm design matrices, so nothing is
    compressed into sufficient statistics apart from the cached Gram matrices.
    """

    def __init__(self, K: int, d: int):
        self.K, self.d = K, d
        self._records: list[InteractionRecord] = []
        self._all = _Rows(d + 2)
        self._arm = [_Rows(d + 1) for _ in range(K)]
        self._gram = np.zeros((K, d, d))

    def append(self, record: InteractionRecord) -> None:
        if record.context.shape != (self.d,):
            raise InvalidInputError(f"record context must have length {self.d}")
        if not 1 <= record.arm <= self.K:
            raise InvalidInputError(f"record arm {record.arm} outside [1, {self.K}]")
        if self._records and record.time_index <= self._records[-1].time_index:
            raise InvalidInputError("history time_index must be strictly increasing")
        x = record.context
        self._records.append(record)
        self._all.append(np.concatenate([x, [record.arm, record.reward]]))
        self._arm[record.arm - 1].append(np.concatenate([x, [record.reward]]))
        self._gram[record.arm - 1] += np.outer(x, x)

    def extend(self, records: Sequence[InteractionRecord]) -> None:
        for r in records:
            self.append(r)

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[InteractionRecord]:
        return list(self._records)

    def arm_data(self, arm: int) -> tuple[np.ndarray, np.ndarray]:
        """Contexts ``(n_k, d)`` and rewards ``(n_k,)`` observed on ``arm`` (1-based)."""
        rows = self._arm[arm - 1].view
        return rows[:, : self.d], rows[:, self.d]

    def arm_counts(self) -> np.ndarray:
        return np.array([r.n for r in self._arm])

    def gram(self, arm: int) -> np.ndarray:
        return self._gram[arm - 1]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All contexts, 1-based arms and rewards in arrival order."""
        rows = self._all.view
        return rows[:, : self.d], rows[:, self.d].astype(int), rows[:, self.d + 1]

    def copy(self) -> "History":
        out = History(self.K, self.d)
        out._records = list(self._records)
        out._all = self._all.copy()
        out._arm = [r.copy() for r in self._arm]
        out._gram = self._gram.copy()
        return out


# ---------------------------------------------------------------------------
# particle set
# ---------------------------------------------------------------------------


def _normalise(log_w: np.ndarray) -> np.ndarray:
    lse = special.logsumexp(log_w)
    if not np.isfinite(lse):
        raise DegeneracyError("log-weights have no finite mass")
    # already-normalised input is left bit-identical so checkpoints round-trip
    return log_w if abs(lse) < 1e-12 else log_w - lse


@dataclass(frozen=True, eq=False)
class ParticleSet:
    model: ObservationModel
    beta: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    log_weights: np.ndarray
    t: int = 0

    def __post_init__(self):
        N = self.beta.shape[0]
        if N < 1:
            raise InvalidInputError("a particle set needs at least one particle")
        m = self.model
        if (
            self.beta.shape != (N, m.K, m.d)
            or self.tau.shape != (N, m.shared_dim)
            or self.phi.shape != (N, m.hier_dim)
            or self.log_weights.shape != (N,)
        ):
            raise InvalidInputError("particle arrays do not match the model dimensions")
        object.__setattr__(self, "log_weights", _normalise(np.asarray(self.log_weights, dtype=float)))

    @property
    def N(self) -> int:
        return self.beta.shape[0]

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        return w / w.sum()

    @property
    def particles(self) -> list[ParamVector]:
        return [ParamVector(self.beta[i], self.tau[i], self.phi[i]) for i in range(self.N)]

    def particle(self, i: int) -> ParamVector:
        return ParamVector(self.beta[i], self.tau[i], self.phi[i])

    @classmethod
    def from_particles(
        cls,
        model: ObservationModel,
        particles: Sequence[ParamVector],
        log_weights=None,
        t: int = 0,
    ) -> "ParticleSet":
        for p in particles:
            model.check_params(p)
        beta = np.stack([p.beta for p in particles])
        tau = np.stack([p.tau for p in particles]).reshape(len(particles), model.shared_dim)
        phi = np.stack([p.phi for p in particles]).reshape(len(particles), model.hier_dim)
        if log_weights is None:
            log_weights = np.zeros(len(particles))
        return cls(model, beta, tau, phi, np.asarray(log_weights, dtype=float), t)

    def with_values(self, beta=None, tau=None, phi=None, log_weights=None, t=None) -> "ParticleSet":
        return replace(
            self,
            beta=self.beta if beta is None else beta,
            tau=self.tau if tau is None else tau,
            phi=self.phi if phi is None else phi,
            log_weights=self.log_weights if log_weights is None else log_weights,
            t=self.t if t is None else t,
        )

    def state_arrays(self) -> tuple[np.ndarray, ...]:
        return self.beta, self.tau, self.phi, self.log_weights, np.array([self.t])


@dataclass(frozen=True)
class MoveKernel:
    """Posterior-invariant rejuvenation kernel applied after resampling."""

    kind: str = "probit-gibbs"
    sweeps: int = 1
    step_scale: float = 0.1

    def __post_init__(self):
        if self.kind not in ("probit-gibbs", "random-walk-metropolis"):
            raise ConfigurationError(f"unknown move kernel {self.kind!r}")
        if self.sweeps < 1:
            raise ConfigurationError("move sweeps must be >= 1")
        if self.step_scale < 0:
            raise ConfigurationError("random-walk step scale must be >= 0")


class StepResult(NamedTuple):
    particles: ParticleSet
    record: InteractionRecord
    resampled: bool


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------


def init_particles(model: ObservationModel, N: int, rng: np.random.Generator) -> ParticleSet:
    if int(N) != N or N < 1:
        raise InvalidInputError(f"N must be a positive integer, got {N!r}")
    beta, tau, phi = model.prior.sample_batch(model.K, model.d, model.shared_dim, int(N), rng)
    return ParticleSet(model, beta, tau, phi, np.zeros(int(N)), 0)


def incremental_loglik(pset: ParticleSet, record: InteractionRecord) -> np.ndarray:
    model = pset.model
    x = model.check_context(record.context)
    k = model.check_arm(record.arm) - 1
    eta = pset.beta[:, k, :] @ x
    if model.shared_dim:
        eta = eta + pset.tau @ x[: model.shared_dim]
    return bernoulli_loglik(model.link, eta, record.reward)


def reweight(pset: ParticleSet, record: InteractionRecord, strict: bool = True) -> ParticleSet:
    """Multiply every weight by the particle's likelihood of ``record``.

    When every particle sits at the clamped likelihood floor the posterior mass
    is numerically zero: ``strict`` raises :class:`DegeneracyError`, otherwise
    the weights are reset to uniform and a warning is logged.
    """
    inc = incremental_loglik(pset, record)
    if np.max(inc) <= LOG_FLOOR + 1e-9:
        if strict:
            raise DegeneracyError(f"all {pset.N} particles have zero likelihood at t={record.time_index}")
        logger.warning("weight degeneracy at t=%d; resetting to uniform weights", record.time_index)
        return pset.with_values(log_weights=np.zeros(pset.N), t=record.time_index)
    return pset.with_values(log_weights=pset.log_weights + inc, t=record.time_index)


def effective_sample_size(weights) -> float:
    """``1 / sum(w_i^2)`` of the normalised weights; accepts a set or a weight vector."""
    if isinstance(weights, ParticleSet):
        w = weights.weights
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    ess = 1.0 / np.sum(w * w)
    return float(min(max(ess, 1.0), w.size))


def resample_indices(weights: np.ndarray, scheme: str, rng: np.random.Generator) -> np.ndarray:
    N = weights.size
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    if scheme == "multinomial":
        u = rng.random(N)
    elif scheme == "systematic":
        u = (rng.random() + np.arange(N)) / N
    else:
        raise ConfigurationError(f"unknown resampling scheme {scheme!r}")
    return np.minimum(np.searchsorted(cdf, u, side="right"), N - 1)


def resample(pset: ParticleSet, scheme: str = "multinomial", rng: np.random.Generator | None = None) -> ParticleSet:
    if rng is None:
        raise InvalidInputError("resample needs an explicit random generator")
    idx = resample_indices(pset.weights, scheme, rng)
    return pset.with_values(
        beta=pset.beta[idx], tau=pset.tau[idx], phi=pset.phi[idx], log_weights=np.zeros(pset.N)
    )


# ---------------------------------------------------------------------------
# move kernels
# ---------------------------------------------------------------------------


def sample_latent(mean: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``z ~ N(mean, 1)`` truncated to ``(0, inf)`` where ``y = 1``, else ``(-inf, 0]``.

    Inverse-CDF on the side of the truncation point where the mass is not
    vanishing; falls back to log-space for predictors beyond ~37 sd.
    """
    sign = np.where(y > 0, 1.0, -1.0)
    return latent_from_uniform(mean, sign, rng.random(np.shape(mean)))


_TINY = float(np.finfo(float).tiny)


def latent_from_uniform(mean: np.ndarray, sign: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF core of :func:`sample_latent` (``sign = +1`` for ``y = 1``)."""
    sm = sign * mean
    u = np.maximum(u, _TINY)
    e = np.asarray(special.ndtri(u * special.ndtr(sm)))
    if e.size and e.min() == -np.inf:
        bad = np.isneginf(e)
        sm, u = np.broadcast_to(sm, e.shape), np.broadcast_to(u, e.shape)
        e[bad] = special.ndtri_exp(np.log(u[bad]) + special.log_ndtr(sm[bad]))
    return mean - sign * e


def _gibbs_factors(model: ObservationModel, history: History):
    """Per-arm Cholesky factor of the posterior precision and prior term."""
    mean0, var0 = model.prior.moments(model.K, model.d, 0)
    mean0 = mean0.reshape(model.K, model.d)
    prec0 = 1.0 / var0.reshape(model.K, model.d)
    factors = []
    for k in range(model.K):
        A = np.diag(prec0[k]) + history.gram(k + 1)
        try:
            L = linalg.cholesky(A, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"posterior precision of arm {k + 1} is not positive definite") from exc
        factors.append((L, prec0[k] * mean0[k]))
    return factors


def _check_gibbs(model: ObservationModel) -> None:
    if model.link is not Link.PROBIT:
        raise ConfigurationError("probit-gibbs requires a probit link")
    if not isinstance(model.prior, IndependentNormalPrior):
        raise ConfigurationError("probit-gibbs requires an independent-normal prior")
    if model.shared_dim:
        raise ConfigurationError("probit-gibbs does not support shared coefficients")


def probit_gibbs_batch(
    model: ObservationModel, beta: np.ndarray, history: History, rng: np.random.Generator, factors=None
) -> np.ndarray:
    """One data-augmentation Gibbs sweep for every particle in ``beta`` ``(N, K, d)``."""
    _check_gibbs(model)
    if factors is None:
        factors = _gibbs_factors(model, history)
    N = beta.shape[0]
    out = np.empty_like(beta)
    for k, (L, prior_term) in enumerate(factors):
        X, y = history.arm_data(k + 1)
        rhs = np.broadcast_to(prior_term, (N, model.d))
        if y.size:
            z = sample_latent(beta[:, k, :] @ X.T, y[None, :], rng)
            rhs = rhs + z @ X
        mean = linalg.cho_solve((L, True), rhs.T)
        eps = rng.standard_normal((model.d, N))
        out[:, k, :] = (mean + linalg.solve_triangular(L, eps, lower=True, trans="T")).T
    return out


def probit_gibbs_sweep(
    particle: ParamVector, history: History, model: ObservationModel, rng: np.random.Generator
) -> ParamVector:
    """Albert-Chib sweep: latent truncated normals, then conjugate Gaussian coefficients."""
    model.check_params(particle)
    beta = probit_gibbs_batch(model, particle.beta[None], history, rng)
    return ParamVector(beta[0], particle.tau, particle.phi)


def history_loglik_batch(model: ObservationModel, beta: np.ndarray, tau: np.ndarray, history: History) -> np.ndarray:
    total = np.zeros(beta.shape[0])
    for k in range(model.K):
        X, y = history.arm_data(k + 1)
        if not y.size:
            continue
        eta = beta[:, k, :] @ X.T
        if model.shared_dim:
            eta = eta + tau @ X[:, : model.shared_dim].T
        total += bernoulli_loglik(model.link, eta, y[None, :]).sum(axis=1)
    return total


def _log_target(model, beta, tau, phi, history):
    return model.prior.logdensity_batch(beta, tau, phi) + history_loglik_batch(model, beta, tau, history)


def _rwm_scales(model: ObservationModel, step_scale: float) -> np.ndarray:
    scales = np.full(model.K * model.d + model.shared_dim + model.hier_dim, step_scale)
    if model.hier_dim and getattr(model.prior, "sigma2_fixed", False):
        scales[-1] = 0.0
    return scales


def random_walk_metropolis_batch(
    pset: ParticleSet, history: History, step_scale: float, sweeps: int, rng: np.random.Generator
) -> ParticleSet:
    model = pset.model
    N, K, d = pset.beta.shape
    s, h = model.shared_dim, model.hier_dim
    flat = np.concatenate([pset.beta.reshape(N, -1), pset.tau, pset.phi], axis=1)
    scales = _rwm_scales(model, step_scale)

    def split(v):
        return v[:, : K * d].reshape(N, K, d), v[:, K * d:K * d + s], v[:, K * d + s:]

    current = _log_target(model, *split(flat), history)
    for _ in range(sweeps):
        proposal = flat + scales * rng.standard_normal(flat.shape)
        cand = _log_target(model, *split(proposal), history)
        accept = np.log(rng.random(N)) < cand - current
        flat = np.where(accept[:, None], proposal, flat)
        current = np.where(accept, cand, current)
    beta, tau, phi = split(flat)
    return pset.with_values(beta=beta, tau=tau, phi=phi)


def move(pset: ParticleSet, kernel: MoveKernel, history: History, rng: np.random.Generator) -> ParticleSet:
    """Rejuvenate every particle with ``kernel.sweeps`` posterior-invariant updates."""
    if pset.model.is_dynamic:
        raise ContractError("move is only defined for static models; dynamic models rely on propagation")
    if kernel.kind == "probit-gibbs":
        _check_gibbs(pset.model)
        factors = _gibbs_factors(pset.model, history)
        beta = pset.beta
        for _ in range(kernel.sweeps):
            beta = probit_gibbs_batch(pset.model, beta, history, rng, factors)
        return pset.with_values(beta=beta)
    return random_walk_metropolis_batch(pset, history, kernel.step_scale, kernel.sweeps, rng)


def propagate(pset: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    dyn = pset.model.dynamics
    if dyn is None:
        raise ContractError("propagate called on a model without dynamics")
    beta, tau, phi = dyn.propagate_batch(pset.beta, pset.tau, pset.phi, rng)
    return pset.with_values(beta=beta, tau=tau, phi=phi)


# ---------------------------------------------------------------------------
# decisions
# ---------------------------------------------------------------------------


def _draw_index(weights: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(weights)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), weights.size - 1)


def argmax_random(values: np.ndarray, rng: np.random.Generator) -> int:
    """0-based argmax with uniform tie-breaking."""
    best = np.flatnonzero(values == values.max())
    if best.size == 1:
        return int(best[0])
    return int(rng.choice(best))


def thompson_select(pset: ParticleSet, context, rng: np.random.Generator) -> int:
    """Draw one particle by weight and return its best arm (1-based)."""
    x = pset.model.check_context(context)
    i = _draw_index(pset.weights, rng)
    # the link is strictly increasing, so ranking predictors avoids clamping ties
    eta = pset.model.linear_predictor(pset.beta[i], pset.tau[i], x)
    return argmax_random(eta, rng) + 1


def probability_of_optimality(pset: ParticleSet, context) -> np.ndarray:
    x = pset.model.check_context(context)
    eta = pset.model.linear_predictor(pset.beta, pset.tau, x)
    is_max = eta == eta.max(axis=1, keepdims=True)
    shares = is_max / is_max.sum(axis=1, keepdims=True)
    return pset.weights @ shares


def posterior_summary(pset: ParticleSet) -> tuple[ParamVector, ParamVector]:
    w = pset.weights

    def moments(a):
        flat = a.reshape(a.shape[0], -1)
        mean = w @ flat
        var = w @ (flat - mean) ** 2
        return mean.reshape(a.shape[1:]), np.maximum(var, 0.0).reshape(a.shape[1:])

    (bm, bv), (tm, tv), (pm, pv) = moments(pset.beta), moments(pset.tau), moments(pset.phi)
    return ParamVector(bm, tm, pm), ParamVector(bv, tv, pv)


# ---------------------------------------------------------------------------
# full iterations
# ---------------------------------------------------------------------------


def _threshold(pset: ParticleSet, c: float | None) -> float:
    return pset.N / 2.0 if c is None else float(c)


def absorb_static(
    pset: ParticleSet,
    record: InteractionRecord,
    history: History,
    rng: np.random.Generator,
    threshold: float | None = None,
    kernel: MoveKernel | None = None,
    scheme: str = "multinomial",
    strict: bool = True,
) -> tuple[ParticleSet, bool]:
    """Append ``record``, reweight, and resample-move when the ESS drops below ``threshold``."""
    history.append(record)
    pset = reweight(pset, record, strict)
    if effective_sample_size(pset) >= _threshold(pset, threshold):
        return pset, False
    pset = resample(pset, scheme, rng)
    return move(pset, kernel or MoveKernel(), history, rng), True


def absorb_dynamic(
    propagated: ParticleSet,
    record: InteractionRecord,
    rng: np.random.Generator,
    threshold: float | None = None,
    scheme: str = "multinomial",
    strict: bool = True,
) -> tuple[ParticleSet, bool]:
    pset = reweight(propagated, record, strict)
    if effective_sample_size(pset) >= _threshold(pset, threshold):
        return pset, False
    return resample(pset, scheme, rng), True


SelectFn = Callable[[ParticleSet, np.ndarray, np.random.Generator], int]
RewardFn = Callable[[int], int]


def step_static(
    pset: ParticleSet,
    context,
    reward_fn: RewardFn,
    history: History,
    rng: np.random.Generator,
    threshold: float | None = None,
    kernel: MoveKernel | None = None,
    scheme: str = "multinomial",
    select_fn: SelectFn = thompson_select,
    strict: bool = True,
) -> StepResult:
    """One iteration of the static SMC bandit.

    Selection uses the weights carried in from the previous step.  ``reward_fn``
    receives the chosen 1-based arm and returns the observed 0/1 reward;
    ``select_fn`` replaces Thompson selection when given.
    """
    if pset.model.is_dynamic:
        raise ContractError("step_static requires a static model")
    x = pset.model.check_context(context)
    arm = select_fn(pset, x, rng)
    record = InteractionRecord(x, arm, int(reward_fn(arm)), pset.t + 1)
    pset, resampled = absorb_static(pset, record, history, rng, threshold, kernel, scheme, strict)
    return StepResult(pset, record, resampled)


def step_dynamic(
    pset: ParticleSet,
    context,
    reward_fn: RewardFn,
    rng: np.random.Generator,
    threshold: float | None = None,
    scheme: str = "multinomial",
    select_fn: SelectFn = thompson_select,
    strict: bool = True,
) -> StepResult:
    """One iteration of the dynamic SMC bandit: propagate, select, reweight, resample."""
    x = pset.model.check_context(context)
    propagated = propagate(pset, rng)
    arm = select_fn(propagated, x, rng)
    record = InteractionRecord(x, arm, int(reward_fn(arm)), pset.t + 1)
    pset, resampled = absorb_dynamic(propagated, record, rng, threshold, scheme, strict)
    return StepResult(pset, record, resampled)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _record_to_json(r: InteractionRecord) -> dict:
    return {"t": r.time_index, "arm": r.arm, "reward": r.reward, "context": r.context.tolist()}


def save_checkpoint(
    path, pset: ParticleSet, rng: np.random.Generator, history: History | None = None
) -> None:
    """Write a lossless JSON checkpoint (floats are serialised by shortest repr)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "t": pset.t,
        "N": pset.N,
        "model": pset.model.to_dict(),
        "model_hash": pset.model.digest(),
        "beta": pset.beta.tolist(),
        "tau": pset.tau.tolist(),
        "phi": pset.phi.tolist(),
        "log_weights": pset.log_weights.tolist(),
        "rng_state": rng.bit_generator.state,
        "history": None if history is None else [_record_to_json(r) for r in history.records],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ParticleSet, np.random.Generator, History | None]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(f"{path} is not a particle checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {doc.get('version')!r}")
    model = model_from_dict(doc["model"])
    if model.digest() != doc["model_hash"]:
        raise InvalidInputError("checkpoint model hash does not match its model description")
    N = int(doc["N"])

    def arr(key, width):
        return np.array(doc[key], dtype=float).reshape((N,) + width)

    pset = ParticleSet(
        model,
        arr("beta", (model.K, model.d)),
        arr("tau", (model.shared_dim,)),
        arr("phi", (model.hier_dim,)),
        np.array(doc["log_weights"], dtype=float),
        int(doc["t"]),
    )
    state = doc["rng_state"]
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    history = None
    if doc["history"] is not None:
        history = History(model.K, model.d)
        for r in doc["history"]:
            history.append(InteractionRecord(np.array(r["context"]), r["arm"], r["reward"], r["t"]))
    return pset, np.random.Generator(bit_gen), history
