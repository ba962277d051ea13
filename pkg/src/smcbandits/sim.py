"""Simulation studies: static contextual and sinusoidal dynamic bandits.

Randomness for a study flows from one master seed.  Replication ``r`` takes
child ``r`` of ``SeedSequence(seed)``; that child spawns, in order, the
instance stream, the environment stream and one stream per policy.  Every
policy in a replication replays the same environment stream (common random
numbers), so contexts and reward uniforms are shared across policies.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg, special

from .model import (
    PROB_FLOOR,
    IndependentNormalPrior,
    InteractionRecord,
    Link,
    ObservationModel,
    RandomWalkDynamics,
    link_inverse,
)
from .policies import Policy, PolicySpec, SMCSettings, SMCStaticPolicy, build_policy
from .smc import History, _gibbs_factors, argmax_random, latent_from_uniform

STATIC_K = 4
DYNAMIC_K = 2


def _rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_seq))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StaticInstance:
    beta: np.ndarray  # (K, 3): intercept, slope on X1, slope on X2 (fixed at 1)

    @property
    def K(self) -> int:
        return self.beta.shape[0]


class EnvStep(NamedTuple):
    context: np.ndarray
    probs: np.ndarray
    optimal: int  # 1-based


def gen_static_instance(rng: np.random.Generator, K: int = STATIC_K) -> StaticInstance:
    intercept = rng.uniform(-1.0, 1.0, K)
    slope = rng.standard_normal(K)
    return StaticInstance(np.column_stack([intercept, slope, np.ones(K)]))


def gen_static_step(instance: StaticInstance, rng: np.random.Generator) -> EnvStep:
    x = np.concatenate([[1.0], rng.standard_normal(2)])
    probs = special.ndtr(instance.beta @ x)
    return EnvStep(x, probs, argmax_random(probs, rng) + 1)


def gen_dynamic_truth(t: float) -> tuple[float, float]:
    """True probit intercepts of the two arms at time ``t``."""
    s = math.sin(t / 100.0)
    p0 = 0.5 * (s + 1.0)
    p1 = 0.5 * (1.0 - s)  # sin(x + pi) = -sin(x), without the rounding of pi
    return link_inverse(Link.PROBIT, p0), link_inverse(Link.PROBIT, p1)


def dynamic_crossings(T: int) -> list[int]:
    """First integer steps at which the optimal arm changes (sin(t/100) sign flips)."""
    return [math.ceil(100 * math.pi * j) for j in range(1, int(T / (100 * math.pi)) + 1)]


class StaticEnvironment:
    d = 3

    def __init__(self, instance: StaticInstance):
        self.instance = instance
        self.K = instance.K

    def step(self, t: int, rng: np.random.Generator) -> EnvStep:
        return gen_static_step(self.instance, rng)


class DynamicEnvironment:
    K, d = DYNAMIC_K, 1

    def step(self, t: int, rng: np.random.Generator) -> EnvStep:
        probs = special.ndtr(np.array(gen_dynamic_truth(t)))
        return EnvStep(np.ones(1), probs, argmax_random(probs, rng) + 1)


def static_model(prior_variance: float = 10.0) -> ObservationModel:
    return ObservationModel(STATIC_K, 3, Link.PROBIT, IndependentNormalPrior(0.0, prior_variance))


def dynamic_model(step_variance: float = 1.0, prior_variance: float = 1.0) -> ObservationModel:
    return ObservationModel(
        DYNAMIC_K, 1, Link.PROBIT, IndependentNormalPrior(0.0, prior_variance), RandomWalkDynamics(step_variance)
    )


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------


class OraclePolicy(Policy):
    """Plays the true optimal arm; ``run_episode`` feeds it the truth."""

    kind = "oracle"

    def __init__(self, model, rng):
        super().__init__(model, rng)
        self.current_optimal = 1

    def select(self, context) -> int:
        return self.current_optimal

    def update(self, record):
        return self


@dataclass(eq=False)
class EpisodeTrace:
    contexts: np.ndarray
    arms: np.ndarray
    rewards: np.ndarray
    probs: np.ndarray
    optimal: np.ndarray
    regret: np.ndarray
    tracking: dict | None = None

    @property
    def T(self) -> int:
        return self.arms.size


def _track(policy: Policy, x: np.ndarray):
    pset = policy.particles
    w = pset.weights
    eta = pset.model.linear_predictor(pset.beta, pset.tau, x)
    mean_p = w @ special.ndtr(eta) if pset.model.link is Link.PROBIT else w @ special.expit(eta)
    b = pset.beta[:, :, 0]
    m = w @ b
    return mean_p, w @ (b - m) ** 2


def run_episode(policy: Policy, env, T: int, rng: np.random.Generator, track: bool = False) -> EpisodeTrace:
    """Play ``T`` rounds of ``policy`` against ``env``.

    With ``track=True`` and a particle-based policy, the trace also records the
    posterior mean success probability and intercept variance of every arm and
    whether the step resampled.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    K = env.K
    contexts = np.empty((T, env.d))
    arms = np.empty(T, dtype=int)
    rewards = np.empty(T, dtype=int)
    probs = np.empty((T, K))
    optimal = np.empty(T, dtype=int)
    tracking = None
    if track and hasattr(policy, "particles"):
        tracking = {
            "post_mean_p": np.empty((T, K)),
            "post_var_beta": np.empty((T, K)),
            "resampled": np.zeros(T, dtype=bool),
        }
    for i in range(T):
        step = env.step(i + 1, rng)
        u = rng.random()
        if isinstance(policy, OraclePolicy):
            policy.current_optimal = step.optimal
        a = policy.select(step.context)
        y = int(u < step.probs[a - 1])
        policy.update(InteractionRecord(step.context, a, y, i + 1))
        contexts[i], arms[i], rewards[i], probs[i], optimal[i] = step.context, a, y, step.probs, step.optimal
        if tracking is not None:
            tracking["post_mean_p"][i], tracking["post_var_beta"][i] = _track(policy, step.context)
            tracking["resampled"][i] = policy.resampled
    regret = probs[np.arange(T), optimal - 1] - probs[np.arange(T), arms - 1]
    return EpisodeTrace(contexts, arms, rewards, probs, optimal, regret, tracking)


def cumulative_regret(trace: EpisodeTrace) -> np.ndarray:
    """Running sum of expected regret ``p_opt - p_chosen``."""
    return np.cumsum(trace.regret)


def tracking_errors(trace: EpisodeTrace) -> tuple[float, float]:
    """Time-averaged |posterior mean p - true p| for the currently optimal / suboptimal arm (K=2)."""
    est = trace.tracking["post_mean_p"]
    err = np.abs(est - trace.probs)
    rows = np.arange(trace.T)
    opt = trace.optimal - 1
    return float(err[rows, opt].mean()), float(err[rows, 1 - opt].mean())


def variance_growth_counts(trace: EpisodeTrace) -> tuple[int, int]:
    """Among steps where an arm was not pulled and no resampling happened, how often
    its posterior variance did not decrease.  Returns ``(non_decreasing, eligible)``."""
    var = trace.tracking["post_var_beta"]
    resampled = trace.tracking["resampled"]
    ok = eligible = 0
    for k in range(var.shape[1]):
        mask = (trace.arms[1:] != k + 1) & ~resampled[1:]
        eligible += int(mask.sum())
        ok += int((var[1:, k] >= var[:-1, k])[mask].sum())
    return ok, eligible


# ---------------------------------------------------------------------------
# replication
# ---------------------------------------------------------------------------


@dataclass
class ReplicationReport:
    experiment: str
    T: int
    R: int
    labels: list[str]
    curves: dict[str, np.ndarray]  # label -> (R, T) cumulative regret
    seconds: dict[str, np.ndarray]  # label -> (R,)
    tracking: dict[str, dict] = field(default_factory=dict)

    def mean(self, label: str) -> np.ndarray:
        return self.curves[label].mean(axis=0)

    def stderr(self, label: str) -> np.ndarray:
        c = self.curves[label]
        if c.shape[0] < 2:
            return np.zeros(c.shape[1])
        return c.std(axis=0, ddof=1) / math.sqrt(c.shape[0])

    def final(self, label: str) -> tuple[float, float]:
        return float(self.mean(label)[-1]), float(self.stderr(label)[-1])


def _replication_worker(args):
    experiment, specs, T, r, seed, smc, track, model = args
    child = np.random.SeedSequence(seed).spawn(r + 1)[r]
    inst_ss, env_ss, *pol_ss = child.spawn(2 + len(specs))
    if experiment == "static":
        env = StaticEnvironment(gen_static_instance(_rng(inst_ss)))
        model = model or static_model()
    else:
        env = DynamicEnvironment()
        model = model or dynamic_model()
    out = {}
    for spec, ss in zip(specs, pol_ss):
        policy = build_policy(spec, model, _rng(ss), smc)
        start = time.perf_counter()
        trace = run_episode(policy, env, T, _rng(env_ss), track=track)
        elapsed = time.perf_counter() - start
        entry = {"curve": cumulative_regret(trace), "seconds": elapsed}
        if trace.tracking is not None:
            entry["tracking_errors"] = tracking_errors(trace) if env.K == 2 else None
            entry["variance_growth"] = variance_growth_counts(trace)
            entry["post_mean_p"] = trace.tracking["post_mean_p"]
            entry["post_var_beta"] = trace.tracking["post_var_beta"]
            entry["true_p"] = trace.probs
        out[spec.label] = entry
    return out


def replicate(
    experiment: str,
    specs: Sequence[PolicySpec],
    T: int,
    R: int,
    seed: int,
    smc: SMCSettings | None = None,
    workers: int = 1,
    track: bool = False,
    model: ObservationModel | None = None,
) -> ReplicationReport:
    """Run ``R`` independent replications of a study for every policy in ``specs``.

    ``model`` defaults to :func:`static_model` / :func:`dynamic_model`.  Results
    do not depend on ``workers``.
    """
    if experiment not in ("static", "dynamic"):
        raise ValueError(f"unknown experiment {experiment!r}")
    if R < 1 or T < 1:
        raise ValueError("R and T must be >= 1")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"policy labels must be unique: {labels}")
    smc = smc or SMCSettings()
    jobs = [(experiment, list(specs), T, r, seed, smc, track, model) for r in range(R)]
    if workers > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication_worker, jobs))
    else:
        results = [_replication_worker(j) for j in jobs]
    curves = {lab: np.stack([res[lab]["curve"] for res in results]) for lab in labels}
    seconds = {lab: np.array([res[lab]["seconds"] for res in results]) for lab in labels}
    tracking = {}
    for lab in labels:
        if "variance_growth" not in results[0][lab]:
            continue
        tracking[lab] = {
            key: np.stack([res[lab][key] for res in results])
            for key in ("post_mean_p", "post_var_beta", "true_p", "variance_growth")
        }
        if results[0][lab]["tracking_errors"] is not None:
            tracking[lab]["tracking_errors"] = np.array([res[lab]["tracking_errors"] for res in results])
    return ReplicationReport(experiment, T, R, labels, curves, seconds, tracking)


def slope_change(curve: np.ndarray, crossing: int, window: int) -> float:
    """Mean per-step regret in ``[crossing, crossing+window)`` minus that in the
    preceding ``window`` steps (``crossing`` is a 1-based time index)."""
    c = np.concatenate([[0.0], np.asarray(curve)])
    before = (c[crossing - 1] - c[crossing - 1 - window]) / window
    after = (c[crossing - 1 + window] - c[crossing - 1]) / window
    return float(after - before)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_curves_csv(path, rows: Sequence[tuple[str, np.ndarray, np.ndarray]]) -> None:
    """Write ``t,policy,mean,stderr`` rows; ``rows`` holds ``(label, mean, stderr)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "policy", "mean", "stderr"])
        for label, mean, se in rows:
            for t, (m, s) in enumerate(zip(mean, se), start=1):
                w.writerow([t, label, _fmt(m), _fmt(s)])


def regret_rows(report: ReplicationReport):
    return [(lab, report.mean(lab), report.stderr(lab)) for lab in report.labels]


def tracking_rows(report: ReplicationReport):
    rows = []
    for lab, tr in report.tracking.items():
        R = tr["post_mean_p"].shape[0]
        for key in ("post_mean_p", "post_var_beta", "true_p"):
            arr = tr[key]
            for k in range(arr.shape[2]):
                series = arr[:, :, k]
                se = series.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(series.shape[1])
                rows.append((f"{lab}/arm{k + 1}/{key}", series.mean(axis=0), se))
    return rows


def summary(report: ReplicationReport, timing: bool = False) -> dict:
    """JSON-ready digest of a study.  Wall-clock figures are only included with
    ``timing=True`` so that the default output is reproducible byte for byte."""
    out = {"experiment": report.experiment, "T": report.T, "R": report.R, "policies": {}}
    for lab in report.labels:
        m, se = report.final(lab)
        entry = {"final_regret_mean": m, "final_regret_stderr": se}
        if timing:
            entry["seconds_mean"] = float(report.seconds[lab].mean())
        tr = report.tracking.get(lab)
        if tr is not None:
            ok, eligible = tr["variance_growth"].sum(axis=0)
            entry["variance_growth_fraction"] = float(ok / eligible) if eligible else None
            if "tracking_errors" in tr:
                errs = tr["tracking_errors"]
                entry["tracking_error_optimal_mean"] = float(errs[:, 0].mean())
                entry["tracking_error_suboptimal_mean"] = float(errs[:, 1].mean())
                entry["tracking_optimal_better_count"] = int((errs[:, 0] < errs[:, 1]).sum())
        out["policies"][lab] = entry
    if report.experiment == "dynamic":
        out["optimal_arm_crossings"] = dynamic_crossings(report.T)
    return out


# ---------------------------------------------------------------------------
# SMC vs repeated MCMC timing
# ---------------------------------------------------------------------------


class RepeatedMCMCBandit:
    """Thompson sampling that reruns a probit Gibbs chain from a prior draw at every step."""

    def __init__(self, model: ObservationModel, rng: np.random.Generator, samples: int = 1000, burn_in_fraction: float = 0.1):
        self.model = model
        self.rng = rng
        self.samples = samples
        self.burn_in = int(round(burn_in_fraction * samples))
        self.history = History(model.K, model.d)

    def _chain(self) -> np.ndarray:
        m, rng = self.model, self.rng
        K, d = m.K, m.d
        # Block form: beta flattened to (K*d,); row i of Xb holds x_i in arm a_i's block,
        # so the sweep is a handful of matrix-vector products.
        V = np.zeros((K * d, K * d))
        C = np.zeros((K * d, K * d))
        base = np.empty(K * d)
        for k, (L, prior_term) in enumerate(_gibbs_factors(m, self.history)):
            Linv = linalg.solve_triangular(L, np.eye(d), lower=True)
            blk = slice(k * d, (k + 1) * d)
            V[blk, blk] = Linv.T @ Linv
            C[blk, blk] = Linv.T  # C C^T = V
            base[blk] = V[blk, blk] @ prior_term
        X, arms, y = self.history.arrays()
        n = y.size
        Xb = np.zeros((n, K * d))
        cols = (arms - 1)[:, None] * d + np.arange(d)
        Xb[np.arange(n)[:, None], cols] = X
        sign = np.where(y > 0, 1.0, -1.0)
        beta = m.prior.sample_batch(K, d, 0, 1, rng)[0][0].ravel()
        draws = np.empty((self.samples, K * d))
        for it in range(self.burn_in + self.samples):
            rhs = base
            if n:
                z = latent_from_uniform(Xb @ beta, sign, rng.random(n))
                rhs = base + V @ (Xb.T @ z)
            beta = rhs + C @ rng.standard_normal(K * d)
            if it >= self.burn_in:
                draws[it - self.burn_in] = beta
        return draws.reshape(self.samples, K, d)

    def select(self, context) -> int:
        x = self.model.check_context(context)
        draws = self._chain()
        chosen = draws[self.rng.integers(self.samples)]
        return argmax_random(chosen @ x, self.rng) + 1

    def update(self, record):
        self.history.append(record)
        return self


class TimingRow(NamedTuple):
    T: int
    method: str
    seconds: float


def _time_bandit(bandit, contexts, uniforms, probs) -> float:
    start = time.perf_counter()
    for i in range(contexts.shape[0]):
        a = bandit.select(contexts[i])
        bandit.update(InteractionRecord(contexts[i], a, int(uniforms[i] < probs[i, a - 1]), i + 1))
    return time.perf_counter() - start


def bench_smc_vs_mcmc(
    grid: Sequence[int] = (500, 1000, 2000),
    samples: int = 1000,
    burn_in_fraction: float = 0.1,
    repeats: int = 3,
    seed: int = 0,
    smc: SMCSettings | None = None,
    methods: Sequence[str] = ("smc", "repeated-mcmc"),
) -> list[TimingRow]:
    """Wall-clock of SMC bandits vs per-step MCMC refits (median of ``repeats``).

    Contexts and reward uniforms are drawn before the clock starts, so only the
    inference path is timed.
    """
    smc = smc or SMCSettings()
    smc = SMCSettings(samples, smc.threshold, smc.scheme, "probit-gibbs", smc.sweeps, smc.step_scale, smc.strict)
    model = static_model()
    rows = []
    for gi, T in enumerate(grid):
        times = {m: [] for m in methods}
        for rep in range(repeats):
            ss = np.random.SeedSequence([seed, gi, rep]).spawn(3)
            data_rng = _rng(ss[0])
            instance = gen_static_instance(data_rng)
            contexts = np.column_stack([np.ones(T), data_rng.standard_normal((T, 2))])
            probs = special.ndtr(contexts @ instance.beta.T)
            uniforms = data_rng.random(T)
            for method in methods:
                if method == "smc":
                    bandit = SMCStaticPolicy(model, _rng(ss[1]), samples, smc.threshold, smc.move_kernel(), smc.scheme)
                elif method == "repeated-mcmc":
                    bandit = RepeatedMCMCBandit(model, _rng(ss[2]), samples, burn_in_fraction)
                else:
                    raise ValueError(f"unknown method {method!r}")
                times[method].append(_time_bandit(bandit, contexts, uniforms, probs))
        for method in methods:
            rows.append(TimingRow(int(T), method, float(np.median(times[method]))))
    return rows


def write_timing_csv(path, rows: Sequence[TimingRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "method", "seconds"])
        for r in rows:
            w.writerow([r.T, r.method, _fmt(r.seconds)])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
