"""Offline replay evaluation of bandit policies on uniformly logged data.

A row is retained only when the policy, shown the row's context, picks the
logged arm; the policy then learns from that row.  Under uniform logging each
row survives with probability 1/K, and the retained rows are distributed as an
online interaction stream would be.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import InvalidInputError, ParseError, UndefinedResultError
from .model import InteractionRecord
from .policies import Policy, require_policy

LOG_FORMAT = "smcbandits-replay-log"


@dataclass(eq=False)
class ReplayLog:
    contexts: np.ndarray  # (n, d)
    arms: np.ndarray  # (n,) 1-based
    rewards: np.ndarray  # (n,)
    K: int
    times: np.ndarray | None = None
    metadata: dict = field(default_factory=lambda: {"logging_policy": "uniform"})

    def __post_init__(self):
        self.contexts = np.asarray(self.contexts, dtype=float)
        self.arms = np.asarray(self.arms, dtype=int)
        self.rewards = np.asarray(self.rewards, dtype=int)
        n = self.arms.size
        if self.contexts.ndim != 2 or self.contexts.shape[0] != n or self.rewards.shape != (n,):
            raise InvalidInputError("contexts, arms and rewards must describe the same number of rows")
        if self.K < 1:
            raise InvalidInputError(f"K must be >= 1, got {self.K}")
        self.times = np.arange(1, n + 1) if self.times is None else np.asarray(self.times, dtype=int)
        bad = np.flatnonzero((self.arms < 1) | (self.arms > self.K))
        if bad.size:
            raise InvalidInputError(f"row {bad[0] + 1}: arm {self.arms[bad[0]]} outside [1, {self.K}]")
        bad = np.flatnonzero((self.rewards != 0) & (self.rewards != 1))
        if bad.size:
            raise InvalidInputError(f"row {bad[0] + 1}: reward must be 0 or 1")
        if not np.all(np.isfinite(self.contexts)):
            raise InvalidInputError("contexts must be finite")

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    def __len__(self) -> int:
        return self.arms.size

    def record(self, i: int) -> InteractionRecord:
        return InteractionRecord(self.contexts[i], int(self.arms[i]), int(self.rewards[i]), int(self.times[i]))

    def arm_frequencies(self) -> np.ndarray:
        return np.bincount(self.arms - 1, minlength=self.K) / max(len(self), 1)


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def load_log(source, sidecar=None, K: int | None = None) -> ReplayLog:
    """Read a replay log CSV (``t,arm,reward,x0..x{d-1}``) and its JSON sidecar.

    The sidecar (default: same stem, ``.json``) declares ``K``, ``d`` and the
    logging policy; ``K`` may be given directly instead.  Malformed rows raise
    :class:`ParseError` carrying the 1-based file line number.  A warning is
    issued when any arm's logged frequency is more than 5 binomial standard
    errors from ``1/K``.
    """
    path = Path(source)
    meta = {"logging_policy": "uniform"}
    side = Path(sidecar) if sidecar is not None else _sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"sidecar {side}: {exc.msg}", exc.lineno) from exc
    elif sidecar is not None:
        raise InvalidInputError(f"sidecar {side} does not exist")
    if K is None:
        if "K" not in meta:
            raise InvalidInputError("arm count K is required (sidecar or argument)")
        K = int(meta["K"])
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("missing header", 1)
    header = [h.strip() for h in rows[0]]
    d = len(header) - 3
    expected = ["t", "arm", "reward"] + [f"x{j}" for j in range(d)]
    if d < 1 or header != expected:
        raise ParseError(f"header must be t,arm,reward,x0..x{{d-1}}, got {','.join(header)}", 1)
    if "d" in meta and int(meta["d"]) != d:
        raise InvalidInputError(f"sidecar declares d={meta['d']} but the header has {d} features")
    n = len(rows) - 1
    times = np.empty(n, dtype=int)
    arms = np.empty(n, dtype=int)
    rewards = np.empty(n, dtype=int)
    contexts = np.empty((n, d))
    prev_t = 0
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != d + 3:
            raise ParseError(f"expected {d + 3} fields, got {len(row)}", line)
        try:
            t, a, y = int(row[0]), int(row[1]), int(row[2])
            x = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise ParseError(str(exc), line) from exc
        if t <= prev_t:
            raise ParseError(f"t must be a strictly increasing positive integer, got {t} after {prev_t}", line)
        if not 1 <= a <= K:
            raise ParseError(f"arm {a} outside [1, {K}]", line)
        if y not in (0, 1):
            raise ParseError(f"reward must be 0 or 1, got {y}", line)
        if not all(math.isfinite(v) for v in x):
            raise ParseError("features must be finite", line)
        times[i], arms[i], rewards[i], contexts[i] = t, a, y, x
        prev_t = t
    log = ReplayLog(contexts, arms, rewards, K, times, {k: v for k, v in meta.items() if k not in ("K", "d")})
    if n:
        se = math.sqrt((1 / K) * (1 - 1 / K) / n)
        worst = np.max(np.abs(log.arm_frequencies() - 1 / K))
        if se > 0 and worst > 5 * se:
            warnings.warn(
                f"logged arm frequencies deviate from uniform by {worst / se:.1f} standard errors; "
                "replay estimates assume uniform logging",
                stacklevel=2,
            )
    return log


def save_log(log: ReplayLog, path, sidecar=None) -> None:
    """Write ``log`` as CSV plus JSON sidecar (floats written with full precision)."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "arm", "reward"] + [f"x{j}" for j in range(log.d)])
    for i in range(len(log)):
        w.writerow([int(log.times[i]), int(log.arms[i]), int(log.rewards[i])] + [repr(float(v)) for v in log.contexts[i]])
    path.write_text(buf.getvalue(), encoding="utf-8")
    meta = {"format": LOG_FORMAT, "K": log.K, "d": log.d, **log.metadata}
    side = Path(sidecar) if sidecar is not None else _sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def uniform_log(env, T: int, rng: np.random.Generator) -> ReplayLog:
    """Log ``T`` rounds of ``env`` under uniform-random arm choice."""
    contexts = np.empty((T, env.d))
    arms = np.empty(T, dtype=int)
    rewards = np.empty(T, dtype=int)
    for i in range(T):
        step = env.step(i + 1, rng)
        a = int(rng.integers(env.K)) + 1
        contexts[i], arms[i] = step.context, a
        rewards[i] = int(rng.random() < step.probs[a - 1])
    return ReplayLog(contexts, arms, rewards, env.K, metadata={"logging_policy": "uniform"})


class ReplayResult(NamedTuple):
    total_reward: int
    retained: int
    history: list
    running_average: np.ndarray


def replay_evaluate(policy: Policy, log: ReplayLog, rng: np.random.Generator | None = None) -> ReplayResult:
    """Stream ``log`` through ``policy``, keeping rows where it picks the logged arm.

    ``rng``, when given, becomes the policy's random stream for this pass.
    Skipped rows never reach ``policy.update``.
    """
    policy = require_policy(policy)
    if policy.model.K != log.K or policy.model.d != log.d:
        raise InvalidInputError(
            f"policy expects K={policy.model.K}, d={policy.model.d}; log has K={log.K}, d={log.d}"
        )
    if rng is not None:
        policy.rng = rng
    history = []
    running = []
    total = 0
    for i in range(len(log)):
        if policy.select(log.contexts[i]) != log.arms[i]:
            continue
        rec = log.record(i)
        policy.update(rec)
        history.append(rec)
        total += rec.reward
        running.append(total / len(history))
    return ReplayResult(total, len(history), history, np.asarray(running, dtype=float))


def average_reward(result: ReplayResult) -> float:
    if result.retained < 1:
        raise UndefinedResultError("no rows were retained; average reward is undefined")
    return result.total_reward / result.retained


def _replay_worker(args):
    factory, log, ss = args
    rng = np.random.Generator(np.random.PCG64(ss))
    return average_reward(replay_evaluate(factory(rng), log))


def replay_repeated(
    factory: Callable[[np.random.Generator], Policy],
    log: ReplayLog,
    M: int,
    seed: int | np.random.SeedSequence = 0,
    workers: int = 1,
) -> np.ndarray:
    """Average reward of ``M`` independent replays, each with a fresh policy from ``factory(rng)``.

    Run ``m`` uses child ``m`` of the seed sequence, so results do not depend
    on ``workers`` (``factory`` must be picklable when ``workers > 1``).
    """
    if M < 1:
        raise InvalidInputError(f"M must be >= 1, got {M}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    jobs = [(factory, log, child) for child in ss.spawn(M)]
    if workers > 1 and M > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(_replay_worker, jobs)))
    return np.array([_replay_worker(j) for j in jobs])


class WelchResult(NamedTuple):
    statistic: float
    pvalue: float
    df: float
    degenerate: bool  # both samples constant: exact limits used


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Two-sided Welch unequal-variance t-test."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise InvalidInputError("both samples need at least 2 observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("samples must be finite")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult(0.0, 1.0, math.nan, True)
        return WelchResult(math.copysign(math.inf, diff), 0.0, math.nan, True)
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = float(2 * stats.t.sf(abs(t), df))
    return WelchResult(float(t), p, float(df), False)
