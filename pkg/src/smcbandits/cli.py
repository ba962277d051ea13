"""Command-line front end: ``smcbandits {simulate,replay,bench}``.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on runtime
errors.  Every run directory receives a ``manifest.json`` that can be passed
back as ``--config`` to reproduce the outputs exactly (wall-clock measurements
aside: ``timing.csv`` and the manifest's timing fields vary from run to run).
"""
from __future__ import annotations

import argparse
import functools
import hashlib
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, parse_config, config_from_dict
from .errors import BanditError, ConfigurationError
from .model import IndependentNormalPrior, Link, ObservationModel, RandomWalkDynamics
from .policies import build_policy
from .replay import load_log, replay_repeated, save_log, uniform_log, welch_t_test
from . import sim

log = logging.getLogger("smcbandits")

MANIFEST_FORMAT = "smcbandits-manifest"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smcbandits", description="SMC bandit simulations, replay evaluation and timing benchmarks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="TOML/JSON config or a previous run's manifest.json")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--scale", choices=["desk", "paper"], help="size preset")
        sp.add_argument("--deterministic", action="store_true", help="run sequentially (no worker processes)")
        sp.add_argument("--workers", type=int, help="worker processes (default: available cores)")
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("simulate", help="static or dynamic simulation study")
    common(s)
    s.add_argument("--experiment", choices=["static", "dynamic"], help="study to run (default: static)")
    s.add_argument("-T", type=int, help="horizon")
    s.add_argument("-R", type=int, help="replications")

    r = sub.add_parser("replay", help="offline replay evaluation of a uniform log")
    common(r)
    r.add_argument("--log", help="replay log CSV (sidecar JSON alongside)")
    r.add_argument("--synthetic", type=int, metavar="ROWS", help="write and evaluate a synthetic uniform log of ROWS rows")
    r.add_argument("--repeats", type=int, help="replays per policy")

    b = sub.add_parser("bench", help="SMC vs repeated-MCMC wall-clock")
    common(b)
    b.add_argument("--grid", help="comma-separated horizons, e.g. 500,1000,2000")
    b.add_argument("--repeats", type=int, help="timed runs per grid point (median reported)")
    return p


def _load_base(args) -> dict:
    if not args.config:
        return {}
    return parse_config(args.config).model_dump(mode="json", exclude_none=True)


def _merge(args) -> RunConfig:
    data = _load_base(args)
    cmd = args.command
    if cmd == "simulate":
        if args.experiment:
            data["experiment"] = f"{args.experiment}-sim"
        data.setdefault("experiment", "static-sim")
        if data["experiment"] not in ("static-sim", "dynamic-sim"):
            raise ConfigurationError(f"config experiment {data['experiment']!r} cannot run under 'simulate'")
        if args.T is not None:
            data["T"] = args.T
        if args.R is not None:
            data["R"] = args.R
    else:
        if data.get("experiment", cmd) != cmd:
            raise ConfigurationError(f"config experiment {data['experiment']!r} cannot run under {cmd!r}")
        data["experiment"] = cmd
    if cmd == "replay":
        section = dict(data.get("replay", {}))
        if args.log:
            section["log"] = args.log
        if args.repeats is not None:
            section["repeats"] = args.repeats
        if args.synthetic is not None:
            section["synthetic"] = args.synthetic
            section.pop("log", None)
        if "log" not in section and "synthetic" not in section:
            raise ConfigurationError("replay needs --log, --synthetic or a [replay] config section")
        data["replay"] = section
    if cmd == "bench":
        section = dict(data.get("bench", {}))
        if args.grid:
            try:
                section["grid"] = [int(v) for v in args.grid.split(",")]
            except ValueError as exc:
                raise ConfigurationError(f"--grid: {exc}") from exc
        if args.repeats is not None:
            section["repeats"] = args.repeats
        data["bench"] = section
    for key in ("seed", "out", "scale", "workers"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.deterministic:
        data["workers"] = 1
    return config_from_dict(data)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out) if cfg.out else Path("runs") / f"{cfg.experiment}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_simulate(cfg: RunConfig, out: Path, extra: dict) -> list[Path]:
    experiment = "static" if cfg.experiment == "static-sim" else "dynamic"
    specs = cfg.policy_specs()
    log.info("%s study: T=%d R=%d N=%d policies=%s", experiment, cfg.horizon, cfg.replications,
             cfg.n_particles, [s.label for s in specs])
    report = sim.replicate(
        experiment, specs, cfg.horizon, cfg.replications, cfg.seed, cfg.smc_settings(),
        workers=cfg.n_workers, track=cfg.track and experiment == "dynamic",
        model=_sim_model(cfg, experiment),
    )
    files = [out / "regret.csv"]
    sim.write_curves_csv(files[0], sim.regret_rows(report))
    if report.tracking:
        files.append(out / "tracking.csv")
        sim.write_curves_csv(files[-1], sim.tracking_rows(report))
    files.append(out / "summary.json")
    sim.write_json(files[-1], sim.summary(report))
    extra["policy_seconds_mean"] = {lab: float(report.seconds[lab].mean()) for lab in report.labels}
    return files


def _sim_model(cfg: RunConfig, experiment: str) -> ObservationModel:
    link = Link(cfg.model.link)
    prior = IndependentNormalPrior(0.0, cfg.prior_variance)
    if experiment == "static":
        return ObservationModel(sim.STATIC_K, 3, link, prior)
    return ObservationModel(sim.DYNAMIC_K, 1, link, prior, RandomWalkDynamics(cfg.step_variance))


def run_replay(cfg: RunConfig, out: Path, extra: dict) -> list[Path]:
    files = []
    synthetic = cfg.replay.synthetic
    if synthetic is not None:
        env_ss, log_ss = np.random.SeedSequence([cfg.seed, 1]).spawn(2)
        env = sim.StaticEnvironment(sim.gen_static_instance(np.random.default_rng(env_ss)))
        path = out / "synthetic_log.csv"
        save_log(uniform_log(env, synthetic, np.random.default_rng(log_ss)), path)
        files += [path, path.with_suffix(".json")]
    else:
        path = Path(cfg.replay.log)
    data = load_log(path, cfg.replay.sidecar)
    intercept = bool(len(data)) and bool(np.all(data.contexts[:, 0] == 1.0))
    model = ObservationModel(
        data.K, data.d, Link(cfg.model.link), IndependentNormalPrior(0.0, cfg.prior_variance),
        RandomWalkDynamics(cfg.step_variance), intercept=intercept,
    )
    specs = cfg.policy_specs()
    smc = cfg.smc_settings()
    M = cfg.replay_repeats
    results = {}
    for spec, child in zip(specs, np.random.SeedSequence(cfg.seed).spawn(len(specs))):
        log.info("replaying %s x%d on %d rows", spec.label, M, len(data))
        factory = functools.partial(build_policy, spec, model, smc=smc)
        results[spec.label] = replay_repeated(factory, data, M, child, workers=cfg.n_workers)
    csv_path = out / "replay.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("run,policy,average_reward\n")
        for lab, vals in results.items():
            for i, v in enumerate(vals, start=1):
                fh.write(f"{i},{lab},{float(v)!r}\n")
    baseline = cfg.replay.baseline
    base_vals = results.get(baseline)
    summary = {"rows": len(data), "K": data.K, "d": data.d, "repeats": M, "baseline": baseline, "policies": {}}
    for lab, vals in results.items():
        entry = {
            "average_reward_mean": float(vals.mean()),
            "average_reward_stderr": float(vals.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0,
        }
        if base_vals is not None and lab != baseline and M > 1:
            w = welch_t_test(vals, base_vals)
            entry["percent_diff_vs_baseline"] = float(100 * (vals.mean() - base_vals.mean()) / base_vals.mean()) \
                if base_vals.mean() != 0 else None
            entry["welch_t"] = w.statistic
            entry["welch_p"] = w.pvalue
        summary["policies"][lab] = entry
    files += [csv_path, out / "summary.json"]
    sim.write_json(files[-1], summary)
    return files


def run_bench(cfg: RunConfig, out: Path, extra: dict) -> list[Path]:
    b = cfg.bench
    rows = sim.bench_smc_vs_mcmc(
        cfg.bench_grid, cfg.bench_samples, b.burn_in_fraction if b else 0.1, b.repeats if b else 3,
        cfg.seed, cfg.smc_settings(),
    )
    for r in rows:
        log.info("T=%d %s %.3fs", r.T, r.method, r.seconds)
    path = out / "timing.csv"
    sim.write_timing_csv(path, rows)
    return [path]


def write_manifest(
    cfg: RunConfig, out: Path, files: list[Path], started: str, seconds: float, argv, extra: dict | None = None
) -> Path:
    manifest = {
        "format": MANIFEST_FORMAT,
        "package_version": __version__,
        "config": {k: v for k, v in cfg.resolved().items()},
        "seed": cfg.seed,
        "argv": list(argv),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "started_utc": started,
        "wall_clock_seconds": seconds,
        "outputs": {f.name: _sha256(f) for f in files},
        **(extra or {}),
    }
    path = out / "manifest.json"
    sim.write_json(path, manifest)
    return path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _merge(args)
    except ConfigurationError as exc:
        print(f"smcbandits: configuration error: {exc}", file=sys.stderr)
        return 1
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        out = _out_dir(cfg)
        run = {"simulate": run_simulate, "replay": run_replay, "bench": run_bench}[args.command]
        extra: dict = {}
        files = run(cfg, out, extra)
        write_manifest(cfg, out, files, started, time.perf_counter() - t0, argv, extra)
    except ConfigurationError as exc:
        print(f"smcbandits: configuration error: {exc}", file=sys.stderr)
        return 1
    except (BanditError, OSError, ValueError, ArithmeticError) as exc:
        print(f"smcbandits: error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
