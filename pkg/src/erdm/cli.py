"""Command line entry point: ``erdm {generate,train,forecast,evaluate,schedule-dump}``.

Every subcommand writes the resolved configuration to ``<out>/config.json``. On failure a
single JSON error line goes to stderr, files created by the invocation are removed and the
exit status is nonzero (2 for configuration errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config_io import (RunConfig, load_checkpoint, load_config, read_array, save_checkpoint, save_config,
                        write_array)
from .dynamics import Dataset, WindowSampler, simulate
from .errors import ConfigError, ERDMError, FormatError
from .init import EDMForecaster, InitStrategy, build_init_window
from .metrics import lead_time_scores
from .rng import MemberRNG
from .sampler import edm_rollout, rollout
from .schedule import NoiseSchedule
from .training import build_network, make_denoiser, train

log = logging.getLogger("erdm")


class _Outputs:
    """Tracks files created by one invocation so they can be removed on failure."""

    def __init__(self, out: Path):
        self.out = out
        self.created_dir = not out.exists()
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        if not p.exists():
            self.files.append(p)
        return p

    def cleanup(self):
        for p in self.files:
            if p.exists():
                p.unlink()
        if self.created_dir and self.out.exists() and not any(self.out.iterdir()):
            self.out.rmdir()


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.members is not None:
        overrides.append(f"members={args.members}")
    if args.horizon is not None:
        overrides.append(f"sampler.horizon={args.horizon}")
    return cfg.with_overrides(overrides) if overrides else cfg


def _channel_names(cfg: RunConfig):
    if cfg.system.kind == "lorenz63":
        return ["x", "y", "z"]
    return [f"x{i}" for i in range(cfg.system.dim)]


def _load_dataset(data_dir: Path):
    train_header, train_raw = read_array(data_dir / "train.bin")
    test_header, test_raw = read_array(data_dir / "test.bin")
    ds = Dataset.from_trajectories(train_raw.astype(np.float64), mean=train_header["mean"], std=train_header["std"])
    return ds, test_raw.astype(np.float64), test_header


def _require(value, flag):
    if not value:
        raise ConfigError(flag, f"{flag} is required for this subcommand")
    return Path(value)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, cfg: RunConfig, outs: _Outputs):
    d = cfg.data
    train_raw = simulate(cfg.system, d.train_length, seed=d.seed, n_traj=d.n_train_traj)
    test_raw = simulate(cfg.system, d.test_length, seed=d.test_seed, n_traj=d.n_test_traj)
    ds = Dataset.from_trajectories(train_raw)
    meta = {"kind": "trajectories", "channels": _channel_names(cfg), "mean": ds.mean.tolist(),
            "std": ds.std.tolist(), "config_hash": cfg.hash, "system": cfg.system.to_dict()}
    write_array(outs.path("train.bin"), dict(meta, split="train"), train_raw)
    write_array(outs.path("test.bin"), dict(meta, split="test"), test_raw)
    log.info("wrote %d train and %d test trajectories", d.n_train_traj, d.n_test_traj)


def cmd_train(args, cfg: RunConfig, outs: _Outputs):
    ds, _, _ = _load_dataset(_require(args.data, "--data"))
    kind = cfg.model.kind
    dim = ds.trajectories.shape[-1]
    window = cfg.schedule.window if kind == "erdm" else 1
    net = build_network(kind, window, dim, cfg.model.hidden, seed=cfg.training.seed, out_scale=cfg.model.out_scale)
    weighting = cfg.weighting if kind == "erdm" else cfg.baseline.weighting(cfg.weighting.sigma_data)
    ckpt_path = outs.path("checkpoint.bin")
    meta = {"model_kind": kind, "config_hash": cfg.hash, "sigma_data": weighting.sigma_data,
            "schedule": dataclasses.asdict(cfg.schedule if kind == "erdm" else cfg.baseline.schedule),
            "weighting": dataclasses.asdict(weighting), "mean": ds.mean.tolist(), "std": ds.std.tolist()}

    def checkpoint(state):
        save_checkpoint(ckpt_path, state.net, params=state.ema, meta=dict(meta, step=state.step))

    train(kind, net, WindowSampler(ds.standardized, window), cfg.training, cfg.schedule, weighting, cfg.prior,
          log_path=outs.path("train_log.csv"), checkpoint=checkpoint)


def _load_denoiser(path: Path, expected_kind: str):
    net, header = load_checkpoint(path)
    if header.get("model_kind") != expected_kind:
        raise ConfigError("model.kind", f"{path} holds a {header.get('model_kind')!r} model, need {expected_kind!r}")
    return make_denoiser(net, header.get("sigma_data", 1.0)), header


def cmd_forecast(args, cfg: RunConfig, outs: _Outputs):
    ds, test_raw, test_header = _load_dataset(_require(args.data, "--data"))
    ckpt = _require(args.checkpoint, "--checkpoint")
    horizon = cfg.sampler.horizon
    test = ds.standardize(test_raw)
    if test.shape[1] < 1 + (horizon if cfg.init.kind != "truth" else cfg.schedule.window):
        raise ConfigError("sampler.horizon", "test trajectories are shorter than the requested horizon")
    y0 = test[:, 0]
    n_ic, dim = y0.shape
    m = cfg.members
    rows = np.repeat(y0, m, axis=0)
    rng = MemberRNG(cfg.seed, n_ic * m)
    trace = [] if args.trace else None
    kind = cfg.model.kind
    if kind == "edm":
        den, _ = _load_denoiser(ckpt, "edm")
        out = edm_rollout(den, rows, horizon, cfg.baseline.n_steps, cfg.baseline.schedule, rng)
    else:
        den, _ = _load_denoiser(ckpt, "erdm")
        forecaster = None
        if cfg.init.kind == "external_forecaster":
            init_path = args.init_checkpoint or cfg.init.forecaster_checkpoint
            base, _ = _load_denoiser(_require(init_path, "--init-checkpoint"), "edm")
            forecaster = EDMForecaster(base, cfg.baseline.n_steps, cfg.baseline.schedule)
        strategy = InitStrategy(cfg.init.kind, forecaster, allow_truth=True)
        truth = np.repeat(test[:, 1 : 1 + cfg.schedule.window], m, axis=0) if cfg.init.kind == "truth" else None
        init_window = build_init_window(strategy, rows, cfg.schedule.window, rng=rng, truth=truth)
        out = rollout(den, cfg.schedule, cfg.sampler, init_window, cfg.prior, rng, trace=trace)
    forecast = ds.destandardize(out.reshape(n_ic, m, horizon, dim))
    meta = {"kind": "forecast", "model_kind": kind, "config_hash": cfg.hash, "seed": cfg.seed,
            "member_seeds": [[cfg.seed, i] for i in range(m)], "axes": ["initial_condition", "member", "lead", "channel"],
            "channels": test_header.get("channels"), "checkpoint": str(ckpt)}
    write_array(outs.path(args.name + ".bin"), meta, forecast)
    if trace is not None:
        with open(outs.path(args.name + "_trace.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "t_cur", "n_clean"] + [f"sigma_{i + 1}" for i in range(cfg.schedule.window)])
            for row in trace:
                w.writerow([row["iteration"], repr(row["t_cur"]), row["n_clean"]] + [repr(s) for s in row["sigma"]])


def cmd_evaluate(args, cfg: RunConfig, outs: _Outputs):
    ds, test_raw, _ = _load_dataset(_require(args.data, "--data"))
    if not args.forecasts:
        raise ConfigError("forecasts", "give at least one forecast file")
    test = ds.standardize(test_raw)
    scores = {}
    for path in args.forecasts:
        header, fc = read_array(path)
        if header.get("kind") != "forecast" or fc.ndim != 4:
            raise FormatError(f"{path} is not a forecast file")
        n_ic, _, horizon, _ = fc.shape
        truth = test[:n_ic, 1 : 1 + horizon]
        if truth.shape[1] < horizon:
            raise ConfigError("sampler.horizon", f"{path} runs past the end of the test trajectories")
        scores[Path(path).stem] = lead_time_scores(ds.standardize(fc.astype(np.float64)), truth)
    ref = args.baseline or next(iter(scores))
    if ref not in scores:
        raise ConfigError("--baseline", f"no forecast named {ref!r}")
    for name, s in scores.items():
        crpss = 1.0 - s["crps"] / scores[ref]["crps"]
        with open(outs.path(f"{name}_metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lead", "crps", "rmse", "spread", "ssr", f"crpss_vs_{ref}"])
            for k in range(len(s["lead"])):
                w.writerow([int(s["lead"][k])] + [f"{s[c][k]:.8g}" for c in ("crps", "rmse", "spread", "ssr")]
                           + [f"{crpss[k]:.8g}"])


def cmd_schedule_dump(args, cfg: RunConfig, outs: _Outputs):
    rhos = [cfg.schedule.rho] + [r for r in (args.compare_rho or [7.0]) if r != cfg.schedule.rho]
    ts = np.linspace(0.0, 1.0, args.points)
    with open(outs.path("schedule.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "w", "t", "sigma"])
        for rho in rhos:
            s = NoiseSchedule(cfg.schedule.sigma_min, cfg.schedule.sigma_max, rho, cfg.schedule.window)
            for slot in range(1, s.window + 1):
                for t in ts:
                    w.writerow([rho, slot, f"{t:.6g}", repr(s.sigma_bar(slot, float(t)))])


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "schedule-dump": cmd_schedule_dump,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults if omitted)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (repeatable)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--members", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="erdm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate train/test trajectories")
    p = sub.add_parser("train", parents=[common], help="train a rolling model or the next-step baseline")
    p.add_argument("--data", help="directory written by generate")
    p = sub.add_parser("forecast", parents=[common], help="ensemble forecasts from every test initial condition")
    p.add_argument("--data", help="directory written by generate")
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--init-checkpoint", help="baseline checkpoint used to initialize the first window")
    p.add_argument("--name", default="forecast", help="output file stem")
    p.add_argument("--trace", action="store_true", help="dump per-iteration sampler state as CSV")
    p = sub.add_parser("evaluate", parents=[common], help="per-lead metrics of forecast files against truth")
    p.add_argument("forecasts", nargs="*")
    p.add_argument("--data", help="directory written by generate")
    p.add_argument("--baseline", help="forecast stem used as the CRPSS reference")
    p = sub.add_parser("schedule-dump", parents=[common], help="write (rho, w, t, sigma) samples")
    p.add_argument("--points", type=int, default=51)
    p.add_argument("--compare-rho", type=float, action="append")
    return parser


def _error_line(exc: BaseException) -> str:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec["field"] = exc.field
    if getattr(exc, "step", None) is not None:
        rec["step"] = exc.step
    return json.dumps(rec)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    outs = _Outputs(Path(args.out))
    try:
        cfg = _resolve_config(args)
        save_config(cfg, outs.path("config.json"))
        COMMANDS[args.command](args, cfg, outs)
    except (ERDMError, OSError, KeyError) as exc:
        outs.cleanup()
        print(_error_line(exc), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except KeyboardInterrupt:
        outs.cleanup()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
