"""Batch experiment driver.

solitonlab <job> --config PATH [--out DIR] [--seed K] [--tolerance-scale X]
solitonlab suite [--config DIR_OR_FILE ...] [--out DIR] [--workers N]

Each run writes <out>/<name>/ holding record.json, verdicts.csv and the raw
tables of the job.  The directory appears only when the job finished, so a
failed run leaves nothing behind.  Exit status: 0 all verdicts pass, 1 some
verdict failed, 2 config or solver error.

verdicts.csv columns: name, quantity, check, measured, deviation, verdict
suite.csv columns:    name, job, quantity, check, measured, deviation, verdict
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import JOBS, ConfigError, ExperimentConfig, bundled_configs, load_config
from .jobs import JOB_TABLE


VERDICT_COLUMNS = ("name", "quantity", "check", "measured", "deviation", "verdict")
SUITE_COLUMNS = ("name", "job", "quantity", "check", "measured", "deviation", "verdict")


class VerdictError(KeyError):
    """An expectation names a quantity the job did not produce."""


class JobError(RuntimeError):
    """A solver failure inside a job, with the experiment it came from."""


@dataclass(frozen=True)
class Verdict:
    quantity: str
    check: str
    measured: object
    deviation: float
    passed: bool


@dataclass(frozen=True)
class RunRecord:
    name: str
    job: str
    backend: str
    seed: int
    config_hash: str
    version: str
    started: str
    wall_time: float
    tolerance_scale: float
    outputs: dict
    verdicts: tuple
    files: tuple

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdicts"] = [asdict(v) for v in self.verdicts]
        d["files"] = list(self.files)
        d["passed"] = self.passed
        return d


def _check(e, value, scale):
    """(passed, signed deviation) of one expectation."""
    op, args = e.op, e.args
    if op in ("true", "false"):
        want = op == "true"
        return bool(value) == want, 0.0 if bool(value) == want else 1.0
    if op == "eq":
        return str(value) == args[0], 0.0 if str(value) == args[0] else 1.0
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise VerdictError(f"{e.quantity}: {op} needs a number, job produced {value!r}")
    v = float(value)
    if op == "approx":
        dev = v - args[0]
        return abs(dev) <= args[1] * scale, dev
    bound = args[0] * scale if op in ("lt", "le") and args[0] > 0 else args[0]
    if op == "lt":
        return v < bound, v - bound
    if op == "le":
        return v <= bound, v - bound
    if op == "gt":
        return v > bound, v - bound
    if op == "ge":
        return v >= bound, v - bound
    lo, hi = args
    return lo <= v <= hi, (v - lo if v < lo else v - hi if v > hi else 0.0)


def verdict(outputs: dict, expectations, scale: float = 1.0) -> tuple:
    """Compare declared expectations with job outputs."""
    missing = [e.quantity for e in expectations if e.quantity not in outputs]
    if missing:
        raise VerdictError(f"job produced no value for expected quantities {missing}")
    out = []
    for e in expectations:
        ok, dev = _check(e, outputs[e.quantity], scale)
        out.append(Verdict(e.quantity, e.text(), outputs[e.quantity], float(dev), bool(ok)))
    return tuple(out)


def verdict_rows(record: RunRecord, with_job=False):
    for v in record.verdicts:
        measured = repr(float(v.measured)) if isinstance(v.measured, float) else str(v.measured)
        row = [record.name] + ([record.job] if with_job else [])
        yield row + [v.quantity, v.check, measured, repr(v.deviation), "pass" if v.passed else "fail"]


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def run(cfg: ExperimentConfig, out_dir, tolerance_scale: float = 1.0) -> RunRecord:
    """Execute one experiment and publish its directory only after it completes."""
    if not tolerance_scale > 0:
        raise ConfigError("tolerance scale must be positive", field="--tolerance-scale")
    out_dir = Path(out_dir)
    final = out_dir / cfg.name
    if final.exists():
        raise ConfigError(f"output directory {final} already exists; records are never overwritten",
                          cfg.source)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{cfg.name}.", dir=out_dir))
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        try:
            outputs = JOB_TABLE[cfg.job](cfg, stage)
        except (ArithmeticError, ValueError, RuntimeError, KeyError) as exc:
            raise JobError(f"{cfg.name} ({cfg.job}): {type(exc).__name__}: {exc}") from exc
        outputs = {k: _clean(v.item() if hasattr(v, "item") else v) for k, v in outputs.items()}
        verdicts = verdict(outputs, cfg.expectations, tolerance_scale)
        files = tuple(sorted(p.name for p in stage.iterdir()))
        record = RunRecord(cfg.name, cfg.job, cfg.backend, cfg.seed, cfg.digest(), __version__, started,
                           time.perf_counter() - t0, tolerance_scale, outputs, verdicts,
                           files + ("record.json", "verdicts.csv"))
        with open(stage / "verdicts.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(VERDICT_COLUMNS)
            w.writerows(verdict_rows(record))
        (stage / "record.json").write_text(json.dumps(record.to_dict(), indent=2, default=str))
        os.replace(stage, final)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return record


def _run_path(args):
    path, out, seed, scale = args
    cfg = load_config(path)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return run(cfg, out, scale)


def _expand(paths):
    if not paths:
        return bundled_configs()
    out = []
    for p in map(Path, paths):
        out.extend(sorted(p.glob("*.ini")) if p.is_dir() else [p])
    return out


def run_suite(paths, out_dir, workers=1, seed=None, tolerance_scale=1.0):
    """Run a batch of configs in parallel; returns (records, errors)."""
    configs = _expand(paths)
    cfgs = [load_config(p) for p in configs]   # parse everything before running anything
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ConfigError("experiment names in a batch must be unique")
    tasks = [(str(p), str(out_dir), seed, tolerance_scale) for p in configs]
    records, errors = [], []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_path, t) for t in tasks]
            for t, fut in zip(tasks, futures):
                try:
                    records.append(fut.result())
                except (ConfigError, JobError, VerdictError) as exc:
                    errors.append((t[0], str(exc)))
    else:
        for t in tasks:
            try:
                records.append(_run_path(t))
            except (ConfigError, JobError, VerdictError) as exc:
                errors.append((t[0], str(exc)))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "suite.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUITE_COLUMNS)
        for rec in records:
            w.writerows(verdict_rows(rec, with_job=True))
    return records, errors


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solitonlab", description="Ricci soliton entropy, flow and stability experiments")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in JOBS + ("suite",):
        s = sub.add_parser(name, help=f"run {'every bundled or given config' if name == 'suite' else 'a ' + name + ' job'}")
        if name == "suite":
            s.add_argument("--config", nargs="*", default=None, help="config files or directories")
            s.add_argument("--workers", type=int, default=1)
        else:
            s.add_argument("--config", required=True, help="experiment config (INI)")
        s.add_argument("--out", default="runs", help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply declared tolerances")
    return p


def _print_verdicts(rec: RunRecord):
    for v in rec.verdicts:
        print(f"{rec.name}: {v.quantity} {v.check} -> {v.measured} [{'pass' if v.passed else 'fail'}]")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "suite":
            if args.workers < 1:
                raise ConfigError("worker count must be at least 1", field="--workers")
            records, errors = run_suite(args.config, args.out, args.workers, args.seed, args.tolerance_scale)
            for rec in records:
                _print_verdicts(rec)
            for path, msg in errors:
                print(f"error: {msg}", file=sys.stderr)
            if errors:
                return 2
            return 0 if all(r.passed for r in records) else 1
        cfg = load_config(args.config)
        if cfg.job != args.command:
            raise ConfigError(f"config declares job {cfg.job!r}, not {args.command!r}", cfg.source, field="experiment.job")
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        rec = run(cfg, args.out, args.tolerance_scale)
    except (ConfigError, JobError, VerdictError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_verdicts(rec)
    return 0 if rec.passed else 1
