"""``driftlab`` command line: generate streams, run prequential experiments,
sweep the drift/forgetting/order grid and compare against published baselines.

Every option can also come from a JSON file of flat dotted keys
(``--config``); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import secrets
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator, TextIO

import numpy as np

from driftlab import baselines
from driftlab.ande import AndeModel
from driftlab.driftgen import (
    DRIFT_PRESETS, DriftConfig, GeneratorConfig, generate_stream, write_drift_log_csv,
    write_stream_csv,
)
from driftlab.evaluation import (
    GridSpec, PrequentialResult, _aggregate_arrays, derive_seed, format_report, prequential,
    run_grid, sweet_path_report,
)
from driftlab.forgetting import DEFAULT_DECAYS, DEFAULT_WINDOWS, ForgetPolicy, standard_policies
from driftlab.ingest import DATASETS, DiscretizedStream, find_dataset, open_dataset, validate_meta

log = logging.getLogger("driftlab")

DEFAULTS: dict[str, Any] = {
    "seed": None,
    "jobs": None,
    "out": "driftlab-out",
    "full_scale": False,
    "stream.preset": None,
    "stream.delta": None,
    "stream.period": 10,
    "stream.fraction": 50.0,
    "stream.include_noise": True,
    "stream.length": 5000,
    "stream.structured": 100,
    "stream.noise": 100,
    "stream.data": None,
    "stream.format": None,
    "stream.class_index": -1,
    "stream.limit": None,
    "model.n": 0,
    "model.smoothing": 1.0,
    "model.tau": 0.0,
    "forget.variant": "none",
    "forget.window": None,
    "forget.decay": None,
    "run.runs": 1,
    "run.bucket": 50,
    "grid.presets": "fast,medium,slow",
    "grid.orders": "0,1,2",
    "grid.policies": ",".join([f"w{w}" for w in DEFAULT_WINDOWS] + [f"d{d:g}" for d in DEFAULT_DECAYS]),
    "grid.runs": None,
    "realdata.dataset": None,
    "discretize.bins": 5,
    "discretize.capacity": 1000,
}

# Desk-scale defaults; --full-scale restores the published experiment sizes.
DESK_RUNS = 30
FULL_RUNS = {0: 150, 1: 150, 2: 100}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def synthetic(self) -> bool:
        return self.values["stream.data"] is None

    def drift(self) -> DriftConfig:
        return DriftConfig(float(self["stream.delta"]), int(self["stream.period"]),
                           float(self["stream.fraction"]), bool(self["stream.include_noise"]))

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(int(self["stream.structured"]), int(self["stream.noise"]))

    def policy(self) -> ForgetPolicy:
        variant = self["forget.variant"]
        if variant == "window":
            return ForgetPolicy.sliding(int(self["forget.window"]))
        if variant == "decay":
            return ForgetPolicy.decaying(float(self["forget.decay"]))
        if variant == "none":
            return ForgetPolicy.none()
        return ForgetPolicy.parse(str(variant))

    def digest(self) -> str:
        keep = {k: v for k, v in sorted(self.values.items()) if k not in ("out", "jobs")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True, default=str).encode()).hexdigest()[:12]


def load_config(args: argparse.Namespace, overrides: dict[str, Any]) -> ExperimentConfig:
    values = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if values["stream.preset"] is not None:
        if values["stream.preset"] not in DRIFT_PRESETS:
            raise ConfigError(f"unknown preset {values['stream.preset']!r}")
        if overrides.get("stream.delta") is None:
            values["stream.delta"] = DRIFT_PRESETS[values["stream.preset"]]
    if values["seed"] is None:
        values["seed"] = secrets.randbits(32)
    if values["jobs"] is None:
        values["jobs"] = os.cpu_count() or 1
    return ExperimentConfig(values)


def _require_single_source(cfg: ExperimentConfig) -> None:
    has_data = cfg["stream.data"] is not None
    has_synth = cfg["stream.delta"] is not None
    if has_data == has_synth:
        raise ConfigError("give exactly one stream source: --preset/--delta or --data")


@contextmanager
def atomic_open(path: Path) -> Iterator[TextIO]:
    """Write to a temporary sibling and rename into place on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write(path: Path, fill: Callable[[TextIO], Any]) -> Path:
    with atomic_open(path) as fh:
        fill(fh)
    return path


def _write_curve(path: Path, curve: np.ndarray, bucket: int) -> Path:
    def fill(fh):
        fh.write("bucket_start_step,mean_loss\n")
        for i, v in enumerate(curve):
            fh.write(f"{i * bucket},{float(v):.10g}\n")
    return _write(path, fill)


def _summary(cfg: ExperimentConfig, mean_error: float, stderr: float, runs: int,
             started: float, **extra) -> dict:
    record = {"config_hash": cfg.digest(), "mean_error": mean_error, "stderr": stderr,
              "runs": runs, "wall_time": round(time.time() - started, 3), "seed": cfg["seed"]}
    record.update(extra)
    record = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in record.items()}
    print(json.dumps(record, sort_keys=True))
    return record


def cmd_generate(cfg: ExperimentConfig) -> int:
    if cfg["stream.delta"] is None:
        raise ConfigError("generate needs --preset or --delta")
    out = Path(cfg["out"])
    stream = generate_stream(int(cfg["seed"]), cfg.drift(), int(cfg["stream.length"]), cfg.generator())
    _write(out / "stream.csv", lambda fh: write_stream_csv(stream, fh))
    _write(out / "drift_log.csv", lambda fh: write_drift_log_csv(stream, fh))
    manifest = {
        "seed": cfg["seed"], "preset": cfg["stream.preset"], "delta": cfg.drift().delta,
        "period": cfg.drift().period, "fraction": cfg.drift().fraction,
        "include_noise": cfg.drift().include_noise, "length": len(stream),
        "attributes": stream.x.shape[1], "drift_events": int(len(stream.event_steps)),
        "mean_event_tvd": float(stream.event_mean_tvd.mean()) if len(stream.event_steps) else 0.0,
    }
    _write(out / "manifest.json", lambda fh: fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n"))
    print(json.dumps(manifest, sort_keys=True))
    return 0


def _load_real(cfg: ExperimentConfig, path: str | os.PathLike):
    reader = open_dataset(path, cfg["stream.format"], int(cfg["stream.class_index"]))
    stream = DiscretizedStream(reader, int(cfg["discretize.bins"]), int(cfg["discretize.capacity"]))
    limit = cfg["stream.limit"]
    x, y = stream.to_arrays(None if limit is None else int(limit))
    return stream.schema, x, y


def cmd_run(cfg: ExperimentConfig) -> int:
    _require_single_source(cfg)
    started = time.time()
    out = Path(cfg["out"])
    n, policy, bucket = int(cfg["model.n"]), cfg.policy(), int(cfg["run.bucket"])
    results: list[PrequentialResult] = []
    if cfg.synthetic:
        runs = int(cfg["run.runs"])
        if cfg["full_scale"] and cfg["run.runs"] == DEFAULTS["run.runs"]:
            runs = FULL_RUNS[n]
        for r in range(runs):
            seed = derive_seed(int(cfg["seed"]), 0, r)
            stream = generate_stream(seed, cfg.drift(), int(cfg["stream.length"]), cfg.generator())
            model = AndeModel(stream.schema, n, policy, float(cfg["model.smoothing"]), float(cfg["model.tau"]))
            results.append(prequential(model, stream.x, stream.y, bucket, seed))
            log.info("run %d/%d error %.4f", r + 1, runs, results[-1].mean_error)
    else:
        schema, x, y = _load_real(cfg, cfg["stream.data"])
        model = AndeModel(schema, n, policy, float(cfg["model.smoothing"]), float(cfg["model.tau"]))
        results.append(prequential(model, x, y, bucket))
    agg = _aggregate_arrays(np.stack([r.bucketed for r in results]),
                            np.array([r.mean_error for r in results]))
    _write_curve(out / "curve.csv", agg.curve, bucket)
    record = _summary(cfg, agg.mean_error, agg.stderr, agg.runs, started, n=n, policy=policy.label)
    _write(out / "summary.json", lambda fh: fh.write(json.dumps(record, sort_keys=True) + "\n"))
    return 0


def _parse_list(text, cast) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(cast(t) for t in text)
    return tuple(cast(t) for t in str(text).split(",") if t.strip())


def _preset_delta(token: str) -> float:
    token = token.strip()
    return DRIFT_PRESETS[token] if token in DRIFT_PRESETS else float(token)


def grid_specs(cfg: ExperimentConfig) -> list[tuple[str, GridSpec]]:
    """The grids a sweep needs.  At desk scale A2DE runs on the reduced
    generator, together with NB and A1DE so that all three stay comparable."""
    drifts = _parse_list(cfg["grid.presets"], _preset_delta)
    orders = _parse_list(cfg["grid.orders"], int)
    policies = _parse_list(cfg["grid.policies"], ForgetPolicy.parse)
    if not (drifts and orders and policies):
        raise ConfigError("grid axes must be non-empty")
    seed = int(cfg["seed"])
    common = dict(drifts=drifts, policies=policies, stream_length=int(cfg["stream.length"]),
                  bucket_size=int(cfg["run.bucket"]), period=int(cfg["stream.period"]),
                  fraction=float(cfg["stream.fraction"]), smoothing=float(cfg["model.smoothing"]),
                  master_seed=seed)
    full_gen = cfg.generator()
    if cfg["full_scale"]:
        specs = []
        for n in orders:
            runs = int(cfg["grid.runs"] or FULL_RUNS[n])
            specs.append((f"n{n}", GridSpec(models=(n,), runs_per_cell=runs, generator=full_gen, **common)))
        return specs
    runs = int(cfg["grid.runs"] or DESK_RUNS)
    low = tuple(n for n in orders if n < 2)
    specs = []
    if low:
        specs.append(("full", GridSpec(models=low, runs_per_cell=runs, generator=full_gen, **common)))
    if 2 in orders:
        specs.append(("reduced", GridSpec(models=tuple(sorted(set(orders))), runs_per_cell=runs,
                                          generator=GeneratorConfig.reduced(), **common)))
    return specs


def _write_runs(fh: TextIO, result) -> None:
    fh.write("delta,n,policy,param,run,seed,mean_error\n")
    for (delta, n, policy), cell in result.cells.items():
        for r, (seed, err) in enumerate(zip(cell.seeds, cell.errors)):
            fh.write(f"{delta!r},{n},{policy.variant},{policy.param},{r},{int(seed)},{float(err):.10g}\n")


def cmd_sweetpath(cfg: ExperimentConfig) -> int:
    started = time.time()
    out = Path(cfg["out"])
    reports = {}
    specs = grid_specs(cfg)
    for name, spec in specs:
        result = run_grid(spec, int(cfg["jobs"]))
        _write(out / f"results_{name}.csv", result.write_table)
        _write(out / f"runs_{name}.csv", lambda fh: _write_runs(fh, result))
        for (delta, n, policy), cell in result.cells.items():
            _write_curve(out / "curves" / f"{name}_delta{delta:g}_n{n}_{policy.label}.csv",
                         cell.summary.curve, spec.bucket_size)
        report = sweet_path_report(result)
        reports[name] = report
        print(f"[{name} generator: {spec.generator.num_attributes} attributes, "
              f"{spec.runs_per_cell} runs]")
        print(format_report(report))
    reports["config_hash"] = cfg.digest()
    _write(out / "report.json", lambda fh: fh.write(json.dumps(reports, indent=2, sort_keys=True) + "\n"))
    best = min(e["best_error"] for name, _ in specs for e in reports[name])
    _summary(cfg, best, float("nan"), sum(s.runs_per_cell for _, s in specs), started, grids=[name for name, _ in specs])
    return 0


def cmd_realdata(cfg: ExperimentConfig) -> int:
    started = time.time()
    out = Path(cfg["out"])
    name = cfg["realdata.dataset"]
    path = cfg["stream.data"]
    if path is None:
        if name is None:
            raise ConfigError("realdata needs --dataset or --data")
        found = find_dataset(name)
        if found is None:
            raise ConfigError(f"dataset {name!r} not found under $DRIFTLAB_DATA_DIR")
        path = found
    schema, x, y = _load_real(cfg, path)
    if name is not None and name in DATASETS and cfg["stream.limit"] is None:
        validate_meta(DATASETS[name], schema, len(y))
    orders = _parse_list(cfg["grid.orders"], int)
    policies = _parse_list(cfg["grid.policies"], ForgetPolicy.parse)
    rows = []
    for n in orders:
        for policy in policies:
            model = AndeModel(schema, n, policy, float(cfg["model.smoothing"]), float(cfg["model.tau"]))
            res = prequential(model, x, y, int(cfg["run.bucket"]))
            rows.append((n, policy, res.mean_error))
            log.info("n=%d %s error %.4f", n, policy.label, res.mean_error)

    def fill(fh):
        fh.write("n,policy,param,mean_error\n")
        for n, policy, err in rows:
            fh.write(f"{n},{policy.variant},{policy.param},{err:.10g}\n")

    _write(out / "realdata.csv", fill)
    n, policy, err = min(rows, key=lambda r: r[2])
    extra = {"dataset": name or Path(path).stem, "best_n": n, "best_policy": policy.label}
    if name is not None:
        technique, loss = baselines.best_baseline(name)
        extra.update(baseline=technique, baseline_error=loss, margin=round(loss - err, 6))
        verdict = "beats" if err < loss else "does not beat"
        print(f"{extra['dataset']}: AnDE n={n} {policy.label} error {err:.4f} {verdict} "
              f"best baseline {technique} {loss:.4f}")
    _summary(cfg, err, 0.0, 1, started, **extra)
    return 0


def cmd_discretize(cfg: ExperimentConfig) -> int:
    path = cfg["stream.data"]
    if path is None:
        raise ConfigError("discretize needs --data")
    reader = open_dataset(path, cfg["stream.format"], int(cfg["stream.class_index"]))
    stream = DiscretizedStream(reader, int(cfg["discretize.bins"]), int(cfg["discretize.capacity"]))
    out = Path(cfg["out"])

    def fill(fh):
        a = stream.schema.num_attributes
        fh.write(",".join(["step"] + [f"x{i + 1}" for i in range(a)] + ["y"]) + "\n")
        for t, (x, label) in enumerate(stream):
            fh.write(f"{t}," + ",".join(map(str, x.tolist())) + f",{label}\n")

    _write(out / "discretized.csv", fill)
    print(json.dumps({"attributes": stream.schema.num_attributes,
                      "arities": list(stream.schema.arities),
                      "classes": stream.schema.num_classes}))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "sweetpath": cmd_sweetpath,
    "realdata": cmd_realdata,
    "discretize": cmd_discretize,
}

# flag destination -> dotted config key
_FLAG_KEYS = {
    "seed": "seed", "jobs": "jobs", "out": "out", "full_scale": "full_scale",
    "preset": "stream.preset", "delta": "stream.delta", "period": "stream.period",
    "fraction": "stream.fraction", "length": "stream.length", "structured": "stream.structured",
    "noise": "stream.noise", "data": "stream.data", "format": "stream.format",
    "class_index": "stream.class_index", "limit": "stream.limit",
    "order": "model.n", "smoothing": "model.smoothing", "tau": "model.tau",
    "runs": "run.runs", "bucket": "run.bucket",
    "presets": "grid.presets", "orders": "grid.orders", "policies": "grid.policies",
    "grid_runs": "grid.runs", "dataset": "realdata.dataset",
    "bins": "discretize.bins", "capacity": "discretize.capacity",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed; printed in the summary when omitted")
    common.add_argument("--jobs", type=int, help="worker processes (default: all processors)")
    common.add_argument("--config", help="JSON file of dotted keys, e.g. {\"model.n\": 1}")
    common.add_argument("--out", help="output directory")
    common.add_argument("--full-scale", dest="full_scale", action="store_const", const=True,
                        help="published run counts and the 200-attribute generator for every order")
    common.add_argument("-v", "--verbose", action="store_true")

    stream = argparse.ArgumentParser(add_help=False)
    stream.add_argument("--preset", choices=sorted(DRIFT_PRESETS))
    stream.add_argument("--delta", type=float)
    stream.add_argument("--period", type=int)
    stream.add_argument("--fraction", type=float)
    stream.add_argument("--length", type=int)
    stream.add_argument("--structured", type=int)
    stream.add_argument("--noise", type=int)
    stream.add_argument("--exclude-noise", dest="exclude_noise", action="store_true",
                        help="keep noise attributes out of the drift pool")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="ARFF or CSV file")
    data.add_argument("--format", choices=["arff", "csv"])
    data.add_argument("--class-index", dest="class_index", type=int)
    data.add_argument("--limit", type=int, help="read at most this many instances")
    data.add_argument("--bins", type=int)
    data.add_argument("--capacity", type=int, help="discretizer sample size")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--order", "-n", type=int, choices=[0, 1, 2])
    model.add_argument("--policy", help="none, w<W> or d<D> (e.g. w20, d0.05)")
    model.add_argument("--smoothing", type=float)
    model.add_argument("--tau", type=float)
    model.add_argument("--bucket", type=int)

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--presets", help="comma list of presets or deltas")
    grid.add_argument("--orders", help="comma list of model orders")
    grid.add_argument("--policies", help="comma list such as w20,w50,d0.05")
    grid.add_argument("--grid-runs", dest="grid_runs", type=int)

    parser = argparse.ArgumentParser(prog="driftlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common, stream], help="write a synthetic stream and drift log")
    p = sub.add_parser("run", parents=[common, stream, data, model], help="prequential run(s) of one model")
    p.add_argument("--runs", type=int)
    sub.add_parser("sweetpath", parents=[common, stream, model, grid], help="sweep drift x order x forgetting")
    p = sub.add_parser("realdata", parents=[common, data, model, grid], help="real dataset vs published baselines")
    p.add_argument("--dataset", help=f"one of {', '.join(DATASETS)}; located via $DRIFTLAB_DATA_DIR")
    sub.add_parser("discretize", parents=[common, data], help="discretize a dataset to the stream CSV format")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    found = {key: getattr(args, dest) for dest, key in _FLAG_KEYS.items()
             if getattr(args, dest, None) is not None}
    if getattr(args, "exclude_noise", False):
        found["stream.include_noise"] = False
    policy = getattr(args, "policy", None)
    if policy is not None:
        parsed = ForgetPolicy.parse(policy)
        found["forget.variant"] = parsed.variant
        found["forget.window"] = parsed.window
        found["forget.decay"] = parsed.decay
    return found


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args, _overrides(args))
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"driftlab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
