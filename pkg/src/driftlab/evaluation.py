"""Prequential (test-then-train) evaluation and the drift/forgetting/order grid."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from driftlab.ande import AndeModel
from driftlab.driftgen import DriftConfig, GeneratorConfig, generate_stream
from driftlab.forgetting import ForgetPolicy, standard_policies
from driftlab.schema import Schema, SchemaError

log = logging.getLogger(__name__)

BUCKET = 50


@dataclass(frozen=True)
class PrequentialResult:
    losses: np.ndarray  # 0/1 per step
    bucket_size: int = BUCKET
    run_seed: int | None = None

    @property
    def steps(self) -> int:
        return len(self.losses)

    @property
    def mean_error(self) -> float:
        return float(self.losses.mean()) if self.steps else 0.0

    @property
    def bucketed(self) -> np.ndarray:
        return bucket_means(self.losses, self.bucket_size)


def bucket_means(losses: np.ndarray, size: int) -> np.ndarray:
    """Means over consecutive blocks of ``size`` steps; the last block may be short."""
    n = len(losses)
    starts = np.arange(0, n, size)
    sums = np.add.reduceat(losses.astype(np.float64), starts) if n else np.zeros(0)
    return sums / np.minimum(size, n - starts)


def check_stream(schema: Schema, x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[1] != schema.num_attributes:
        raise SchemaError(f"stream has shape {x.shape}; model expects {schema.num_attributes} attributes")
    if len(x) != len(y):
        raise SchemaError("attribute and label streams differ in length")
    if len(x) and ((x < 0).any() or (x >= np.asarray(schema.arities)).any()):
        raise SchemaError("stream value outside attribute arity")
    if len(y) and ((y < 0).any() or (y >= schema.num_classes).any()):
        raise SchemaError("stream label outside class arity")


def prequential(model: AndeModel, x: np.ndarray, y: np.ndarray, bucket_size: int = BUCKET,
                run_seed: int | None = None) -> PrequentialResult:
    """Classify each example with the current model, record the 0-1 loss,
    then learn from it."""
    if model.steps_seen:
        raise ValueError("prequential evaluation needs a fresh model")
    x = np.ascontiguousarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    check_stream(model.schema, x, y)
    losses = np.zeros(len(y), dtype=np.uint8)
    for t in range(len(y)):
        losses[t] = model.predict(x[t]) != y[t]
        model.learn_values(x[t], int(y[t]), t, validate=False)
    return PrequentialResult(losses, bucket_size, run_seed)


@dataclass(frozen=True)
class Aggregate:
    curve: np.ndarray
    mean_error: float
    stderr: float
    errors: np.ndarray  # per-run mean errors

    @property
    def runs(self) -> int:
        return len(self.errors)


def aggregate(results: Sequence[PrequentialResult]) -> Aggregate:
    """Pointwise mean curve plus mean and standard error of per-run error."""
    if not results:
        raise ValueError("nothing to aggregate")
    if len({r.steps for r in results}) != 1:
        raise ValueError("runs differ in length")
    curves = np.stack([r.bucketed for r in results])
    errors = np.array([r.mean_error for r in results])
    return _aggregate_arrays(curves, errors)


def _aggregate_arrays(curves: np.ndarray, errors: np.ndarray) -> Aggregate:
    se = float(errors.std(ddof=1) / math.sqrt(len(errors))) if len(errors) > 1 else 0.0
    return Aggregate(curves.mean(axis=0), float(errors.mean()), se, errors)


@dataclass(frozen=True)
class GridSpec:
    drifts: tuple[float, ...] = (0.05, 0.01, 0.0005)
    models: tuple[int, ...] = (0, 1, 2)
    policies: tuple[ForgetPolicy, ...] = field(default_factory=lambda: tuple(standard_policies()))
    runs_per_cell: int = 30
    stream_length: int = 5000
    bucket_size: int = BUCKET
    generator: GeneratorConfig = GeneratorConfig()
    period: int = 10
    fraction: float = 50.0
    smoothing: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        if not (self.drifts and self.models and self.policies):
            raise ValueError("grid axes must be non-empty")
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")
        if self.stream_length < 1:
            raise ValueError("stream_length must be >= 1")

    def cells(self) -> list[tuple[float, int, ForgetPolicy]]:
        return [(d, n, p) for d in self.drifts for n in self.models for p in self.policies]


def derive_seed(master: int, *counters: int) -> int:
    """Independent 63-bit seed for a (drift, run, ...) coordinate."""
    seq = np.random.SeedSequence(master, spawn_key=tuple(counters))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _run_task(spec: GridSpec, drift_index: int, run: int):
    seed = derive_seed(spec.master_seed, drift_index, run)
    cfg = DriftConfig(spec.drifts[drift_index], spec.period, spec.fraction)
    stream = generate_stream(seed, cfg, spec.stream_length, spec.generator)
    out = {}
    for n in spec.models:
        for policy in spec.policies:
            model = AndeModel(stream.schema, n, policy, spec.smoothing)
            res = prequential(model, stream.x, stream.y, spec.bucket_size, seed)
            out[(n, policy)] = (res.bucketed, res.mean_error)
    return drift_index, run, seed, out


@dataclass
class CellResult:
    delta: float
    order: int
    policy: ForgetPolicy
    curves: np.ndarray  # (runs, buckets)
    errors: np.ndarray  # (runs,)
    seeds: np.ndarray

    @property
    def summary(self) -> Aggregate:
        return _aggregate_arrays(self.curves, self.errors)


@dataclass
class GridResult:
    spec: GridSpec
    cells: dict[tuple[float, int, ForgetPolicy], CellResult]

    def cell(self, delta: float, order: int, policy: ForgetPolicy) -> CellResult:
        return self.cells[(delta, order, policy)]

    def best_policy(self, delta: float, order: int) -> CellResult:
        """Policy with the lowest mean error for a model order (first wins ties)."""
        cands = [self.cells[(delta, order, p)] for p in self.spec.policies]
        return min(cands, key=lambda c: c.summary.mean_error)

    def best_cell(self, delta: float) -> CellResult:
        return min((self.cells[(delta, n, p)] for n in self.spec.models for p in self.spec.policies),
                   key=lambda c: c.summary.mean_error)

    def write_table(self, out: TextIO) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["delta", "n", "policy", "param", "mean_error", "stderr", "runs"])
        for (delta, n, policy), cell in self.cells.items():
            agg = cell.summary
            writer.writerow([repr(delta), n, policy.variant, policy.param,
                             f"{agg.mean_error:.10g}", f"{agg.stderr:.10g}", agg.runs])


def run_grid(spec: GridSpec, jobs: int | None = None) -> GridResult:
    """Evaluate every (drift, order, policy) cell over ``runs_per_cell`` seeds.

    Runs sharing a drift rate and run index see the same stream, so cells can
    be compared run by run.  The result does not depend on ``jobs``.
    """
    jobs = jobs or os.cpu_count() or 1
    tasks = [(d, r) for d in range(len(spec.drifts)) for r in range(spec.runs_per_cell)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_run_task, [spec] * len(tasks), *zip(*tasks)))
    else:
        done = []
        for d, r in tasks:
            done.append(_run_task(spec, d, r))
            log.info("grid: drift %g run %d done", spec.drifts[d], r)
    buckets = math.ceil(spec.stream_length / spec.bucket_size)
    runs = spec.runs_per_cell
    cells = {}
    for delta, n, policy in spec.cells():
        cells[(delta, n, policy)] = CellResult(
            delta, n, policy, np.zeros((runs, buckets)), np.zeros(runs), np.zeros(runs, dtype=np.int64)
        )
    for d, r, seed, out in done:
        delta = spec.drifts[d]
        for (n, policy), (curve, err) in out.items():
            cell = cells[(delta, n, policy)]
            cell.curves[r] = curve
            cell.errors[r] = err
            cell.seeds[r] = seed
    return GridResult(spec, cells)


def paired_fraction(a: CellResult, b: CellResult) -> float:
    """Fraction of runs in which cell ``a`` has strictly lower error than ``b``."""
    if len(a.errors) != len(b.errors):
        raise ValueError("cells have different run counts")
    return float(np.mean(a.errors < b.errors))


def sweet_path_report(result: GridResult) -> list[dict]:
    """Per drift rate: the best policy of every order, the overall winner and
    whether the winner agrees with the coupling slow drift / slow forgetting /
    low bias and fast drift / fast forgetting / low variance."""
    report = []
    drifts = sorted(result.spec.drifts, reverse=True)
    for rank, delta in enumerate(drifts):
        best = {n: result.best_policy(delta, n) for n in result.spec.models}
        winner = result.best_cell(delta)
        entry = {
            "delta": delta,
            "best_order": winner.order,
            "best_policy": winner.policy.label,
            "best_error": winner.summary.mean_error,
            "per_order": {
                str(n): {"policy": c.policy.label, "mean_error": c.summary.mean_error,
                         "stderr": c.summary.stderr}
                for n, c in best.items()
            },
        }
        if len(drifts) > 1 and len(result.spec.models) > 1:
            # Faster drift should favour lower orders: rank 0 is the fastest.
            orders = sorted(result.spec.models)
            expected = orders[round(rank * (len(orders) - 1) / (len(drifts) - 1))]
            entry["expected_order"] = expected
            entry["sweet_path_holds"] = winner.order == expected
        report.append(entry)
    return report


def format_report(report: Iterable[dict]) -> str:
    lines = []
    for e in report:
        head = (f"delta={e['delta']:g}: best n={e['best_order']} with {e['best_policy']} "
                f"(error {e['best_error']:.4f})")
        if "sweet_path_holds" in e:
            head += f"; expected n={e['expected_order']}: {'HOLDS' if e['sweet_path_holds'] else 'REFUTED'}"
        lines.append(head)
        for n, c in e["per_order"].items():
            lines.append(f"    n={n}: {c['policy']:>7} error {c['mean_error']:.4f} +/- {c['stderr']:.4f}")
    return "\n".join(lines)
