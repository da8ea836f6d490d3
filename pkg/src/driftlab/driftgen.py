"""Synthetic drifting streams drawn from superparent k-DB Bayesian networks.

Every node is binary.  ``X1`` has the class as its only parent, ``X2`` has the
class and ``X1``; the first half of the remaining structured nodes take the
class plus one of ``X1``/``X2`` (chosen uniformly), the second half take the
class plus both.  A block of parentless noise nodes follows.  Drift moves
``P(X_i = 0 | parents)`` of a random subset of non-hub nodes by ``+/- delta``
every ``period`` steps; the class and the hub nodes never drift.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from driftlab.schema import Schema

# Per-event CPT shift for the three drift regimes studied.
DRIFT_PRESETS = {"fast": 0.05, "medium": 0.01, "slow": 0.0005}

HUBS = (0, 1)  # X1 and X2: the only attributes allowed as parents
MAX_ROWS = 8


class StructureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    """Size of the generated network: structured nodes plus noise nodes."""

    num_structured: int = 100
    num_noise: int = 100

    def __post_init__(self):
        if self.num_structured < 3:
            raise ValueError("need at least 3 structured attributes")
        if self.num_noise < 0:
            raise ValueError("num_noise must be >= 0")

    @property
    def num_attributes(self) -> int:
        return self.num_structured + self.num_noise

    @classmethod
    def reduced(cls) -> GeneratorConfig:
        """50-attribute variant that keeps A2DE tractable at desk scale."""
        return cls(25, 25)


@dataclass(frozen=True)
class DriftConfig:
    delta: float
    period: int = 10
    fraction: float = 50.0
    include_noise: bool = True
    drift_pool: tuple[int, ...] | None = None  # explicit 0-based attribute indices

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if not 0.0 < self.fraction <= 100.0:
            raise ValueError(f"fraction must lie in (0, 100], got {self.fraction}")
        if self.drift_pool is not None and set(self.drift_pool) & set(HUBS):
            raise ValueError("X1 and X2 are parents and may not drift")

    @classmethod
    def preset(cls, name: str, **kwargs) -> DriftConfig:
        try:
            return cls(DRIFT_PRESETS[name], **kwargs)
        except KeyError:
            raise ValueError(f"unknown drift preset {name!r}; choose from {sorted(DRIFT_PRESETS)}") from None

    def pool(self, net: KdbNetwork) -> np.ndarray:
        if self.drift_pool is not None:
            pool = np.asarray(sorted(self.drift_pool), dtype=np.int64)
            if pool.size and (pool.min() < 0 or pool.max() >= net.num_attributes):
                raise ValueError("drift pool refers to attributes outside the network")
            return pool
        stop = net.num_attributes if self.include_noise else net.num_structured
        return np.arange(len(HUBS), stop, dtype=np.int64)


@dataclass(frozen=True)
class KdbNetwork:
    """Structure and CPTs of a superparent network over binary attributes.

    ``p0[i, r]`` is ``P(X_i = 0 | parent row r)``.  Row ``r`` of a node with
    the class as parent is ``y * 2**len(parents) + bits(x_parents)``; noise
    nodes have the single row 0.  Unused rows hold NaN.
    """

    parents: tuple[tuple[int, ...], ...]
    class_parent: np.ndarray
    p0: np.ndarray
    class_prior: np.ndarray
    num_structured: int
    seed: int | None = None
    num_rows: np.ndarray = field(init=False, repr=False, compare=False)
    row_coefficients: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = np.array([(2 if c else 1) * 2 ** len(p) for p, c in zip(self.parents, self.class_parent)],
                        dtype=np.int64)
        object.__setattr__(self, "num_rows", rows)
        object.__setattr__(self, "row_coefficients", _row_coefficients(self))

    @property
    def num_attributes(self) -> int:
        return len(self.parents)

    @property
    def schema(self) -> Schema:
        return Schema.binary(self.num_attributes)

    def row_mask(self) -> np.ndarray:
        return np.arange(MAX_ROWS)[None, :] < self.num_rows[:, None]

    def same_structure(self, other: KdbNetwork) -> bool:
        return (self.parents == other.parents
                and np.array_equal(self.class_parent, other.class_parent)
                and self.p0.shape == other.p0.shape)

    def with_p0(self, p0: np.ndarray) -> KdbNetwork:
        twin = object.__new__(KdbNetwork)
        twin.__dict__.update(self.__dict__)
        object.__setattr__(twin, "p0", p0)
        return twin

    def validate(self) -> None:
        """Raise if any CPT row is not a valid Bernoulli distribution."""
        mask = self.row_mask()
        rows = self.p0[mask]
        if np.isnan(rows).any() or (rows < 0).any() or (rows > 1).any():
            raise AssertionError("CPT entry outside [0, 1]")
        if not np.isnan(self.p0[~mask]).all():
            raise AssertionError("unused CPT rows must be NaN")
        if not math.isclose(float(self.class_prior.sum()), 1.0, abs_tol=1e-12):
            raise AssertionError("class prior does not sum to one")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def build_network(seed: int, config: GeneratorConfig = GeneratorConfig()) -> KdbNetwork:
    """Draw a random superparent network: structure first, then every CPT row
    ``P(X_i = 0 | row) ~ U(0, 1)``."""
    rng = _rng(seed, 0)
    h = config.num_structured
    half = h // 2
    parents: list[tuple[int, ...]] = [(), (0,)]
    choice = rng.integers(0, 2, size=max(half - 2, 0))
    parents += [(int(c),) for c in choice]
    parents += [(0, 1)] * (h - len(parents))
    parents += [()] * config.num_noise
    class_parent = np.array([True] * h + [False] * config.num_noise)
    num_rows = np.array([(2 if c else 1) * 2 ** len(p) for p, c in zip(parents, class_parent)])
    p0 = np.full((len(parents), MAX_ROWS), np.nan)
    for i, r in enumerate(num_rows):
        p0[i, :r] = rng.random(r)
    return KdbNetwork(tuple(parents), class_parent, p0, np.array([0.5, 0.5]), h, seed)


def _row_coefficients(net: KdbNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Row index = y * cy + x[HUBS] @ ch.T for every node."""
    a = net.num_attributes
    cy = np.zeros(a, dtype=np.int64)
    ch = np.zeros((a, len(HUBS)), dtype=np.int64)
    for i, (ps, has_class) in enumerate(zip(net.parents, net.class_parent)):
        k = len(ps)
        if has_class:
            cy[i] = 2 ** k
        for pos, parent in enumerate(ps):
            ch[i, HUBS.index(parent)] = 2 ** (k - 1 - pos)
    return cy, ch


def sample(net: KdbNetwork, rng: np.random.Generator, size: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling of ``size`` labelled examples.

    The class is drawn first, then the hub attributes in order, then every
    other attribute from its CPT row given the already-sampled parents.
    Returns ``(X, y)`` with ``X`` of shape ``(size, num_attributes)``.
    """
    a = net.num_attributes
    u = rng.random((size, a + 1))
    y = (u[:, 0] >= net.class_prior[0]).astype(np.int64)
    x = np.empty((size, a), dtype=np.int64)
    cy, ch = net.row_coefficients
    for i in HUBS:
        rows = y * cy[i] + x[:, :i] @ ch[i, :i]
        x[:, i] = u[:, 1 + i] >= net.p0[i, rows]
    rest = np.arange(len(HUBS), a)
    rows = y[:, None] * cy[None, rest] + x[:, list(HUBS)] @ ch[rest].T
    x[:, rest] = u[:, 1 + rest] >= net.p0[rest[None, :], rows]
    return x, y


def _drift(net: KdbNetwork, cfg: DriftConfig, rng: np.random.Generator) -> tuple[KdbNetwork, np.ndarray]:
    pool = cfg.pool(net)
    k = math.ceil(cfg.fraction / 100.0 * len(pool) - 1e-9)
    selected = np.sort(rng.choice(pool, size=k, replace=False)) if k else pool[:0]
    signs = rng.integers(0, 2, size=(len(selected), MAX_ROWS)) * 2 - 1
    p0 = net.p0.copy()
    p0[selected] = np.clip(p0[selected] + signs * cfg.delta, 0.0, 1.0)
    return net.with_p0(p0), selected


def drift_step(net: KdbNetwork, cfg: DriftConfig, rng: np.random.Generator) -> KdbNetwork:
    """Shift every CPT row of a random ``fraction`` of the drift pool by
    ``+/- delta`` (sign drawn per row), clamping to ``[0, 1]``."""
    return _drift(net, cfg, rng)[0]


@dataclass(frozen=True)
class DriftMagnitude:
    per_row: np.ndarray  # (nodes, MAX_ROWS), NaN for unused rows
    per_node: np.ndarray
    mean: float

    def rate(self, elapsed_steps: int) -> float:
        return self.mean / elapsed_steps


def drift_magnitude(before: KdbNetwork, after: KdbNetwork,
                    nodes: np.ndarray | None = None) -> DriftMagnitude:
    """Total variation distance between matching CPT rows.

    For a binary row ``TVD = (|p0 - q0| + |p1 - q1|) / 2 = |p0 - q0|``.  Nodes
    average their rows; the aggregate averages ``nodes`` (default: all).
    """
    if not before.same_structure(after):
        raise StructureMismatch("networks differ in structure")
    p, q = before.p0, after.p0
    per_row = 0.5 * (np.abs(p - q) + np.abs((1 - p) - (1 - q)))
    per_node = np.nanmean(per_row, axis=1)
    chosen = per_node if nodes is None else per_node[np.asarray(nodes, dtype=np.int64)]
    return DriftMagnitude(per_row, per_node, float(chosen.mean()) if chosen.size else 0.0)


def sampled_marginal_tvd(before: KdbNetwork, after: KdbNetwork, rng: np.random.Generator,
                         samples: int = 100_000) -> float:
    """Monte-Carlo stand-in for the joint distance: mean TVD between the
    add-one smoothed empirical ``P(Y, X_i)`` tables of the two networks."""
    if not before.same_structure(after):
        raise StructureMismatch("networks differ in structure")

    def tables(net):
        x, y = sample(net, rng, samples)
        counts = np.stack([((y == c)[:, None] & (x == v)).sum(axis=0)
                           for c in (0, 1) for v in (0, 1)], axis=1) + 1.0
        return counts / counts.sum(axis=1, keepdims=True)

    return float(0.5 * np.abs(tables(before) - tables(after)).sum(axis=1).mean())


@dataclass
class SyntheticStream:
    x: np.ndarray
    y: np.ndarray
    initial: KdbNetwork
    final: KdbNetwork
    log_step: np.ndarray
    log_node: np.ndarray
    log_row: np.ndarray
    log_tvd: np.ndarray
    event_steps: np.ndarray
    event_mean_tvd: np.ndarray  # mean over the drift pool, one per event

    @property
    def schema(self) -> Schema:
        return self.initial.schema

    def __len__(self) -> int:
        return len(self.y)


def generate_stream(seed: int, cfg: DriftConfig, length: int = 5000,
                    generator: GeneratorConfig = GeneratorConfig()) -> SyntheticStream:
    """One example per step; drift is applied after steps ``T-1, 2T-1, ...`` so
    the event at step ``kT`` governs examples ``kT .. (k+1)T - 1``."""
    net = build_network(seed, generator)
    sample_rng, drift_rng = _rng(seed, 1), _rng(seed, 2)
    pool = cfg.pool(net)
    xs, ys = [], []
    log_step, log_node, log_row, log_tvd = [], [], [], []
    ev_steps, ev_tvd = [], []
    current = net
    t = 0
    while t < length:
        n = min(cfg.period - t % cfg.period, length - t)
        x, y = sample(current, sample_rng, n)
        xs.append(x)
        ys.append(y)
        t += n
        if t % cfg.period == 0:
            after, selected = _drift(current, cfg, drift_rng)
            mag = drift_magnitude(current, after, pool)
            for node in selected:
                r = int(current.num_rows[node])
                log_step.append(np.full(r, t))
                log_node.append(np.full(r, node))
                log_row.append(np.arange(r))
                log_tvd.append(mag.per_row[node, :r])
            ev_steps.append(t)
            ev_tvd.append(mag.mean)
            current = after

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    return SyntheticStream(
        np.concatenate(xs) if xs else np.zeros((0, net.num_attributes), dtype=np.int64),
        np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64),
        net, current,
        cat(log_step, np.int64), cat(log_node, np.int64), cat(log_row, np.int64),
        cat(log_tvd, np.float64), np.asarray(ev_steps, dtype=np.int64),
        np.asarray(ev_tvd, dtype=np.float64),
    )


def write_stream_csv(stream: SyntheticStream, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    a = stream.x.shape[1]
    writer.writerow(["step"] + [f"x{i + 1}" for i in range(a)] + ["y"])
    for t, (row, label) in enumerate(zip(stream.x.tolist(), stream.y.tolist())):
        writer.writerow([t, *row, label])


def write_drift_log_csv(stream: SyntheticStream, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["step", "node", "row", "tvd"])
    for t, node, row, tvd in zip(stream.log_step.tolist(), stream.log_node.tolist(),
                                 stream.log_row.tolist(), stream.log_tvd.tolist()):
        # Nodes are reported 1-based to match the x1..xN stream columns.
        writer.writerow([t, node + 1, row, repr(tvd)])
