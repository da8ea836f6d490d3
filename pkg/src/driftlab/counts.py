"""Weighted frequency tables: the sufficient statistics of an AnDE model.

A :class:`CountStore` of order ``n`` holds, for every size-``n`` attribute
subset ``s``, the weighted counts ``c(y, x_s)`` and ``c(y, x_s, x_i)`` for every
child attribute ``i`` outside ``s``, plus the store-wide total weight.

Tables are dense over the (subset, value-combination) index space.  Decay is
lazy: every stored weight is expressed in units of a store-wide reference step,
so advancing the clock costs nothing and reading a weight at step ``now``
multiplies by ``exp(-D * (now - ref))``.  The reference is moved forward (one
multiplicative sweep) only when the exponent grows large enough to threaten
floating point range.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterator, Sequence, TextIO

import numpy as np
from numba import njit

from driftlab.schema import Instance, Schema, SchemaError

# Rebase stored weights once the pending decay exponent reaches this value.
_REBASE_EXPONENT = 30.0
_NEGATIVE_TOLERANCE = 1e-9


class WindowDisciplineError(RuntimeError):
    """A decrement would drive a count below zero."""


class TimeTravelError(ValueError):
    """A count was read or written at a step earlier than its last update."""


@dataclass(frozen=True)
class SubsetKey:
    """Address of one count: ``(y, x_s)`` or, with ``child``, ``(y, x_s, x_i)``."""

    attributes: tuple[int, ...]
    values: tuple[int, ...]
    label: int
    child: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(int(a) for a in self.attributes))
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if len(self.attributes) != len(self.values):
            raise ValueError("attributes and values differ in length")
        if any(b <= a for a, b in zip(self.attributes, self.attributes[1:])):
            raise ValueError(f"subset attributes must be strictly increasing: {self.attributes}")
        if self.child is not None:
            attr, val = int(self.child[0]), int(self.child[1])
            if attr in self.attributes:
                raise ValueError(f"child attribute {attr} lies inside the subset")
            object.__setattr__(self, "child", (attr, val))


class SubsetLayout:
    """Index arithmetic for all size-``order`` subsets of a schema.

    Subset ``s`` owns the parent-combination indices
    ``base[s] .. base[s] + cards[s] - 1``; a combination's index is
    ``base[s] + sum(x[subsets[s, k]] * strides[s, k])``.
    """

    def __init__(self, schema: Schema, order: int):
        if order not in (0, 1, 2):
            raise ValueError(f"order must be 0, 1 or 2, got {order}")
        a = schema.num_attributes
        if order > a:
            raise ValueError(f"order {order} exceeds the {a} available attributes")
        self.schema = schema
        self.order = order
        arities = np.asarray(schema.arities, dtype=np.int64)
        subsets = list(combinations(range(a), order))
        self.subsets = np.array(subsets, dtype=np.int64).reshape(len(subsets), order)
        self.children = np.array(
            [[i for i in range(a) if i not in s] for s in subsets], dtype=np.int64
        ).reshape(len(subsets), a - order)
        strides = np.ones((len(subsets), order), dtype=np.int64)
        cards = np.ones(len(subsets), dtype=np.int64)
        for si, s in enumerate(subsets):
            for k in range(order - 1, -1, -1):
                strides[si, k] = cards[si]
                cards[si] *= arities[s[k]]
        self.strides = strides
        self.cards = cards
        self.base = np.zeros(len(subsets), dtype=np.int64)
        np.cumsum(cards[:-1], out=self.base[1:])
        self.num_combos = int(cards.sum())
        self._position = {s: i for i, s in enumerate(subsets)}

    @property
    def num_subsets(self) -> int:
        return len(self.subsets)

    def position(self, attributes: Sequence[int]) -> int:
        try:
            return self._position[tuple(attributes)]
        except KeyError:
            raise SchemaError(
                f"{tuple(attributes)} is not a size-{self.order} subset of this schema"
            ) from None

    def combo(self, attributes: Sequence[int], values: Sequence[int]) -> int:
        s = self.position(attributes)
        arities = self.schema.arities
        p = int(self.base[s])
        for k, (attr, val) in enumerate(zip(attributes, values)):
            if not 0 <= val < arities[attr]:
                raise SchemaError(f"attribute {attr} value {val} outside arity {arities[attr]}")
            p += int(val) * int(self.strides[s, k])
        return p

    def decode(self, combo: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Inverse of :meth:`combo`."""
        s = int(np.searchsorted(self.base, combo, side="right")) - 1
        rest = combo - int(self.base[s])
        attrs = tuple(int(i) for i in self.subsets[s])
        vals = []
        for k in range(self.order):
            stride = int(self.strides[s, k])
            vals.append(rest // stride)
            rest %= stride
        return attrs, tuple(vals)


@lru_cache(maxsize=32)
def layout_for(schema: Schema, order: int) -> SubsetLayout:
    return SubsetLayout(schema, order)


@njit(cache=True)
def _combo_index(x, subsets, strides, base, s):
    p = base[s]
    for k in range(subsets.shape[1]):
        p += x[subsets[s, k]] * strides[s, k]
    return p


_FAST = {"reassoc", "contract", "nsz", "arcp"}


@njit(cache=True, inline="always")
def _segment(subsets, s, k, n_attrs):
    """Bounds of the k-th run of child attributes of subset s (between members)."""
    order = subsets.shape[1]
    lo = 0 if k == 0 else subsets[s, k - 1] + 1
    hi = n_attrs if k == order else subsets[s, k]
    return lo, hi


@njit(cache=True)
def _apply_update(parent, child, parent_last, child_last, subsets, strides, base,
                  x, g, y, w, step):
    """Add ``w`` to every count touched by ``(x, y)``; return the smallest
    resulting stored value."""
    n_attrs = x.shape[0]
    lowest = np.inf
    for s in range(subsets.shape[0]):
        p = _combo_index(x, subsets, strides, base, s)
        parent[y, p] += w
        parent_last[y, p] = step
        lowest = min(lowest, parent[y, p])
        row = child[y, p]
        row_last = child_last[y, p]
        for k in range(subsets.shape[1] + 1):
            lo, hi = _segment(subsets, s, k, n_attrs)
            for j in range(lo, hi):
                v = g[j]
                row[v] += w
                row_last[v] = step
                if row[v] < lowest:
                    lowest = row[v]
    return lowest


@njit(cache=True)
def _undo_update(parent, child, subsets, strides, base, x, g, y, w):
    n_attrs = x.shape[0]
    for s in range(subsets.shape[0]):
        p = _combo_index(x, subsets, strides, base, s)
        parent[y, p] -= w
        row = child[y, p]
        for k in range(subsets.shape[1] + 1):
            lo, hi = _segment(subsets, s, k, n_attrs)
            for j in range(lo, hi):
                row[g[j]] -= w


@njit(cache=True, fastmath=_FAST)
def _segment_product(row, g, addend, scale, lo, hi):
    prod = 1.0
    for j in range(lo, hi):
        prod *= row[g[j]] * scale + addend[j]
    return prod


@njit(cache=True)
def _log_scores(parent, child, total, scale, subsets, strides, base, cards,
                x, g, addend, m, tau, use_delta, chunk, out):
    """Log of the averaged joint estimate per class; returns the number of
    subsets that passed the existence test (0 means fall back).

    Products of child probabilities are accumulated ``chunk`` factors at a
    time before taking logs; the caller picks ``chunk`` small enough that no
    partial product leaves floating point range.
    """
    n_classes = parent.shape[0]
    n_subsets = subsets.shape[0]
    n_attrs = x.shape[0]
    order = subsets.shape[1]
    n_children = n_attrs - order
    buf = np.empty((n_classes, n_subsets))
    log_norm = np.log(total * scale + m)
    kept = 0
    for s in range(n_subsets):
        p = _combo_index(x, subsets, strides, base, s)
        if use_delta:
            mass = 0.0
            for y in range(n_classes):
                mass += parent[y, p]
            if mass * scale <= tau:
                continue
        prior = m / (n_classes * cards[s])
        for y in range(n_classes):
            cp = parent[y, p] * scale
            num = cp + prior
            if num <= 0.0:
                buf[y, kept] = -np.inf
                continue
            ls = np.log(num) - log_norm - n_children * np.log(cp + m)
            row = child[y, p]
            acc = 1.0
            filled = 0
            for k in range(order + 1):
                lo, hi = _segment(subsets, s, k, n_attrs)
                while lo < hi:
                    stop = min(lo + chunk - filled, hi)
                    acc *= _segment_product(row, g, addend, scale, lo, stop)
                    filled += stop - lo
                    lo = stop
                    if filled == chunk:
                        ls += np.log(acc)
                        acc = 1.0
                        filled = 0
            buf[y, kept] = ls + np.log(acc)
        kept += 1
    if kept == 0:
        for y in range(n_classes):
            out[y] = -np.inf
        return 0
    log_kept = np.log(kept)
    for y in range(n_classes):
        mx = -np.inf
        for k in range(kept):
            if buf[y, k] > mx:
                mx = buf[y, k]
        if mx == -np.inf:
            out[y] = -np.inf
            continue
        acc = 0.0
        for k in range(kept):
            acc += np.exp(buf[y, k] - mx)
        out[y] = mx + np.log(acc) - log_kept
    return kept


class CountStore:
    """Weighted class-conditional counts for every attribute subset of one size.

    Parameters
    ----------
    schema:
        Attribute and class arities.
    order:
        Subset size ``n`` (0, 1 or 2).
    decay_rate:
        ``D >= 0``; a count observed ``k`` steps ago weighs ``exp(-D * k)``.
    delta_threshold:
        ``tau``; a parent combination exists iff its class-summed effective
        count exceeds this value.
    """

    def __init__(self, schema: Schema, order: int, decay_rate: float = 0.0,
                 delta_threshold: float = 0.0):
        if decay_rate < 0 or not math.isfinite(decay_rate):
            raise ValueError(f"decay_rate must be finite and >= 0, got {decay_rate}")
        self.schema = schema
        self.order = order
        self.decay_rate = float(decay_rate)
        self.delta_threshold = float(delta_threshold)
        self.layout = layout_for(schema, order)
        k, p, v = schema.num_classes, self.layout.num_combos, schema.num_values
        self.parent = np.zeros((k, p))
        self.child = np.zeros((k, p, v))
        self.parent_last = np.zeros((k, p), dtype=np.int32)
        self.child_last = np.zeros((k, p, v), dtype=np.int32)
        self.total = 0.0
        self.total_last = 0
        self.clock = 0
        self.ref_step = 0
        self._arities = np.asarray(schema.arities, dtype=np.float64)
        self._max_arity = float(self._arities.max())
        self._offsets = np.asarray(schema.offsets[:-1], dtype=np.int64)

    @staticmethod
    def estimated_bytes(schema: Schema, order: int) -> int:
        lay = layout_for(schema, order)
        cells = schema.num_classes * lay.num_combos * (schema.num_values + 1)
        return 16 * cells

    def scale(self, now: int | None = None) -> float:
        """Factor turning stored weights into effective weights at ``now``."""
        if self.decay_rate == 0.0:
            return 1.0
        now = self.clock if now is None else now
        return math.exp(-self.decay_rate * (now - self.ref_step))

    def _advance(self, step: int) -> None:
        if step < self.clock:
            raise TimeTravelError(f"update at step {step} precedes store clock {self.clock}")
        self.clock = step
        if self.decay_rate and self.decay_rate * (step - self.ref_step) > _REBASE_EXPONENT:
            f = self.scale(step)
            self.parent *= f
            self.child *= f
            self.total *= f
            self.ref_step = step

    def update(self, values: Sequence[int] | np.ndarray, label: int, sign: int = 1,
               step: int | None = None, validate: bool = True) -> None:
        """Add (``sign=+1``) or remove (``sign=-1``) one observation at ``step``.

        Every count the observation touches is first synchronised to ``step``
        and then moves by ``sign`` in effective units.
        """
        if sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {sign}")
        if validate:
            x = self.schema.check_values(values)
            label = self.schema.check_label(label)
        else:
            x = np.asarray(values, dtype=np.int64)
        step = self.clock if step is None else int(step)
        self._advance(step)
        w = float(sign) / self.scale(step)
        lay = self.layout
        g = x + self._offsets
        lowest = _apply_update(self.parent, self.child, self.parent_last, self.child_last,
                               lay.subsets, lay.strides, lay.base, x, g, label, w, step)
        self.total += w
        if sign < 0:
            tol = _NEGATIVE_TOLERANCE / self.scale(step)
            if lowest < -tol or self.total < -tol:
                _undo_update(self.parent, self.child, lay.subsets, lay.strides, lay.base,
                             x, g, label, w)
                self.total -= w
                raise WindowDisciplineError(
                    f"removing {tuple(int(v) for v in x)}/y={label} drives a count negative"
                )
        self.total_last = step

    def add(self, instance: Instance) -> None:
        self.update(instance.values, instance.label, +1, instance.step)

    def remove(self, instance: Instance, now: int | None = None) -> None:
        self.update(instance.values, instance.label, -1, instance.step if now is None else now)

    def _locate(self, key: SubsetKey) -> tuple[np.ndarray, np.ndarray, tuple]:
        if len(key.attributes) != self.order:
            raise SchemaError(f"key has {len(key.attributes)} attributes; store order is {self.order}")
        self.schema.check_label(key.label)
        p = self.layout.combo(key.attributes, key.values)
        if key.child is None:
            return self.parent, self.parent_last, (key.label, p)
        attr, val = key.child
        if not 0 <= attr < self.schema.num_attributes or not 0 <= val < self.schema.arities[attr]:
            raise SchemaError(f"child {key.child} outside schema")
        return self.child, self.child_last, (key.label, p, int(self.schema.offsets[attr]) + val)

    def effective_count(self, key: SubsetKey, now: int | None = None) -> float:
        table, last, idx = self._locate(key)
        now = self.clock if now is None else now
        if now < last[idx]:
            raise TimeTravelError(f"read at step {now} precedes last update {int(last[idx])}")
        return max(float(table[idx]) * self.scale(now), 0.0)

    def total_weight(self, now: int | None = None) -> float:
        now = self.clock if now is None else now
        if now < self.total_last:
            raise TimeTravelError(f"read at step {now} precedes last update {self.total_last}")
        return max(self.total * self.scale(now), 0.0)

    def subset_mass(self, attributes: Sequence[int], values: Sequence[int],
                    now: int | None = None) -> float:
        """Class-summed effective count of ``x_s``."""
        p = self.layout.combo(attributes, values)
        return float(self.parent[:, p].sum()) * self.scale(now)

    def exists(self, attributes: Sequence[int], values: Sequence[int],
               now: int | None = None) -> bool:
        """Whether the stream so far (after forgetting) contains ``x_s``."""
        return self.subset_mass(attributes, values, now) > self.delta_threshold

    def log_scores(self, values: np.ndarray, smoothing: float,
                   now: int | None = None, use_delta: bool = True) -> tuple[np.ndarray, int]:
        """Per-class log joint estimate at this order and the number of
        subsets that entered the average."""
        x = np.asarray(values, dtype=np.int64)
        out = np.empty(self.schema.num_classes)
        lay = self.layout
        scale = self.scale(now)
        m = float(smoothing)
        kept = _log_scores(
            self.parent, self.child, self.total, scale, lay.subsets, lay.strides, lay.base,
            lay.cards, x, x + self._offsets, m / self._arities, m, self.delta_threshold,
            use_delta, self._chunk(self.total * scale + m, m), out,
        )
        return out, kept

    def _chunk(self, largest: float, m: float) -> int:
        # Every factor lies in [m / max_arity, N + m]; keep partial products in range.
        span = math.log10(max(largest, 10.0))
        if m > 0:
            span = max(span, -math.log10(m / self._max_arity))
        return max(1, min(256, int(290.0 / span)))

    def effective_tables(self, now: int | None = None) -> tuple[np.ndarray, np.ndarray, float]:
        f = self.scale(now)
        return self.parent * f, self.child * f, self.total * f

    def entries(self, now: int | None = None) -> Iterator[tuple[SubsetKey, float, int]]:
        """Yield ``(key, effective weight, last update step)`` for stored counts."""
        f = self.scale(now)
        offsets = self.schema.offsets
        for y, p in zip(*np.nonzero(self.parent)):
            attrs, vals = self.layout.decode(int(p))
            yield SubsetKey(attrs, vals, int(y)), float(self.parent[y, p]) * f, int(self.parent_last[y, p])
        for s in range(self.layout.num_subsets):
            lo = int(self.layout.base[s])
            hi = lo + int(self.layout.cards[s])
            block = self.child[:, lo:hi, :]
            for y, dp, v in zip(*np.nonzero(block)):
                attr = int(np.searchsorted(offsets, v, side="right")) - 1
                if attr in self.layout.subsets[s]:
                    continue
                p = lo + int(dp)
                attrs, vals = self.layout.decode(p)
                key = SubsetKey(attrs, vals, int(y), (attr, int(v - offsets[attr])))
                yield key, float(self.child[y, p, v]) * f, int(self.child_last[y, p, v])

    def dump_csv(self, out: TextIO, now: int | None = None) -> int:
        """Write the diagnostic CSV; returns the number of rows."""
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["class", "subset_attrs", "subset_vals", "child_attr",
                         "child_val", "weight", "last_step"])
        rows = 0
        for key, weight, last in self.entries(now):
            child_attr, child_val = key.child if key.child is not None else ("", "")
            writer.writerow([
                key.label,
                " ".join(map(str, key.attributes)),
                " ".join(map(str, key.values)),
                child_attr, child_val, repr(weight), last,
            ])
            rows += 1
        return rows

    def check_consistency(self, now: int | None = None, rtol: float = 1e-9) -> None:
        """Assert the structural invariants of the store (for tests and debugging)."""
        parent, child, total = self.effective_tables(now)
        if parent.min(initial=0.0) < -_NEGATIVE_TOLERANCE or child.min(initial=0.0) < -_NEGATIVE_TOLERANCE:
            raise AssertionError("negative effective count")
        lay = self.layout
        for s in range(lay.num_subsets):
            lo, hi = int(lay.base[s]), int(lay.base[s] + lay.cards[s])
            mass = parent[:, lo:hi].sum()
            if not math.isclose(mass, total, rel_tol=rtol, abs_tol=1e-9):
                raise AssertionError(f"subset {s} mass {mass} != total {total}")
            for j in lay.children[s]:
                lo_v, hi_v = int(self.schema.offsets[j]), int(self.schema.offsets[j + 1])
                block = child[:, lo:hi, lo_v:hi_v]
                if (block > parent[:, lo:hi, None] + 1e-9).any():
                    raise AssertionError(f"child count exceeds parent count (subset {s}, child {j})")
