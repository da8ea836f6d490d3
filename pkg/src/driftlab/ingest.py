"""Streaming readers for ARFF and CSV datasets and an incremental discretizer.

Records are produced lazily, one line at a time.  Numeric attributes are cut
into five equal-frequency intervals estimated over a sliding sample of the
most recent values, so memory stays bounded whatever the stream length.
"""

from __future__ import annotations

import bisect
import csv
import math
import os
import re
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from driftlab.schema import Schema


class ParseError(ValueError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    num_instances: int
    num_attributes: int
    num_classes: int


# Published sizes of the real-world drift benchmarks.
DATASETS = {
    "PowerSupply": DatasetMeta("PowerSupply", 29928, 2, 2),
    "Airlines": DatasetMeta("Airlines", 539383, 7, 2),
    "ElectricNorm": DatasetMeta("ElectricNorm", 45312, 8, 2),
    "Sensor": DatasetMeta("Sensor", 2219803, 5, 58),
}


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    values: tuple[str, ...] | None  # None for numeric

    @property
    def numeric(self) -> bool:
        return self.values is None

    def index_of(self, token: str, line: int) -> int:
        try:
            return self._lookup[token]
        except KeyError:
            raise ParseError(
                f"value {token!r} not declared for nominal attribute {self.name!r} (arity overflow)",
                line,
            ) from None

    @property
    def _lookup(self) -> dict[str, int]:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {v: i for i, v in enumerate(self.values)}
            object.__setattr__(self, "_cache", cache)
        return cache


@dataclass
class Header:
    relation: str
    attributes: list[AttributeSpec]
    class_index: int

    @property
    def features(self) -> list[AttributeSpec]:
        return [a for i, a in enumerate(self.attributes) if i != self.class_index]

    @property
    def target(self) -> AttributeSpec:
        return self.attributes[self.class_index]


@dataclass(frozen=True)
class RawRecord:
    """Feature values (nominal index or float) and the class index."""

    values: tuple[int | float, ...]
    label: int
    line: int


def _split(line: str, lineno: int) -> list[str]:
    if "'" not in line and '"' not in line:
        return [t.strip() for t in line.split(",")]
    quote = "'" if "'" in line else '"'
    try:
        row = next(csv.reader([line], quotechar=quote, skipinitialspace=True))
    except csv.Error as exc:
        raise ParseError(str(exc), lineno) from None
    return [t.strip() for t in row]


def _unquote(token: str) -> str:
    token = token.strip()
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "'\"":
        return token[1:-1]
    return token


_ATTR_RE = re.compile(r"""@attribute\s+('(?:[^']*)'|"(?:[^"]*)"|\S+)\s+(.+)$""", re.IGNORECASE)


def _parse_attribute(line: str, lineno: int) -> AttributeSpec:
    m = _ATTR_RE.match(line.strip())
    if not m:
        raise ParseError(f"malformed @attribute declaration: {line.strip()!r}", lineno)
    name, kind = _unquote(m.group(1)), m.group(2).strip()
    if kind.startswith("{"):
        if not kind.endswith("}"):
            raise ParseError(f"unterminated nominal value list for {name!r}", lineno)
        values = tuple(_unquote(v) for v in _split(kind[1:-1], lineno) if v.strip())
        if not values:
            raise ParseError(f"nominal attribute {name!r} declares no values", lineno)
        if len(set(values)) != len(values):
            raise ParseError(f"nominal attribute {name!r} repeats a value", lineno)
        return AttributeSpec(name, values)
    if kind.lower() in ("numeric", "real", "integer"):
        return AttributeSpec(name, None)
    raise ParseError(f"unsupported attribute type {kind!r} for {name!r}", lineno)


class _LineSource:
    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def lines(self) -> Iterator[tuple[int, str]]:
        with open(self.path, encoding="utf-8", newline="") as fh:
            for lineno, line in enumerate(fh, 1):
                yield lineno, line.rstrip("\r\n")


def _decode(header: Header, tokens: list[str], lineno: int) -> RawRecord:
    if len(tokens) != len(header.attributes):
        raise ParseError(f"expected {len(header.attributes)} fields, found {len(tokens)}", lineno)
    values: list[int | float] = []
    label = -1
    for i, (spec, token) in enumerate(zip(header.attributes, tokens)):
        token = _unquote(token)
        if token == "?" or token == "":
            raise ParseError(f"missing value for attribute {spec.name!r}", lineno)
        if spec.numeric:
            try:
                v = float(token)
            except ValueError:
                raise ParseError(f"non-numeric value {token!r} for {spec.name!r}", lineno) from None
            if i == header.class_index:
                raise ParseError("class attribute must be nominal", lineno)
            values.append(v)
        elif i == header.class_index:
            label = spec.index_of(token, lineno)
        else:
            values.append(spec.index_of(token, lineno))
    return RawRecord(tuple(values), label, lineno)


class ArffReader:
    """Lazy ARFF reader.  The class is the last attribute unless ``class_index``
    (which may be negative) says otherwise."""

    def __init__(self, path: str | os.PathLike, class_index: int = -1):
        self.source = _LineSource(path)
        self._class_index = class_index
        self.header = self._read_header()

    def _read_header(self) -> Header:
        relation = ""
        attributes: list[AttributeSpec] = []
        for lineno, line in self.source.lines():
            text = line.strip()
            if not text or text.startswith("%"):
                continue
            low = text.lower()
            if low.startswith("@relation"):
                relation = _unquote(text[len("@relation"):].strip())
            elif low.startswith("@attribute"):
                attributes.append(_parse_attribute(text, lineno))
            elif low.startswith("@data"):
                self._data_line = lineno
                break
            else:
                raise ParseError(f"unexpected header line {text!r}", lineno)
        else:
            raise ParseError("no @data section")
        if len(attributes) < 2:
            raise ParseError("need at least one feature and a class attribute")
        ci = self._class_index % len(attributes)
        return Header(relation, attributes, ci)

    def __iter__(self) -> Iterator[RawRecord]:
        for lineno, line in self.source.lines():
            if lineno <= self._data_line:
                continue
            text = line.strip()
            if not text or text.startswith("%"):
                continue
            if text.startswith("{"):
                raise ParseError("sparse ARFF rows are not supported", lineno)
            yield _decode(self.header, _split(text, lineno), lineno)


def _is_float(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


class CsvReader:
    """Lazy reader for a headered CSV file.

    ``hints`` maps a column name to ``"numeric"`` or to its nominal values in
    index order.  Columns without a hint are typed by a first pass over the
    file: numeric if every entry parses as a number, nominal otherwise (values
    indexed by first appearance, at most ``max_arity`` of them).  The class
    column must be nominal.
    """

    def __init__(self, path: str | os.PathLike, class_column: str | int = -1,
                 hints: dict[str, str | Sequence[str]] | None = None, max_arity: int = 1000):
        self.source = _LineSource(path)
        self.hints = dict(hints or {})
        self.max_arity = max_arity
        self.header = self._infer_header(class_column)

    def _rows(self) -> Iterator[tuple[int, list[str]]]:
        for lineno, line in self.source.lines():
            if line.strip():
                yield lineno, _split(line, lineno)

    def _infer_header(self, class_column: str | int) -> Header:
        rows = self._rows()
        try:
            _, names = next(rows)
        except StopIteration:
            raise ParseError("empty CSV file") from None
        names = [_unquote(n) for n in names]
        if isinstance(class_column, str):
            if class_column not in names:
                raise ParseError(f"class column {class_column!r} not in header")
            ci = names.index(class_column)
        else:
            ci = class_column % len(names)
        numeric = {i: i != ci for i, n in enumerate(names) if n not in self.hints}
        seen: dict[int, dict[str, None]] = {i: {} for i in numeric}
        overflow: set[int] = set()
        if numeric:
            for lineno, tokens in rows:
                if len(tokens) != len(names):
                    raise ParseError(f"expected {len(names)} fields, found {len(tokens)}", lineno)
                for i in numeric:
                    tok = _unquote(tokens[i])
                    if numeric[i] and not _is_float(tok):
                        numeric[i] = False
                    if i in overflow:
                        continue
                    seen[i].setdefault(tok, None)
                    if len(seen[i]) > self.max_arity:
                        overflow.add(i)
                    if not numeric[i] and i in overflow:
                        raise ParseError(
                            f"column {names[i]!r} exceeds {self.max_arity} distinct values (arity overflow)",
                            lineno,
                        )
        attributes = []
        for i, name in enumerate(names):
            hint = self.hints.get(name)
            if hint is None:
                if numeric[i]:
                    attributes.append(AttributeSpec(name, None))
                else:
                    attributes.append(AttributeSpec(name, tuple(seen[i])))
            elif isinstance(hint, str):
                if hint != "numeric":
                    raise ParseError(f"unknown hint {hint!r} for column {name!r}")
                attributes.append(AttributeSpec(name, None))
            else:
                attributes.append(AttributeSpec(name, tuple(str(v) for v in hint)))
        return Header(Path(self.source.path).stem, attributes, ci)

    def __iter__(self) -> Iterator[RawRecord]:
        rows = self._rows()
        next(rows)
        for lineno, tokens in rows:
            yield _decode(self.header, tokens, lineno)


def open_dataset(path: str | os.PathLike, fmt: str | None = None, class_index: int | str = -1,
                 hints: dict | None = None) -> ArffReader | CsvReader:
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    if fmt == "arff":
        if isinstance(class_index, str):
            raise ValueError("ARFF class position must be an integer index")
        return ArffReader(path, class_index)
    if fmt == "csv":
        return CsvReader(path, class_index, hints)
    raise ValueError(f"unknown dataset format {fmt!r}")


class EqualFrequencyBinner:
    """Five (by default) equal-frequency intervals over a sliding sample.

    Cut points are the lower nearest-rank ``k / bins`` quantiles of the sample.
    When the sample holds at least ``bins`` distinct values, tied cut points
    are moved to neighbouring distinct values so the cuts stay strictly
    increasing with at least one distinct value above the last cut.  A value
    equal to a cut point falls in the lower interval.
    """

    def __init__(self, bins: int = 5, capacity: int = 1000):
        if bins < 2 or capacity < 1:
            raise ValueError("need bins >= 2 and capacity >= 1")
        self.bins = bins
        self.capacity = capacity
        self._recent: deque[float] = deque()
        self._sorted: list[float] = []
        self.cut_points: list[float] = []

    def __len__(self) -> int:
        return len(self._sorted)

    def observe(self, value: float) -> None:
        if not math.isfinite(value):
            raise ValueError(f"cannot discretize non-finite value {value}")
        self._recent.append(value)
        bisect.insort(self._sorted, value)
        if len(self._recent) > self.capacity:
            old = self._recent.popleft()
            del self._sorted[bisect.bisect_left(self._sorted, old)]
        self.cut_points = self._cuts()

    def _cuts(self) -> list[float]:
        s = self._sorted
        n = len(s)
        cuts = [s[-(-k * n // self.bins) - 1] for k in range(1, self.bins)]
        if all(a < b for a, b in zip(cuts, cuts[1:])) and cuts[-1] < s[-1]:
            return cuts
        distinct = np.unique(np.asarray(s))
        m = len(distinct)
        if m < self.bins:
            return cuts
        ranks = []
        for k, c in enumerate(cuts):
            r = int(np.searchsorted(distinct, c))
            r = min(max(r, k), m - self.bins + k)
            if ranks:
                r = max(r, ranks[-1] + 1)
            ranks.append(r)
        return [float(distinct[r]) for r in ranks]

    def bin(self, value: float) -> int:
        """Interval of ``value`` under the current cut points."""
        if not self.cut_points:
            return 0
        return bisect.bisect_left(self.cut_points, value)

    def update(self, value: float) -> int:
        """Add ``value`` to the sample, refresh the cuts and bin ``value``."""
        self.observe(value)
        return self.bin(value)


class Discretizer:
    """One :class:`EqualFrequencyBinner` per numeric attribute."""

    def __init__(self, numeric: Sequence[int], bins: int = 5, capacity: int = 1000):
        self.bins = bins
        self.states = {int(i): EqualFrequencyBinner(bins, capacity) for i in numeric}

    def discretize(self, attr: int, value: float) -> int:
        try:
            state = self.states[attr]
        except KeyError:
            raise ValueError(f"attribute {attr} is not declared numeric") from None
        return state.update(value)


def discretize(state: Discretizer, attr: int, value: float) -> int:
    return state.discretize(attr, value)


class DiscretizedStream:
    """Turns raw records into discrete ``(x, y)`` pairs with a fixed schema."""

    def __init__(self, reader: ArffReader | CsvReader, bins: int = 5, capacity: int = 1000):
        self.reader = reader
        feats = reader.header.features
        self.numeric = [i for i, a in enumerate(feats) if a.numeric]
        self.bins = bins
        self.capacity = capacity
        arities = [bins if a.numeric else max(2, len(a.values)) for a in feats]
        target = reader.header.target
        self.schema = Schema(tuple(arities), max(2, len(target.values)),
                             tuple(a.name for a in feats), target.values)

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        disc = Discretizer(self.numeric, self.bins, self.capacity)
        numeric = set(self.numeric)
        for rec in self.reader:
            x = np.fromiter(
                (disc.discretize(i, v) if i in numeric else v for i, v in enumerate(rec.values)),
                dtype=np.int64, count=len(rec.values),
            )
            yield x, rec.label

    def to_arrays(self, limit: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        for k, (x, y) in enumerate(self):
            if limit is not None and k >= limit:
                break
            xs.append(x)
            ys.append(y)
        a = self.schema.num_attributes
        return (np.array(xs, dtype=np.int64).reshape(len(xs), a), np.array(ys, dtype=np.int64))


def validate_meta(meta: DatasetMeta, schema: Schema, num_instances: int) -> None:
    found = DatasetMeta(meta.name, num_instances, schema.num_attributes, schema.num_classes)
    if found != meta:
        raise ParseError(f"{meta.name}: expected {meta}, parsed {found}")


def find_dataset(name: str, data_dir: str | os.PathLike | None = None) -> Path | None:
    """Locate ``name`` (any case, .arff or .csv) under ``data_dir`` or
    ``$DRIFTLAB_DATA_DIR``."""
    root = data_dir or os.environ.get("DRIFTLAB_DATA_DIR")
    if not root or not Path(root).is_dir():
        return None
    wanted = {f"{name.lower()}.arff", f"{name.lower()}.csv"}
    for p in sorted(Path(root).iterdir()):
        if p.name.lower() in wanted:
            return p
    return None
