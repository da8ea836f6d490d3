"""Value spaces shared by the generator, the parsers and the models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class SchemaError(ValueError):
    """An instance or a table does not conform to its schema."""


@dataclass(frozen=True)
class Schema:
    """Attribute arities and class arity of a discrete stream."""

    arities: tuple[int, ...]
    num_classes: int
    attribute_names: tuple[str, ...] | None = None
    class_names: tuple[str, ...] | None = None
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arities = tuple(int(a) for a in self.arities)
        object.__setattr__(self, "arities", arities)
        if len(arities) < 1:
            raise SchemaError("a schema needs at least one attribute")
        if any(a < 2 for a in arities):
            raise SchemaError(f"every attribute arity must be >= 2, got {arities}")
        if self.num_classes < 2:
            raise SchemaError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.attribute_names is not None and len(self.attribute_names) != len(arities):
            raise SchemaError("attribute_names length differs from arities")
        offsets = np.zeros(len(arities) + 1, dtype=np.int64)
        np.cumsum(arities, out=offsets[1:])
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def binary(cls, num_attributes: int, num_classes: int = 2) -> Schema:
        return cls((2,) * num_attributes, num_classes)

    @property
    def num_attributes(self) -> int:
        return len(self.arities)

    @property
    def num_values(self) -> int:
        """Total number of (attribute, value) pairs."""
        return int(self.offsets[-1])

    def check_values(self, values: Sequence[int] | np.ndarray) -> np.ndarray:
        """Return ``values`` as an int64 array, raising on any arity violation."""
        arr = np.asarray(values, dtype=np.int64)
        if arr.shape != (self.num_attributes,):
            raise SchemaError(
                f"expected {self.num_attributes} attribute values, got shape {arr.shape}"
            )
        bad = (arr < 0) | (arr >= np.asarray(self.arities))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise SchemaError(
                f"attribute {i} value {int(arr[i])} outside arity {self.arities[i]}"
            )
        return arr

    def check_label(self, label: int) -> int:
        label = int(label)
        if not 0 <= label < self.num_classes:
            raise SchemaError(f"class {label} outside class arity {self.num_classes}")
        return label


@dataclass(frozen=True)
class Instance:
    """One discretized, labelled example observed at time ``step``."""

    values: tuple[int, ...]
    label: int
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if self.step < 0:
            raise SchemaError(f"step must be non-negative, got {self.step}")

    def validate(self, schema: Schema) -> Instance:
        schema.check_values(self.values)
        schema.check_label(self.label)
        return self
