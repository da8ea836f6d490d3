"""Forgetting policies: sliding windows and exponential decay."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Generic, TypeVar

T = TypeVar("T")

# Forgetting rates swept in the synthetic experiments.
DEFAULT_WINDOWS = (20, 50, 500)
DEFAULT_DECAYS = (0.005, 0.05, 0.15)


@dataclass(frozen=True)
class ForgetPolicy:
    """``variant`` is ``"none"``, ``"window"`` (with ``window``) or ``"decay"``
    (with ``decay``)."""

    variant: str = "none"
    window: int | None = None
    decay: float | None = None

    def __post_init__(self):
        if self.variant == "window":
            if self.window is None or int(self.window) != self.window or self.window < 1:
                raise ValueError(f"window size must be a positive integer, got {self.window}")
            if self.decay is not None:
                raise ValueError("a window policy takes no decay rate")
        elif self.variant == "decay":
            if self.decay is None or not (self.decay > 0 and math.isfinite(self.decay)):
                raise ValueError(f"decay rate must be a positive finite number, got {self.decay}")
            if self.window is not None:
                raise ValueError("a decay policy takes no window size")
        elif self.variant == "none":
            if self.window is not None or self.decay is not None:
                raise ValueError("policy 'none' takes no parameters")
        else:
            raise ValueError(f"unknown forgetting variant {self.variant!r}")

    @classmethod
    def none(cls) -> ForgetPolicy:
        return cls()

    @classmethod
    def sliding(cls, window: int) -> ForgetPolicy:
        return cls("window", window=int(window))

    @classmethod
    def decaying(cls, decay: float) -> ForgetPolicy:
        return cls("decay", decay=float(decay))

    @classmethod
    def parse(cls, text: str) -> ForgetPolicy:
        """Parse ``none``, ``w20`` / ``window:20`` or ``d0.05`` / ``decay:0.05``."""
        text = text.strip().lower()
        if text == "none":
            return cls.none()
        for prefix, build in (("window:", cls.sliding), ("decay:", cls.decaying),
                              ("w", cls.sliding), ("d", cls.decaying)):
            if text.startswith(prefix):
                raw = text[len(prefix):]
                return build(int(raw) if build == cls.sliding else float(raw))
        raise ValueError(f"cannot parse forgetting policy {text!r}")

    @property
    def decay_rate(self) -> float:
        """Decay rate handed to the count stores (0 when not decaying)."""
        return self.decay if self.variant == "decay" else 0.0

    @property
    def param(self) -> int | float | None:
        return self.window if self.variant == "window" else self.decay

    @property
    def label(self) -> str:
        if self.variant == "window":
            return f"w{self.window}"
        if self.variant == "decay":
            return f"d{self.decay:g}"
        return "none"

    def __str__(self) -> str:
        return self.label


def step_factor(policy: ForgetPolicy) -> float:
    """Per-step multiplicative factor ``exp(-D)`` of a decay policy."""
    if policy.variant != "decay":
        raise ValueError(f"step_factor needs a decay policy, got {policy.label}")
    return math.exp(-policy.decay)


class WindowQueue(Generic[T]):
    """FIFO of the instances currently inside a sliding window."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._buffer: deque[T] = deque()

    def __len__(self) -> int:
        return len(self._buffer)

    def __iter__(self):
        return iter(self._buffer)

    def push(self, item: T) -> T | None:
        """Append ``item``; return the evicted oldest item if over capacity."""
        self._buffer.append(item)
        if len(self._buffer) > self.capacity:
            return self._buffer.popleft()
        return None


def admit(policy: ForgetPolicy, queue: WindowQueue | None, item: T) -> T | None:
    """Push ``item`` through ``policy``; return the instance whose counts must
    now be decremented, if any."""
    if policy.variant != "window":
        return None
    if queue is None:
        raise ValueError("a window policy needs a queue")
    return queue.push(item)


def standard_policies(windows=DEFAULT_WINDOWS, decays=DEFAULT_DECAYS) -> list[ForgetPolicy]:
    return [ForgetPolicy.sliding(w) for w in windows] + [ForgetPolicy.decaying(d) for d in decays]
