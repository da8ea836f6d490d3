"""Averaged n-dependence estimators over a chain of count stores.

``n = 0`` is naive Bayes, ``n = 1`` is A1DE (AODE), ``n = 2`` is A2DE.  An
order-``k`` estimate averages, over every size-``k`` parent subset ``s`` whose
values were observed, the product ``P(y, x_s) * prod_{i not in s} P(x_i | y, x_s)``.
When no parent subset was observed the estimate falls back to order ``k - 1``.

Probabilities are m-estimates with a uniform prior::

    P(y, x_s)       = (c(y, x_s) + m / (K * |X_s|)) / (N + m)
    P(x_i | y, x_s) = (c(y, x_s, x_i) + m / |X_i|) / (c(y, x_s) + m)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from driftlab.counts import CountStore
from driftlab.forgetting import ForgetPolicy, WindowQueue, admit
from driftlab.schema import Instance, Schema

MAX_ORDER = 2


@dataclass(frozen=True)
class ClassDistribution:
    probabilities: np.ndarray
    degenerate: bool = False  # every joint score was zero; uniform returned

    def argmax(self) -> int:
        # np.argmax returns the first maximiser: smallest class index wins ties.
        return int(np.argmax(self.probabilities))


class AndeModel:
    """Incremental AnDE classifier with an optional forgetting policy.

    Keeps one :class:`CountStore` per order ``0..n`` so that the fallback to
    lower orders never needs marginalisation at query time.
    """

    def __init__(self, schema: Schema, order: int, policy: ForgetPolicy | None = None,
                 smoothing: float = 1.0, delta_threshold: float = 0.0):
        if order not in range(MAX_ORDER + 1):
            raise ValueError(f"order must be one of 0, 1, 2; got {order}")
        if smoothing < 0:
            raise ValueError(f"smoothing must be >= 0, got {smoothing}")
        self.schema = schema
        self.order = order
        self.policy = policy or ForgetPolicy.none()
        self.smoothing = float(smoothing)
        self.delta_threshold = float(delta_threshold)
        self.stores = [
            CountStore(schema, k, self.policy.decay_rate, delta_threshold)
            for k in range(order + 1)
        ]
        self.queue: WindowQueue | None = (
            WindowQueue(self.policy.window) if self.policy.variant == "window" else None
        )
        self.steps_seen = 0
        self.clock = 0

    def __repr__(self) -> str:
        return (f"AndeModel(order={self.order}, policy={self.policy.label}, "
                f"m={self.smoothing:g}, seen={self.steps_seen})")

    def learn(self, instance: Instance) -> None:
        instance.validate(self.schema)
        self.learn_values(np.asarray(instance.values, dtype=np.int64), instance.label,
                          instance.step, validate=False)

    def learn_values(self, values: np.ndarray, label: int, step: int | None = None,
                     validate: bool = True) -> None:
        """Add one observation to every store, then apply the forgetting policy."""
        if validate:
            values = self.schema.check_values(values)
            label = self.schema.check_label(label)
        step = self.steps_seen if step is None else int(step)
        for store in self.stores:
            store.update(values, label, +1, step, validate=False)
        evicted = admit(self.policy, self.queue, (values, label))
        if evicted is not None:
            old_values, old_label = evicted
            for store in self.stores:
                store.update(old_values, old_label, -1, step, validate=False)
        self.clock = step
        self.steps_seen += 1

    def log_joint(self, values: Sequence[int] | np.ndarray, at_order: int | None = None,
                  now: int | None = None) -> tuple[np.ndarray, int]:
        """Per-class ``log P(y, x)`` and the order actually used after fallback."""
        k = self.order if at_order is None else at_order
        if not 0 <= k <= self.order:
            raise ValueError(f"order {k} not available in a model of order {self.order}")
        x = np.asarray(values, dtype=np.int64)
        while True:
            scores, kept = self.stores[k].log_scores(x, self.smoothing, now, use_delta=k > 0)
            if kept > 0 or k == 0:
                return scores, k
            k -= 1

    def joint_score(self, values: Sequence[int] | np.ndarray, label: int,
                    at_order: int | None = None, now: int | None = None) -> float:
        scores, _ = self.log_joint(values, at_order, now)
        return float(np.exp(scores[label]))

    def posterior(self, values: Sequence[int] | np.ndarray, now: int | None = None,
                  at_order: int | None = None) -> ClassDistribution:
        scores, _ = self.log_joint(values, at_order, now)
        top = scores.max()
        if not np.isfinite(top):
            k = self.schema.num_classes
            return ClassDistribution(np.full(k, 1.0 / k), degenerate=True)
        probs = np.exp(scores - top)
        return ClassDistribution(probs / probs.sum())

    def predict(self, values: Sequence[int] | np.ndarray, now: int | None = None) -> int:
        scores, _ = self.log_joint(values, None, now)
        return int(np.argmax(scores))


def batch_model(schema: Schema, order: int, instances: Sequence[Instance],
                smoothing: float = 1.0, delta_threshold: float = 0.0) -> AndeModel:
    """A model trained without forgetting on exactly ``instances``."""
    model = AndeModel(schema, order, ForgetPolicy.none(), smoothing, delta_threshold)
    for step, inst in enumerate(instances):
        model.learn_values(np.asarray(inst.values), inst.label, step)
    return model
