from __future__ import annotations

import math

import pytest

from driftlab.forgetting import ForgetPolicy, WindowQueue, admit, standard_policies, step_factor


class TestPolicy:
    def test_parse_forms(self):
        assert ForgetPolicy.parse("w20") == ForgetPolicy.sliding(20)
        assert ForgetPolicy.parse("window:50") == ForgetPolicy.sliding(50)
        assert ForgetPolicy.parse("d0.05") == ForgetPolicy.decaying(0.05)
        assert ForgetPolicy.parse("decay:0.15") == ForgetPolicy.decaying(0.15)
        assert ForgetPolicy.parse("none") == ForgetPolicy.none()

    @pytest.mark.parametrize("text", ["w0", "w-3", "d0", "d-0.1", "x5", "w2.5", ""])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            ForgetPolicy.parse(text)

    def test_labels_roundtrip(self):
        for p in standard_policies():
            assert ForgetPolicy.parse(p.label) == p

    def test_standard_grid(self):
        labels = [p.label for p in standard_policies()]
        assert labels == ["w20", "w50", "w500", "d0.005", "d0.05", "d0.15"]

    def test_decay_rate(self):
        assert ForgetPolicy.sliding(5).decay_rate == 0.0
        assert ForgetPolicy.decaying(0.05).decay_rate == 0.05


class TestStepFactor:
    def test_values(self):
        assert step_factor(ForgetPolicy.decaying(0.05)) == pytest.approx(0.951229424500714, rel=1e-14)
        assert step_factor(ForgetPolicy.decaying(0.15)) == pytest.approx(0.860707976425057, rel=1e-14)

    def test_monotone(self):
        factors = [step_factor(ForgetPolicy.decaying(d)) for d in (0.005, 0.05, 0.15, 1.0)]
        assert all(a > b for a, b in zip(factors, factors[1:]))
        assert all(0 < f < 1 for f in factors)

    def test_needs_decay(self):
        with pytest.raises(ValueError):
            step_factor(ForgetPolicy.sliding(3))


class TestWindowQueue:
    def test_fifo_eviction(self):
        q = WindowQueue(3)
        for item in "abc":
            assert q.push(item) is None
        assert q.push("d") == "a"
        assert list(q) == ["b", "c", "d"]

    def test_under_capacity(self):
        q = WindowQueue(3)
        q.push("a")
        assert q.push("b") is None
        assert list(q) == ["a", "b"]

    def test_capacity_one(self):
        policy = ForgetPolicy.sliding(1)
        q = WindowQueue(1)
        evicted = [e for e in (admit(policy, q, i) for i in range(10)) if e is not None]
        assert evicted == list(range(9))

    def test_invalid_capacity(self):
        with pytest.raises(ValueError):
            WindowQueue(0)

    def test_non_window_policy_never_evicts(self):
        assert admit(ForgetPolicy.decaying(0.1), None, "a") is None
        assert admit(ForgetPolicy.none(), None, "a") is None

    def test_window_policy_requires_queue(self):
        with pytest.raises(ValueError):
            admit(ForgetPolicy.sliding(2), None, "a")


def test_half_life_reading():
    # Weight of an observation halves after ln 2 / D steps.
    d = 0.05
    f = step_factor(ForgetPolicy.decaying(d))
    assert f ** (math.log(2) / d) == pytest.approx(0.5)
