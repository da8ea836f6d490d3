"""Published 0-1 losses of twelve stream learners on the real drift benchmarks.

Prequential 0-1 loss as published for MOA's implementations.  These are
reference constants only; none of the learners is implemented here.
"""

from __future__ import annotations

from types import MappingProxyType

DATASET_NAMES = ("PowerSupply", "Airlines", "ElectricNorm", "Sensor")

_ROWS = {
    # technique: (PowerSupply, Airlines, ElectricNorm, Sensor)
    "AccUpdatedEns": (0.8599, 0.3335, 0.2219, 0.3102),
    "OzaBagAdwin": (0.8692, 0.3448, 0.167, 0.2874),
    "DriftDetClassifier": (0.8634, 0.3534, 0.1984, 0.3206),
    "DriftDetClassifierEDDM": (0.8615, 0.3511, 0.149, 0.3159),
    "ASHoeffdingTree": (0.864, 0.3552, 0.2007, 0.7153),
    "HoeffdingTree": (0.864, 0.3552, 0.2007, 0.7153),
    "OzaBag": (0.8655, 0.3575, 0.1982, 0.7067),
    "HoeffdingAdaptiveTree": (0.8661, 0.3632, 0.1759, 0.3718),
    "OzaBoost": (0.9583, 0.3719, 0.1781, 0.9514),
    "AccWeightedEns": (0.8579, 0.3751, 0.2471, 0.3596),
    "LeveragingBag": (0.8717, 0.3769, 0.1303, 0.2395),
    "OzaBoostAdwin": (0.9584, 0.3888, 0.143, 0.407),
}

BASELINES = MappingProxyType({
    (dataset, technique): row[i]
    for technique, row in _ROWS.items()
    for i, dataset in enumerate(DATASET_NAMES)
})

TECHNIQUES = tuple(_ROWS)

# Lowest errors reported for adaptive AnDE on the same data: (window, decay).
REPORTED_ANDE = MappingProxyType({
    "Airlines": (0.3309, 0.3267),
    "ElectricNorm": (0.1124, 0.1061),
    "Sensor": (0.2250, 0.2268),
})


def canonical_name(dataset: str) -> str:
    for name in DATASET_NAMES:
        if name.lower() == dataset.lower():
            return name
    raise KeyError(f"no baselines for dataset {dataset!r}; known: {', '.join(DATASET_NAMES)}")


def best_baseline(dataset: str) -> tuple[str, float]:
    """``(technique, loss)`` of the strongest published competitor."""
    name = canonical_name(dataset)
    return min(((t, BASELINES[(name, t)]) for t in TECHNIQUES), key=lambda tl: tl[1])
