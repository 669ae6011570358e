"""Classical Monte Carlo mean estimation, the comparison point for the
phase-kick estimators.

Sampling is uniform with replacement, so the estimate is the mean of
n_samples i.i.d. draws and its error shrinks as 1/sqrt(n). An exhaustive
mode reads every value exactly once for exact-mean fixtures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .errors import ValidationError
from .rng import RandomStream

__all__ = [
    "BaselineReport",
    "classical_mean_estimate",
    "required_samples",
]


@dataclass(frozen=True)
class BaselineReport:
    """Outcome of one classical sampling run.

    sample_std is the empirical standard deviation (ddof=1) of the values
    drawn, an estimate of the dataset spread; std_error scales it down to
    the expected deviation of the estimate itself.
    """

    estimate: float
    n_samples: int
    sample_std: float
    samples: tuple[float, ...] = field(repr=False)
    exhaustive: bool = False

    @property
    def std_error(self) -> float:
        return self.sample_std / math.sqrt(self.n_samples)

    def to_json_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "n_samples": self.n_samples,
            "sample_std": self.sample_std,
            "std_error": self.std_error,
            "exhaustive": self.exhaustive,
            "samples": list(self.samples),
        }


def classical_mean_estimate(
    dataset: Dataset,
    n_samples: int,
    rng: RandomStream,
    *,
    exhaustive: bool = False,
) -> BaselineReport:
    """Sample-mean estimate of the dataset mean.

    Default mode draws n_samples indices uniformly with replacement.
    exhaustive=True instead reads each value exactly once (n_samples must
    equal the dataset size) and returns the exact mean.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")
    if exhaustive:
        if n_samples != dataset.n:
            raise ValidationError(
                f"exhaustive mode reads every value once: n_samples must be "
                f"{dataset.n}, got {n_samples}"
            )
        drawn = np.array(dataset.values, dtype=np.float64)
    else:
        indices = rng.integers(0, dataset.n, size=n_samples)
        drawn = dataset.values[indices]
    estimate = float(np.mean(drawn))
    sample_std = float(np.std(drawn, ddof=1)) if n_samples > 1 else 0.0
    return BaselineReport(
        estimate=estimate,
        n_samples=n_samples,
        sample_std=sample_std,
        samples=tuple(float(v) for v in drawn),
        exhaustive=exhaustive,
    )


def required_samples(epsilon: float, coeff: float = 1.0) -> int:
    """Classical sample count ceil(coeff / epsilon^2) to reach accuracy
    epsilon; the quadratic cost the quantum estimators undercut."""
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    if coeff <= 0.0:
        raise ValidationError("coeff must be positive")
    # relative nudge so exact ratios (e.g. 1/0.1^2) do not round one up
    return math.ceil(coeff / (epsilon * epsilon) * (1.0 - 1e-12))
