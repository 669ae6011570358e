"""Datasets of bounded scalars whose mean the estimators target.

A Dataset holds N values v_j in [-1, 1] with N a power of two (the
transform pair at the heart of the estimator needs a full binary register;
padding is refused because it would shift the mean). Loaders accept CSV
(one value per line) or a JSON array; the generator produces a dataset
whose mean hits a requested target exactly, which end-to-end tests rely on
for ground truth.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .rng import RandomStream


class Dataset:
    """Immutable sequence of N values in [-1, 1], N a power of two."""

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("dataset must be a non-empty flat sequence")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("dataset values must be finite")
        if float(np.max(np.abs(arr))) > 1.0 + 1e-12:
            raise ValidationError("dataset values must lie in [-1, 1]")
        if arr.size < 2 or arr.size & (arr.size - 1):
            raise ValidationError(
                f"dataset length must be a power of two (>= 2), got {arr.size}; "
                "pass truncate=True to the loader to cut explicitly"
            )
        arr = np.clip(arr, -1.0, 1.0)
        arr.setflags(write=False)
        self.values = arr

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def num_sites(self) -> int:
        return int(self.values.size).bit_length() - 1

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, mean={self.mean:.6g})"


def _largest_power_of_two(n: int) -> int:
    return 1 << (n.bit_length() - 1)


def load_dataset(path: str | Path, truncate: bool = False) -> Dataset:
    """Read a dataset from a CSV (one value per line) or JSON array file.

    With truncate=True a non-power-of-two input is cut to its leading
    2^k values, with a warning; the default is to refuse.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON dataset: {exc}") from exc
        if not isinstance(raw, list):
            raise ValidationError("JSON dataset must be a flat array of numbers")
        values = raw
    else:
        values = []
        for i, line in enumerate(text.splitlines()):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError as exc:
                raise ValidationError(f"line {i + 1}: not a number: {line!r}") from exc
    if not values:
        raise ValidationError(f"no values found in {path}")
    n = len(values)
    if n & (n - 1) and truncate:
        cut = _largest_power_of_two(n)
        warnings.warn(
            f"dataset length {n} truncated to {cut} (the mean changes)",
            stacklevel=2,
        )
        values = values[:cut]
    return Dataset(values)


def generate_with_mean(
    n: int, mu: float, rng: RandomStream, spread: float = 0.9, max_attempts: int = 1000
) -> Dataset:
    """Random dataset of size n whose mean equals mu to within 1e-12.

    Draws n-1 values uniformly from mu +- half (half capped so the window
    stays inside [-1, 1]) and sets the last value to close the sum on the
    target exactly, redrawing whenever the closing value lands outside
    [-1, 1]. Centering the draws on mu keeps the closing value within
    O(half*sqrt(n)) of mu, so the rejection loop terminates quickly.
    """
    if n < 2 or n & (n - 1):
        raise ValidationError("n must be a power of two, at least 2")
    if abs(mu) > 1.0:
        raise ValidationError("target mean must lie in [-1, 1]")
    half = min(spread, 1.0 - abs(mu))
    for _ in range(max_attempts):
        values = np.empty(n, dtype=np.float64)
        values[:-1] = mu - half + 2.0 * half * rng.random(n - 1)
        values[-1] = n * mu - float(np.sum(values[:-1]))
        if abs(values[-1]) > 1.0:
            continue
        ds = Dataset(values)
        if abs(ds.mean - mu) <= 1e-12:
            return ds
    raise ValidationError(
        f"could not close a dataset on mean {mu} within {max_attempts} attempts"
    )


def generate_constant(n: int, c: float) -> Dataset:
    """Dataset with every value equal to c."""
    if n < 2 or n & (n - 1):
        raise ValidationError("n must be a power of two, at least 2")
    return Dataset(np.full(n, float(c)))


def parse_gen_spec(spec: str, rng: RandomStream) -> Dataset:
    """Build a dataset from a generator spec string.

    Forms: "uniform:mu=<target>[,n=<size>]", "constant:c=<value>[,n=<size>]",
    "zeros[:n=<size>]", "list:<v1>;<v2>;...". Default n is 256.
    """
    kind, _, rest = spec.partition(":")
    params: dict[str, str] = {}
    if kind == "list":
        try:
            values = [float(tok) for tok in rest.split(";") if tok.strip()]
        except ValueError as exc:
            raise ValidationError(f"bad list spec: {exc}") from exc
        return Dataset(values)
    if rest:
        for part in rest.split(","):
            key, eq, val = part.partition("=")
            if not eq:
                raise ValidationError(f"bad generator parameter: {part!r}")
            params[key.strip()] = val.strip()
    try:
        n = int(params.pop("n", "256"))
        if kind == "uniform":
            mu = float(params.pop("mu"))
            _reject_extras(params)
            return generate_with_mean(n, mu, rng)
        if kind == "constant":
            c = float(params.pop("c"))
            _reject_extras(params)
            return generate_constant(n, c)
        if kind == "zeros":
            _reject_extras(params)
            return generate_constant(n, 0.0)
    except KeyError as exc:
        raise ValidationError(f"generator spec missing parameter {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"bad generator spec {spec!r}: {exc}") from exc
    raise ValidationError(f"unknown generator kind {kind!r}")


def _reject_extras(params: dict[str, str]) -> None:
    if params:
        raise ValidationError(f"unknown generator parameters: {sorted(params)}")
