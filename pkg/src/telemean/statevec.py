"""Dense state-vector simulation of small registers of two-state particles.

A register of n sites is a normalized complex vector over the 2^n basis
states. Basis ordering is fixed once, package-wide: site 0 is the most
significant bit of the basis index, so |10> on two sites is index 2.

Gates never renormalize silently; a norm drift beyond NORM_TOL raises
SimulationError. Measurement posteriors are the one sanctioned
renormalization. All sampling goes through RandomStream so measurement
branches are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import SimulationError, ValidationError
from .rng import RandomStream

NORM_TOL = 1e-10
DEFAULT_MAX_SITES = 20

_SQRT_HALF = 1.0 / np.sqrt(2.0)


class StateVector:
    """Normalized amplitudes over the 2^num_sites basis states."""

    __slots__ = ("num_sites", "amps")

    def __init__(self, num_sites: int, amps, *, _validate: bool = True) -> None:
        self.num_sites = int(num_sites)
        self.amps = np.asarray(amps, dtype=np.complex128)
        if _validate:
            self._validate()

    def _validate(self, max_sites: int = DEFAULT_MAX_SITES) -> None:
        if self.num_sites < 0 or self.num_sites > max_sites:
            raise ValidationError(
                f"num_sites must be in [0, {max_sites}], got {self.num_sites}"
            )
        if self.amps.shape != (1 << self.num_sites,):
            raise ValidationError(
                f"expected {1 << self.num_sites} amplitudes, got {self.amps.shape}"
            )
        if not np.all(np.isfinite(self.amps.view(np.float64))):
            raise ValidationError("amplitudes must be finite")
        norm = float(np.sum(np.abs(self.amps) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValidationError(f"input state norm {norm!r} is not 1")

    def check_norm(self) -> None:
        norm = float(np.sum(np.abs(self.amps) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise SimulationError(f"state norm {norm!r} drifted beyond {NORM_TOL}")

    def copy(self) -> "StateVector":
        return StateVector(self.num_sites, self.amps.copy(), _validate=False)

    def __repr__(self) -> str:
        return f"StateVector(num_sites={self.num_sites})"


def zero_state(num_sites: int) -> StateVector:
    """The all-zero basis state |0...0> on num_sites sites."""
    return basis_state(num_sites, 0)


def basis_state(num_sites: int, index: int) -> StateVector:
    if num_sites < 0 or num_sites > DEFAULT_MAX_SITES:
        raise ValidationError(f"num_sites out of range: {num_sites}")
    size = 1 << num_sites
    if not 0 <= index < size:
        raise ValidationError(f"basis index {index} out of range for {num_sites} sites")
    amps = np.zeros(size, dtype=np.complex128)
    amps[index] = 1.0
    return StateVector(num_sites, amps, _validate=False)


def _check_site(state: StateVector, site: int) -> None:
    if not 0 <= site < state.num_sites:
        raise ValidationError(f"site {site} out of range for {state.num_sites} sites")


def _check_index(state: StateVector, index: int) -> None:
    if not 0 <= index < state.amps.shape[0]:
        raise ValidationError(f"basis index {index} out of range")


def _result(state: StateVector, amps: np.ndarray) -> StateVector:
    out = StateVector(state.num_sites, amps, _validate=False)
    out.check_norm()
    return out


def apply_m(state: StateVector, site: int) -> StateVector:
    """Apply the single-site gate (1/sqrt2)[[1, 1], [1, -1]] at `site`.

    |0> becomes an even superposition; |1> gets its second-component sign
    inverted. The gate is its own inverse.
    """
    _check_site(state, site)
    t = state.amps.reshape((2,) * state.num_sites)
    t = np.moveaxis(t, site, 0)
    out = np.empty_like(t)
    out[0] = (t[0] + t[1]) * _SQRT_HALF
    out[1] = (t[0] - t[1]) * _SQRT_HALF
    out = np.moveaxis(out, 0, site)
    return _result(state, out.reshape(-1))


def apply_wh(state: StateVector, sites: Iterable[int]) -> StateVector:
    """Apply the M gate to each listed site in sequence (the full transform).

    Starting from |0...0> over all sites this yields identical amplitude in
    every basis state; applied twice it is the identity. The amplitude taking
    basis x to basis y carries sign (-1)^(x.y) with x.y the bitwise dot
    product.
    """
    sites = list(sites)
    if len(set(sites)) != len(sites):
        raise ValidationError(f"duplicate sites in {sites}")
    out = state
    for site in sites:
        out = apply_m(out, site)
    return out


def rotate_basis_phase(state: StateVector, basis_index: int, angle: float) -> StateVector:
    """Multiply the amplitude at one basis index by e^(i*angle).

    Per-state probabilities are unchanged.
    """
    _check_index(state, basis_index)
    amps = state.amps.copy()
    amps[basis_index] *= np.exp(1j * angle)
    return _result(state, amps)


def apply_diagonal_phase(state: StateVector, angles: Mapping[int, float]) -> StateVector:
    """Multiply amplitude j by e^(i*angles[j]) for every listed index."""
    if not angles:
        return state.copy()
    idx = np.fromiter(angles.keys(), dtype=np.int64, count=len(angles))
    if idx.min() < 0 or idx.max() >= state.amps.shape[0]:
        raise ValidationError("diagonal phase index out of range")
    vals = np.fromiter(angles.values(), dtype=np.float64, count=len(angles))
    amps = state.amps.copy()
    amps[idx] *= np.exp(1j * vals)
    return _result(state, amps)


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    """Toggle `target` on the basis states whose `control` bit is 1."""
    _check_site(state, control)
    _check_site(state, target)
    if control == target:
        raise ValidationError("control and target must differ")
    t = state.amps.reshape((2,) * state.num_sites)
    t = np.moveaxis(t, (control, target), (0, 1))
    out = np.empty_like(t)
    out[0] = t[0]
    out[1, 0] = t[1, 1]
    out[1, 1] = t[1, 0]
    out = np.moveaxis(out, (0, 1), (control, target))
    return _result(state, out.reshape(-1))


def controlled(
    op: Callable[[StateVector], StateVector], control: int
) -> Callable[[StateVector], StateVector]:
    """Lift `op` to act only on the subspace where `control` reads 1.

    `op` must not touch the control site itself; it is then block-diagonal
    in the control bit, so the conditioned result splices the control-0
    block of the input with the control-1 block of op's output.
    """

    def conditioned(state: StateVector) -> StateVector:
        _check_site(state, control)
        full = op(state)
        if full.num_sites != state.num_sites:
            raise ValidationError("controlled op changed register size")
        n = state.num_sites
        t_in = np.moveaxis(state.amps.reshape((2,) * n), control, 0)
        t_op = np.moveaxis(full.amps.reshape((2,) * n), control, 0)
        out = np.empty((2,) * n, dtype=np.complex128)
        view = np.moveaxis(out, control, 0)
        view[0] = t_in[0]
        view[1] = t_op[1]
        # norm check catches ops that illegally touched the control site
        return _result(state, out.reshape(-1))

    return conditioned


@dataclass
class MeasurementOutcome:
    """Result of a projective measurement: observed bits plus the posterior."""

    sites: tuple[int, ...]
    bits: tuple[int, ...]
    posterior: StateVector
    probability: float


def measure_sites(
    state: StateVector, sites: Sequence[int], rng: RandomStream
) -> MeasurementOutcome:
    """Measure the listed sites jointly with Born probabilities.

    One uniform draw selects the joint outcome against the cumulative
    distribution in ascending outcome-index order (bits of sites[0] most
    significant), so the branch taken is a deterministic function of the
    stream. The posterior is renormalized; `probability` is the
    pre-measurement probability of the observed bits.
    """
    sites = list(sites)
    if len(set(sites)) != len(sites):
        raise ValidationError(f"duplicate sites in {sites}")
    for s in sites:
        _check_site(state, s)
    n = state.num_sites
    k = len(sites)
    probs = np.abs(state.amps.reshape((2,) * n)) ** 2
    probs = np.moveaxis(probs, sites, range(k))
    p = probs.sum(axis=tuple(range(k, n))).reshape(-1)

    u = rng.random()
    cum = np.cumsum(p)
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= p.shape[0]:
        # float round-off at the tail; step back to the last possible outcome
        idx = int(np.max(np.nonzero(p > 0.0)[0]))
    p_idx = float(p[idx])
    if p_idx <= 0.0:
        raise SimulationError("sampled a zero-probability measurement branch")

    bits = tuple((idx >> (k - 1 - i)) & 1 for i in range(k))
    mask = np.ones((2,) * n, dtype=bool)
    mview = np.moveaxis(mask, sites, range(k))
    for i, b in enumerate(bits):
        sel = [slice(None)] * n
        sel[i] = 1 - b
        mview[tuple(sel)] = False
    amps = np.where(mask.reshape(-1), state.amps, 0.0) / np.sqrt(p_idx)
    posterior = StateVector(n, amps, _validate=False)
    posterior.check_norm()
    return MeasurementOutcome(tuple(sites), bits, posterior, p_idx)


def probability_of(state: StateVector, basis_index: int) -> float:
    """Born probability |amp|^2 of one basis state."""
    _check_index(state, basis_index)
    return float(np.abs(state.amps[basis_index]) ** 2)


def debug_dump(state: StateVector, cutoff: float = 1e-14) -> str:
    """JSON list of (index, re, im) for amplitudes above `cutoff` in magnitude."""
    entries = [
        [int(j), float(a.real), float(a.imag)]
        for j, a in enumerate(state.amps)
        if abs(a) > cutoff
    ]
    return json.dumps(entries)


def states_close(a: StateVector, b: StateVector, tol: float = 1e-12) -> bool:
    """Amplitude-wise equality within tol (no global-phase allowance)."""
    if a.num_sites != b.num_sites:
        return False
    return bool(np.max(np.abs(a.amps - b.amps)) <= tol)
