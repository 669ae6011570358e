"""Structured two-branch representation of cat-state-entangled processors.

A BranchPairState stores the global state

    a0 * |0...0> (x) local0_0 (x) ... (x) local0_{eta-1}
  + a1 * |1...1> (x) local1_0 (x) ... (x) local1_{eta-1}

where the |0...0>/|1...1> bits are the per-slot cat bits and each slot j
carries its own local register, possibly different on the two branches.
Memory and per-operation time are linear in the number of slots, unlike the
dense form, which exists only as an oracle via to_dense.

Only operations that preserve the two-branch product form are offered:
local unitaries on one branch (the slot's cat bit is the implicit
condition), global branch phases, projective measurement of a slot's local
register, and the measure-after-M consumption of a cat bit. Anything else
is a contract error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import SimulationError, ValidationError
from .rng import RandomStream
from .statevec import DEFAULT_MAX_SITES, NORM_TOL, StateVector, basis_state, zero_state

OVERLAP_TOL = 1e-8

_SQRT_HALF = math.sqrt(0.5)


@dataclass
class _Slot:
    has_cat_bit: bool
    local0: StateVector
    local1: StateVector

    @property
    def local_sites(self) -> int:
        return self.local0.num_sites


@dataclass
class CatMeasurementRecord:
    """One consumed cat bit: who, what was observed, and the sign it folded."""

    slot: int
    bit: int
    sign_flip: bool


class BranchPairState:
    """Two-branch cat state with per-slot local registers."""

    __slots__ = ("a0", "a1", "slots")

    def __init__(self, a0: complex, a1: complex, slots: list[_Slot]) -> None:
        self.a0 = complex(a0)
        self.a1 = complex(a1)
        self.slots = slots

    @property
    def eta(self) -> int:
        return len(self.slots)

    def cat_bits_remaining(self) -> int:
        return sum(1 for s in self.slots if s.has_cat_bit)

    def check_norm(self) -> None:
        # locals are kept normalized at every fold, so the branch weights
        # alone carry the norm; this stays O(1) in eta
        total = abs(self.a0) ** 2 + abs(self.a1) ** 2
        if abs(total - 1.0) > NORM_TOL:
            raise SimulationError(f"branch-pair norm {total!r} drifted beyond {NORM_TOL}")

    def _copy(self) -> "BranchPairState":
        return BranchPairState(self.a0, self.a1, list(self.slots))

    def __repr__(self) -> str:
        return f"BranchPairState(eta={self.eta}, cat_bits={self.cat_bits_remaining()})"


def _check_slot(state: BranchPairState, slot: int) -> _Slot:
    if not 0 <= slot < state.eta:
        raise ValidationError(f"slot {slot} out of range for eta={state.eta}")
    return state.slots[slot]


def _overlap(slot: _Slot) -> complex:
    return complex(np.vdot(slot.local0.amps, slot.local1.amps))


def new_cat(eta: int) -> BranchPairState:
    """The eta-particle cat state (|0...0> + |1...1>)/sqrt(2), empty registers."""
    if eta < 1:
        raise ValidationError("eta must be at least 1")
    empty = zero_state(0)
    slots = [_Slot(True, empty, empty) for _ in range(eta)]
    return BranchPairState(_SQRT_HALF, _SQRT_HALF, slots)


def attach_local_register(
    state: BranchPairState, slot: int, num_local_sites: int
) -> BranchPairState:
    """Give a slot its all-zero local register of the requested size."""
    cur = _check_slot(state, slot)
    if cur.local_sites != 0:
        raise ValidationError(f"slot {slot} already has a local register")
    if num_local_sites < 1:
        raise ValidationError("num_local_sites must be at least 1")
    fresh = zero_state(num_local_sites)
    out = state._copy()
    out.slots[slot] = _Slot(cur.has_cat_bit, fresh, fresh)
    return out


def apply_local_on_branch(
    state: BranchPairState,
    slot: int,
    branch: int,
    unitary: Callable[[StateVector], StateVector],
) -> BranchPairState:
    """Apply a unitary to one slot's local register on one branch only.

    The slot's cat bit is the implicit condition: branch 1 is the |1...1>
    side. The unitary must act within the slot's register; a register size
    change or norm drift is rejected.
    """
    cur = _check_slot(state, slot)
    if branch not in (0, 1):
        raise ValidationError("branch must be 0 or 1")
    local = cur.local0 if branch == 0 else cur.local1
    moved = unitary(local)
    if moved.num_sites != local.num_sites:
        raise ValidationError("local unitary changed the register size")
    # fold the register's norm and global phase into the branch weight; the
    # register stays normalized with its largest amplitude real positive, so
    # physically identical registers compare equal across branches
    nrm = float(np.linalg.norm(moved.amps))
    if nrm <= 0.0:
        raise SimulationError("local operation annihilated the branch")
    pivot = int(np.argmax(np.abs(moved.amps)))
    factor = complex(moved.amps[pivot]) / abs(complex(moved.amps[pivot])) * nrm
    normalized = StateVector(moved.num_sites, moved.amps / factor, _validate=False)
    out = state._copy()
    if branch == 0:
        out.a0 *= factor
        out.slots[slot] = _Slot(cur.has_cat_bit, normalized, cur.local1)
    else:
        out.a1 *= factor
        out.slots[slot] = _Slot(cur.has_cat_bit, cur.local0, normalized)
    out.check_norm()
    return out


def rotate_branch_phase(state: BranchPairState, branch: int, angle: float) -> BranchPairState:
    """Multiply one branch weight by e^(i*angle)."""
    if branch not in (0, 1):
        raise ValidationError("branch must be 0 or 1")
    out = state._copy()
    if branch == 0:
        out.a0 *= np.exp(1j * angle)
    else:
        out.a1 *= np.exp(1j * angle)
    return out


def measure_local_register(
    state: BranchPairState,
    slot: int,
    rng: RandomStream,
    *,
    force_outcome: int | None = None,
) -> tuple[tuple[int, ...], float, BranchPairState]:
    """Projectively measure every site of a slot's local register.

    The branches collapse independently (any remaining cat bit makes them
    orthogonal, so there is no cross term); the observed amplitude of each
    branch folds into its global weight and the register resets to the
    observed basis state. Returns (bits, outcome probability, posterior).

    force_outcome pins the observed basis index instead of sampling; it is
    an enumeration hook for exhaustive branch tests and acts as
    post-selection (the returned probability is unchanged).
    """
    cur = _check_slot(state, slot)
    k = cur.local_sites
    if k == 0:
        raise ValidationError(f"slot {slot} has no local register")
    if state.cat_bits_remaining() == 0 and abs(state.a0) > 0 and abs(state.a1) > 0:
        raise SimulationError("two live branches with no cat bit cannot be measured")

    w0 = abs(state.a0) ** 2
    w1 = abs(state.a1) ** 2
    p = w0 * np.abs(cur.local0.amps) ** 2 + w1 * np.abs(cur.local1.amps) ** 2

    if force_outcome is not None:
        if not 0 <= force_outcome < (1 << k):
            raise ValidationError("forced outcome out of range")
        idx = int(force_outcome)
    else:
        cum = np.cumsum(p)
        idx = int(np.searchsorted(cum, rng.random(), side="right"))
        if idx >= p.shape[0]:
            idx = int(np.max(np.nonzero(p > 0.0)[0]))
    p_idx = float(p[idx])
    if p_idx <= 0.0:
        raise SimulationError("sampled a zero-probability local outcome")

    root = math.sqrt(p_idx)
    collapsed = basis_state(k, idx)
    out = state._copy()
    out.a0 = state.a0 * complex(cur.local0.amps[idx]) / root
    out.a1 = state.a1 * complex(cur.local1.amps[idx]) / root
    out.slots[slot] = _Slot(cur.has_cat_bit, collapsed, collapsed)
    out.check_norm()
    bits = tuple((idx >> (k - 1 - i)) & 1 for i in range(k))
    return bits, p_idx, out


def m_and_measure_cat_bit(
    state: BranchPairState,
    slot: int,
    rng: RandomStream,
    *,
    force_bit: int | None = None,
) -> tuple[CatMeasurementRecord, BranchPairState]:
    """Apply M to a slot's cat bit and measure it.

    Requires the slot's local registers to be identical across branches
    (within OVERLAP_TOL), which the protocols guarantee by post-selecting
    registers back to all-zero first; the register then factors out and is
    dropped. While at least one other cat bit remains, each outcome has
    probability exactly 1/2 and outcome 1 folds a sign onto the |1...1>
    branch. Measuring the last cat bit merges the branches instead, with
    interference probabilities.

    force_bit pins the observed bit (enumeration hook / post-selection).
    """
    cur = _check_slot(state, slot)
    if not cur.has_cat_bit:
        raise ValidationError(f"slot {slot} was already measured")
    if abs(_overlap(cur) - 1.0) > OVERLAP_TOL:
        raise ValidationError(
            f"slot {slot} local registers differ across branches; "
            "post-select them to a common state before releasing the cat bit"
        )

    others_remain = state.cat_bits_remaining() > 1
    if others_remain:
        p0 = 0.5
    else:
        # last cat bit: the branches merge, so every register must factor out
        for j, s in enumerate(state.slots):
            if abs(_overlap(s) - 1.0) > OVERLAP_TOL:
                raise ValidationError(
                    f"slot {j} local registers differ; cannot merge the last cat bit"
                )
        cross = 2.0 * (state.a0 * np.conj(state.a1)).real
        p0 = (abs(state.a0) ** 2 + abs(state.a1) ** 2 + cross) / 2.0
        p0 = min(max(p0, 0.0), 1.0)

    if force_bit is not None:
        if force_bit not in (0, 1):
            raise ValidationError("force_bit must be 0 or 1")
        bit = int(force_bit)
    else:
        bit = 0 if rng.random() < p0 else 1
    p_bit = p0 if bit == 0 else 1.0 - p0
    if p_bit <= 0.0:
        raise SimulationError("measured a zero-probability cat-bit branch")

    out = state._copy()
    empty = zero_state(0)
    out.slots[slot] = _Slot(False, empty, empty)
    sign = -1.0 if bit == 1 else 1.0
    if others_remain:
        out.a1 = sign * state.a1
    else:
        merged = (state.a0 + sign * state.a1) / math.sqrt(2.0 * p_bit)
        out.a0 = merged
        out.a1 = 0.0
    out.check_norm()
    return CatMeasurementRecord(slot, bit, bit == 1), out


def dense_site_map(state: BranchPairState) -> list[tuple[int | None, tuple[int, ...]]]:
    """Per slot: (dense site of the cat bit or None, dense sites of its locals).

    Dense ordering walks slots in id order, cat bit first, then local sites.
    """
    mapping: list[tuple[int | None, tuple[int, ...]]] = []
    site = 0
    for slot in state.slots:
        cat = site if slot.has_cat_bit else None
        if slot.has_cat_bit:
            site += 1
        locals_ = tuple(range(site, site + slot.local_sites))
        site += slot.local_sites
        mapping.append((cat, locals_))
    return mapping


def to_dense(state: BranchPairState, max_sites: int = DEFAULT_MAX_SITES) -> StateVector:
    """Exact dense expansion, for oracle checks at small sizes."""
    total = sum(
        (1 if s.has_cat_bit else 0) + s.local_sites for s in state.slots
    )
    if total > max_sites:
        raise ValidationError(f"dense expansion needs {total} sites, limit {max_sites}")
    b0 = np.array([1.0 + 0j])
    b1 = np.array([1.0 + 0j])
    for slot in state.slots:
        if slot.has_cat_bit:
            b0 = np.kron(b0, np.array([1.0 + 0j, 0.0]))
            b1 = np.kron(b1, np.array([0.0, 1.0 + 0j]))
        b0 = np.kron(b0, slot.local0.amps)
        b1 = np.kron(b1, slot.local1.amps)
    dense = state.a0 * b0 + state.a1 * b1
    out = StateVector(total, dense, _validate=False)
    out.check_norm()
    return out


def final_qubit(state: BranchPairState) -> tuple[complex, complex]:
    """Extract (a0, a1) of the one remaining cat bit as a bare qubit.

    Valid once exactly one cat bit remains and every local register is
    identical across branches (all protocol work folded into the weights).
    """
    if state.cat_bits_remaining() != 1:
        raise ValidationError("final qubit needs exactly one remaining cat bit")
    for j, slot in enumerate(state.slots):
        if slot.local_sites > 0 and abs(_overlap(slot) - 1.0) > OVERLAP_TOL:
            raise ValidationError(f"slot {j} local registers are still entangled")
    return state.a0, state.a1
