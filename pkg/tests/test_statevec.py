"""Gate-algebra tests against independent brute-force oracles.

The reference transform is built here from raw numpy kron products so the
package implementation and the oracle share no code.
"""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from telemean.errors import ValidationError
from telemean.rng import RandomStream
from telemean.statevec import (
    StateVector,
    apply_cnot,
    apply_diagonal_phase,
    apply_m,
    apply_wh,
    basis_state,
    controlled,
    debug_dump,
    measure_sites,
    probability_of,
    rotate_basis_phase,
    states_close,
    zero_state,
)

M_ORACLE = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)


def wh_matrix_oracle(n: int) -> np.ndarray:
    """Brute-force tensor product of n M factors."""
    w = np.array([[1.0]])
    for _ in range(n):
        w = np.kron(w, M_ORACLE)
    return w


def random_state(n: int, rng: np.random.Generator) -> StateVector:
    amps = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    amps /= np.linalg.norm(amps)
    return StateVector(n, amps)


class FixedStream:
    """Scripted stand-in for RandomStream, for forcing measurement branches."""

    def __init__(self, values):
        self._values = list(values)

    def random(self, size=None):
        assert size is None
        return self._values.pop(0)


def test_m_on_basis_states():
    plus = apply_m(basis_state(1, 0), 0)
    np.testing.assert_allclose(plus.amps, [math.sqrt(0.5), math.sqrt(0.5)], atol=1e-15)
    minus = apply_m(basis_state(1, 1), 0)
    np.testing.assert_allclose(minus.amps, [math.sqrt(0.5), -math.sqrt(0.5)], atol=1e-15)


def test_m_involution_on_random_states():
    rng = np.random.default_rng(7)
    for n in (1, 2, 3):
        for site in range(n):
            st = random_state(n, rng)
            back = apply_m(apply_m(st, site), site)
            assert states_close(back, st, tol=1e-12)


def test_wh_uniform_from_all_zero():
    for n in (1, 2, 3):
        st = apply_wh(zero_state(n), range(n))
        np.testing.assert_allclose(st.amps, np.full(2**n, 2 ** (-n / 2)), atol=1e-14)


def test_wh_matches_tensor_oracle_exhaustively():
    # full matrix comparison plus the (-1)^(x.y) sign rule, n <= 4
    for n in (1, 2, 3, 4):
        w = wh_matrix_oracle(n)
        for x in range(2**n):
            col = apply_wh(basis_state(n, x), range(n)).amps
            assert np.max(np.abs(col - w[:, x])) <= 1e-12
            for y in range(2**n):
                sign = -1.0 if bin(x & y).count("1") % 2 else 1.0
                assert abs(col[y] - sign * 2 ** (-n / 2)) <= 1e-12


def test_wh_involution_random_states():
    rng = np.random.default_rng(11)
    for n in range(1, 7):
        st = random_state(n, rng)
        back = apply_wh(apply_wh(st, range(n)), range(n))
        assert states_close(back, st, tol=1e-12)


def test_wh_partial_sites_equal_sequential_m():
    rng = np.random.default_rng(13)
    st = random_state(4, rng)
    sites = [3, 1]
    seq = apply_m(apply_m(st, 3), 1)
    assert states_close(apply_wh(st, sites), seq, tol=1e-13)


def test_rotate_basis_phase_pi_is_sign_flip():
    plus = apply_m(basis_state(1, 0), 0)
    flipped = rotate_basis_phase(plus, 1, math.pi)
    np.testing.assert_allclose(flipped.amps, [math.sqrt(0.5), -math.sqrt(0.5)], atol=1e-15)


def test_rotate_basis_phase_zero_is_identity():
    rng = np.random.default_rng(3)
    st = random_state(3, rng)
    assert states_close(rotate_basis_phase(st, 5, 0.0), st, tol=1e-15)


def test_rotate_basis_phase_quarter_turn_oracle():
    st = apply_wh(zero_state(2), range(2))
    out = rotate_basis_phase(st, 2, math.pi / 2)
    expected = st.amps.copy()
    expected[2] = expected[2] * np.exp(1j * math.pi / 2)  # independent multiply
    assert np.max(np.abs(out.amps - expected)) <= 1e-15
    for j in range(4):
        assert abs(probability_of(out, j) - 0.25) <= 1e-12


def test_diagonal_phase_identity_and_global_flip():
    rng = np.random.default_rng(5)
    st = random_state(3, rng)
    same = apply_diagonal_phase(st, {j: 0.0 for j in range(8)})
    assert states_close(same, st, tol=1e-15)
    flipped = apply_diagonal_phase(st, {j: math.pi for j in range(8)})
    assert states_close(flipped, StateVector(3, -st.amps), tol=1e-12)


def test_diagonal_phase_equals_composed_rotations_any_order():
    rng = np.random.default_rng(17)
    st = random_state(3, rng)
    angles = {0: 0.3, 5: -1.2, 6: 2.5}
    combined = apply_diagonal_phase(st, angles)
    for order in ([0, 5, 6], [6, 0, 5], [5, 6, 0]):
        acc = st
        for j in order:
            acc = rotate_basis_phase(acc, j, angles[j])
        assert states_close(acc, combined, tol=1e-13)


def test_probabilities_invariant_under_diagonal_phases():
    rng = np.random.default_rng(23)
    for _ in range(20):
        st = random_state(4, rng)
        angles = {int(j): float(a) for j, a in zip(range(16), rng.normal(size=16))}
        out = apply_diagonal_phase(st, angles)
        for j in range(16):
            assert abs(probability_of(out, j) - probability_of(st, j)) <= 1e-12


def test_cnot_truth_table():
    assert states_close(apply_cnot(basis_state(2, 2), 0, 1), basis_state(2, 3))
    assert states_close(apply_cnot(basis_state(2, 1), 0, 1), basis_state(2, 1))


def test_cnot_on_phase_product_state():
    # (|00> + e^ip|01> + e^ip|10> + e^2ip|11>)/2 with control=site 0:
    # the control-1 half swaps target amplitudes
    phi = 0.7
    amps = np.exp(1j * phi * np.array([0, 1, 1, 2])) / 2.0
    out = apply_cnot(StateVector(2, amps), 0, 1)
    expected = np.exp(1j * phi * np.array([0, 1, 2, 1])) / 2.0
    assert np.max(np.abs(out.amps - expected)) <= 1e-14


def test_controlled_definition_on_product_state():
    rng = np.random.default_rng(29)
    psi = random_state(2, rng)
    full_amps = np.kron(np.array([1.0, 1.0]) / math.sqrt(2.0), psi.amps)
    st = StateVector(3, full_amps)
    op = lambda s: apply_wh(s, [1, 2])
    out = controlled(op, 0)(st)
    expected = np.concatenate(
        [psi.amps / math.sqrt(2.0), apply_wh(psi, range(2)).amps / math.sqrt(2.0)]
    )
    assert np.max(np.abs(out.amps - expected)) <= 1e-13


def test_controlled_is_identity_on_control_zero():
    rng = np.random.default_rng(31)
    psi = random_state(2, rng)
    st = StateVector(3, np.kron(np.array([1.0, 0.0]), psi.amps))
    out = controlled(lambda s: apply_wh(s, [1, 2]), 0)(st)
    assert states_close(out, st, tol=1e-13)


def test_controlled_phase_pi_on_11():
    op = lambda s: apply_diagonal_phase(s, {1: math.pi, 3: math.pi})
    out = controlled(op, 0)(basis_state(2, 3))
    assert states_close(out, StateVector(2, [0, 0, 0, -1]), tol=1e-15)


def test_measure_deterministic_branch():
    out = measure_sites(basis_state(2, 2), [0], RandomStream(1))
    assert out.bits == (1,)
    assert out.probability == pytest.approx(1.0)
    assert states_close(out.posterior, basis_state(2, 2))


def test_measure_cat_state_branches():
    amps = np.zeros(4, dtype=complex)
    amps[0] = amps[3] = math.sqrt(0.5)
    cat = StateVector(2, amps)
    for u, bits, idx in ((0.2, (0,), 0), (0.8, (1,), 3)):
        out = measure_sites(cat, [0], FixedStream([u]))
        assert out.bits == bits
        assert out.probability == pytest.approx(0.5)
        assert states_close(out.posterior, basis_state(2, idx), tol=1e-12)


def test_measure_joint_outcome_ordering():
    # probabilities 0.1, 0.2, 0.3, 0.4 over outcomes 00,01,10,11
    amps = np.sqrt(np.array([0.1, 0.2, 0.3, 0.4]))
    st = StateVector(2, amps)
    for u, expected in ((0.05, (0, 0)), (0.25, (0, 1)), (0.55, (1, 0)), (0.95, (1, 1))):
        out = measure_sites(st, [0, 1], FixedStream([u]))
        assert out.bits == expected


def test_measure_site_order_maps_to_bit_order():
    out = measure_sites(basis_state(2, 2), [1, 0], FixedStream([0.5]))
    assert out.sites == (1, 0)
    assert out.bits == (0, 1)


def test_measure_empirical_frequency():
    plus = apply_m(basis_state(1, 0), 0)
    rng = RandomStream(424242)
    zeros = sum(
        1 for _ in range(10_000) if measure_sites(plus, [0], rng).bits == (0,)
    )
    assert abs(zeros / 10_000 - 0.5) <= 0.02


def test_measure_posterior_is_consistent_and_repeatable():
    rng = np.random.default_rng(37)
    st = random_state(3, rng)
    out = measure_sites(st, [0, 2], RandomStream(9))
    again = measure_sites(out.posterior, [0, 2], RandomStream(10))
    assert again.bits == out.bits
    assert again.probability == pytest.approx(1.0, abs=1e-12)


def test_measure_determinism_same_seed():
    rng = np.random.default_rng(41)
    st = random_state(4, rng)
    runs = []
    for _ in range(2):
        stream = RandomStream(123)
        runs.append([measure_sites(st, [1, 3], stream).bits for _ in range(50)])
    assert runs[0] == runs[1]


def test_norm_validation_rejects_unnormalized_input():
    with pytest.raises(ValidationError):
        StateVector(1, [1.0, 1.0])


def test_validation_errors():
    st = zero_state(2)
    with pytest.raises(ValidationError):
        apply_m(st, 2)
    with pytest.raises(ValidationError):
        apply_wh(st, [0, 0])
    with pytest.raises(ValidationError):
        apply_cnot(st, 1, 1)
    with pytest.raises(ValidationError):
        rotate_basis_phase(st, 4, 0.1)
    with pytest.raises(ValidationError):
        apply_diagonal_phase(st, {4: 0.1})
    with pytest.raises(ValidationError):
        probability_of(st, -1)
    with pytest.raises(ValidationError):
        StateVector(1, [1.0, 0.0, 0.0])
    with pytest.raises(ValidationError):
        StateVector(1, [np.nan, 0.0])


def test_debug_dump_lists_nonzero_amplitudes():
    st = apply_m(basis_state(2, 0), 0)
    entries = json.loads(debug_dump(st))
    assert entries == [[0, pytest.approx(math.sqrt(0.5)), 0.0], [2, pytest.approx(math.sqrt(0.5)), 0.0]]
