"""Distributed mean estimation over a cat state and a one-bit network.

Two protocols share the machinery. The one-shot protocol entangles N
particles, rotates each particle's branch-0 phase by theta^2*v_j/N, and
has every non-base owner apply M, measure, and transmit its single bit;
the XOR parity fixes the sign of the base's leftover qubit, whose
relative phase is then -theta^2*mu. The pipelined estimator entangles
eta processors, each of which runs r phase-kick iterations on its own
local register with every operation conditioned on its cat particle, so
the surviving branch accumulates eta times the serial phase; again each
non-base processor sends exactly one classical bit per round.

Processors execute in id order for determinism; correctness must not
depend on that order, which the exhaustive small-eta tests assert. A
failed post-selection at any processor aborts the round: the restart is
logged as a control event (exempt from the one-bit budget, which counts
result bits only) and the round rebuilds from a fresh cat state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .branchpair import (
    BranchPairState,
    apply_local_on_branch,
    attach_local_register,
    final_qubit,
    m_and_measure_cat_bit,
    measure_local_register,
    new_cat,
    rotate_branch_phase,
)
from .datasets import Dataset
from .errors import RestartCapError, UnwrapError, ValidationError
from .kick import (
    UNWRAP_MARGIN,
    EstimateReport,
    KickParams,
    ScaleConfig,
    amplitude_oracle,
    apply_data_kick,
    exact_phase,
    readout_phase,
    wrap_angle,
)
from .rng import RandomStream, derive_seed
from .statevec import StateVector, apply_cnot, measure_sites

NODE_KINDS = ("rotate", "kick")


class ProtocolRestart(Exception):
    """Internal signal: a processor's post-selection failed mid-round."""

    def __init__(self, node_id: int, iterations_done: int) -> None:
        super().__init__(f"processor {node_id} failed post-selection")
        self.node_id = node_id
        self.iterations_done = iterations_done


@dataclass(frozen=True)
class ProcessorNode:
    """One participant: its slot, its data view, and its local work recipe.

    kind "rotate" applies a single branch-0 phase (the one-shot protocol);
    kind "kick" runs r conditioned pipeline iterations on a local register.
    """

    id: int
    slot: int
    kind: str
    theta: float
    r: int = 1
    dataset: Dataset | None = None
    angle: float = 0.0
    seed: int = 0
    gamma_mode: str = "arcsin"

    def __post_init__(self) -> None:
        if self.kind not in NODE_KINDS:
            raise ValidationError(f"node kind must be one of {NODE_KINDS}")
        if self.kind == "kick" and self.dataset is None:
            raise ValidationError("kick nodes need a dataset view")
        if self.r < 1:
            raise ValidationError("r must be at least 1")


@dataclass(frozen=True)
class ClassicalMessage:
    """The one bit a processor transmits, tagged with sender and round."""

    sender: int
    bit: int
    round_tag: int


class NetworkTrace:
    """Ordered, replayable log of everything that crossed the network."""

    def __init__(self) -> None:
        self.events: list[dict] = []

    def record_bit(self, sender: int, round_tag: int, bit: int) -> None:
        self.events.append(
            {"event": "bit", "from": sender, "round": round_tag, "bit": bit}
        )

    def record_restart(self, sender: int, round_tag: int) -> None:
        self.events.append(
            {"event": "restart", "from": sender, "round": round_tag, "bit": 0}
        )

    def record_measure(self, round_tag: int, bit: int) -> None:
        self.events.append(
            {"event": "measure", "from": 0, "round": round_tag, "bit": bit}
        )

    def bit_messages(self, round_tag: int | None = None) -> list[dict]:
        return [
            e
            for e in self.events
            if e["event"] == "bit"
            and (round_tag is None or e["round"] == round_tag)
        ]

    def to_jsonl(self) -> str:
        if not self.events:
            return ""
        return "\n".join(json.dumps(e) for e in self.events) + "\n"


@dataclass
class BaseStationState:
    """The base's view: received bits, their parity, and the end products."""

    messages: list[ClassicalMessage] = field(default_factory=list)
    parity: int = 0
    qubit: StateVector | None = None
    report: EstimateReport | None = None

    def receive(self, message: ClassicalMessage) -> None:
        self.messages.append(message)
        self.parity ^= message.bit


def xor_aggregate(bits, grouping=None) -> int:
    """Parity of the bits, optionally folded along a binary grouping tree.

    grouping is a nested pair structure over bit indices, e.g.
    ((0, 1), (2, (3, 4))); every index must appear exactly once. The
    result never depends on the grouping; the argument exists so tests
    can assert that.
    """
    bits = list(bits)
    for b in bits:
        if b not in (0, 1):
            raise ValidationError(f"bits must be 0 or 1, got {b!r}")
    if grouping is None:
        parity = 0
        for b in bits:
            parity ^= b
        return parity
    seen: set[int] = set()

    def fold(node) -> int:
        if isinstance(node, int):
            if not 0 <= node < len(bits):
                raise ValidationError(f"grouping index {node} out of range")
            if node in seen:
                raise ValidationError(f"grouping repeats index {node}")
            seen.add(node)
            return bits[node]
        if not isinstance(node, tuple) or len(node) != 2:
            raise ValidationError(f"grouping nodes must be index pairs, got {node!r}")
        return fold(node[0]) ^ fold(node[1])

    parity = fold(grouping)
    if seen != set(range(len(bits))):
        raise ValidationError("grouping must cover every index exactly once")
    return parity


def processor_local_step(
    node: ProcessorNode,
    state: BranchPairState,
    rng: RandomStream,
    *,
    round_tag: int = 0,
    transmit: bool = True,
    force_bit: int | None = None,
    force_success: bool = False,
) -> tuple[ClassicalMessage | None, BranchPairState]:
    """One processor's turn: local work, then its cat-bit M + measure.

    Rotate nodes phase the global branch 0; kick nodes run r conditioned
    iterations on their local register, raising ProtocolRestart if any
    post-selection misses all-zero. The base station passes
    transmit=False to keep its cat bit for the final qubit. force_bit /
    force_success let tests enumerate measurement branches exhaustively.
    """
    if node.kind == "rotate":
        state = rotate_branch_phase(state, 0, node.angle)
    else:
        for iteration in range(node.r):
            state = apply_local_on_branch(
                state,
                node.slot,
                1,
                lambda s: apply_data_kick(s, node.dataset, node.theta, node.gamma_mode),
            )
            if force_success:
                bits, _, state = measure_local_register(
                    state, node.slot, rng, force_outcome=0
                )
            else:
                bits, _, state = measure_local_register(state, node.slot, rng)
            if any(bits):
                raise ProtocolRestart(node.id, iteration + 1)
    if not transmit:
        return None, state
    record, state = m_and_measure_cat_bit(state, node.slot, rng, force_bit=force_bit)
    return ClassicalMessage(node.id, record.bit, round_tag), state


def make_rotation_nodes(dataset: Dataset, theta: float, master_seed: int) -> list[ProcessorNode]:
    """One rotate node per particle; particle j owns value v_j."""
    n_particles = dataset.n
    return [
        ProcessorNode(
            id=j,
            slot=j,
            kind="rotate",
            theta=theta,
            angle=theta * theta * float(dataset.values[j]) / n_particles,
            seed=derive_seed(master_seed, 1 + j),
        )
        for j in range(n_particles)
    ]


def make_kick_nodes(
    dataset: Dataset, theta: float, r: int, eta: int, master_seed: int, gamma_mode: str
) -> list[ProcessorNode]:
    """eta kick nodes, each with the full data view (ids dense 0..eta-1)."""
    return [
        ProcessorNode(
            id=j,
            slot=j,
            kind="kick",
            theta=theta,
            r=r,
            dataset=dataset,
            seed=derive_seed(master_seed, 1 + j),
            gamma_mode=gamma_mode,
        )
        for j in range(eta)
    ]


def run_epr_mean_protocol(
    dataset: Dataset,
    theta: float,
    alpha: int,
    rng: RandomStream,
    *,
    ideal: bool = False,
) -> tuple[EstimateReport, NetworkTrace]:
    """One-shot N-particle protocol: one bit per particle, then readout.

    Each round prepares a fresh cat state, rotates every particle's
    branch-0 phase by theta^2*v_j/N, measures particles 1..N-1, and
    parity-corrects the base's leftover qubit, whose relative phase is
    exactly -theta^2*mu. alpha rounds feed the interference readout;
    mu_e = -Theta_hat/theta^2.
    """
    ScaleConfig(theta)
    n_particles = dataset.n
    nodes = make_rotation_nodes(dataset, theta, rng.seed)
    node_rngs = [rng.child(1 + node.id) for node in nodes]
    read_rng = rng.child(0)
    trace = NetworkTrace()
    counters = {"rounds": 0, "steps": 0}

    def prepare() -> StateVector:
        round_tag = counters["rounds"]
        counters["rounds"] += 1
        state = new_cat(n_particles)
        counters["steps"] += n_particles  # cat preparation: one M, N-1 pair couplings
        base = BaseStationState()
        for node in nodes:
            is_base = node.id == 0
            message, state = processor_local_step(
                node,
                state,
                node_rngs[node.id],
                round_tag=round_tag,
                transmit=not is_base,
            )
            counters["steps"] += 1  # the branch-0 rotation
            if message is not None:
                counters["steps"] += 2  # M plus measurement of the cat bit
                base.receive(message)
                trace.record_bit(message.sender, round_tag, message.bit)
        if base.parity == 1:
            state = rotate_branch_phase(state, 1, math.pi)
        a0, a1 = final_qubit(state)
        base.qubit = StateVector(1, np.array([a0, a1]))
        return base.qubit

    if ideal:
        theta_rel = exact_phase(prepare())
        half_width_phase = 0.0
        alpha_used = 0
    else:
        theta_rel, half_width_phase = readout_phase(
            prepare,
            alpha,
            read_rng,
            on_sample=lambda trial, batch, bit: trace.record_measure(trial, bit),
        )
        alpha_used = alpha

    # the rotation sits on branch 0, so the relative phase is -theta^2*mu
    recovered = -theta_rel
    scale = theta * theta
    report = EstimateReport(
        mu_e=recovered / scale,
        theta=float(theta),
        r=1,
        alpha=alpha_used,
        restarts=0,
        elementary_step_count=math.ceil(counters["steps"] / counters["rounds"]),
        seed=rng.seed,
        half_width=half_width_phase / scale,
        extras={
            "eta": n_particles,
            "method": "epr",
            "branch_convention": "branch0",
            "recovered_phase": recovered,
        },
    )
    return report, trace


def exact_failure_probability(
    dataset: Dataset, theta: float, gamma_mode: str = "arcsin"
) -> float:
    """Per-iteration post-selection failure probability, from exact amplitudes."""
    return amplitude_oracle(dataset, theta, gamma_mode).zero_failure_probability


def distributed_r(params: KickParams, theta: float, eta: int) -> int:
    """Per-processor iteration count; the default splits the phase budget
    kappa across eta processors so the total signal stays unwrapped."""
    if params.r is not None:
        return params.r
    return max(1, math.floor(params.kappa / (eta * theta**3)))


def run_distributed_estimator(
    dataset: Dataset,
    theta: float,
    eta: int,
    params: KickParams,
    rng: RandomStream,
    *,
    force: bool = False,
    ideal: bool = False,
) -> tuple[EstimateReport, NetworkTrace]:
    """eta-processor pipelined estimate: one classical bit per processor
    per round, final qubit phase eta*(r*pi + 2r<x>), mu_e from readout.

    Before running, the exact per-iteration failure probability bounds
    the expected restarts per round by eta*r*p_fail; above 0.5 the run
    refuses unless force=True. Any processor's post-selection failure
    restarts the whole round on a fresh cat state.
    """
    ScaleConfig(theta)
    if eta < 1:
        raise ValidationError("eta must be at least 1")
    r = distributed_r(params, theta, eta)
    p_fail = exact_failure_probability(dataset, theta, params.gamma_mode)
    if p_fail > 0.0 and not force:
        eta_cap = math.floor(0.5 / (r * p_fail))
        if eta > eta_cap:
            raise ValidationError(
                f"eta={eta} exceeds the failure-budget bound {eta_cap} "
                f"(r={r}, p_fail={p_fail:.3e}); pass force=True to override"
            )
    nodes = make_kick_nodes(dataset, theta, r, eta, rng.seed, params.gamma_mode)
    node_rngs = [rng.child(1 + node.id) for node in nodes]
    read_rng = rng.child(0)
    trace = NetworkTrace()
    n = dataset.num_sites
    per_iter = 2 * dataset.n + 4 * n + 2
    counters = {"rounds": 0, "steps": 0, "restarts": 0}

    def prepare() -> StateVector:
        round_tag = counters["rounds"]
        counters["rounds"] += 1
        while True:
            state = new_cat(eta)
            counters["steps"] += eta  # cat preparation
            for node in nodes:
                state = attach_local_register(state, node.slot, n)
            base = BaseStationState()
            try:
                for node in nodes:
                    is_base = node.id == 0
                    message, state = processor_local_step(
                        node,
                        state,
                        node_rngs[node.id],
                        round_tag=round_tag,
                        transmit=not is_base,
                    )
                    counters["steps"] += node.r * per_iter
                    if message is not None:
                        counters["steps"] += 2
                        base.receive(message)
                        trace.record_bit(message.sender, round_tag, message.bit)
            except ProtocolRestart as signal:
                counters["steps"] += signal.iterations_done * per_iter
                counters["restarts"] += 1
                if counters["restarts"] > params.max_restarts:
                    raise RestartCapError(
                        f"exceeded {params.max_restarts} protocol restarts"
                    ) from signal
                trace.record_restart(signal.node_id, round_tag)
                continue
            if base.parity == 1:
                state = rotate_branch_phase(state, 1, math.pi)
            a0, a1 = final_qubit(state)
            base.qubit = StateVector(1, np.array([a0, a1]))
            return base.qubit

    if ideal:
        theta_raw = exact_phase(prepare())
        half_width_phase = 0.0
        alpha_used = 0
    else:
        theta_raw, half_width_phase = readout_phase(
            prepare,
            params.alpha,
            read_rng,
            on_sample=lambda trial, batch, bit: trace.record_measure(trial, bit),
        )
        alpha_used = params.alpha

    theta_signal = wrap_angle(theta_raw - (r * eta % 2) * math.pi)
    if abs(theta_signal) > math.pi - UNWRAP_MARGIN:
        raise UnwrapError(
            f"signal phase {theta_signal:.4f} is within {UNWRAP_MARGIN} of the "
            "wrap boundary; reduce r or eta"
        )
    scale = 2.0 * r * eta * theta
    report = EstimateReport(
        mu_e=theta_signal / scale,
        theta=float(theta),
        r=r,
        alpha=alpha_used,
        restarts=counters["restarts"],
        elementary_step_count=math.ceil(counters["steps"] / counters["rounds"]),
        seed=rng.seed,
        half_width=half_width_phase / scale,
        extras={
            "eta": eta,
            "method": "distributed",
            "branch_convention": "branch1",
        },
    )
    return report, trace


def eta_bound(theta: float, budget_coeff: float) -> int:
    """Processor-count cap floor(budget_coeff / theta^4).

    The per-iteration failure probability scales as theta^4, so the
    expected failures per round scale as eta*r*theta^4; budget_coeff
    folds in r, the fitted failure constant, and the tolerated failure
    budget (see fitted_budget_coeff).
    """
    ScaleConfig(theta)
    if budget_coeff <= 0.0:
        raise ValidationError("budget_coeff must be positive")
    # relative nudge so exact ratios (e.g. 1.0/0.1^4) do not floor one short
    return math.floor(budget_coeff / theta**4 * (1.0 + 1e-12))


def fitted_budget_coeff(
    failure_constant: float, r: int, budget: float = 0.5
) -> float:
    """budget_coeff for eta_bound from a fitted p_fail = c*theta^4 law,
    keeping the expected failures per round eta*r*c*theta^4 <= budget."""
    if failure_constant <= 0.0 or r < 1 or budget <= 0.0:
        raise ValidationError("need failure_constant > 0, r >= 1, budget > 0")
    return budget / (r * failure_constant)


@dataclass
class LadderLevel:
    """One pairing round of the doubling ladder."""

    level: int
    entering: int
    pairs: int
    successes: int
    discarded_odd: int
    survivor_phases: list[float] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.successes / self.pairs if self.pairs else math.nan


@dataclass
class LadderReport:
    """Ladder outcome: per-level stats plus the final surviving phases."""

    levels: list[LadderLevel]
    final_phases: list[float]
    stopped_early: bool


def cnot_doubling_ladder(
    phases, levels: int, rng: RandomStream
) -> LadderReport:
    """Pairwise phase doubling: CNOT, then measure the target qubit.

    Each system is a qubit (|0> + e^(i*phi)|1>)/sqrt(2). Pairing two and
    applying CNOT (first as control) makes the target outcome 0 occur
    with probability exactly 1/2, leaving the control with phase
    phi_a + phi_b; outcome 1 leaves phase phi_a - phi_b (zero for equal
    inputs, nothing to recycle), so failed pairs are discarded, as is an
    odd leftover. A level with fewer than two systems ends the ladder
    early.
    """
    current = [float(p) for p in phases]
    if len(current) < 2:
        raise ValidationError("the ladder needs at least two systems")
    if levels < 1:
        raise ValidationError("levels must be at least 1")
    out_levels: list[LadderLevel] = []
    stopped_early = False
    for level in range(levels):
        if len(current) < 2:
            stopped_early = True
            break
        survivors: list[float] = []
        pairs = 0
        successes = 0
        for i in range(0, len(current) - 1, 2):
            phi_a, phi_b = current[i], current[i + 1]
            amps = (
                np.array(
                    [
                        1.0,
                        np.exp(1j * phi_b),
                        np.exp(1j * phi_a),
                        np.exp(1j * (phi_a + phi_b)),
                    ]
                )
                / 2.0
            )
            state = apply_cnot(StateVector(2, amps), 0, 1)
            outcome = measure_sites(state, (1,), rng)
            pairs += 1
            if outcome.bits[0] == 0:
                successes += 1
                post = outcome.posterior.amps
                survivors.append(float(np.angle(post[2] * np.conj(post[0]))))
        out_levels.append(
            LadderLevel(
                level=level,
                entering=len(current),
                pairs=pairs,
                successes=successes,
                discarded_odd=len(current) % 2,
                survivor_phases=survivors.copy(),
            )
        )
        current = survivors
    return LadderReport(
        levels=out_levels, final_phases=current, stopped_early=stopped_early
    )
