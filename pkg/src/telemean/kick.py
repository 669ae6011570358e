"""Serial mean estimation by repeated conditional phase kicks.

One iteration drives the data register through WH, a per-state phase
gamma_j with sin(gamma_j) = theta*v_j, WH, a pi flip on the all-zero
state, WH, the same per-state phase again, and a final WH, everything
conditioned on an ancilla qubit; measuring the data register back in
the all-zero state leaves the ancilla branch multiplied by a factor
whose phase is pi + 2*theta*mu up to O(theta^3). Repeating r times and
reading the ancilla phase by interference estimates the dataset mean.

Register layout: the ancilla is site 0 (most significant), data sites
are 1..n, so a full basis index is ancilla_bit * 2^n + data_index.

Two interchangeable pipeline engines are provided. The dense engine
simulates the full (n+1)-site register gate by gate. The fast engine
exploits that the conditioned iteration multiplies the ancilla-1 branch
by one fixed amplitude vector, so a single unconditioned n-site pass
yields the branch factor B0 and every survival probability in closed
form; it consumes the random stream in exactly the same order as the
dense engine (one uniform per post-selection, success iff u < p_zero),
so the two agree draw for draw under a shared seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datasets import Dataset
from .errors import RestartCapError, SimulationError, UnwrapError, ValidationError
from .rng import RandomStream
from .statevec import (
    StateVector,
    _SQRT_HALF,
    apply_diagonal_phase,
    apply_m,
    apply_wh,
    controlled,
    measure_sites,
    rotate_basis_phase,
    zero_state,
)

GAMMA_MODES = ("arcsin", "linear")
DEFAULT_KAPPA = math.pi / 4
THETA_FLOOR = 1e-6
# C in the per-preparation budget count <= C * N * log2(N) / theta^3
STEP_BUDGET_COEFF = 8.0
# half-width reported as 3/sqrt(alpha) in phase units, about 3 standard
# deviations of the two-offset estimate at worst-case phase
READOUT_HALF_WIDTH_COEFF = 3.0
UNWRAP_MARGIN = 0.2


@dataclass(frozen=True)
class ScaleConfig:
    """Validated scale factor theta; x_j = theta * v_j are the phased data."""

    theta: float

    def __post_init__(self) -> None:
        if not (0.0 < self.theta <= 1.0):
            raise ValidationError(f"theta must lie in (0, 1], got {self.theta}")

    def x(self, dataset: Dataset) -> np.ndarray:
        x = self.theta * dataset.values
        if float(np.max(np.abs(x))) > 1.0:
            raise ValidationError("theta * max|v| exceeds 1; arcsin undefined")
        return x


@dataclass(frozen=True)
class KickParams:
    """Iteration count, readout budget, and restart policy for one run.

    r = None derives max(1, floor(kappa / theta^3)), which keeps the
    accumulated signal phase under kappa when |mu| <= theta^2.
    """

    r: int | None = None
    alpha: int = 400
    kappa: float = DEFAULT_KAPPA
    max_restarts: int = 100_000
    gamma_mode: str = "arcsin"

    def __post_init__(self) -> None:
        if self.r is not None and self.r < 1:
            raise ValidationError("r must be at least 1")
        if self.alpha < 1:
            raise ValidationError("alpha must be at least 1")
        if self.kappa <= 0.0:
            raise ValidationError("kappa must be positive")
        if self.max_restarts < 0:
            raise ValidationError("max_restarts must be non-negative")
        if self.gamma_mode not in GAMMA_MODES:
            raise ValidationError(f"gamma_mode must be one of {GAMMA_MODES}")

    def resolved_r(self, theta: float) -> int:
        if self.r is not None:
            return self.r
        return max(1, math.floor(self.kappa / theta**3))


@dataclass
class IterationTrace:
    """Branch-normalized amplitude snapshots from one traced iteration."""

    a: np.ndarray  # per-state amplitudes after the first phase step
    w: np.ndarray  # after the WH that follows it
    zero_success_probability: float  # exact all-zero probability at measurement


@dataclass
class EstimateReport:
    """Result of one full mean estimate, serializable to the report schema."""

    mu_e: float
    theta: float
    r: int
    alpha: int
    restarts: int
    elementary_step_count: int
    seed: int
    half_width: float
    extras: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        core = {
            "mu_e": self.mu_e,
            "theta": self.theta,
            "r": self.r,
            "alpha": self.alpha,
            "restarts": self.restarts,
            "elementary_step_count": self.elementary_step_count,
            "seed": self.seed,
            "half_width": self.half_width,
        }
        core.update(self.extras)
        return core


def gamma_of(x: float, mode: str = "arcsin") -> float:
    """Rotation angle for a scaled value: arcsin(x) exactly, or x itself."""
    if abs(x) > 1.0:
        raise ValidationError(f"|x| must not exceed 1, got {x}")
    if mode == "arcsin":
        return math.asin(x)
    if mode == "linear":
        return float(x)
    raise ValidationError(f"gamma_mode must be one of {GAMMA_MODES}")


def _gammas(dataset: Dataset, theta: float, mode: str) -> np.ndarray:
    x = ScaleConfig(theta).x(dataset)
    if mode == "arcsin":
        return np.arcsin(x)
    if mode == "linear":
        return x
    raise ValidationError(f"gamma_mode must be one of {GAMMA_MODES}")


def _per_iteration_steps(dataset: Dataset) -> int:
    # single-site gate count: four WH passes (n each), two per-state phase
    # passes (N each), the pi flip, and the post-selection measurement
    return 2 * dataset.n + 4 * dataset.num_sites + 2


def zero_success_probability(state: StateVector) -> float:
    """Exact probability that measuring the data register yields all zeros."""
    block = state.amps.reshape(2, -1)
    return float(abs(block[0, 0]) ** 2 + abs(block[1, 0]) ** 2)


def kick_iteration(
    state: StateVector,
    dataset: Dataset,
    theta: float,
    *,
    gamma_mode: str = "arcsin",
    trace_sink: list[IterationTrace] | None = None,
) -> StateVector:
    """Apply one full conditioned iteration to an (n+1)-site register.

    The data register must be all-zero on both ancilla branches at entry;
    the ancilla-0 branch is untouched throughout.
    """
    n = dataset.num_sites
    if state.num_sites != n + 1:
        raise ValidationError(
            f"state has {state.num_sites} sites; dataset needs {n + 1}"
        )
    block = state.amps.reshape(2, -1)
    if float(np.max(np.abs(block[:, 1:]))) > 1e-12:
        raise ValidationError("data register must be all-zero at entry")
    a1_entry = complex(block[1, 0])

    gam = _gammas(dataset, theta, gamma_mode)
    phase_block = {(1 << n) + j: float(g) for j, g in enumerate(gam)}
    data_sites = tuple(range(1, n + 1))
    cond_wh = controlled(lambda s: apply_wh(s, data_sites), 0)

    def snap(cur: StateVector) -> np.ndarray:
        one = cur.amps.reshape(2, -1)[1]
        if a1_entry == 0:
            return np.zeros_like(one)
        return one / a1_entry

    state = cond_wh(state)
    # the per-state phase only touches ancilla-1 indices, so it already
    # equals its own conditioned version
    state = apply_diagonal_phase(state, phase_block)
    a_snapshot = snap(state) if trace_sink is not None else None
    state = cond_wh(state)
    w_snapshot = snap(state) if trace_sink is not None else None
    state = rotate_basis_phase(state, 1 << n, math.pi)
    state = cond_wh(state)
    state = apply_diagonal_phase(state, phase_block)
    state = cond_wh(state)

    if trace_sink is not None:
        trace_sink.append(
            IterationTrace(
                a=a_snapshot,
                w=w_snapshot,
                zero_success_probability=zero_success_probability(state),
            )
        )
    return state


def postselect_zero(
    state: StateVector, rng: RandomStream
) -> tuple[bool, StateVector | None]:
    """Measure the data register; all zeros keeps the posterior, else restart."""
    data_sites = tuple(range(1, state.num_sites))
    outcome = measure_sites(state, data_sites, rng)
    if any(outcome.bits):
        return False, None
    return True, outcome.posterior


@dataclass
class PipelineResult:
    """Final ancilla qubit plus run accounting for one pipeline execution."""

    qubit: StateVector
    r: int
    restarts: int
    iterations: int
    elementary_steps: int
    traces: list[IterationTrace] | None = None

    @property
    def bookkeeping_phase(self) -> float:
        """Deterministic r*pi accumulated by the per-iteration sign flip."""
        return (self.r % 2) * math.pi


def apply_data_kick(
    state: StateVector, dataset: Dataset, theta: float, gamma_mode: str = "arcsin"
) -> StateVector:
    """One unconditioned iteration on a bare n-site data register.

    This is the circuit the ancilla conditions on; protocols that carry
    the condition elsewhere (a cat-state branch) apply it directly.
    """
    n = dataset.num_sites
    if state.num_sites != n:
        raise ValidationError(
            f"state has {state.num_sites} sites; dataset needs {n}"
        )
    gam = _gammas(dataset, theta, gamma_mode)
    diag = {j: float(g) for j, g in enumerate(gam)}
    sites = tuple(range(n))
    state = apply_wh(state, sites)
    state = apply_diagonal_phase(state, diag)
    state = apply_wh(state, sites)
    state = rotate_basis_phase(state, 0, math.pi)
    state = apply_wh(state, sites)
    state = apply_diagonal_phase(state, diag)
    state = apply_wh(state, sites)
    return state


def branch_kick_amplitudes(
    dataset: Dataset, theta: float, gamma_mode: str = "arcsin"
) -> np.ndarray:
    """Amplitude vector one unconditioned iteration leaves on |0...0>.

    Component 0 is the branch factor B0 the conditioned iteration
    multiplies onto the ancilla-1 weight at post-selection.
    """
    n = dataset.num_sites
    return apply_data_kick(zero_state(n), dataset, theta, gamma_mode).amps


def _run_pipeline_dense(
    dataset: Dataset,
    theta: float,
    params: KickParams,
    rng: RandomStream,
    trace: bool,
) -> PipelineResult:
    n = dataset.num_sites
    r = params.resolved_r(theta)
    per_iter = _per_iteration_steps(dataset)
    restarts = 0
    iterations = 0
    steps = 0
    traces: list[IterationTrace] | None = [] if trace else None
    while True:
        state = apply_m(zero_state(n + 1), 0)
        steps += 1
        completed = True
        for _ in range(r):
            state = kick_iteration(
                state, dataset, theta, gamma_mode=params.gamma_mode, trace_sink=traces
            )
            iterations += 1
            steps += per_iter
            success, posterior = postselect_zero(state, rng)
            if not success:
                restarts += 1
                if restarts > params.max_restarts:
                    raise RestartCapError(
                        f"exceeded {params.max_restarts} pipeline restarts"
                    )
                completed = False
                break
            state = posterior
        if completed:
            break
    block = state.amps.reshape(2, -1)
    qubit = StateVector(1, np.array([block[0, 0], block[1, 0]]))
    return PipelineResult(
        qubit=qubit,
        r=r,
        restarts=restarts,
        iterations=iterations,
        elementary_steps=steps,
        traces=traces,
    )


def _run_pipeline_fast(
    dataset: Dataset, theta: float, params: KickParams, rng: RandomStream
) -> PipelineResult:
    b0 = complex(branch_kick_amplitudes(dataset, theta, params.gamma_mode)[0])
    b2 = abs(b0) ** 2
    r = params.resolved_r(theta)
    per_iter = _per_iteration_steps(dataset)
    restarts = 0
    iterations = 0
    steps = 0
    while True:
        steps += 1  # ancilla preparation
        completed = True
        b2k = 1.0  # |B0|^(2k) after k survivals
        for _ in range(r):
            p_zero = (1.0 + b2k * b2) / (1.0 + b2k)
            iterations += 1
            steps += per_iter
            if rng.random() >= p_zero:
                restarts += 1
                if restarts > params.max_restarts:
                    raise RestartCapError(
                        f"exceeded {params.max_restarts} pipeline restarts"
                    )
                completed = False
                break
            b2k *= b2
        if completed:
            break
    a1 = b0**r
    norm = math.sqrt(1.0 + abs(a1) ** 2)
    qubit = StateVector(1, np.array([1.0 / norm, a1 / norm]))
    return PipelineResult(
        qubit=qubit,
        r=r,
        restarts=restarts,
        iterations=iterations,
        elementary_steps=steps,
    )


def run_pipeline(
    dataset: Dataset,
    theta: float,
    params: KickParams,
    rng: RandomStream,
    *,
    method: str = "auto",
    trace: bool = False,
) -> PipelineResult:
    """Run r successful iterations, restarting from scratch on any failure.

    Returns the ancilla as a one-site system (|0> + e^(i*Theta_raw)|1>)
    up to a radial shrink, where Theta_raw = r*pi + Theta_signal; the
    deterministic r*pi part is exposed as bookkeeping_phase. method
    "auto" picks the fast engine unless tracing needs the dense one.
    """
    ScaleConfig(theta)
    if method not in ("auto", "fast", "dense"):
        raise ValidationError(f"unknown pipeline method {method!r}")
    if method == "dense" or trace:
        return _run_pipeline_dense(dataset, theta, params, rng, trace)
    return _run_pipeline_fast(dataset, theta, params, rng)


def wrap_angle(phi: float) -> float:
    """Reduce an angle to the principal window (-pi, pi]."""
    w = math.remainder(phi, 2.0 * math.pi)
    return math.pi if w <= -math.pi else w


def exact_phase(qubit: StateVector) -> float:
    """Relative phase of a one-site system, read directly off the amplitudes."""
    if qubit.num_sites != 1:
        raise ValidationError("exact_phase expects a one-site system")
    a0, a1 = qubit.amps
    if abs(a0) < 1e-15 or abs(a1) < 1e-15:
        raise SimulationError("relative phase undefined: a branch amplitude is 0")
    return float(np.angle(a1 * np.conj(a0)))


def readout_phase(
    preparer: Callable[[], StateVector],
    alpha: int,
    rng: RandomStream,
    *,
    on_sample: Callable[[int, int, int], None] | None = None,
) -> tuple[float, float]:
    """Estimate the relative phase of fresh one-site systems by interference.

    Half the budget samples at offset 0 (outcome-0 rate cos^2(Theta/2)
    estimates cos Theta), half after an extra pi/2 rotation (estimates
    sin Theta); atan2 of the pair recovers Theta in (-pi, pi] with the
    sign intact. Returns (Theta_hat, half_width) with half_width =
    3/sqrt(alpha). A radial shrink common to both components (branch
    amplitudes of unequal magnitude) cancels in atan2.
    """
    if alpha < 2:
        raise ValidationError("alpha must be at least 2 to cover both offsets")
    n_first = (alpha + 1) // 2
    counts = (n_first, alpha - n_first)
    zeros = [0, 0]
    trial = 0
    for batch, offset in ((0, 0.0), (1, math.pi / 2.0)):
        # scalar form of (rotate offset, M, measure): identical formulas and
        # the identical one-uniform draw, minus the per-trial register churn
        phase = np.exp(1j * offset)
        for _ in range(counts[batch]):
            qubit = preparer()
            if qubit.num_sites != 1:
                raise ValidationError("preparer must yield one-site systems")
            a0 = qubit.amps[0]
            a1 = qubit.amps[1] * phase
            p_zero = np.abs((a0 + a1) * _SQRT_HALF) ** 2
            p_one = np.abs((a0 - a1) * _SQRT_HALF) ** 2
            u = rng.random()
            if u < p_zero:
                bit = 0
            else:
                # round-off tail: fall back to the only possible outcome
                bit = 1 if p_one > 0.0 else 0
            if bit == 0:
                zeros[batch] += 1
            if on_sample is not None:
                on_sample(trial, batch, bit)
            trial += 1
    cos_hat = 2.0 * zeros[0] / counts[0] - 1.0
    sin_hat = 1.0 - 2.0 * zeros[1] / counts[1]
    theta_hat = math.atan2(sin_hat, cos_hat)
    return theta_hat, READOUT_HALF_WIDTH_COEFF / math.sqrt(alpha)


def estimate_mean_serial(
    dataset: Dataset,
    theta: float,
    params: KickParams,
    rng: RandomStream,
    *,
    method: str = "auto",
    ideal: bool = False,
) -> EstimateReport:
    """Full estimate: alpha pipeline preparations, interference readout,
    r*pi bookkeeping correction, and scaling back to mean units.

    The promise |mu| <= theta^2 keeps the signal phase inside the unwrap
    window; when the corrected phase comes out within UNWRAP_MARGIN of
    the boundary an UnwrapError asks the caller to reduce r. ideal=True
    replaces sampling with a single noise-free phase read (half_width 0,
    alpha recorded as 0).
    """
    ScaleConfig(theta)
    r = params.resolved_r(theta)
    pipe_rng = rng.child(1)
    read_rng = rng.child(0)
    totals = {"steps": 0, "restarts": 0, "preparations": 0}

    def prepare() -> StateVector:
        result = run_pipeline(dataset, theta, params, pipe_rng, method=method)
        totals["steps"] += result.elementary_steps
        totals["restarts"] += result.restarts
        totals["preparations"] += 1
        return result.qubit

    if ideal:
        theta_raw = exact_phase(prepare())
        half_width_phase = 0.0
        alpha_used = 0
    else:
        theta_raw, half_width_phase = readout_phase(prepare, params.alpha, read_rng)
        alpha_used = params.alpha

    theta_signal = wrap_angle(theta_raw - (r % 2) * math.pi)
    if abs(theta_signal) > math.pi - UNWRAP_MARGIN:
        raise UnwrapError(
            f"signal phase {theta_signal:.4f} is within {UNWRAP_MARGIN} of the "
            "wrap boundary; reduce r or theta"
        )
    scale = 2.0 * r * theta
    mu_e = theta_signal / scale

    count = math.ceil(totals["steps"] / totals["preparations"])
    budget = STEP_BUDGET_COEFF * dataset.n * dataset.num_sites / theta**3
    if count > budget:
        raise SimulationError(
            f"per-preparation step count {count} exceeds budget {budget:.0f}"
        )
    return EstimateReport(
        mu_e=float(mu_e),
        theta=float(theta),
        r=r,
        alpha=alpha_used,
        restarts=totals["restarts"],
        elementary_step_count=count,
        seed=rng.seed,
        half_width=float(half_width_phase / scale),
    )


@dataclass
class ScheduleResult:
    """Outcome of the theta-reduction schedule."""

    theta: float
    mu_e: float
    reductions: int
    floored: bool
    history: list[tuple[float, float]] = field(default_factory=list)


def theta_schedule(
    estimator: Callable[[float], float],
    theta0: float = 0.5,
    factor: float = 1.5,
    threshold_coeff: float = 0.1,
    theta_floor: float = THETA_FLOOR,
) -> ScheduleResult:
    """Lower theta by `factor` until the estimate clears threshold_coeff*theta^2.

    Stops at theta_floor (reported via `floored`, not fatal) so a zero
    mean terminates.
    """
    if not (0.0 < theta0 <= 1.0) or factor <= 1.0 or theta_floor <= 0.0:
        raise ValidationError("need 0 < theta0 <= 1, factor > 1, theta_floor > 0")
    theta = theta0
    reductions = 0
    history: list[tuple[float, float]] = []
    while True:
        mu_e = float(estimator(theta))
        history.append((theta, mu_e))
        if abs(mu_e) > threshold_coeff * theta * theta:
            return ScheduleResult(theta, mu_e, reductions, False, history)
        lowered = theta / factor
        if lowered < theta_floor:
            return ScheduleResult(theta, mu_e, reductions, True, history)
        theta = lowered
        reductions += 1


@dataclass
class OracleAggregates:
    """Closed-form per-iteration aggregates from direct summation."""

    a: np.ndarray  # (1/sqrt N) e^(i*gamma_j), the post-phase amplitudes
    w0: complex  # <e^(i*gamma)> = <sqrt(1-x^2)> + i<x> in arcsin mode
    b0: complex  # step-final 0th amplitude <e^(2i*gamma)> - 2<e^(i*gamma)>^2
    zero_failure_probability: float  # 1 - |b0|^2, conditional on the kick branch


def amplitude_oracle(
    dataset: Dataset, theta: float, gamma_mode: str = "arcsin"
) -> OracleAggregates:
    """Exact aggregates for cross-checking traced simulations.

    Both means are plain averages of unit phases, so the branch factor
    b0 = <e^(2i*gamma)> - 2<e^(i*gamma)>^2 is exact for any gamma mode,
    not a truncated expansion.
    """
    gam = _gammas(dataset, theta, gamma_mode)
    e1 = np.exp(1j * gam)
    w0 = complex(np.mean(e1))
    b0 = complex(np.mean(e1 * e1) - 2.0 * w0 * w0)
    return OracleAggregates(
        a=e1 / math.sqrt(dataset.n),
        w0=w0,
        b0=b0,
        zero_failure_probability=max(0.0, 1.0 - abs(b0) ** 2),
    )
