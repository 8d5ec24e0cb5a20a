"""Execute compiled schedules on the state engine with the configured noise."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .gates import Entangle, FramePhase, Pulse, RotationSpec, step_matrix
from .noise import (
    Composite,
    NoiseParams,
    WhiteNoise,
    apply_collective_dephasing,
    default_dt,
    depolarize,
    gate_error_probability,
    sample_trajectory,
    white_dephasing_channel,
)
from .state import DensityMatrix, PureState, apply_matrix
from .trap import (
    GHZ_IONS,
    IonState,
    OpKind,
    Schedule,
    ion_timeline,
    pulse_times,
    storage_duration,
)


@dataclass
class ExecutionResult:
    rho: DensityMatrix
    ions: Dict[str, IonState]
    shuttle_phases: Dict[str, float]  # actual Z phase per ion over the executed block
    gate2_quanta: List[float]


def white_rate(model) -> float:
    """Total white-noise rate contained in a dephasing model."""
    if isinstance(model, WhiteNoise):
        return model.rate
    if isinstance(model, Composite):
        return sum(white_rate(p) for p in model.parts)
    return 0.0


def execute_schedule(
    s: Schedule,
    initial: Sequence[IonState],
    noise: NoiseParams,
    block: Optional[str] = "logic",
    qubits: Sequence[str] = GHZ_IONS,
    initial_bits: str = None,
    logic_dephasing: bool = False,
) -> ExecutionResult:
    """Run the quantum operations of one schedule block on a density matrix.

    Transports apply the true shuttle phases ``diag(1, e^{i phi})``; gates
    are followed by their depolarizing error (entangling-gate error grows
    with the mean motional quanta of the pair). With ``logic_dephasing`` the
    white part of the dephasing model acts during every op of the block.
    Ops outside ``block`` only update the motional bookkeeping.
    """
    n = len(qubits)
    index = {q: i for i, q in enumerate(qubits)}
    bits = "1" * n if initial_bits is None else initial_bits
    rho = PureState.basis(bits).to_density().elements
    rate = white_rate(noise.dephasing) if logic_dephasing else 0.0
    phases = {q: 0.0 for q in qubits}
    quanta = []
    ions = {i.id: i for i in initial}
    for entry in ion_timeline(s, initial, noise):
        op = entry.op
        ions = entry.ions
        if block is not None and op.block != block:
            continue
        steps = []
        if op.kind is OpKind.TRANSPORT:
            for a, phi in entry.phases.items():
                if a in index:
                    steps.append(FramePhase(index[a], phi))
                    phases[a] += phi
        elif op.kind is OpKind.GATE1:
            spec = RotationSpec(op.params["angle"], op.params["phase"])
            steps.append(Pulse(tuple(index[a] for a in op.actors), spec))
        elif op.kind is OpKind.GATE2:
            steps.append(Entangle(tuple(index[a] for a in op.actors)))
        for step in steps:
            for m, targets in step_matrix(step):
                rho = apply_matrix(rho, m, targets, n)
        dm = DensityMatrix(0.5 * (rho + rho.conj().T))
        if op.kind is OpKind.GATE1 and noise.gate1_error:
            for a in op.actors:
                dm = depolarize(dm, noise.gate1_error, (index[a],))
        elif op.kind is OpKind.GATE2:
            q = float(np.mean([ions[a].radial_quanta for a in op.actors]))
            quanta.append(q)
            p = gate_error_probability("Gate2", noise, q)
            dm = depolarize(dm, p, tuple(index[a] for a in op.actors))
        if rate and op.duration_us:
            dm = white_dephasing_channel(dm, rate, op.duration)
        rho = dm.elements
    return ExecutionResult(DensityMatrix(rho), ions, phases, quanta)


def store_with_decoupling(
    state,
    storage: Optional[Schedule],
    model,
    storage_time: float,
    mc_shots: int,
    rng_seed=None,
    offsets: Optional[Sequence[float]] = None,
    qubits: Sequence[str] = GHZ_IONS,
) -> DensityMatrix:
    """Monte-Carlo average of common dephasing over a storage interval.

    ``storage`` is a compiled rephasing schedule whose pi-pulse times toggle
    each qubit's phase, or ``None`` for free evolution. The pulses are only
    accounted for in the toggling frame (an odd number of them maps the GHZ
    state onto itself up to relabelling).
    """
    if storage_time <= 0:
        return state.to_density() if isinstance(state, PureState) else state
    if storage is not None:
        if abs(storage_duration(storage) - storage_time) > 1e-9:
            raise ValueError("storage schedule does not match the storage time")
        times = pulse_times(storage)
        per_qubit = {i: times.get(q, []) for i, q in enumerate(qubits)}
        n_pulses = max((len(v) for v in per_qubit.values()), default=0)
    else:
        per_qubit, n_pulses = {}, 0
    dt = default_dt(storage_time, n_pulses)
    traj = sample_trajectory(model, storage_time, dt, rng_seed, n_shots=mc_shots, offsets=offsets)
    return apply_collective_dephasing(state, traj, per_qubit)
