"""Gate set of the processor and the GHZ-creation circuit.

Single-qubit pulses are phased rotations
``exp(-i angle/2 (cos(phase) X + sin(phase) Y))``; the entangling gate is the
geometric phase gate ``G = diag(1, i, i, 1)``. The seeding unitary ``U1`` and
the CNOT-equivalent ``U2`` are built from these as:

* ``U1 = (R(pi/2, pi) x R(pi/2, pi)) G (R(pi/2, 0) x R(pi/2, 0))``
* ``U2 = (1 x R(pi/2, 0)) G (1 x R(pi/2, 3pi/2))`` -- pulses on the target only

Shuttling-induced phases are ``diag(1, e^{i phi})`` and are compensated in
software by frame tracking: later pulses on the qubit get their phase shifted
by ``+phi``, leaving only a final Z rotation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Union

import numpy as np

from .state import DensityMatrix, Operator, PureState, apply_matrix

PI_TIME = 10e-6  # s per pi of pulse area
GATE2_TIME = 100e-6

U1_MATRIX = (
    np.exp(1j * np.pi / 4)
    / np.sqrt(2)
    * np.array(
        [
            [1, 0, 0, 1j],
            [0, 1, -1j, 0],
            [0, -1j, 1, 0],
            [1j, 0, 0, 1],
        ]
    )
)

U2_MATRIX = np.array(
    [
        [0, 1, 0, 0],
        [-1j, 0, 0, 0],
        [0, 0, 1j, 0],
        [0, 0, 0, 1],
    ],
    dtype=complex,
)


class DecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class RotationSpec:
    angle: float
    phase: float = 0.0
    duration: float = None

    def __post_init__(self):
        if not 0.0 <= self.angle < 4 * np.pi:
            raise ValueError(f"pulse area {self.angle!r} outside [0, 4pi)")
        object.__setattr__(self, "phase", float(self.phase) % (2 * np.pi))
        if self.duration is None:
            object.__setattr__(self, "duration", PI_TIME * self.angle / np.pi)

    def shifted(self, dphi: float) -> "RotationSpec":
        return RotationSpec(self.angle, self.phase + dphi)


@dataclass(frozen=True)
class ShuttlePhase:
    ion: str
    phi: float


def gate_g() -> Operator:
    return Operator(np.diag([1, 1j, 1j, 1]), unitary=True, name="G")


def rot(spec: Union[RotationSpec, float], phase: float = None) -> Operator:
    """Phased single-qubit rotation; accepts a spec or ``(angle, phase)``."""
    if not isinstance(spec, RotationSpec):
        spec = RotationSpec(spec, 0.0 if phase is None else phase)
    a, p = spec.angle, spec.phase
    c, s = np.cos(a / 2), np.sin(a / 2)
    m = np.array(
        [
            [c, -1j * s * np.exp(-1j * p)],
            [-1j * s * np.exp(1j * p), c],
        ]
    )
    return Operator(m, unitary=True, name=f"R({a:.4g},{p:.4g})")


def shuttle_phase_gate(phi: float) -> Operator:
    return Operator(np.diag([1.0, np.exp(1j * phi)]), unitary=True, name=f"Z({phi:.4g})")


def ghz_target(n: int, theta: float) -> PureState:
    if n < 2:
        raise ValueError("a GHZ state needs at least 2 qubits")
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = 1 / np.sqrt(2)
    amps[-1] = np.exp(1j * theta) / np.sqrt(2)
    return PureState(amps)


# -- circuits ---------------------------------------------------------------


@dataclass(frozen=True)
class Pulse:
    """Laser pulse with the same spec on every listed qubit (simultaneous)."""

    qubits: tuple
    spec: RotationSpec


@dataclass(frozen=True)
class Entangle:
    qubits: tuple


@dataclass(frozen=True)
class FramePhase:
    """Z phase ``diag(1, e^{i phi})`` on one qubit (shuttling or virtual)."""

    qubit: int
    phi: float


Step = Union[Pulse, Entangle, FramePhase]


def step_matrix(step: Step) -> tuple:
    """``(matrix, targets)`` pairs for a step (pulses expand per qubit)."""
    if isinstance(step, Pulse):
        m = rot(step.spec).matrix
        return [(m, (q,)) for q in step.qubits]
    if isinstance(step, Entangle):
        return [(gate_g().matrix, tuple(step.qubits))]
    if isinstance(step, FramePhase):
        return [(shuttle_phase_gate(step.phi).matrix, (step.qubit,))]
    raise TypeError(f"unknown circuit step {step!r}")


def run_circuit(state, steps: Iterable[Step]):
    """Apply circuit steps to a pure state or density matrix."""
    n = state.n_qubits
    data = state.amplitudes if isinstance(state, PureState) else state.elements
    for step in steps:
        for m, targets in step_matrix(step):
            data = apply_matrix(data, m, targets, n)
    if isinstance(state, PureState):
        return PureState(data / np.linalg.norm(data))
    return DensityMatrix(0.5 * (data + data.conj().T))


def circuit_unitary(steps: Sequence[Step], n: int) -> np.ndarray:
    u = np.eye(2**n, dtype=complex)
    for step in steps:
        for m, targets in step_matrix(step):
            u = np.stack([apply_matrix(u[:, j], m, targets, n) for j in range(2**n)], axis=1)
    return u


def global_phase_distance(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - e^{ic} b| with the phase ``c`` fixed on the largest entry of ``b``."""
    i = np.argmax(np.abs(b))
    ph = a.flat[i] / b.flat[i]
    ph /= abs(ph)
    return float(np.max(np.abs(a - ph * b)))


def u1_steps(a: int = 0, b: int = 1) -> List[Step]:
    return [
        Pulse((a, b), RotationSpec(np.pi / 2, 0.0)),
        Entangle((a, b)),
        Pulse((a, b), RotationSpec(np.pi / 2, np.pi)),
    ]


def u2_steps(control: int = 0, target: int = 1) -> List[Step]:
    return [
        Pulse((target,), RotationSpec(np.pi / 2, 3 * np.pi / 2)),
        Entangle((control, target)),
        Pulse((target,), RotationSpec(np.pi / 2, 0.0)),
    ]


def _checked(steps: List[Step], reference: np.ndarray, name: str) -> Operator:
    u = circuit_unitary(steps, 2)
    err = global_phase_distance(u, reference)
    if err > 1e-10:
        raise DecompositionError(f"{name} decomposition deviates from reference by {err:.3g}")
    return Operator(u, unitary=True, name=name)


def compose_u1() -> Operator:
    return _checked(u1_steps(0, 1), U1_MATRIX, "U1")


def compose_u2() -> Operator:
    return _checked(u2_steps(0, 1), U2_MATRIX, "U2")


def ghz_circuit() -> List[Step]:
    """U1 on (A,B), then U2 on (B,C), then U2 on (C,D)."""
    return u1_steps(0, 1) + u2_steps(1, 2) + u2_steps(2, 3)


def gate_time(steps: Iterable[Step]) -> float:
    total = 0.0
    for step in steps:
        if isinstance(step, Pulse):
            total += step.spec.duration
        elif isinstance(step, Entangle):
            total += GATE2_TIME
    return total


def track_frames(steps: Iterable[Step], n: int) -> tuple:
    """Compensate known Z phases by shifting later pulse phases (frame tracking).

    ``FramePhase`` steps are physical and stay in the circuit. Since
    ``R(psi + f) Z(f) = Z(f) R(psi)`` and ``Z`` commutes with ``G``, shifting
    every later pulse on that qubit by ``+f`` makes the circuit equal to the
    phase-free one followed by ``Z(residual[q])`` on each qubit. Returns
    ``(steps, residual)``. Simultaneous pulses whose qubits carry different
    frames are split.
    """
    frame = np.zeros(n)
    out: List[Step] = []
    for step in steps:
        if isinstance(step, FramePhase):
            frame[step.qubit] += step.phi
            out.append(step)
        elif isinstance(step, Pulse):
            shifts = {float(frame[q]) for q in step.qubits}
            if len(shifts) > 1:
                out.extend(Pulse((q,), step.spec.shifted(frame[q])) for q in step.qubits)
            else:
                out.append(Pulse(step.qubits, step.spec.shifted(shifts.pop())))
        else:
            out.append(step)
    return out, frame
