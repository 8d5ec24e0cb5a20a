"""Segmented-trap register model and schedule compiler.

The trap is a 1-D chain of segments with a single laser interaction zone
(LIZ). Ions are moved as *units*: a single ion, or a merged pair sharing one
segment. A separation at the LIZ sends the pair's first ion to ``LIZ-1`` and
the second to ``LIZ+1``; a merge is the exact reverse.

Validation rules (first violation is reported):

``a``  laser operations (Gate1, Gate2, Cool, Shelve, Detect): the ions in
       the LIZ are exactly the actors
``b``  Separate/Merge only at the LIZ, with the geometry above
``c``  no two unpaired ions share a segment
``d``  Gate2 actors are a merged pair
``e``  every ion is shelved before any fluorescence detection
``structure``  unknown ions, partial pairs, out-of-range moves, bad params

Serialized schedules have one op per line::

    kind,actors,params,duration_us
    Transport,A+B,steps=-6;block=cooling,180.0
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .gates import GATE2_TIME, PI_TIME, RotationSpec, ghz_circuit, u1_steps, u2_steps
from .noise import NoiseParams

TRANSPORT_STEP_US = 30.0
SPLIT_US = 160.0
GATE2_US = GATE2_TIME * 1e6
PI_PULSE_US = PI_TIME * 1e6
COOL_PULSE_US = 15.0
COOL_PULSES_PER_MODE = 40
SHELVE_US = 30.0
DETECT_US = 1200.0
RAMSEY_WAIT_US = 5000.0

GHZ_IONS = ("A", "B", "C", "D")
LASER_KINDS = {"Gate1", "Gate2", "Cool", "Shelve", "Detect"}


class OpKind(str, Enum):
    TRANSPORT = "Transport"
    SEPARATE = "Separate"
    MERGE = "Merge"
    GATE1 = "Gate1"
    GATE2 = "Gate2"
    COOL = "Cool"
    SHELVE = "Shelve"
    DETECT = "Detect"
    WAIT = "Wait"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class TrapLayout:
    n_segments: int = 32
    liz_index: int = 20
    pitch: float = 200e-6

    def __post_init__(self):
        if not 0 < self.liz_index < self.n_segments:
            raise ValueError(f"LIZ index {self.liz_index} outside (0, {self.n_segments})")


@dataclass(frozen=True)
class IonState:
    id: str
    segment: int
    paired_with: Optional[str] = None
    radial_quanta: float = 0.0
    shuttle_phase_accrued: float = 0.0

    def __post_init__(self):
        if self.radial_quanta < 0:
            raise ValueError("radial_quanta must be >= 0")


@dataclass(frozen=True)
class ScheduleOp:
    kind: OpKind
    actors: tuple = ()
    params: dict = field(default_factory=dict)
    duration_us: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", OpKind(self.kind))
        object.__setattr__(self, "actors", tuple(self.actors))
        if self.duration_us < 0:
            raise ValueError("duration must be >= 0")

    @property
    def duration(self) -> float:
        """Seconds."""
        return self.duration_us * 1e-6

    @property
    def block(self) -> Optional[str]:
        return self.params.get("block")


@dataclass(frozen=True)
class Schedule:
    ops: tuple
    layout: TrapLayout = field(default_factory=TrapLayout)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))

    def __len__(self):
        return len(self.ops)

    def __add__(self, other: "Schedule") -> "Schedule":
        if other.layout != self.layout:
            raise ValueError("cannot concatenate schedules on different layouts")
        return Schedule(self.ops + other.ops, self.layout)

    @property
    def duration(self) -> float:
        return sum(op.duration_us for op in self.ops) * 1e-6

    def block(self, name: str) -> "Schedule":
        return Schedule([op for op in self.ops if op.block == name], self.layout)


# -- op constructors --------------------------------------------------------


def _p(block, **kw) -> dict:
    if block is not None:
        kw["block"] = block
    return kw


def transport(actors, steps: int, block=None) -> ScheduleOp:
    return ScheduleOp(OpKind.TRANSPORT, actors, _p(block, steps=int(steps)), TRANSPORT_STEP_US * abs(int(steps)))


def separate(x: str, y: str, block=None) -> ScheduleOp:
    return ScheduleOp(OpKind.SEPARATE, (x, y), _p(block), SPLIT_US)


def merge(x: str, y: str, block=None) -> ScheduleOp:
    return ScheduleOp(OpKind.MERGE, (x, y), _p(block), SPLIT_US)


def gate1(actors, spec: RotationSpec, block=None, **extra) -> ScheduleOp:
    params = _p(block, angle=float(spec.angle), phase=float(spec.phase), **extra)
    return ScheduleOp(OpKind.GATE1, actors, params, PI_PULSE_US * spec.angle / np.pi)


def gate2(x: str, y: str, block=None) -> ScheduleOp:
    return ScheduleOp(OpKind.GATE2, (x, y), _p(block), GATE2_US)


def cool(actors, pulses: Optional[int] = None, block=None) -> ScheduleOp:
    """Sideband cooling plus spin initialisation; 40 pulses per radial mode."""
    actors = tuple(actors)
    if pulses is None:
        pulses = COOL_PULSES_PER_MODE * 2 * len(actors)
    return ScheduleOp(OpKind.COOL, actors, _p(block, pulses=int(pulses)), COOL_PULSE_US * pulses)


def shelve(ion: str, block=None) -> ScheduleOp:
    return ScheduleOp(OpKind.SHELVE, (ion,), _p(block), SHELVE_US)


def detect(ion: str, block=None) -> ScheduleOp:
    return ScheduleOp(OpKind.DETECT, (ion,), _p(block), DETECT_US)


def wait(duration_us: float, block=None, **extra) -> ScheduleOp:
    return ScheduleOp(OpKind.WAIT, (), _p(block, **extra), float(duration_us))


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    op_index: int
    rule: str
    message: str

    def __str__(self):
        return f"op {self.op_index}: rule ({self.rule}) {self.message}"


@dataclass
class ValidationReport:
    passed: bool
    violation: Optional[Violation]
    final_ions: Dict[str, IonState]

    def __bool__(self):
        return self.passed

    def summary(self) -> str:
        return "PASS" if self.passed else f"FAIL {self.violation}"


class ScheduleError(Exception):
    def __init__(self, violation: Violation):
        super().__init__(str(violation))
        self.violation = violation


def initial_ghz_ions(layout: TrapLayout = TrapLayout()) -> List[IonState]:
    """Pair A,B in the LIZ and pair C,D six segments further along."""
    L = layout.liz_index
    return [
        IonState("A", L, "B"),
        IonState("B", L, "A"),
        IonState("C", L + 6, "D"),
        IonState("D", L + 6, "C"),
    ]


def _apply_op(ions: Dict[str, IonState], op: ScheduleOp, layout: TrapLayout, readout: Dict[str, str]):
    """Advance positions by one op. Returns ``(rule, message)`` on violation."""
    L = layout.liz_index
    for a in op.actors:
        if a not in ions:
            return "structure", f"unknown ion {a!r}"
    if len(set(op.actors)) != len(op.actors):
        return "structure", "duplicate actor"
    kind = op.kind

    if kind is OpKind.TRANSPORT:
        if not op.actors:
            return "structure", "transport without actors"
        unit = set(op.actors)
        for a in op.actors:
            partner = ions[a].paired_with
            if partner is not None and partner not in unit:
                return "structure", f"transport moves {a} without its partner {partner}"
        if len(unit) > 2 or len({ions[a].segment for a in unit}) != 1:
            return "structure", "transport actors are not a single ion or merged pair"
        steps = op.params.get("steps")
        if not isinstance(steps, int):
            return "structure", "transport needs an integer 'steps' parameter"
        dest = ions[op.actors[0]].segment + steps
        if not 0 <= dest < layout.n_segments:
            return "structure", f"transport to segment {dest} outside the trap"
        for a in op.actors:
            ions[a] = replace(ions[a], segment=dest)

    elif kind in (OpKind.SEPARATE, OpKind.MERGE):
        if len(op.actors) != 2:
            return "structure", f"{kind} needs exactly two ions"
        x, y = (ions[a] for a in op.actors)
        if L - 1 < 0 or L + 1 >= layout.n_segments:
            return "b", "no room beside the LIZ"
        if kind is OpKind.SEPARATE:
            if x.paired_with != y.id or x.segment != L or y.segment != L:
                return "b", f"separation of {x.id},{y.id} needs a merged pair in the LIZ"
            ions[x.id] = replace(x, segment=L - 1, paired_with=None)
            ions[y.id] = replace(y, segment=L + 1, paired_with=None)
        else:
            if x.paired_with is not None or y.paired_with is not None:
                return "b", "merge actors must be unpaired"
            if x.segment != L - 1 or y.segment != L + 1:
                return "b", f"merge of {x.id},{y.id} needs them at segments {L - 1} and {L + 1}"
            ions[x.id] = replace(x, segment=L, paired_with=y.id)
            ions[y.id] = replace(y, segment=L, paired_with=x.id)

    elif kind.value in LASER_KINDS:
        if not op.actors:
            return "structure", f"{kind} without actors"
        if kind is OpKind.GATE2:
            if len(op.actors) != 2:
                return "d", "entangling gate needs exactly two ions"
            x, y = (ions[a] for a in op.actors)
            if x.paired_with != y.id or x.segment != y.segment:
                return "d", f"entangling gate on {x.id},{y.id} which are not a merged pair"
        in_liz = {i.id for i in ions.values() if i.segment == L}
        if in_liz != set(op.actors):
            outside = sorted(set(op.actors) - in_liz)
            extra = sorted(in_liz - set(op.actors))
            msg = f"{kind} actors outside LIZ: {outside}" if outside else f"{kind} would also hit {extra}"
            return "a", msg
        if kind is OpKind.GATE1:
            if "angle" not in op.params:
                return "structure", "Gate1 needs an 'angle' parameter"
        if kind is OpKind.COOL:
            for a in op.actors:
                readout[a] = "ready"
        if kind is OpKind.SHELVE:
            for a in op.actors:
                readout[a] = "shelved"
        if kind is OpKind.DETECT:
            unshelved = sorted(k for k, v in readout.items() if v == "ready")
            if unshelved:
                return "e", f"detection of {op.actors} before {unshelved} shelved"
            for a in op.actors:
                readout[a] = "detected"

    elif kind is OpKind.WAIT:
        pass

    occupied: Dict[int, List[str]] = {}
    for ion in ions.values():
        occupied.setdefault(ion.segment, []).append(ion.id)
    for seg, ids in occupied.items():
        if len(ids) > 2 or (len(ids) == 2 and ions[ids[0]].paired_with != ids[1]):
            return "c", f"unpaired ions {sorted(ids)} share segment {seg}"
    return None


def validate_schedule(s: Schedule, initial: Iterable[IonState]) -> ValidationReport:
    ions = {i.id: i for i in initial}
    readout = {k: "ready" for k in ions}
    for idx, op in enumerate(s.ops):
        bad = _apply_op(ions, op, s.layout, readout)
        if bad is not None:
            return ValidationReport(False, Violation(idx, *bad), ions)
    return ValidationReport(True, None, ions)


def inverse_schedule(s: Schedule) -> Schedule:
    """Formal inverse: reversed order, transports negated, split <-> merge."""
    out = []
    for op in reversed(s.ops):
        if op.kind is OpKind.TRANSPORT:
            op = replace(op, params={**op.params, "steps": -op.params["steps"]})
        elif op.kind is OpKind.SEPARATE:
            op = replace(op, kind=OpKind.MERGE)
        elif op.kind is OpKind.MERGE:
            op = replace(op, kind=OpKind.SEPARATE)
        out.append(op)
    return Schedule(out, s.layout)


# -- compiler ---------------------------------------------------------------


class _Planner:
    """Emits ops while tracking ion positions; ion order never changes."""

    def __init__(self, layout: TrapLayout, ions: Sequence[IonState], clearance: int = 4):
        self.layout = layout
        self.L = layout.liz_index
        self.clearance = max(2, int(clearance))
        self.pos = {i.id: i.segment for i in ions}
        self.partner = {i.id: i.paired_with for i in ions}
        self.order = sorted(self.pos, key=lambda k: (self.pos[k], [i.id for i in ions].index(k)))
        self.ops: List[ScheduleOp] = []
        self.block = None

    def units(self) -> List[tuple]:
        out, seen = [], set()
        for ion in self.order:
            if ion in seen:
                continue
            p = self.partner[ion]
            unit = (ion, p) if p is not None else (ion,)
            seen.update(unit)
            out.append(unit)
        return out

    def unit_of(self, ion: str) -> tuple:
        return next(u for u in self.units() if ion in u)

    def emit(self, op: ScheduleOp):
        self.ops.append(op)

    def move(self, unit: tuple, to: int):
        steps = to - self.pos[unit[0]]
        if not 0 <= to < self.layout.n_segments:
            raise ValueError(f"layout too small: cannot park {unit} at segment {to}")
        if steps:
            self.emit(transport(unit, steps, self.block))
            for a in unit:
                self.pos[a] = to

    def arrange(self, targets: Mapping[tuple, int]):
        units = self.units()
        left = [u for u in units if targets.get(u, self.pos[u[0]]) < self.pos[u[0]]]
        right = [u for u in units if targets.get(u, self.pos[u[0]]) > self.pos[u[0]]]
        for u in sorted(left, key=lambda u: self.pos[u[0]]):
            self.move(u, targets[u])
        for u in sorted(right, key=lambda u: -self.pos[u[0]]):
            self.move(u, targets[u])

    def _spread(self, units, i_lo: int, i_hi: int, lo: int, hi: int, fixed: Dict[tuple, int]):
        """Targets pushing units left of index ``i_lo`` to <= lo and right of ``i_hi`` to >= hi."""
        targets = dict(fixed)
        bound = lo
        for j in range(i_lo - 1, -1, -1):
            targets[units[j]] = min(self.pos[units[j][0]], bound)
            bound = targets[units[j]] - 1
        bound = hi
        for j in range(i_hi + 1, len(units)):
            targets[units[j]] = max(self.pos[units[j][0]], bound)
            bound = targets[units[j]] + 1
        return targets

    def isolate(self, ion_or_unit):
        unit = self.unit_of(ion_or_unit) if isinstance(ion_or_unit, str) else tuple(ion_or_unit)
        units = self.units()
        i = units.index(unit)
        c = self.clearance
        self.arrange(self._spread(units, i, i, self.L - c, self.L + c, {unit: self.L}))

    def separate(self, x: str, y: str):
        self.isolate((x, y))
        self.emit(separate(x, y, self.block))
        self.pos[x], self.pos[y] = self.L - 1, self.L + 1
        self.partner[x] = self.partner[y] = None

    def merge(self, x: str, y: str):
        units = self.units()
        i, j = units.index((x,)), units.index((y,))
        if j != i + 1:
            raise ValueError(f"{x} and {y} are not neighbours")
        c = self.clearance
        fixed = {(x,): self.L - 1, (y,): self.L + 1}
        self.arrange(self._spread(units, i, j, self.L - c, self.L + c, fixed))
        self.emit(merge(x, y, self.block))
        self.pos[x] = self.pos[y] = self.L
        self.partner[x], self.partner[y] = y, x

    def pulse(self, ions: tuple, spec: RotationSpec, **extra):
        unit = self.unit_of(ions[0])
        if set(unit) != set(ions):
            raise ValueError(f"cannot address {ions} without {unit}")
        self.isolate(unit)
        self.emit(gate1(unit if len(ions) > 1 else ions, spec, self.block, **extra))

    def entangle(self, x: str, y: str):
        if self.partner[x] != y:
            self.merge(x, y)
        self.isolate((x, y))
        self.emit(gate2(x, y, self.block))

    def ion_states(self) -> List[IonState]:
        return [IonState(k, self.pos[k], self.partner[k]) for k in self.order]


def _logic_sequence(p: _Planner):
    """U1 on (A,B), U2 on (B,C), U2 on (C,D) with the shuttles each needs."""
    ab = u1_steps()
    p.pulse(("A", "B"), ab[0].spec)
    p.entangle("A", "B")
    p.pulse(("A", "B"), ab[2].spec)
    p.separate("A", "B")
    for control, target in (("B", "C"), ("C", "D")):
        pre, _, post = u2_steps()
        p.pulse((target,), pre.spec)
        p.entangle(control, target)
        p.separate(control, target)
        p.pulse((target,), post.spec)


def _apply_phase_compensation(ops: List[ScheduleOp], profile: np.ndarray, start_pos: Dict[str, int]) -> List[ScheduleOp]:
    """Shift Gate1 phases by the calibrated shuttle phases accumulated so far."""
    pos = dict(start_pos)
    frame = {k: 0.0 for k in pos}
    out = []
    for op in ops:
        if op.kind is OpKind.TRANSPORT:
            for a in op.actors:
                frame[a] += path_phase(profile, pos[a], pos[a] + op.params["steps"])
                pos[a] += op.params["steps"]
        elif op.kind is OpKind.SEPARATE:
            x, y = op.actors
            pos[x] -= 1
            pos[y] += 1
        elif op.kind is OpKind.MERGE:
            x, y = op.actors
            pos[x] += 1
            pos[y] -= 1
        elif op.kind is OpKind.GATE1:
            shifts = {frame[a] for a in op.actors}
            if len(shifts) > 1:
                raise ValueError(f"simultaneous pulse on {op.actors} needs different frame phases")
            spec = RotationSpec(op.params["angle"], op.params["phase"]).shifted(shifts.pop())
            op = replace(op, params={**op.params, "phase": float(spec.phase)})
        out.append(op)
    return out


def path_phase(profile: np.ndarray, start: int, end: int) -> float:
    lo, hi = sorted((start, end))
    return float(np.sum(profile[lo:hi]))


def _check_layout(layout: TrapLayout):
    L = layout.liz_index
    if L - 6 < 0 or L + 6 >= layout.n_segments:
        raise ValueError("layout too small: need segments LIZ-6 .. LIZ+6 (14-26 for LIZ 20)")


def compile_ghz_schedule(
    layout: TrapLayout = TrapLayout(),
    clearance: int = 4,
    cooling_order: Sequence[str] = ("AB", "C", "D"),
    phase_profile: Optional[np.ndarray] = None,
) -> Schedule:
    """Cooling block followed by the GHZ quantum-logic block.

    ``clearance`` is the minimum distance (segments) of spectator ions from
    the LIZ during laser operations. ``phase_profile`` holds the calibrated
    per-edge shuttle phases; Gate1 phases are shifted to compensate them.
    """
    _check_layout(layout)
    L = layout.liz_index
    p = _Planner(layout, initial_ghz_ions(layout), clearance)

    p.block = "cooling"
    p.move(("A", "B"), L - 6)
    p.move(("C", "D"), L)
    p.separate("C", "D")
    units = {"AB": ("A", "B"), "C": ("C",), "D": ("D",)}
    for name in cooling_order:
        p.isolate(units[name])
        p.emit(cool(units[name], block="cooling"))
    start_pos = dict(p.pos)
    n_cooling = len(p.ops)

    p.block = "logic"
    _logic_sequence(p)
    final = {("A",): L - 6, ("B",): L - 4, ("C",): L - 2, ("D",): L + 3}
    p.arrange(final)

    ops = p.ops
    if phase_profile is not None:
        ops = ops[:n_cooling] + _apply_phase_compensation(ops[n_cooling:], np.asarray(phase_profile), start_pos)
    return Schedule(ops, layout)


def final_ions(s: Schedule, initial: Iterable[IonState]) -> List[IonState]:
    report = validate_schedule(s, initial)
    if not report:
        raise ScheduleError(report.violation)
    return list(report.final_ions.values())


def compile_dd_storage(
    storage_time: float,
    n_pi: int,
    layout: TrapLayout = TrapLayout(),
    ions: Optional[Sequence[IonState]] = None,
    clearance: int = 4,
    park: Tuple[int, int] = None,
) -> Schedule:
    """Rephasing block: pair up, park, alternate pairs into the LIZ for pi pulses.

    Pair ``A,B`` receives its pulses centred ``delta/2`` before the CPMG
    times ``(2k-1) T / (2 N)`` and pair ``C,D`` ``delta/2`` after, where
    ``delta`` is the minimum pulse-to-pulse time of the alternating visits.
    ``storage_time`` is measured between the ``storage_start`` and
    ``storage_end`` markers (zero-length waits).
    """
    n_pi = int(n_pi)
    if n_pi < 1 or n_pi % 2 == 0:
        raise ValueError(f"N_pi must be odd and >= 1, got {n_pi}")
    L = layout.liz_index
    park = (L - 1, L + 3) if park is None else park
    if ions is None:
        ions = final_ions(compile_ghz_schedule(layout, clearance), initial_ghz_ions(layout))
    p = _Planner(layout, ions, clearance)
    p.block = "rephasing"
    p.merge("A", "B")
    p.merge("C", "D")
    ab, cd = ("A", "B"), ("C", "D")
    p.arrange({ab: park[0], cd: park[1]})
    p.emit(wait(0.0, p.block, marker="storage_start"))

    pi = RotationSpec(np.pi, 0.0)
    pulse_us = PI_PULSE_US
    ab_leg = TRANSPORT_STEP_US * abs(L - park[0])
    cd_leg = TRANSPORT_STEP_US * abs(L - park[1])
    delta = pulse_us + ab_leg + cd_leg
    T = storage_time * 1e6
    now = 0.0

    def visit(unit, leg_steps, centre):
        nonlocal now
        depart = centre - pulse_us / 2 - TRANSPORT_STEP_US * abs(leg_steps)
        if depart < now - 1e-6:
            raise ValueError(
                f"storage time {storage_time} s too short for {n_pi} pulses with pair shuttling"
            )
        if depart > now:
            p.emit(wait(depart - now, p.block))
        p.move(unit, L)
        p.emit(gate1(unit, pi, p.block, dd=1))
        p.move(unit, L - leg_steps)
        now = max(now, depart) + 2 * TRANSPORT_STEP_US * abs(leg_steps) + pulse_us

    for k in range(1, n_pi + 1):
        t_k = (2 * k - 1) * T / (2 * n_pi)
        visit(ab, L - park[0], t_k - delta / 2)
        visit(cd, L - park[1], t_k + delta / 2)
    if now > T + 1e-6:
        raise ValueError(f"storage time {storage_time} s too short for {n_pi} pulses with pair shuttling")
    if T > now:
        p.emit(wait(T - now, p.block))
    p.emit(wait(0.0, p.block, marker="storage_end"))
    p.separate("A", "B")
    p.separate("C", "D")
    return Schedule(p.ops, layout)


def compile_analysis(
    layout: TrapLayout = TrapLayout(),
    ions: Optional[Sequence[IonState]] = None,
    clearance: int = 4,
    order: Sequence[str] = GHZ_IONS,
) -> Schedule:
    """Tomography pulses, shelving of every ion, then detection of every ion,
    the Ramsey field-tracking measurement on ion A, and the reset to the
    initial pair positions."""
    L = layout.liz_index
    if ions is None:
        ions = final_ions(compile_ghz_schedule(layout, clearance), initial_ghz_ions(layout))
    p = _Planner(layout, ions, clearance)
    p.block = "analysis"
    for ion in order:
        p.pulse((ion,), RotationSpec(np.pi / 2), tomo=1)
    for ion in order:
        p.isolate((ion,))
        p.emit(shelve(ion, p.block))
    for ion in order:
        p.isolate((ion,))
        p.emit(detect(ion, p.block))
    p.block = "tracking"
    p.pulse(("A",), RotationSpec(np.pi / 2))
    p.emit(wait(RAMSEY_WAIT_US, p.block))
    p.pulse(("A",), RotationSpec(np.pi / 2), ramsey=1)
    p.emit(detect("A", p.block))
    p.block = "reset"
    p.merge("A", "B")
    p.merge("C", "D")
    p.arrange({("A", "B"): L, ("C", "D"): L + 6})
    return Schedule(p.ops, layout)


def compile_full_sequence(
    layout: TrapLayout = TrapLayout(),
    storage: Optional[Tuple[float, int]] = None,
    clearance: int = 4,
    phase_profile: Optional[np.ndarray] = None,
) -> Schedule:
    """One complete repetition: cooling, logic, optional rephasing, analysis."""
    init = initial_ghz_ions(layout)
    s = compile_ghz_schedule(layout, clearance, phase_profile=phase_profile)
    if storage is not None:
        s = s + compile_dd_storage(storage[0], storage[1], layout, final_ions(s, init), clearance)
    return s + compile_analysis(layout, final_ions(s, init), clearance)


# -- timing and transport effects -------------------------------------------


@dataclass
class TimingReport:
    total: float
    per_kind: Dict[str, float]
    per_block: Dict[str, float]
    gate_time: float
    logic_time: float
    gate_fraction: float


def timing_report(s: Schedule) -> TimingReport:
    """Totals in seconds; the gate fraction is taken over the logic block
    (or the whole schedule if no op is labelled ``logic``)."""
    per_kind: Dict[str, float] = {}
    per_block: Dict[str, float] = {}
    for op in s.ops:
        per_kind[op.kind.value] = per_kind.get(op.kind.value, 0.0) + op.duration_us
        b = op.block or "unlabelled"
        per_block[b] = per_block.get(b, 0.0) + op.duration_us
    logic = [op for op in s.ops if op.block == "logic"] or list(s.ops)
    logic_us = sum(op.duration_us for op in logic)
    gate_us = sum(op.duration_us for op in logic if op.kind in (OpKind.GATE1, OpKind.GATE2))
    return TimingReport(
        total=sum(per_kind.values()) * 1e-6,
        per_kind={k: v * 1e-6 for k, v in per_kind.items()},
        per_block={k: v * 1e-6 for k, v in per_block.items()},
        gate_time=gate_us * 1e-6,
        logic_time=logic_us * 1e-6,
        gate_fraction=gate_us / logic_us if logic_us > 0 else 0.0,
    )


@dataclass
class TimelineEntry:
    index: int
    op: ScheduleOp
    start: float  # s
    ions: Dict[str, IonState]  # after the op
    phases: Dict[str, float]  # shuttle phase picked up during the op


def ion_timeline(s: Schedule, ions: Iterable[IonState], noise: NoiseParams) -> Iterator[TimelineEntry]:
    """Step through a schedule tracking motional quanta and shuttle phases."""
    state = {i.id: i for i in ions}
    profile = noise.edge_profile(s.layout.n_segments)
    L = s.layout.liz_index
    t = 0.0
    for idx, op in enumerate(s.ops):
        phases: Dict[str, float] = {}
        heat = noise.heating_rate * op.duration
        for k, ion in state.items():
            state[k] = replace(ion, radial_quanta=ion.radial_quanta + heat)
        if op.kind is OpKind.TRANSPORT:
            steps = op.params["steps"]
            for a in op.actors:
                ion = state[a]
                phi = path_phase(profile, ion.segment, ion.segment + steps)
                phases[a] = phi
                state[a] = replace(
                    ion,
                    segment=ion.segment + steps,
                    radial_quanta=ion.radial_quanta + noise.transport_quanta * abs(steps),
                    shuttle_phase_accrued=ion.shuttle_phase_accrued + phi,
                )
        elif op.kind in (OpKind.SEPARATE, OpKind.MERGE):
            x, y = op.actors
            split = op.kind is OpKind.SEPARATE
            for a, seg in ((x, L - 1 if split else L), (y, L + 1 if split else L)):
                ion = state[a]
                state[a] = replace(
                    ion,
                    segment=seg,
                    paired_with=None if split else (y if a == x else x),
                    radial_quanta=ion.radial_quanta + noise.split_quanta,
                )
        elif op.kind is OpKind.COOL:
            for a in op.actors:
                state[a] = replace(state[a], radial_quanta=noise.cooled_quanta, shuttle_phase_accrued=0.0)
        yield TimelineEntry(idx, op, t, dict(state), phases)
        t += op.duration


def accrue_transport_effects(s: Schedule, ions: Iterable[IonState], noise: NoiseParams) -> tuple:
    """Final ion states and the total shuttle Z-phase per ion."""
    ions = list(ions)
    last = {i.id: i for i in ions}
    totals = {i.id: 0.0 for i in ions}
    for entry in ion_timeline(s, ions, noise):
        last = entry.ions
        for a, phi in entry.phases.items():
            totals[a] += phi
    return list(last.values()), totals


def pulse_times(s: Schedule) -> Dict[str, List[float]]:
    """Decoupling pulse centres per ion, in seconds after ``storage_start``."""
    t, origin = 0.0, None
    out: Dict[str, List[float]] = {}
    for op in s.ops:
        if op.params.get("marker") == "storage_start":
            origin = t
        if op.kind is OpKind.GATE1 and op.params.get("dd") and origin is not None:
            for a in op.actors:
                out.setdefault(a, []).append((t + op.duration_us / 2 - origin) * 1e-6)
        t += op.duration_us
    return out


def storage_duration(s: Schedule) -> float:
    t, start, end = 0.0, None, None
    for op in s.ops:
        marker = op.params.get("marker")
        if marker == "storage_start":
            start = t
        elif marker == "storage_end":
            end = t
        t += op.duration_us
    if start is None or end is None:
        raise ValueError("schedule has no storage markers")
    return (end - start) * 1e-6


def shelve_waits(s: Schedule) -> Dict[str, float]:
    """Seconds between each ion's last shelving and the start of its detection."""
    t = 0.0
    shelved: Dict[str, float] = {}
    waits: Dict[str, float] = {}
    for op in s.ops:
        if op.kind is OpKind.SHELVE:
            for a in op.actors:
                shelved[a] = t
        elif op.kind is OpKind.DETECT:
            for a in op.actors:
                if a in shelved and a not in waits:
                    waits[a] = (t - shelved[a]) * 1e-6
        t += op.duration_us
    return waits


# -- serialization ----------------------------------------------------------

_INT = re.compile(r"^[+-]?\d+$")


def _fmt(v) -> str:
    if isinstance(v, bool) or isinstance(v, str):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse_value(text: str):
    if _INT.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def dumps_schedule(s: Schedule) -> str:
    lines = []
    for op in s.ops:
        params = ";".join(f"{k}={_fmt(v)}" for k, v in op.params.items())
        lines.append(f"{op.kind.value},{'+'.join(op.actors)},{params},{_fmt(float(op.duration_us))}")
    return "\n".join(lines) + ("\n" if lines else "")


def loads_schedule(text: str, layout: TrapLayout = TrapLayout()) -> Schedule:
    ops = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise ValueError(f"line {lineno}: expected 4 comma-separated fields, got {len(fields)}")
        kind, actors, params, dur = fields
        try:
            kind = OpKind(kind)
        except ValueError:
            raise ValueError(f"line {lineno}: unknown op kind {kind!r}") from None
        pdict = {}
        for item in filter(None, params.split(";")):
            if "=" not in item:
                raise ValueError(f"line {lineno}: malformed parameter {item!r}")
            k, v = item.split("=", 1)
            pdict[k] = _parse_value(v)
        try:
            duration = float(dur)
        except ValueError:
            raise ValueError(f"line {lineno}: bad duration {dur!r}") from None
        ops.append(ScheduleOp(kind, tuple(filter(None, actors.split("+"))), pdict, duration))
    return Schedule(ops, layout)
