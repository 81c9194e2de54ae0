"""Minimal observer: compiled recognizers, a bounded record memory, and the
observation cycle (observing? -> source signal? -> extract -> record, then
report and flush at the end of a session).

Recognizers are built ahead of time from a tag.  There is deliberately no
operation that derives one from observed input.
"""

from __future__ import annotations

import copy
import csv
import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

from .envmodel import (
    ChannelSlot,
    Configuration,
    Environment,
    SpecInvalid,
    emit_channel,
    format_scaled,
    scale_value,
    step,
)

# cycle 24 + source_id 8 + k 8 + value 16 + provenance 8
RECORD_SIZE_BITS = 64
# cycle stamp attached to a full-state copy
FULL_STATE_OVERHEAD_BITS = 24
DEFAULT_PROGRAM_CAPACITY_BITS = 4096


class ObserverError(Exception):
    pass


class EmptyTag(ObserverError):
    pass


class CapacityExceeded(ObserverError):
    pass


class DuplicateSource(ObserverError):
    pass


class MemoryFull(ObserverError):
    pass


class NotReady(ObserverError):
    pass


class MooreMachine:
    """Deterministic Moore machine with a total transition function.

    ``delta[state][symbol]`` gives the next state and ``output[state]`` the
    symbol emitted on entering ``state``.
    """

    def __init__(self, alphabet: Iterable[str], states: Iterable[Hashable], start: Hashable,
                 delta: dict, output: dict):
        self.alphabet = frozenset(alphabet)
        self.states = frozenset(states)
        self.start = start
        self.delta = delta
        self.output = output
        if start not in self.states:
            raise ValueError(f"start state {start!r} not in states")
        for state in self.states:
            row = delta.get(state)
            if row is None or set(row) != self.alphabet:
                raise ValueError(f"transition function not total at {state!r}")
            for nxt in row.values():
                if nxt not in self.states:
                    raise ValueError(f"transition to unknown state {nxt!r}")
            if state not in output:
                raise ValueError(f"no output for state {state!r}")

    def run(self, word: Iterable[str]) -> Hashable:
        state = self.start
        for symbol in word:
            state = self.delta[state][symbol]
        return state

    def outputs(self, word: Iterable[str]) -> list:
        state = self.start
        trace = [self.output[state]]
        for symbol in word:
            state = self.delta[state][symbol]
            trace.append(self.output[state])
        return trace

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class Recognizer:
    source_id: str
    tag: str
    payload_width: int
    automaton: MooreMachine = field(compare=False, repr=False)

    @property
    def recognizer_id(self) -> str:
        return f"P:{self.source_id}"

    def accepts(self, body: str) -> bool:
        return self.automaton.output[self.automaton.run(body)] == 1

    def spec_bits(self) -> int:
        return len(self.tag) + 16


def compile_recognizer(tag: str, payload_width: int, source_id: str | None = None) -> Recognizer:
    """Build the Moore machine accepting exactly ``tag`` followed by
    ``payload_width`` arbitrary bits.

    States: ``("t", i)`` after i matched tag bits, ``("p", j)`` after j
    payload bits, and a dead sink.  The machine outputs 1 only in the state
    reached after the full body.
    """
    if not tag:
        raise EmptyTag("tag must be nonempty")
    if any(ch not in "01" for ch in tag):
        raise ValueError(f"not a bit string: {tag!r}")
    dead = "dead"
    chain = [("t", i) for i in range(len(tag))] + [("p", j) for j in range(payload_width + 1)]
    delta: dict = {dead: {"0": dead, "1": dead}}
    for pos, state in enumerate(chain):
        nxt = chain[pos + 1] if pos + 1 < len(chain) else dead
        if state[0] == "t":
            expected = tag[state[1]]
            delta[state] = {expected: nxt, "1" if expected == "0" else "0": dead}
        else:
            delta[state] = {"0": nxt, "1": nxt}
    accept = chain[-1]
    output = {s: int(s == accept) for s in delta}
    machine = MooreMachine("01", delta, chain[0], delta, output)
    return Recognizer(source_id if source_id is not None else tag, tag, payload_width, machine)


@dataclass(frozen=True)
class ExtractorFamily:
    """Read-out extractors for one source.  A payload decodes to at most one
    index; indices at or above ``k`` yield nothing."""

    source_id: str
    values: tuple[int, ...]
    payload_width: int

    @property
    def k(self) -> int:
        return len(self.values)

    def extractor_id(self, k: int) -> str:
        return f"R:{self.source_id}:{k}"

    def extract(self, payload: str) -> tuple[int, int] | None:
        if len(payload) != self.payload_width:
            return None
        k = int(payload, 2) if payload else 0
        if k >= self.k:
            return None
        return k, self.values[k]

    def spec_bits(self) -> int:
        return 16 + 16 * self.k


@dataclass(frozen=True)
class Provenance:
    window_read_id: str
    recognizer_id: str
    extractor_id: str


@dataclass(frozen=True)
class Record:
    """One memory entry.  Only ``Observer`` creates these, on an extractor fire."""

    cycle: int
    source_id: str
    k: int
    value: int
    provenance: Provenance
    dofs: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycle": self.cycle,
            "source_id": self.source_id,
            "k": self.k,
            "value": format_scaled(self.value),
            "dofs": list(self.dofs),
            "provenance": {
                "window_read_id": self.provenance.window_read_id,
                "recognizer_id": self.provenance.recognizer_id,
                "extractor_id": self.provenance.extractor_id,
            },
        }


@dataclass(frozen=True)
class Recorded:
    source_id: str
    k: int


class Null:
    """Non-recognition outcome; all instances compare equal."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Null"

    def __reduce__(self):
        return (Null, ())


NULL = Null()


class Control(enum.Enum):
    READY = "ready"
    SCANNING = "scanning"
    EXTRACTING = "extracting"
    DONE = "done"


@dataclass
class SessionReport:
    records: list[Record]
    cycles_run: int
    nulls: int
    truncated: bool = False

    def pairs(self) -> list[tuple[str, int]]:
        """(source_id, value) pairs in acquisition order."""
        return [(r.source_id, r.value) for r in self.records]

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycles_run": self.cycles_run,
            "nulls": self.nulls,
            "truncated": self.truncated,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["cycle", "source_id", "k", "value"])
        for r in self.records:
            writer.writerow([r.cycle, r.source_id, r.k, format_scaled(r.value)])
        return buf.getvalue()


@dataclass
class StateCopy:
    """A verbatim copy of an environment configuration."""

    cycle: int
    bits: Configuration


class Observer:
    """A finite observer with a ready state and a bounded classical memory.

    ``memory_capacity_bits`` bounds the record memory; recognizer and
    extractor tables are charged against ``program_capacity_bits``.
    ``window`` is the set of DOFs visible at the observer's boundary
    (``None`` for the whole environment).
    """

    record_size_bits = RECORD_SIZE_BITS

    def __init__(self, memory_capacity_bits: int,
                 program_capacity_bits: int = DEFAULT_PROGRAM_CAPACITY_BITS,
                 window: Iterable[int] | None = None):
        if memory_capacity_bits < 0 or program_capacity_bits < 0:
            raise ValueError("capacities must be non-negative")
        self.memory_capacity_bits = memory_capacity_bits
        self.program_capacity_bits = program_capacity_bits
        self.window = frozenset(window) if window is not None else None
        self.recognizers: list[Recognizer] = []
        self.extractors: dict[str, ExtractorFamily] = {}
        self.memory: list[Record] = []
        self.control = Control.READY
        self.cycle = 0

    @property
    def ready_state(self) -> tuple[tuple[Recognizer, ...], tuple[ExtractorFamily, ...]]:
        return tuple(self.recognizers), tuple(self.extractors[r.source_id] for r in self.recognizers)

    @property
    def program_bits(self) -> int:
        return sum(r.spec_bits() + self.extractors[r.source_id].spec_bits() for r in self.recognizers)

    @property
    def memory_bits(self) -> int:
        return len(self.memory) * self.record_size_bits

    @property
    def free_bits(self) -> int:
        return self.memory_capacity_bits - self.memory_bits

    def load_recognizer(self, rec: Recognizer, fam: ExtractorFamily) -> Observer:
        if rec.source_id != fam.source_id:
            raise ValueError(f"recognizer {rec.source_id!r} paired with extractors {fam.source_id!r}")
        if rec.source_id in self.extractors:
            raise DuplicateSource(rec.source_id)
        cost = rec.spec_bits() + fam.spec_bits()
        if self.program_bits + cost > self.program_capacity_bits:
            raise CapacityExceeded(
                f"loading {rec.source_id!r} needs {cost} bits, "
                f"{self.program_capacity_bits - self.program_bits} free"
            )
        self.recognizers.append(rec)
        self.extractors[rec.source_id] = fam
        return self

    def visible(self, slot: ChannelSlot) -> bool:
        return self.window is None or self.window.issuperset(slot.origin)

    def run_cycle(self, slots: Sequence[ChannelSlot]) -> Recorded | Null:
        """One pass of the observation cycle over ``slots``.

        The first message slot accepted by any recognizer (declaration order)
        fires that source's extractors; the cycle ends there.  Raises
        ``MemoryFull`` with memory untouched if the record does not fit.
        """
        if self.control is not Control.READY:
            raise NotReady(f"control is {self.control.value}")
        cycle = self.cycle
        self.cycle += 1
        try:
            for pos, slot in enumerate(slots):
                self.control = Control.SCANNING
                if not slot.is_message or not self.visible(slot):
                    continue
                for rec in self.recognizers:
                    if rec.accepts(slot.body):
                        self.control = Control.EXTRACTING
                        return self._fire(rec, slot, cycle, pos)
            return NULL
        finally:
            self.control = Control.READY

    def _fire(self, rec: Recognizer, slot: ChannelSlot, cycle: int, pos: int) -> Recorded | Null:
        fam = self.extractors[rec.source_id]
        hit = fam.extract(slot.body[len(rec.tag):])
        if hit is None:
            return NULL
        k, value = hit
        if self.memory_bits + self.record_size_bits > self.memory_capacity_bits:
            raise MemoryFull(f"cycle {cycle}: {self.free_bits} bits free")
        self.memory.append(Record(
            cycle=cycle,
            source_id=rec.source_id,
            k=k,
            value=value,
            provenance=Provenance(f"w{cycle}.{pos}", rec.recognizer_id, fam.extractor_id(k)),
            dofs=tuple(slot.origin),
        ))
        return Recorded(rec.source_id, k)

    def observe_session(self, env: Environment, cycles: int,
                        rng: np.random.Generator | None = None) -> SessionReport:
        """Run ``cycles`` rounds of emit -> cycle -> step, then report and flush.

        ``rng`` defaults to a generator seeded with ``env.seed``.  A full
        memory ends the session early with ``truncated`` set.
        """
        if self.control is not Control.READY:
            raise NotReady(f"control is {self.control.value}")
        if rng is None:
            rng = np.random.default_rng(env.seed)
        self.cycle = 0
        completed = nulls = 0
        truncated = False
        for _ in range(cycles):
            slots = emit_channel(env, rng)
            try:
                outcome = self.run_cycle(slots)
            except MemoryFull:
                truncated = True
                break
            completed += 1
            if outcome is NULL:
                nulls += 1
            env = step(env)
        self.control = Control.DONE
        report = SessionReport(list(self.memory), completed, nulls, truncated)
        self.memory.clear()
        self.cycle = 0
        self.control = Control.READY
        return report

    def record_full_state(self, env: Environment) -> StateCopy:
        """Copy the whole configuration, if it fits in free memory.

        A capacity probe: the copy is returned, never written to the record
        memory, which only extractor fires may append to.
        """
        need = env.num_dof + FULL_STATE_OVERHEAD_BITS
        if need > self.free_bits:
            raise CapacityExceeded(f"full state needs {need} bits, {self.free_bits} free")
        return StateCopy(self.cycle, tuple(env.config))


class Verdict(enum.Enum):
    DISTINGUISHED = "Distinguished"
    INDISTINGUISHABLE = "Indistinguishable"


def distinguish_states(obs: Observer, env_a: Environment, env_b: Environment, cycles: int,
                       seed: int = 0) -> Verdict:
    """Run the same seeded session against two environments and compare reports."""
    report_a = copy.deepcopy(obs).observe_session(env_a, cycles, np.random.default_rng(seed))
    report_b = copy.deepcopy(obs).observe_session(env_b, cycles, np.random.default_rng(seed))
    if report_a == report_b:
        return Verdict.INDISTINGUISHABLE
    return Verdict.DISTINGUISHED


def build_observer(spec: dict[str, Any], payload_width: int | None = None) -> Observer:
    """Construct an observer from its JSON document.

    ``payload_width`` comes from the document when present, else from the
    argument (normally the environment's).
    """
    if not isinstance(spec, dict):
        raise SpecInvalid("observer document must be an object")
    cap = spec.get("memory_capacity_bits")
    if not isinstance(cap, int) or isinstance(cap, bool) or cap < 0:
        raise SpecInvalid(f"must be a non-negative integer, got {cap!r}", "memory_capacity_bits")
    prog = spec.get("program_capacity_bits", DEFAULT_PROGRAM_CAPACITY_BITS)
    if not isinstance(prog, int) or isinstance(prog, bool) or prog < 0:
        raise SpecInvalid(f"must be a non-negative integer, got {prog!r}", "program_capacity_bits")
    pw = spec.get("payload_width", payload_width)
    if not isinstance(pw, int) or isinstance(pw, bool) or pw < 0:
        raise SpecInvalid(f"must be a non-negative integer, got {pw!r}", "payload_width")
    window = spec.get("window")
    if window is not None and (not isinstance(window, list)
                               or not all(isinstance(d, int) and d >= 0 for d in window)):
        raise SpecInvalid("must be a list of DOF indices", "window")

    extractors = {}
    for pos, ex in enumerate(spec.get("extractors", [])):
        if "source_id" not in ex or "values" not in ex:
            raise SpecInvalid("needs source_id and values", f"extractors[{pos}]")
        values = ex["values"]
        if not 1 <= len(values) <= 1 << pw:
            raise SpecInvalid(f"k = {len(values)} outside [1, 2^{pw}]", f"extractors[{pos}].values")
        sid = str(ex["source_id"])
        if sid in extractors:
            raise SpecInvalid(f"duplicate source_id {sid!r}", f"extractors[{pos}]")
        extractors[sid] = ExtractorFamily(sid, tuple(scale_value(v) for v in values), pw)

    obs = Observer(cap, prog, window)
    tags = []
    for pos, rs in enumerate(spec.get("recognizers", [])):
        where = f"recognizers[{pos}]"
        if "source_id" not in rs or "tag" not in rs:
            raise SpecInvalid("needs source_id and tag", where)
        sid = str(rs["source_id"])
        if sid not in extractors:
            raise SpecInvalid(f"no extractors for source {sid!r}", where)
        try:
            rec = compile_recognizer(rs["tag"], pw, sid)
            obs.load_recognizer(rec, extractors[sid])
        except EmptyTag:
            raise SpecInvalid("tag must be nonempty", f"{where}.tag") from None
        except ValueError as exc:
            raise SpecInvalid(str(exc), f"{where}.tag") from None
        except (DuplicateSource, CapacityExceeded) as exc:
            raise SpecInvalid(f"{type(exc).__name__}: {exc}", where) from None
        tags.append(rs["tag"])
    for i, a in enumerate(tags):
        for j, b in enumerate(tags):
            if i != j and b.startswith(a):
                raise SpecInvalid(f"tags not prefix-free: {a!r} is a prefix of {b!r}", "recognizers")
    return obs


def load_observer(path: str | Path, payload_width: int | None = None) -> Observer:
    with open(path, encoding="utf-8") as fh:
        return build_observer(json.load(fh), payload_width)
