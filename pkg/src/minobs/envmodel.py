"""Bit-vector environment with reversible dynamics and a framed signal channel.

An environment is a fixed-length configuration of binary degrees of freedom
(DOFs).  It evolves under a reversible rule built from SWAP, CXOR and NOT
primitives.  Signal sources are labels over subsets of DOFs; they carry a
prefix-free tag and a table of read-out values.  Labels are metadata only:
nothing in ``step`` or in the slot layout of ``emit_channel`` consults them.

Bit strings are written index 0 first, as ASCII ``'0'``/``'1'``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

Configuration = tuple[int, ...]

SCALE = 1000

OP_ARITY = {"SWAP": 2, "CXOR": 2, "NOT": 1}


class SpecInvalid(ValueError):
    """An input document violates an invariant."""

    def __init__(self, reason: str, field: str | None = None):
        self.reason = reason
        self.field = field
        super().__init__(f"{field}: {reason}" if field else reason)


class EmptyEnsemble(ValueError):
    pass


def bits_from_str(s: str) -> Configuration:
    if any(ch not in "01" for ch in s):
        raise ValueError(f"not a bit string: {s!r}")
    return tuple(int(ch) for ch in s)


def bits_to_str(bits: Iterable[int]) -> str:
    return "".join("1" if b else "0" for b in bits)


def decode(bits: Iterable[int]) -> int:
    """Unsigned integer value of ``bits``, first bit most significant."""
    value = 0
    for b in bits:
        value = (value << 1) | b
    return value


def encode(value: int, width: int) -> str:
    if value < 0 or value >= 1 << width:
        raise ValueError(f"{value} does not fit in {width} bits")
    return format(value, f"0{width}b") if width else ""


def scale_value(x: float) -> int:
    """Round a read-out value to a x1000 scaled integer."""
    return int(round(Fraction(str(x)) * SCALE))


def format_scaled(v: int) -> str:
    sign = "-" if v < 0 else ""
    q, r = divmod(abs(v), SCALE)
    return f"{sign}{q}.{r:03d}"


@dataclass(frozen=True)
class ReversibleRule:
    """Ordered composition of reversible primitives.

    Each op is ``(name, a, b)``; ``b`` is ``None`` for NOT.  CXOR(a, b)
    flips bit ``b`` when bit ``a`` is set.
    """

    ops: tuple[tuple[str, int, int | None], ...] = ()

    @classmethod
    def from_list(cls, ops: Sequence[Sequence[Any]], num_dof: int) -> ReversibleRule:
        parsed = []
        for pos, op in enumerate(ops):
            where = f"rule[{pos}]"
            if not op or op[0] not in OP_ARITY:
                raise SpecInvalid(f"unknown primitive {op!r}", where)
            name, args = op[0], list(op[1:])
            if len(args) != OP_ARITY[name]:
                raise SpecInvalid(f"{name} takes {OP_ARITY[name]} indices", where)
            for a in args:
                if not isinstance(a, int) or isinstance(a, bool) or not 0 <= a < num_dof:
                    raise SpecInvalid(f"index {a!r} out of range [0, {num_dof})", where)
            if name == "CXOR" and args[0] == args[1]:
                raise SpecInvalid("CXOR control and target must differ", where)
            parsed.append((name, args[0], args[1] if len(args) == 2 else None))
        return cls(tuple(parsed))

    def to_list(self) -> list[list[Any]]:
        return [[n, a] if b is None else [n, a, b] for n, a, b in self.ops]

    def _run(self, bits: Configuration, ops) -> Configuration:
        out = list(bits)
        for name, a, b in ops:
            if name == "NOT":
                out[a] ^= 1
            elif name == "CXOR":
                out[b] ^= out[a]
            else:
                out[a], out[b] = out[b], out[a]
        return tuple(out)

    def apply(self, bits: Configuration) -> Configuration:
        return self._run(bits, self.ops)

    def invert(self, bits: Configuration) -> Configuration:
        # every primitive is its own inverse, so the inverse is the reversed list
        return self._run(bits, reversed(self.ops))

    def inverse(self) -> ReversibleRule:
        return ReversibleRule(tuple(reversed(self.ops)))


def random_rule(num_dof: int, n_ops: int, rng: np.random.Generator) -> ReversibleRule:
    """Draw ``n_ops`` primitives uniformly (kind, then indices)."""
    names = ("SWAP", "CXOR", "NOT")
    ops = []
    for _ in range(n_ops):
        name = names[int(rng.integers(3))]
        if name == "NOT" or num_dof < 2:
            ops.append(("NOT", int(rng.integers(num_dof)), None))
        else:
            a, b = (int(x) for x in rng.choice(num_dof, size=2, replace=False))
            ops.append((name, a, b))
    return ReversibleRule(tuple(ops))


@dataclass(frozen=True)
class SignalSource:
    source_id: str
    tag: str
    dofs: tuple[int, ...]
    values: tuple[int, ...]  # scaled x1000

    @property
    def k(self) -> int:
        return len(self.values)

    def read_index(self, config: Configuration) -> int:
        return decode(config[d] for d in self.dofs) % self.k

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.source_id,
            "tag": self.tag,
            "dofs": list(self.dofs),
            "values": [format_scaled(v) for v in self.values],
        }


@dataclass(frozen=True)
class ChannelSlot:
    """One framed slot.  ``origin`` lists the DOFs a message was read from
    (empty for noise); it is physical location, not a source label."""

    header: int
    body: str
    origin: tuple[int, ...] = ()

    @property
    def is_message(self) -> bool:
        return self.header == 1


@dataclass(frozen=True)
class Environment:
    num_dof: int
    config: Configuration
    rule: ReversibleRule
    sources: tuple[SignalSource, ...]
    epsilon: float = 0.0
    tag_width: int = 0
    payload_width: int = 0
    noise_slot_len: int = 8
    seed: int = 0
    spec: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def read_index(self, source: SignalSource) -> int:
        return source.read_index(self.config)

    def source(self, source_id: str) -> SignalSource:
        for s in self.sources:
            if s.source_id == source_id:
                return s
        raise KeyError(source_id)

    def with_config(self, config: Configuration) -> Environment:
        return replace(self, config=tuple(config))


def _check_sources(
    raw: Sequence[dict[str, Any]], num_dof: int, payload_width: int, tag_width: int | None
) -> tuple[tuple[SignalSource, ...], int]:
    sources = []
    seen = set()
    for pos, s in enumerate(raw):
        where = f"sources[{pos}]"
        for key in ("id", "tag", "dofs", "values"):
            if key not in s:
                raise SpecInvalid(f"missing field {key!r}", where)
        sid = str(s["id"])
        if sid in seen:
            raise SpecInvalid(f"duplicate source id {sid!r}", f"{where}.id")
        seen.add(sid)
        tag = s["tag"]
        if not isinstance(tag, str) or not tag or any(ch not in "01" for ch in tag):
            raise SpecInvalid(f"tag must be a nonempty bit string, got {tag!r}", f"{where}.tag")
        dofs = s["dofs"]
        if not dofs:
            raise SpecInvalid("dofs must be nonempty", f"{where}.dofs")
        for d in dofs:
            if not isinstance(d, int) or isinstance(d, bool) or not 0 <= d < num_dof:
                raise SpecInvalid(f"index {d!r} out of range [0, {num_dof})", f"{where}.dofs")
        if len(set(dofs)) != len(dofs):
            raise SpecInvalid("dofs must be distinct", f"{where}.dofs")
        values = s["values"]
        if not 1 <= len(values) <= 1 << payload_width:
            raise SpecInvalid(
                f"k = {len(values)} outside [1, 2^{payload_width}]", f"{where}.values"
            )
        sources.append(
            SignalSource(sid, tag, tuple(dofs), tuple(scale_value(v) for v in values))
        )

    tags = [s.tag for s in sources]
    for i, a in enumerate(tags):
        for j, b in enumerate(tags):
            if i != j and b.startswith(a):
                raise SpecInvalid(f"tags not prefix-free: {a!r} is a prefix of {b!r}", "sources")
    widths = {len(t) for t in tags}
    if tag_width is None:
        if len(widths) > 1:
            raise SpecInvalid(f"tags have mixed widths {sorted(widths)}", "tag_width")
        tag_width = widths.pop() if widths else 0
    elif widths - {tag_width}:
        raise SpecInvalid(f"every tag must have width {tag_width}", "tag_width")
    return tuple(sources), tag_width


def _int_field(spec: dict[str, Any], key: str, default: int | None, minimum: int = 0) -> int:
    value = spec.get(key, default)
    if value is None:
        raise SpecInvalid("missing field", key)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise SpecInvalid(f"must be an integer >= {minimum}, got {value!r}", key)
    return value


def build_environment(spec: dict[str, Any]) -> Environment:
    """Validate an environment document and construct the environment.

    A ``"random"`` init draws the configuration from a generator seeded
    with the document's ``seed``; it is the only draw that generator makes.
    """
    if not isinstance(spec, dict):
        raise SpecInvalid("environment document must be an object")
    num_dof = _int_field(spec, "num_dof", None, minimum=1)
    payload_width = _int_field(spec, "payload_width", 2)
    noise_slot_len = _int_field(spec, "noise_slot_len", 8)
    seed = _int_field(spec, "seed", 0)
    tag_width = spec.get("tag_width")
    if tag_width is not None:
        tag_width = _int_field(spec, "tag_width", None, minimum=1)

    eps = spec.get("epsilon", 0)
    try:
        eps_frac = Fraction(str(eps))
    except (ValueError, TypeError):
        raise SpecInvalid(f"not a number: {eps!r}", "epsilon") from None
    if not 0 <= eps_frac <= 1:
        raise SpecInvalid(f"must lie in [0, 1], got {eps!r}", "epsilon")

    rule = ReversibleRule.from_list(spec.get("rule", []), num_dof)
    sources, tag_width = _check_sources(spec.get("sources", []), num_dof, payload_width, tag_width)

    init = spec.get("init", "random")
    if init == "random":
        config = tuple(int(b) for b in np.random.default_rng(seed).integers(0, 2, num_dof))
    else:
        try:
            config = bits_from_str(init)
        except (ValueError, TypeError):
            raise SpecInvalid(f"expected 'random' or a bit string, got {init!r}", "init") from None
        if len(config) != num_dof:
            raise SpecInvalid(f"length {len(config)} != num_dof {num_dof}", "init")

    return Environment(
        num_dof=num_dof,
        config=config,
        rule=rule,
        sources=sources,
        epsilon=float(eps_frac),
        tag_width=tag_width,
        payload_width=payload_width,
        noise_slot_len=noise_slot_len,
        seed=seed,
        spec=dict(spec),
    )


def load_environment(path: str | Path) -> Environment:
    with open(path, encoding="utf-8") as fh:
        return build_environment(json.load(fh))


def step(env: Environment) -> Environment:
    return replace(env, config=env.rule.apply(env.config))


def inverse_step(env: Environment) -> Environment:
    return replace(env, config=env.rule.invert(env.config))


def trajectory(env: Environment, steps: int) -> list[Configuration]:
    """Configurations at times 0..steps (inclusive)."""
    out = [env.config]
    config = env.config
    for _ in range(steps):
        config = env.rule.apply(config)
        out.append(config)
    return out


def emit_channel(env: Environment, rng: np.random.Generator) -> list[ChannelSlot]:
    """Serialize the current read-outs onto a framed slot sequence.

    Layout is ``N M N M ... M N``: a noise slot in every gap including both
    ends, so ``n`` sources give ``2n + 1`` slots and zero sources give one
    noise slot.  Draw order per slot: noise slots take ``noise_slot_len``
    bits; message slots take one uniform per body bit for the flip test,
    whatever ``epsilon`` is.  Headers are never flipped.
    """
    slots = [_noise_slot(env, rng)]
    for source in env.sources:
        body = source.tag + encode(source.read_index(env.config), env.payload_width)
        flips = rng.random(len(body)) < env.epsilon
        if flips.any():
            body = "".join(
                ("1" if ch == "0" else "0") if f else ch for ch, f in zip(body, flips)
            )
        slots.append(ChannelSlot(1, body, source.dofs))
        slots.append(_noise_slot(env, rng))
    return slots


def _noise_slot(env: Environment, rng: np.random.Generator) -> ChannelSlot:
    return ChannelSlot(0, bits_to_str(rng.integers(0, 2, env.noise_slot_len)))


def true_fraction(ensemble: Sequence[Configuration], source: SignalSource, k: int) -> Fraction:
    if not ensemble:
        raise EmptyEnsemble("ensemble is empty")
    if not 0 <= k < source.k:
        raise ValueError(f"k = {k} outside [0, {source.k})")
    hits = sum(1 for c in ensemble if source.read_index(c) == k)
    return Fraction(hits, len(ensemble))


def repartition(env: Environment, new_sources: Sequence[dict[str, Any]]) -> Environment:
    """Relabel the environment's DOFs into new sources; dynamics untouched."""
    tag_width = env.spec.get("tag_width")
    sources, tag_width = _check_sources(new_sources, env.num_dof, env.payload_width, tag_width)
    spec = dict(env.spec, sources=list(new_sources))
    return replace(env, sources=sources, tag_width=tag_width, spec=spec)


def uniform_configurations(num_dof: int, n: int, rng: np.random.Generator) -> list[Configuration]:
    draws = rng.integers(0, 2, size=(n, num_dof))
    return [tuple(row) for row in draws.tolist()]
