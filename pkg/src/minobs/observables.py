"""Observable families: boundary window, then recognizer, then extractors.

Applying an observable reads its source component through the window,
frames the bits as a message body, and runs the recognizer and extractor
family on it.  A value outcome resets one designated component DOF to 0
(the back-action); a null outcome leaves the configuration untouched.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np

from .envmodel import (
    Configuration,
    EmptyEnsemble,
    Environment,
    SignalSource,
    SpecInvalid,
    decode,
    uniform_configurations,
)
from .observer import NULL, ExtractorFamily, Null, Recognizer, compile_recognizer


class WindowTooSmall(ValueError):
    pass


class BackactionOutsideComponent(ValueError):
    pass


@dataclass(frozen=True)
class Value:
    k: int
    r: int


Outcome = Value | Null


@dataclass(frozen=True)
class Observable:
    window: frozenset[int]
    recognizer: Recognizer
    extractors: ExtractorFamily
    component: tuple[int, ...]
    backaction_dof: int

    @property
    def source_id(self) -> str:
        return self.recognizer.source_id


def make_observable(window: Iterable[int], rec: Recognizer, fam: ExtractorFamily,
                    component: Sequence[int], backaction_dof: int) -> Observable:
    window = frozenset(window)
    component = tuple(component)
    if not component:
        raise ValueError("component must be nonempty")
    if rec.source_id != fam.source_id:
        raise ValueError(f"recognizer {rec.source_id!r} paired with extractors {fam.source_id!r}")
    missing = set(component) - window
    if missing:
        raise WindowTooSmall(f"window lacks component DOFs {sorted(missing)}")
    if backaction_dof not in component:
        raise BackactionOutsideComponent(f"DOF {backaction_dof} not in component {list(component)}")
    return Observable(window, rec, fam, component, backaction_dof)


def observable_for(source: SignalSource, payload_width: int, window: Iterable[int] | None = None,
                   backaction_dof: int | None = None) -> Observable:
    """Observable for ``source`` with defaults: window = component, back-action
    on the component's first DOF."""
    rec = compile_recognizer(source.tag, payload_width, source.source_id)
    fam = ExtractorFamily(source.source_id, source.values, payload_width)
    return make_observable(
        source.dofs if window is None else window,
        rec,
        fam,
        source.dofs,
        source.dofs[0] if backaction_dof is None else backaction_dof,
    )


def fine_grained(o: Observable, source_id: str | None = None) -> Observable:
    """Observable on the same component that resolves every bit pattern:
    k = 2^|component|, value of pattern p is p, same back-action DOF."""
    width = len(o.component)
    sid = source_id or f"{o.source_id}#fine"
    rec = compile_recognizer(o.recognizer.tag, width, sid)
    fam = ExtractorFamily(sid, tuple(1000 * p for p in range(1 << width)), width)
    return make_observable(o.window, rec, fam, o.component, o.backaction_dof)


def apply_config(o: Observable, config: Configuration) -> tuple[Configuration, Outcome]:
    bits = [config[d] for d in o.component if d in o.window]
    raw = decode(bits)
    width = o.recognizer.payload_width
    if raw >= 1 << width:
        return config, NULL
    body = o.recognizer.tag + (format(raw, f"0{width}b") if width else "")
    if not o.recognizer.accepts(body):
        return config, NULL
    hit = o.extractors.extract(body[len(o.recognizer.tag):])
    if hit is None:
        return config, NULL
    k, r = hit
    if config[o.backaction_dof]:
        config = config[:o.backaction_dof] + (0,) + config[o.backaction_dof + 1:]
    return config, Value(k, r)


def apply(o: Observable, env: Environment) -> tuple[Environment, Outcome]:
    config, outcome = apply_config(o, env.config)
    return (env if config is env.config else env.with_config(config)), outcome


def outcome_of(o: Observable, config: Configuration) -> Outcome:
    """Side-effect-free read: the outcome, with the back-action discarded."""
    return apply_config(o, config)[1]


def output_equivalent(o1: Observable, o2: Observable, ensemble: Sequence[Configuration]) -> bool:
    """Decide output-equivalence by sampling.  Exact only when ``ensemble``
    covers every pattern of both components."""
    if not ensemble:
        raise EmptyEnsemble("ensemble is empty")
    return all(outcome_of(o1, c) == outcome_of(o2, c) for c in ensemble)


def components_orthogonal(o1: Observable, o2: Observable) -> bool:
    return not set(o1.component) & set(o2.component)


@dataclass
class AgreementStats:
    trials: int
    agreements: int

    @property
    def disagreements(self) -> int:
        return self.trials - self.agreements

    @property
    def disagreement_rate(self) -> float:
        return self.disagreements / self.trials if self.trials else 0.0

    @property
    def exact_rate(self) -> Fraction:
        return Fraction(self.disagreements, self.trials) if self.trials else Fraction(0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trials": self.trials,
            "agreements": self.agreements,
            "disagreement_rate": self.disagreement_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["trials", "agreements", "disagreement_rate"])
        writer.writerow([self.trials, self.agreements, repr(self.disagreement_rate)])
        return buf.getvalue()


def order_agrees(o: Observable, q: Observable, config: Configuration) -> bool:
    """Two observers on independent copies of ``config``: one applies o then q,
    the other q then o.  True when both report the same results."""
    c1, r = apply_config(o, config)
    _, s = apply_config(q, c1)
    c2, s2 = apply_config(q, config)
    _, r2 = apply_config(o, c2)
    return r == r2 and s == s2


def _count_agreements(args) -> int:
    o, q, configs = args
    return sum(order_agrees(o, q, c) for c in configs)


def commutativity_experiment(o: Observable, q: Observable, env: Environment, trials: int,
                             rng: np.random.Generator | None = None,
                             ensemble: Sequence[Configuration] | None = None,
                             jobs: int = 1) -> AgreementStats:
    """Cooperative two-observer protocol over ``trials`` configurations.

    Configurations are drawn uniformly over ``env.num_dof`` bits from ``rng``
    in one batch before any trial runs, unless an explicit ``ensemble`` is
    given (then ``trials`` is ignored).  ``jobs > 1`` splits the trials
    across processes; the result does not depend on ``jobs``.
    """
    if ensemble is None:
        if trials < 1:
            raise ValueError("trials must be >= 1")
        if rng is None:
            rng = np.random.default_rng(env.seed)
        ensemble = uniform_configurations(env.num_dof, trials, rng)
    configs = list(ensemble)
    if jobs > 1 and len(configs) > 1:
        size = -(-len(configs) // jobs)
        chunks = [(o, q, configs[i:i + size]) for i in range(0, len(configs), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            agreements = sum(pool.map(_count_agreements, chunks))
    else:
        agreements = _count_agreements((o, q, configs))
    return AgreementStats(len(configs), agreements)


def component_patterns(num_dof: int, dofs: Iterable[int],
                       base: Configuration | None = None) -> list[Configuration]:
    """Every assignment of ``dofs``; other DOFs taken from ``base`` (default 0)."""
    dofs = sorted(set(dofs))
    base = tuple(base) if base is not None else (0,) * num_dof
    out = []
    for bits in itertools.product((0, 1), repeat=len(dofs)):
        config = list(base)
        for d, b in zip(dofs, bits):
            config[d] = b
        out.append(tuple(config))
    return out


def commutativity_census(o: Observable, q: Observable, num_dof: int) -> AgreementStats:
    """Exact agreement counts over every joint pattern of the two components."""
    patterns = component_patterns(num_dof, set(o.component) | set(q.component))
    return AgreementStats(len(patterns), _count_agreements((o, q, patterns)))


def observable_from_doc(doc: dict[str, Any], env: Environment) -> Observable:
    """Observable document: ``{"source": id, "window": [...], "backaction_dof": n}``;
    window and back-action default to the source's component and its first DOF."""
    if not isinstance(doc, dict) or "source" not in doc:
        raise SpecInvalid("observable needs a 'source' id", "source")
    try:
        source = env.source(str(doc["source"]))
    except KeyError:
        raise SpecInvalid(f"unknown source {doc['source']!r}", "source") from None
    window = doc.get("window")
    if window is not None and not all(isinstance(d, int) and 0 <= d < env.num_dof for d in window):
        raise SpecInvalid("window indices out of range", "window")
    try:
        return observable_for(source, env.payload_width, window, doc.get("backaction_dof"))
    except WindowTooSmall as exc:
        raise SpecInvalid(str(exc), "window") from None
    except BackactionOutsideComponent as exc:
        raise SpecInvalid(str(exc), "backaction_dof") from None
