"""Theorem-level harnesses.  Each returns a ``Report`` that serializes to a
JSON verdict document ``{experiment, params, seed, metrics, pass}`` and,
optionally, a CSV of per-cell or per-trial rows.

Every experiment is a pure function of its documents and seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from .envmodel import (
    Configuration,
    Environment,
    SpecInvalid,
    build_environment,
    repartition,
    scale_value,
    trajectory,
    uniform_configurations,
)
from .observables import (
    AgreementStats,
    Observable,
    Value,
    commutativity_census,
    commutativity_experiment,
    component_patterns,
    components_orthogonal,
    fine_grained,
    observable_from_doc,
    outcome_of,
)
from .observer import (
    FULL_STATE_OVERHEAD_BITS,
    CapacityExceeded,
    SessionReport,
    Verdict,
    build_observer,
    distinguish_states,
)

ENSEMBLE_MODES = ("uniform", "trajectory")


class NoRecognizedConfigurations(RuntimeError):
    pass


class ComponentTooSmall(ValueError):
    pass


@dataclass
class Report:
    experiment: str
    params: dict[str, Any]
    seed: int
    metrics: dict[str, Any]
    passed: bool
    rows: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "params": self.params,
            "seed": self.seed,
            "metrics": self.metrics,
            "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if self.rows:
            header = list(self.rows[0])
            writer.writerow(header)
            for row in self.rows:
                writer.writerow([row[h] for h in header])
        else:
            writer.writerow(["metric", "value"])
            for key in sorted(self.metrics):
                writer.writerow([key, json.dumps(self.metrics[key], sort_keys=True)])
        return buf.getvalue()


def _env(env_spec: dict[str, Any] | Environment) -> Environment:
    return env_spec if isinstance(env_spec, Environment) else build_environment(env_spec)


def _observable(doc: dict[str, Any] | Observable, env: Environment) -> Observable:
    return doc if isinstance(doc, Observable) else observable_from_doc(doc, env)


def draw_ensemble(env: Environment, n: int, rng: np.random.Generator,
                  mode: str = "uniform") -> list[Configuration]:
    """``n`` configurations: i.i.d. uniform, or the first ``n`` points of the
    environment's own trajectory (``rng`` unused in that mode)."""
    if mode == "uniform":
        return uniform_configurations(env.num_dof, n, rng)
    if mode == "trajectory":
        return trajectory(env, n - 1) if n > 0 else []
    raise ValueError(f"unknown ensemble mode {mode!r}; expected one of {ENSEMBLE_MODES}")


@dataclass
class Ancilla:
    cells: dict[int, list[Configuration]]
    discarded: int = 0

    @property
    def population(self) -> int:
        return sum(len(c) for c in self.cells.values())

    def members(self) -> list[Configuration]:
        return [c for k in sorted(self.cells) for c in self.cells[k]]


def sort_into_ancilla(o: Observable, configs: Sequence[Configuration]) -> Ancilla:
    cells: dict[int, list[Configuration]] = {k: [] for k in range(o.extractors.k)}
    discarded = 0
    for c in configs:
        out = outcome_of(o, c)
        if isinstance(out, Value):
            cells[out.k].append(c)
        else:
            discarded += 1
    return Ancilla(cells, discarded)


def ancilla_sound(o: Observable, ancilla: Ancilla) -> bool:
    return all(
        isinstance(out := outcome_of(o, c), Value) and out.k == k
        for k, members in ancilla.cells.items()
        for c in members
    )


def born_rule_experiment(env_spec, observable, n_sort: int, n_draw: int, seed: int,
                         ensemble: str = "uniform") -> Report:
    """Sort-then-draw protocol comparing report frequencies with true fractions.

    A sorting observer files ``n_sort`` configurations into cells by observed
    index (side-effect-free, nulls discarded).  A second observer, sharing
    the observable, draws ``n_draw`` members without replacement in uniformly
    random order and records what the observable reports.  Passes when every
    cell's report frequency lies within 3 binomial standard deviations of its
    fraction in the ancilla.
    """
    if not n_sort >= n_draw >= 1:
        raise ValueError(f"need n_sort >= n_draw >= 1, got {n_sort}, {n_draw}")
    env = _env(env_spec)
    o = _observable(observable, env)
    rng = np.random.default_rng(seed)

    ancilla = sort_into_ancilla(o, draw_ensemble(env, n_sort, rng, ensemble))
    population = ancilla.members()
    if not population:
        raise NoRecognizedConfigurations("no configuration was recognized")
    if n_draw > len(population):
        raise ValueError(f"n_draw {n_draw} exceeds recognized population {len(population)}")

    order = rng.permutation(len(population))[:n_draw]
    counts = {k: 0 for k in ancilla.cells}
    for idx in order:
        out = outcome_of(o, population[idx])
        counts[out.k] += 1  # ancilla soundness guarantees a Value

    rows = []
    passed = True
    max_dev = Fraction(0)
    for k in sorted(ancilla.cells):
        f_hat = Fraction(len(ancilla.cells[k]), len(population))
        p_hat = Fraction(counts[k], n_draw)
        dev = abs(p_hat - f_hat)
        tol = 3 * math.sqrt(float(f_hat * (1 - f_hat)) / n_draw)
        ok = dev == 0 or float(dev) <= tol
        passed &= ok
        max_dev = max(max_dev, dev)
        rows.append({
            "k": k,
            "cell_size": len(ancilla.cells[k]),
            "draws": counts[k],
            "F_hat": float(f_hat),
            "P_hat": float(p_hat),
            "abs_deviation": float(dev),
            "tolerance": tol,
            "pass": ok,
        })

    sound = ancilla_sound(o, ancilla)
    metrics = {
        "population": len(population),
        "discarded": ancilla.discarded,
        "draws": n_draw,
        "census": n_draw == len(population),
        "max_abs_deviation": float(max_dev),
        "ancilla_sound": sound,
        "cells": rows,
    }
    params = {"n_sort": n_sort, "n_draw": n_draw, "source": o.source_id, "ensemble": ensemble}
    return Report("born-rule", params, seed, metrics, passed and sound, rows)


def _observed_dofs(obs, env: Environment) -> set[int]:
    tags = {r.tag for r in obs.recognizers}
    return {d for s in env.sources if s.tag in tags for d in s.dofs}


def no_replication_check(observer_spec: dict[str, Any], env_spec, cycles: int = 100,
                         seed: int = 0) -> Report:
    """A small observer can neither copy the full state nor tell apart two
    states that differ only outside the components it observes."""
    env = _env(env_spec)
    obs = build_observer(observer_spec, env.payload_width)

    try:
        obs.record_full_state(env)
        full_state = "succeeded"
    except CapacityExceeded:
        full_state = "CapacityExceeded"

    unobserved = sorted(set(range(env.num_dof)) - _observed_dofs(obs, env))
    if unobserved:
        d = unobserved[0]
        flipped = env.config[:d] + (1 - env.config[d],) + env.config[d + 1:]
        verdict = distinguish_states(obs, env, env.with_config(flipped), cycles, seed).value
    else:
        d, verdict = None, "no unobserved DOF"

    metrics = {
        "record_full_state": full_state,
        "full_state_bits": env.num_dof + FULL_STATE_OVERHEAD_BITS,
        "free_bits": obs.free_bits,
        "flipped_dof": d,
        "distinguish_states": verdict,
    }
    passed = full_state == "CapacityExceeded" and verdict == Verdict.INDISTINGUISHABLE.value
    params = {"cycles": cycles, "memory_capacity_bits": obs.memory_capacity_bits,
              "num_dof": env.num_dof}
    return Report("no-replication", params, seed, metrics, passed)


def _record_docs(report) -> list[dict[str, Any]]:
    if isinstance(report, SessionReport):
        return [r.to_dict() for r in report.records]
    if report.get("experiment") == "observe":  # verdict document written by ``run observe``
        report = report.get("metrics", {})
    return list(report.get("records", []))


def locc_audit(report, observer_spec: dict[str, Any], payload_width: int | None = None) -> Report:
    """Audit a session report against the observer's loaded tables.

    Every record must name a loaded recognizer and one of its extractors,
    carry the value that extractor holds, and come from DOFs inside the
    observer's declared window.
    """
    obs = build_observer(observer_spec, payload_width if payload_width is not None else
                         observer_spec.get("payload_width", 0))
    loaded = {r.source_id: obs.extractors[r.source_id] for r in obs.recognizers}
    bound = sum(fam.k for fam in loaded.values())
    records = _record_docs(report)

    failures = []
    pairs = set()
    for pos, rec in enumerate(records):
        problem = _audit_record(rec, loaded, obs.window)
        if problem:
            failures.append({"record": pos, "reason": problem})
        else:
            pairs.add((rec["source_id"], rec["k"]))

    metrics = {
        "records": len(records),
        "complete_provenance": len(records) - len(failures),
        "distinct_pairs": len(pairs),
        "pair_bound": bound,
        "failures": failures[:20],
    }
    passed = not failures and len(pairs) <= bound
    params = {"loaded_sources": sorted(loaded)}
    return Report("locc-audit", params, 0, metrics, passed)


def _audit_record(rec: dict[str, Any], loaded, window) -> str | None:
    prov = rec.get("provenance")
    if not isinstance(prov, dict):
        return "missing provenance"
    for key in ("window_read_id", "recognizer_id", "extractor_id"):
        if not isinstance(prov.get(key), str) or not prov[key]:
            return f"provenance.{key} missing"
    sid, k = rec.get("source_id"), rec.get("k")
    fam = loaded.get(sid)
    if fam is None or prov["recognizer_id"] != f"P:{sid}":
        return f"recognizer {prov['recognizer_id']!r} not loaded"
    if not isinstance(k, int) or not 0 <= k < fam.k or prov["extractor_id"] != fam.extractor_id(k):
        return f"extractor {prov['extractor_id']!r} not loaded"
    try:
        if scale_value(rec.get("value")) != fam.values[k]:
            return "value does not match extractor table"
    except (ValueError, TypeError):
        return "value unreadable"
    dofs = rec.get("dofs")
    if not isinstance(dofs, list):
        return "missing dofs"
    if window is not None and not window.issuperset(dofs):
        return f"dofs {dofs} outside window"
    return None


def objective_ignorance_experiment(env_spec, observable, trials: int, seed: int,
                                   census: bool = False, ensemble: str = "uniform",
                                   jobs: int = 1) -> Report:
    """Probe the observable's own component with a pattern-resolving
    observable and check the two fail to commute.

    Status is ``pass`` when some trial disagrees, ``vacuous`` when the
    back-action bit is 0 throughout the ensemble (nothing can be perturbed),
    and ``fail`` otherwise.
    """
    env = _env(env_spec)
    o = _observable(observable, env)
    if len(o.component) < 2:
        raise ComponentTooSmall(f"component {list(o.component)} has fewer than 2 DOFs")
    q = fine_grained(o)

    if census:
        configs = component_patterns(env.num_dof, o.component)
    else:
        configs = draw_ensemble(env, trials, np.random.default_rng(seed), ensemble)
    stats = commutativity_experiment(o, q, env, len(configs), ensemble=configs, jobs=jobs)
    oracle = commutativity_census(o, q, env.num_dof)

    vacuous = all(c[o.backaction_dof] == 0 for c in configs)
    if stats.disagreements > 0:
        status = "pass"
    elif vacuous:
        status = "vacuous"
    else:
        status = "fail"
    metrics = dict(stats.to_dict())
    metrics.update({
        "status": status,
        "census_rate": str(oracle.exact_rate),
        "exact_rate": str(stats.exact_rate),
    })
    params = {"trials": len(configs), "census": census, "ensemble": ensemble,
              "source": o.source_id, "component": list(o.component)}
    return Report("objective-ignorance", params, seed, metrics, status == "pass")


def commutativity_report(env_spec, observable_o, observable_q, trials: int, seed: int,
                         jobs: int = 1) -> Report:
    """Two-observer ordering experiment; passes when the outcome agrees with
    the component relation (orthogonal: no disagreement; overlapping: some)."""
    env = _env(env_spec)
    o = _observable(observable_o, env)
    q = _observable(observable_q, env)
    stats: AgreementStats = commutativity_experiment(
        o, q, env, trials, np.random.default_rng(seed), jobs=jobs)
    oracle = commutativity_census(o, q, env.num_dof)
    orthogonal = components_orthogonal(o, q)
    passed = stats.disagreements == 0 if orthogonal else stats.disagreements > 0
    metrics = dict(stats.to_dict())
    metrics.update({"orthogonal": orthogonal, "census_rate": str(oracle.exact_rate)})
    params = {"trials": trials, "O": o.source_id, "Q": q.source_id}
    return Report("commutativity", params, seed, metrics, passed, [stats.to_dict()])


def time_symmetry_check(env_spec, steps: int, trials: int, seed: int) -> Report:
    """Run each random initial configuration ``steps`` forward then
    ``steps`` backward and require exact recovery."""
    env = _env(env_spec)
    rng = np.random.default_rng(seed)
    rows = []
    recovered = 0
    for trial, start in enumerate(uniform_configurations(env.num_dof, trials, rng)):
        config = start
        for _ in range(steps):
            config = env.rule.apply(config)
        moved = config != start
        for _ in range(steps):
            config = env.rule.invert(config)
        ok = config == start
        recovered += ok
        rows.append({"trial": trial, "moved": moved, "recovered": ok})
    metrics = {"trials": trials, "recovered": recovered,
               "recovery_rate": recovered / trials if trials else 1.0}
    params = {"steps": steps, "num_dof": env.num_dof, "rule_len": len(env.rule.ops)}
    return Report("time-symmetry", params, seed, metrics, recovered == trials, rows)


def decompositional_equivalence_check(env_spec, alt_sources, steps: int, seed: int = 0) -> Report:
    """Compare configuration trajectories under two source labelings.

    ``alt_sources`` is a list of source entries or a whole environment
    document whose sources are used; a document with a different
    ``num_dof`` is rejected.
    """
    env = _env(env_spec)
    if isinstance(alt_sources, dict):
        if alt_sources.get("num_dof") != env.num_dof:
            raise SpecInvalid(
                f"labelings not comparable: {alt_sources.get('num_dof')} vs {env.num_dof}", "num_dof")
        alt_sources = alt_sources.get("sources", [])
    alt = repartition(env, alt_sources)
    traj_a = trajectory(env, steps)
    traj_b = trajectory(alt, steps)
    first_diff = next((t for t, (a, b) in enumerate(zip(traj_a, traj_b)) if a != b), None)
    metrics = {
        "steps": steps,
        "identical": first_diff is None,
        "first_divergent_step": first_diff,
        "sources_a": [s.source_id for s in env.sources],
        "sources_b": [s.source_id for s in alt.sources],
    }
    return Report("decomp-equivalence", {"steps": steps}, seed, metrics, first_diff is None)


def observe_report(observer_spec: dict[str, Any], env_spec, cycles: int, seed: int) -> tuple[Report, SessionReport]:
    env = _env(env_spec)
    obs = build_observer(observer_spec, env.payload_width)
    session = obs.observe_session(env, cycles, np.random.default_rng(seed))
    metrics = session.to_dict()
    rows = [{"cycle": r.cycle, "source_id": r.source_id, "k": r.k,
             "value": r.to_dict()["value"]} for r in session.records]
    return Report("observe", {"cycles": cycles}, seed, metrics, True, rows), session
