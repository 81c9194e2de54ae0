import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minobs.envmodel import (
    EmptyEnsemble,
    ReversibleRule,
    SpecInvalid,
    bits_from_str,
    bits_to_str,
    build_environment,
    emit_channel,
    inverse_step,
    random_rule,
    repartition,
    step,
    trajectory,
    true_fraction,
    uniform_configurations,
)


def env_with(rule, init, num_dof=None, **extra):
    spec = {"num_dof": num_dof or len(init), "init": init, "rule": rule, "payload_width": 2}
    spec.update(extra)
    return build_environment(spec)


# -- build_environment -------------------------------------------------------

def test_build_single_source():
    env = build_environment({
        "num_dof": 8,
        "sources": [{"id": "s1", "tag": "01", "dofs": [0, 1], "values": [0.0, 1.0, 2.0, 3.0]}],
    })
    assert env.sources[0].k == 4
    assert env.sources[0].values == (0, 1000, 2000, 3000)
    assert env.tag_width == 2
    assert len(env.config) == 8


def test_tags_must_be_prefix_free():
    with pytest.raises(SpecInvalid, match="tags not prefix-free"):
        build_environment({
            "num_dof": 4,
            "sources": [
                {"id": "a", "tag": "0", "dofs": [0], "values": [0]},
                {"id": "b", "tag": "01", "dofs": [1], "values": [0]},
            ],
        })


def test_k_at_payload_capacity_is_valid():
    env = build_environment({
        "num_dof": 4,
        "payload_width": 4,
        "sources": [{"id": "a", "tag": "1", "dofs": [0, 1, 2, 3], "values": list(range(16))}],
    })
    assert env.sources[0].k == 16


@pytest.mark.parametrize("source, field", [
    ({"id": "a", "tag": "1", "dofs": [0, 9], "values": [0]}, "sources[0].dofs"),
    ({"id": "a", "tag": "1", "dofs": [0], "values": []}, "sources[0].values"),
    ({"id": "a", "tag": "1", "dofs": [0], "values": [0] * 5}, "sources[0].values"),
    ({"id": "a", "tag": "", "dofs": [0], "values": [0]}, "sources[0].tag"),
    ({"id": "a", "tag": "1", "dofs": [], "values": [0]}, "sources[0].dofs"),
    ({"id": "a", "tag": "1", "dofs": [1, 1], "values": [0]}, "sources[0].dofs"),
])
def test_invalid_sources_name_field(source, field):
    with pytest.raises(SpecInvalid) as err:
        build_environment({"num_dof": 4, "payload_width": 2, "sources": [source]})
    assert err.value.field == field


@pytest.mark.parametrize("spec, field", [
    ({"num_dof": 0}, "num_dof"),
    ({"num_dof": 4, "epsilon": 1.5}, "epsilon"),
    ({"num_dof": 4, "init": "101"}, "init"),
    ({"num_dof": 4, "init": "10x1"}, "init"),
    ({"num_dof": 4, "rule": [["NOT", 4]]}, "rule[0]"),
    ({"num_dof": 4, "rule": [["CXOR", 1, 1]]}, "rule[0]"),
    ({"num_dof": 4, "rule": [["ROT", 1]]}, "rule[0]"),
])
def test_invalid_documents(spec, field):
    with pytest.raises(SpecInvalid) as err:
        build_environment(spec)
    assert err.value.field == field


def test_random_init_is_seeded():
    a = build_environment({"num_dof": 32, "seed": 5})
    b = build_environment({"num_dof": 32, "seed": 5})
    c = build_environment({"num_dof": 32, "seed": 6})
    assert a.config == b.config
    assert a.config != c.config


# -- step / inverse_step -------------------------------------------------------

def test_empty_rule_is_identity():
    assert bits_to_str(step(env_with([], "1010")).config) == "1010"


def test_not_flips_leftmost():
    assert bits_to_str(step(env_with([["NOT", 0]], "0000")).config) == "1000"
    assert bits_to_str(inverse_step(env_with([["NOT", 0]], "1000")).config) == "0000"


def test_cxor_then_swap_golden():
    # by hand: 1000 -CXOR(0,1)-> 1100 -SWAP(1,2)-> 1010
    env = env_with([["CXOR", 0, 1], ["SWAP", 1, 2]], "1000")
    assert bits_to_str(step(env).config) == "1010"


def test_cxor_then_swap_round_trip_all_4bit():
    rule = [["CXOR", 0, 1], ["SWAP", 1, 2]]
    images = set()
    for bits in itertools.product("01", repeat=4):
        env = env_with(rule, "".join(bits))
        forward = step(env)
        images.add(forward.config)
        assert inverse_step(forward).config == env.config
    assert len(images) == 16


def test_rule_inverse_is_reversed_list():
    rule = ReversibleRule.from_list([["CXOR", 0, 1], ["SWAP", 1, 2], ["NOT", 3]], 4)
    assert rule.inverse().ops == tuple(reversed(rule.ops))
    c = bits_from_str("1101")
    assert rule.inverse().apply(rule.apply(c)) == c


def test_reversibility_exhaustive_small():
    # every configuration for num_dof <= 12 is recovered; bijection checked by image count
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 8, 12):
        rule = random_rule(n, 3 * n, rng)
        images = set()
        for word in itertools.product((0, 1), repeat=n):
            image = rule.apply(word)
            images.add(image)
            assert rule.invert(image) == word
        assert len(images) == 2 ** n


def test_reversibility_random_large():
    rng = np.random.default_rng(1)
    rule = random_rule(40, 200, rng)
    for c in uniform_configurations(40, 10_000, rng):
        assert rule.invert(rule.apply(c)) == c


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 2 ** 16 - 1), min_size=0, max_size=30),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
)))
def test_reversibility_property(data):
    seeds, bits = data
    n = len(bits)
    ops = []
    for s in seeds:
        kind, a, b = s % 3, (s // 3) % n, (s // 48) % n
        if kind == 2 or a == b:
            ops.append(["NOT", a])
        else:
            ops.append(["SWAP" if kind == 0 else "CXOR", a, b])
    env = env_with(ops, bits_to_str(bits))
    assert inverse_step(step(env)).config == env.config


# -- emit_channel ---------------------------------------------------------------

def test_noiseless_message_body():
    env = build_environment({
        "num_dof": 4, "init": "1000", "payload_width": 2,
        "sources": [{"id": "s", "tag": "01", "dofs": [0, 1], "values": [0, 1, 2, 3]}],
    })
    slots = emit_channel(env, np.random.default_rng(0))
    messages = [s for s in slots if s.is_message]
    assert [m.body for m in messages] == ["0110"]
    assert messages[0].origin == (0, 1)


def test_zero_sources_gives_noise_only():
    env = build_environment({"num_dof": 4, "noise_slot_len": 5})
    slots = emit_channel(env, np.random.default_rng(0))
    assert slots and all(not s.is_message for s in slots)
    assert all(len(s.body) == 5 for s in slots)


def test_slot_layout_interleaves_noise(three_source_spec):
    env = build_environment(three_source_spec)
    slots = emit_channel(env, np.random.default_rng(0))
    assert [s.header for s in slots] == [0, 1, 0, 1, 0, 1, 0]
    assert all(len(s.body) == env.tag_width + env.payload_width for s in slots if s.is_message)


def test_certain_flip_complements_body(three_source_spec):
    clean = build_environment(three_source_spec)
    noisy = build_environment(dict(three_source_spec, epsilon=1))
    a = emit_channel(clean, np.random.default_rng(4))
    b = emit_channel(noisy, np.random.default_rng(4))
    for x, y in zip(a, b):
        if x.is_message:
            assert all(p != q for p, q in zip(x.body, y.body))
        else:
            assert x == y  # same draw order whatever epsilon is


def test_partial_noise_flip_rate():
    spec = {"num_dof": 4, "init": "0000", "epsilon": 0.25, "payload_width": 2,
            "sources": [{"id": "s", "tag": "0000", "dofs": [0, 1], "values": [0, 1, 2, 3]}]}
    env = build_environment(spec)
    rng = np.random.default_rng(9)
    ones = sum(
        s.body.count("1") for _ in range(5000) for s in emit_channel(env, rng) if s.is_message
    )
    n = 5000 * 6
    assert abs(ones / n - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / n)


def test_channel_slot_structure_ignores_labels(three_source_spec):
    env = build_environment(three_source_spec)
    relabeled = repartition(env, [
        {"id": "X", "tag": "11", "dofs": [0, 1], "values": [0, 1, 2, 3]},
        {"id": "Y", "tag": "01", "dofs": [2, 3], "values": [0, 1, 2, 3]},
        {"id": "Z", "tag": "00", "dofs": [4, 5], "values": [0, 1, 2, 3]},
    ])
    a = emit_channel(env, np.random.default_rng(2))
    b = emit_channel(relabeled, np.random.default_rng(2))
    assert [s.header for s in a] == [s.header for s in b]
    assert [s.body for s in a if not s.is_message] == [s.body for s in b if not s.is_message]
    assert [s.body[2:] for s in a if s.is_message] == [s.body[2:] for s in b if s.is_message]


# -- true_fraction ---------------------------------------------------------------

def _source_env():
    return build_environment({
        "num_dof": 3, "payload_width": 2,
        "sources": [{"id": "s", "tag": "1", "dofs": [0, 1], "values": [0, 1, 2, 3]}],
    })


def test_true_fraction_counts():
    src = _source_env().sources[0]
    ensemble = [bits_from_str(b) for b in ("000", "001", "010", "100")]  # indices 0,0,1,2
    assert true_fraction(ensemble, src, 0) == Fraction(1, 2)
    assert true_fraction(ensemble, src, 3) == 0


def test_true_fraction_degenerate_and_empty():
    src = _source_env().sources[0]
    assert true_fraction([bits_from_str("110")] * 7, src, 3) == 1
    with pytest.raises(EmptyEnsemble):
        true_fraction([], src, 0)
    with pytest.raises(ValueError):
        true_fraction([bits_from_str("110")], src, 4)


def test_true_fraction_uniform_binomial():
    env = build_environment({
        "num_dof": 16, "payload_width": 2,
        "sources": [{"id": "s", "tag": "1", "dofs": [3, 7], "values": [0, 1, 2, 3]}],
    })
    ensemble = uniform_configurations(16, 100_000, np.random.default_rng(12))
    sigma = math.sqrt(0.25 * 0.75 / 100_000)
    for k in range(4):
        assert abs(float(true_fraction(ensemble, env.sources[0], k)) - 0.25) <= 3 * sigma


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 1), min_size=5, max_size=5), min_size=1, max_size=40),
       st.integers(1, 8))
def test_fraction_normalization(configs, k):
    env = build_environment({
        "num_dof": 5, "payload_width": 3,
        "sources": [{"id": "s", "tag": "1", "dofs": [0, 2, 4], "values": list(range(k))}],
    })
    ensemble = [tuple(c) for c in configs]
    src = env.sources[0]
    assert sum(true_fraction(ensemble, src, j) for j in range(k)) == 1
    assert all(src.read_index(c) == src.read_index(tuple(c)) for c in ensemble)


def test_read_index_is_mod_k():
    env = build_environment({
        "num_dof": 3, "init": "111", "payload_width": 2,
        "sources": [{"id": "s", "tag": "1", "dofs": [0, 1, 2], "values": [0, 1, 2]}],
    })
    assert env.read_index(env.sources[0]) == 7 % 3


# -- repartition ----------------------------------------------------------------

def test_repartition_split_keeps_trajectory():
    spec = {
        "num_dof": 8, "seed": 4, "payload_width": 4,
        "rule": [["CXOR", 0, 5], ["SWAP", 2, 7], ["NOT", 3], ["CXOR", 6, 1]],
        "sources": [{"id": "whole", "tag": "1", "dofs": [0, 1, 2, 3], "values": list(range(16))}],
    }
    env = build_environment(spec)
    split = repartition(env, [
        {"id": "lo", "tag": "10", "dofs": [0, 1], "values": [0, 1, 2, 3]},
        {"id": "hi", "tag": "11", "dofs": [2, 3], "values": [0, 1, 2, 3]},
    ])
    assert [s.source_id for s in split.sources] == ["lo", "hi"]
    assert trajectory(env, 1000) == trajectory(split, 1000)
    same = repartition(env, spec["sources"])
    assert trajectory(env, 50) == trajectory(same, 50)


def test_repartition_rejects_bad_index():
    env = build_environment({"num_dof": 4})
    with pytest.raises(SpecInvalid):
        repartition(env, [{"id": "x", "tag": "1", "dofs": [4], "values": [0]}])
