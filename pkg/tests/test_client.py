import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rqsim.client import (
    PATTERN_BASED,
    ClientConfig,
    InsufficientDummiesError,
    QueryBlock,
    Trace,
    generate_trace,
    generate_trace_pattern_based,
    generate_trace_random,
    pad_pattern,
    trace_from_json,
    trace_to_json,
    view_1bd,
    view_abd,
)
from rqsim.patterns import DummyDatabase, Pattern, PatternDatabase

from conftest import ABD_BLOCKS, RAPECRISIS


def worked_trace(dedupe=False):
    desired = ["www.rapecrisis.org.uk", "twitter.com", "www.rapecrisislondon.org"]
    blocks = tuple(QueryBlock(tuple(sorted(b)), d) for b, d in zip(ABD_BLOCKS, desired))
    return Trace(blocks, 0, 3, dedupe)


@pytest.fixture
def dummies(small_synth_db):
    return DummyDatabase(small_synth_db.all_names)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"block_size": 0},
            {"block_size": 3, "strategy": "bogus"},
            {"block_size": 3, "variable_n": (0, 4)},
            {"block_size": 3, "variable_n": (5, 4)},
            {"block_size": 3, "padding_multiple": 3},
            {"block_size": 3, "strategy": PATTERN_BASED, "padding_multiple": 1},
            {"block_size": 3, "strategy": PATTERN_BASED, "variable_n": (2, 4)},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ClientConfig(**kw)


class TestRandomSet:
    def test_n1_singletons(self, dummies):
        t = generate_trace_random(RAPECRISIS, ClientConfig(1), dummies, np.random.default_rng(0))
        assert [b.queries for b in t.blocks] == [(n,) for n in RAPECRISIS.names]

    def test_n3_shape(self, dummies):
        t = generate_trace_random(RAPECRISIS, ClientConfig(3), dummies, np.random.default_rng(0))
        assert len(t.blocks) == 3
        assert all(len(b.queries) == 3 for b in t.blocks)
        assert t.blocks[0].desired == "www.rapecrisis.org.uk"
        assert [b.desired for b in t.blocks] == list(RAPECRISIS.names)

    def test_deterministic(self, dummies):
        cfg = ClientConfig(10)
        a = generate_trace_random(RAPECRISIS, cfg, dummies, np.random.default_rng(42))
        b = generate_trace_random(RAPECRISIS, cfg, dummies, np.random.default_rng(42))
        assert a == b

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 299), st.integers(1, 60), st.integers(0, 2**32))
    def test_block_invariants(self, small_synth_db, pid, n, seed):
        pattern = small_synth_db[pid]
        dummies = DummyDatabase(small_synth_db.all_names)
        t = generate_trace_random(pattern, ClientConfig(n), dummies, np.random.default_rng(seed), pid)
        assert len(t) == len(pattern)
        for b, desired in zip(t.blocks, pattern.names):
            assert b.desired == desired
            assert len(b.queries) == n
            assert len(set(b.queries)) == n
        assert {b.desired for b in t.blocks} == set(pattern.names)

    def test_desired_outside_dummy_db(self):
        dummies = DummyDatabase(["x1", "x2"])
        t = generate_trace_random(Pattern("p", ("s",)), ClientConfig(3), dummies, np.random.default_rng(0))
        assert [set(b.queries) for b in t.blocks] == [{"p", "x1", "x2"}, {"s", "x1", "x2"}]

    def test_dummies_too_small(self):
        with pytest.raises(InsufficientDummiesError):
            generate_trace_random(RAPECRISIS, ClientConfig(5), DummyDatabase(["a", "b"]), np.random.default_rng(0))

    def test_desired_excluded_from_own_draw(self):
        # pool of 3 including the desired name: N=3 forces both others
        dummies = DummyDatabase(["p", "x", "y"])
        t = generate_trace_random(Pattern("p"), ClientConfig(3), dummies, np.random.default_rng(1))
        assert t.blocks[0].queries == ("p", "x", "y")

    def test_dummy_draw_is_uniform(self):
        dummies = DummyDatabase([f"n{i}" for i in range(6)])
        rng = np.random.default_rng(8)
        counts = {}
        for _ in range(6000):
            t = generate_trace_random(Pattern("n2"), ClientConfig(3), dummies, rng)
            key = t.blocks[0].queries
            counts[key] = counts.get(key, 0) + 1
        # C(5, 2) = 10 equally likely pairs
        assert len(counts) == 10
        assert all(abs(c - 600) < 5 * np.sqrt(600) for c in counts.values())

    def test_variable_n(self, dummies, small_synth_db):
        pattern = max(small_synth_db.patterns, key=len)
        cfg = ClientConfig(5, variable_n=(2, 6))
        t = generate_trace_random(pattern, cfg, dummies, np.random.default_rng(3))
        sizes = {len(b.queries) for b in t.blocks}
        assert sizes <= set(range(2, 7))
        assert len(sizes) > 1


def two_disjoint_pairs():
    return PatternDatabase([Pattern("a1", ("a2",)), Pattern("b1", ("b2",))])


class TestPatternBased:
    def test_forced_selection(self):
        db = two_disjoint_pairs()
        cfg = ClientConfig(2, strategy=PATTERN_BASED)
        t = generate_trace_pattern_based(db[0], cfg, db, np.random.default_rng(0))
        assert [set(b.queries) for b in t.blocks] == [{"a1", "b1"}, {"a2", "b2"}]
        assert t.true_pattern_id == 0

    def test_concatenated_dummy(self):
        target = Pattern("t1", ("t2", "t3", "t4", "t5"))
        db = PatternDatabase([target, Pattern("a1", ("a2",)), Pattern("b1", ("b2", "b3"))])
        cfg = ClientConfig(2, strategy=PATTERN_BASED)
        t = generate_trace_pattern_based(target, cfg, db, np.random.default_rng(0), 0)
        dummy = [next(q for q in b.queries if q != b.desired) for b in t.blocks]
        # the only valid pairs are (a, b) and (b, a)
        assert dummy in (["a1", "a2", "b1", "b2", "b3"], ["b1", "b2", "b3", "a1", "a2"])
        seen = set()
        for seed in range(40):
            t = generate_trace_pattern_based(target, cfg, db, np.random.default_rng(seed), 0)
            seen.add(next(q for q in t.blocks[0].queries if q != "t1"))
        assert seen == {"a1", "b1"}

    def test_insufficient(self):
        target = Pattern("t1", ("t2", "t3", "t4", "t5"))
        db = PatternDatabase([target, Pattern("a1", ("a2",))])
        with pytest.raises(InsufficientDummiesError, match="insufficient dummy patterns"):
            generate_trace_pattern_based(target, ClientConfig(2, strategy=PATTERN_BASED), db, np.random.default_rng(0))

    def test_pattern_must_be_in_db(self):
        with pytest.raises(ValueError):
            generate_trace_pattern_based(
                Pattern("zz"), ClientConfig(2, strategy=PATTERN_BASED), two_disjoint_pairs(), np.random.default_rng(0)
            )

    def test_blocks_decompose_into_patterns(self, disjoint_db):
        n = 4
        cfg = ClientConfig(n, strategy=PATTERN_BASED)
        length = max(disjoint_db.index_by_length, key=lambda m: len(disjoint_db.by_length(m)))
        pid = disjoint_db.by_length(length)[0]
        t = generate_trace_pattern_based(disjoint_db[pid], cfg, disjoint_db, np.random.default_rng(4), pid)
        assert all(len(b.queries) == n for b in t.blocks)
        # every name in block 0 is a primary of a same-length pattern whose
        # i-th name sits in block i
        for primary in t.blocks[0].queries:
            (qid,) = disjoint_db.by_primary(primary)
            q = disjoint_db[qid]
            assert len(q) == length
            assert all(name in b.queries for name, b in zip(q.names, t.blocks))

    def test_padding(self, disjoint_db):
        pid = next(p for p in range(len(disjoint_db)) if len(disjoint_db[p]) % 5)
        cfg = ClientConfig(3, strategy=PATTERN_BASED, padding_multiple=5)
        t = generate_trace_pattern_based(disjoint_db[pid], cfg, disjoint_db, np.random.default_rng(0), pid)
        assert len(t) % 5 == 0
        assert len(t) > len(disjoint_db[pid])
        assert t.true_length == len(disjoint_db[pid])
        assert [b.desired for b in t.blocks[: t.true_length]] == list(disjoint_db[pid].names)

    def test_pad_pattern(self, disjoint_db):
        p = Pattern("x", ("y",))
        padded = pad_pattern(p, 4, disjoint_db, np.random.default_rng(0))
        assert len(padded) == 4
        assert padded.names[:2] == ("x", "y")
        assert set(padded.names[2:]) <= disjoint_db.all_names
        assert pad_pattern(padded, 4, disjoint_db, np.random.default_rng(0)) is padded

    def test_dispatch(self):
        db = two_disjoint_pairs()
        t = generate_trace(db[1], ClientConfig(2, strategy=PATTERN_BASED), np.random.default_rng(0), db=db)
        assert t.true_pattern_id == 1
        with pytest.raises(ValueError):
            generate_trace(db[1], ClientConfig(2), np.random.default_rng(0), db=db)


class TestViews:
    def test_single_block(self):
        t = Trace((QueryBlock(("a", "b"), "a"),), 0, 1)
        v = view_1bd(t)
        assert v.first_block == {"a", "b"}
        assert v.rest_union == frozenset()
        assert v.rest_query_count == 0

    def test_worked_example_1bd(self):
        v = view_1bd(worked_trace())
        assert v.first_block == ABD_BLOCKS[0]
        assert v.rest_union == {
            "github.com", "twitter.com", "www.rapecrisislondon.org", "s.ebay.de", "ytimg.com", "conn.skype.com",
        }
        assert v.rest_query_count == 6

    def test_dedupe_counts_repeats_once(self):
        blocks = (
            QueryBlock(("a", "x", "y"), "a"),
            QueryBlock(("b", "d", "e"), "b"),
            QueryBlock(("c", "d", "f"), "c"),
        )
        v = view_1bd(Trace(blocks, 0, 3, dedupe_across_blocks=True))
        assert v.rest_query_count == 5
        assert len(v.rest_union) == 5
        assert view_1bd(Trace(blocks, 0, 3)).rest_query_count == 6

    def test_dedupe_against_first_block(self):
        blocks = (QueryBlock(("a", "x"), "a"), QueryBlock(("b", "x"), "b"))
        v = view_1bd(Trace(blocks, 0, 2, dedupe_across_blocks=True))
        assert v.rest_query_count == 1
        assert v.rest_union == {"b", "x"}

    def test_abd_example(self):
        v = view_abd(worked_trace())
        assert v.blocks == ABD_BLOCKS

    def test_abd_n1(self, dummies, small_synth_db):
        pattern = max(small_synth_db.patterns, key=len)
        t = generate_trace_random(pattern, ClientConfig(1), dummies, np.random.default_rng(0))
        v = view_abd(t)
        assert len(v.blocks) == len(t.blocks) == len(pattern)
        assert all(len(b) == 1 for b in v.blocks)


def test_trace_json_round_trip(dummies):
    t = generate_trace_random(RAPECRISIS, ClientConfig(4, dedupe_across_blocks=True), dummies, np.random.default_rng(0), 7)
    line = trace_to_json(t)
    assert "\n" not in line
    assert trace_from_json(line) == t
