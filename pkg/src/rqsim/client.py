"""Range query client: turns a website visit into a trace of query blocks.

Two dummy strategies are supported. ``random_set`` hides every desired name
among N-1 names drawn independently per block from the dummy database.
``pattern_based`` draws N-1 whole patterns of the same length and
interleaves them with the desired pattern, block by block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .patterns import DummyDatabase, Pattern, PatternDatabase

__all__ = [
    "RANDOM_SET",
    "PATTERN_BASED",
    "ClientConfig",
    "QueryBlock",
    "Trace",
    "AdversaryView1BD",
    "AdversaryViewABD",
    "InsufficientDummiesError",
    "generate_trace",
    "generate_trace_random",
    "generate_trace_pattern_based",
    "pad_pattern",
    "view_1bd",
    "view_abd",
    "trace_to_json",
    "trace_from_json",
]

RANDOM_SET = "random_set"
PATTERN_BASED = "pattern_based"


class InsufficientDummiesError(ValueError):
    pass


@dataclass(frozen=True)
class ClientConfig:
    block_size: int
    strategy: str = RANDOM_SET
    variable_n: tuple[int, int] | None = None
    padding_multiple: int | None = None
    dedupe_across_blocks: bool = False

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.strategy not in (RANDOM_SET, PATTERN_BASED):
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if self.variable_n is not None:
            lo, hi = self.variable_n
            if not 1 <= lo <= hi:
                raise ValueError("variable_n requires 1 <= min <= max")
            if self.strategy != RANDOM_SET:
                raise ValueError("variable_n is only supported with strategy random_set")
        if self.padding_multiple is not None:
            if self.padding_multiple <= 1:
                raise ValueError("padding_multiple must be > 1")
            if self.strategy != PATTERN_BASED:
                raise ValueError("padding_multiple requires strategy pattern_based")

    @property
    def max_block_size(self) -> int:
        return self.variable_n[1] if self.variable_n else self.block_size


@dataclass(frozen=True)
class QueryBlock:
    queries: tuple[str, ...]  # sorted; order carries no information
    desired: str

    def __post_init__(self):
        if self.desired not in self.queries:
            raise ValueError("desired name missing from its block")


@dataclass(frozen=True)
class Trace:
    blocks: tuple[QueryBlock, ...]
    true_pattern_id: int
    true_length: int
    dedupe_across_blocks: bool = False

    def __len__(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class AdversaryView1BD:
    first_block: frozenset[str]
    rest_union: frozenset[str]
    rest_query_count: int


@dataclass(frozen=True)
class AdversaryViewABD:
    blocks: tuple[frozenset[str], ...]


def _block(desired: str, dummies: Iterable[str]) -> QueryBlock:
    return QueryBlock(tuple(sorted({desired, *dummies})), desired)


def _draw_dummies(rng: np.random.Generator, dummies: DummyDatabase, desired: str, k: int) -> list[str]:
    if k == 0:
        return []
    skip = dummies.index(desired)
    pool = dummies.size - (skip is not None)
    if k > pool:
        raise InsufficientDummiesError(
            f"cannot draw {k} dummies from a pool of {pool} names"
        )
    picks = rng.choice(pool, size=k, replace=False)
    if skip is not None:
        picks = picks + (picks >= skip)
    names = dummies.names
    return [names[i] for i in picks]


def generate_trace_random(
    pattern: Pattern,
    cfg: ClientConfig,
    dummies: DummyDatabase,
    rng: np.random.Generator,
    pattern_id: int = -1,
) -> Trace:
    if cfg.strategy != RANDOM_SET:
        raise ValueError("generate_trace_random requires strategy random_set")
    if dummies.size < cfg.max_block_size - 1 or dummies.size < 1:
        raise InsufficientDummiesError(
            f"dummy database of {dummies.size} names is too small for N={cfg.max_block_size}"
        )
    blocks = []
    for desired in pattern.names:
        if cfg.variable_n is not None:
            n = int(rng.integers(cfg.variable_n[0], cfg.variable_n[1] + 1))
        else:
            n = cfg.block_size
        blocks.append(_block(desired, _draw_dummies(rng, dummies, desired, n - 1)))
    return Trace(tuple(blocks), pattern_id, len(pattern), cfg.dedupe_across_blocks)


def pad_pattern(pattern: Pattern, multiple: int, db: PatternDatabase, rng: np.random.Generator) -> Pattern:
    """Extend ``pattern`` with random foreign names to a multiple of ``multiple``."""
    target = -(-len(pattern) // multiple) * multiple
    extra = target - len(pattern)
    if extra == 0:
        return pattern
    own = set(pattern.names)
    pool = db.sorted_names
    if len(db.all_names - own) < extra:
        raise InsufficientDummiesError("not enough names to pad the pattern")
    padding: list[str] = []
    while len(padding) < extra:
        name = pool[int(rng.integers(len(pool)))]
        if name not in own:
            own.add(name)
            padding.append(name)
    return Pattern(pattern.primary, pattern.secondaries + tuple(padding))


def _concat_dummy(
    length: int,
    buckets: dict[int, list[int]],
    used: set[int],
    db: PatternDatabase,
    rng: np.random.Generator,
) -> tuple[str, ...]:
    # ordered pairs (a, b), a != b, |a| + |b| = length, neither already used
    avail = {n: [pid for pid in ids if pid not in used] for n, ids in buckets.items() if n < length}
    options, weights = [], []
    for la in sorted(avail):
        lb = length - la
        if lb not in avail:
            continue
        w = len(avail[la]) * len(avail[lb]) - (len(avail[la]) if la == lb else 0)
        if w > 0:
            options.append(la)
            weights.append(w)
    if not options:
        raise InsufficientDummiesError("insufficient dummy patterns")
    w = np.asarray(weights, dtype=float)
    la = options[int(rng.choice(len(options), p=w / w.sum()))]
    lb = length - la
    a = avail[la][int(rng.integers(len(avail[la])))]
    rest = [pid for pid in avail[lb] if pid != a]
    b = rest[int(rng.integers(len(rest)))]
    used.update((a, b))
    return db.patterns[a].names + db.patterns[b].names


def generate_trace_pattern_based(
    pattern: Pattern,
    cfg: ClientConfig,
    db: PatternDatabase,
    rng: np.random.Generator,
    pattern_id: int | None = None,
) -> Trace:
    """Hide ``pattern`` among N-1 whole patterns of the same length.

    Missing same-length dummies are replaced by the concatenation of two
    shorter patterns whose lengths add up. With ``padding_multiple`` set the
    desired pattern is first padded with random names and the dummies are
    drawn for the padded length.
    """
    if cfg.strategy != PATTERN_BASED:
        raise ValueError("generate_trace_pattern_based requires strategy pattern_based")
    if pattern_id is None:
        ids = [pid for pid in db.by_primary(pattern.primary) if db.patterns[pid] == pattern]
        if not ids:
            raise ValueError("pattern is not contained in the database")
        pattern_id = ids[0]
    true_length = len(pattern)
    if cfg.padding_multiple is not None:
        pattern = pad_pattern(pattern, cfg.padding_multiple, db, rng)
    length = len(pattern)

    need = cfg.block_size - 1
    same = [pid for pid in db.by_length(length) if pid != pattern_id]
    take = min(need, len(same))
    chosen = [same[i] for i in rng.choice(len(same), size=take, replace=False)] if take else []
    dummy_names = [db.patterns[pid].names for pid in chosen]
    if take < need:
        used = set(chosen) | {pattern_id}
        buckets = {n: list(ids) for n, ids in db.index_by_length.items()}
        for _ in range(need - take):
            dummy_names.append(_concat_dummy(length, buckets, used, db, rng))

    blocks = []
    for i, desired in enumerate(pattern.names):
        blocks.append(_block(desired, (names[i] for names in dummy_names)))
    return Trace(tuple(blocks), pattern_id, true_length, cfg.dedupe_across_blocks)


def generate_trace(
    pattern: Pattern,
    cfg: ClientConfig,
    rng: np.random.Generator,
    *,
    dummies: DummyDatabase | None = None,
    db: PatternDatabase | None = None,
    pattern_id: int | None = None,
) -> Trace:
    """Dispatch on ``cfg.strategy``."""
    if cfg.strategy == RANDOM_SET:
        if dummies is None:
            raise ValueError("random_set strategy needs a dummy database")
        return generate_trace_random(pattern, cfg, dummies, rng, -1 if pattern_id is None else pattern_id)
    if db is None:
        raise ValueError("pattern_based strategy needs the pattern database")
    return generate_trace_pattern_based(pattern, cfg, db, rng, pattern_id)


def view_1bd(trace: Trace) -> AdversaryView1BD:
    """Project a trace onto what an adversary sees when only block 1 is separable.

    With ``dedupe_across_blocks`` the rest query count omits names the stub
    resolver would answer from its cache, i.e. names already sent earlier.
    """
    if not trace.blocks:
        raise ValueError("trace has no blocks")
    first = frozenset(trace.blocks[0].queries)
    rest: set[str] = set()
    if trace.dedupe_across_blocks:
        emitted = set(first)
        count = 0
        for b in trace.blocks[1:]:
            for q in b.queries:
                if q not in emitted:
                    emitted.add(q)
                    count += 1
            rest.update(b.queries)
    else:
        count = 0
        for b in trace.blocks[1:]:
            rest.update(b.queries)
            count += len(b.queries)
    return AdversaryView1BD(first, frozenset(rest), count)


def view_abd(trace: Trace) -> AdversaryViewABD:
    return AdversaryViewABD(tuple(frozenset(b.queries) for b in trace.blocks))


def trace_to_json(trace: Trace) -> str:
    return json.dumps(
        {
            "blocks": [list(b.queries) for b in trace.blocks],
            "truth": {
                "pattern_id": trace.true_pattern_id,
                "true_length": trace.true_length,
                "desired": [b.desired for b in trace.blocks],
                "dedupe_across_blocks": trace.dedupe_across_blocks,
            },
        },
        sort_keys=True,
    )


def trace_from_json(line: str) -> Trace:
    rec = json.loads(line)
    truth = rec["truth"]
    blocks = tuple(
        QueryBlock(tuple(sorted(qs)), d) for qs, d in zip(rec["blocks"], truth["desired"], strict=True)
    )
    return Trace(blocks, truth["pattern_id"], truth["true_length"], truth["dedupe_across_blocks"])
