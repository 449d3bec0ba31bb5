"""Semantic intersection attack against range-query traces.

The adversary holds a pattern database and checks which patterns could have
produced the observed query blocks. Three scenarios are implemented:

* ``1bd``: only the first block is separable; a pattern matches if its
  primary is in the first block and all secondaries occur later.
* ``1bd_improved``: as ``1bd`` but candidates whose length falls outside an
  estimate derived from the number of later queries are rejected.
* ``abd``: every block is separable; a pattern of the right length matches
  if its names can be assigned to the blocks one-to-one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

from .client import AdversaryView1BD, AdversaryViewABD
from .patterns import PatternDatabase

__all__ = [
    "SCENARIO_1BD",
    "SCENARIO_1BD_IMPROVED",
    "SCENARIO_ABD",
    "SCENARIOS",
    "AttackResult",
    "LengthEstimate",
    "attack_1bd",
    "attack_1bd_improved",
    "attack_abd",
    "estimate_length",
    "has_perfect_matching",
    "k_identifiability",
]

SCENARIO_1BD = "1bd"
SCENARIO_1BD_IMPROVED = "1bd_improved"
SCENARIO_ABD = "abd"
SCENARIOS = (SCENARIO_1BD, SCENARIO_1BD_IMPROVED, SCENARIO_ABD)


@dataclass(frozen=True)
class AttackResult:
    matches: frozenset[int]
    scenario: str

    @property
    def k(self) -> int:
        return len(self.matches)

    def to_json(self, db: PatternDatabase) -> str:
        return json.dumps(
            {
                "scenario": self.scenario,
                "k": self.k,
                "matches": sorted(db.patterns[pid].primary for pid in self.matches),
            }
        )


@dataclass(frozen=True)
class LengthEstimate:
    min_len: int
    max_len: int

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"invalid length range [{self.min_len}, {self.max_len}]")

    def __contains__(self, length: int) -> bool:
        return self.min_len <= length <= self.max_len


def k_identifiability(result: AttackResult) -> int:
    return len(result.matches)


def attack_1bd(view: AdversaryView1BD, db: PatternDatabase) -> AttackResult:
    rest = view.rest_union
    matches = set()
    for name in view.first_block:
        for pid in db.by_primary(name):
            if all(s in rest for s in db.patterns[pid].secondaries):
                matches.add(pid)
    return AttackResult(frozenset(matches), SCENARIO_1BD)


def _occupancy_moments(draws: int, pool: int) -> tuple[float, float]:
    # distinct values among `draws` uniform picks from `pool` values
    a = math.exp(draws * math.log1p(-1.0 / pool)) if pool > 1 else 0.0
    b = math.exp(draws * math.log1p(-2.0 / pool)) if pool > 2 else 0.0
    mean = pool * (1.0 - a)
    var = pool * a + pool * (pool - 1) * b - pool * pool * a * a
    return mean, math.sqrt(max(var, 0.0))


def estimate_length(
    view: AdversaryView1BD,
    block_size: int | tuple[int, int],
    *,
    dedupe: bool = False,
    slack: int = 1,
    dummy_db_size: int | None = None,
    z: float = 6.0,
) -> LengthEstimate:
    """Estimate the range of plausible pattern lengths from the later-query count.

    Without cross-block deduplication every later block holds exactly N
    queries, so the length follows from T = (|p| - 1) * N. With
    deduplication T only bounds the length from below; the upper end is
    ``min_len + slack``, widened when ``dummy_db_size`` is known to cover
    the expected number of absorbed repeats (``z`` standard deviations of
    the occupancy distribution). ``block_size`` may be a ``(min, max)``
    range when the client varies N per block.
    """
    t = view.rest_query_count
    if t < 0:
        raise ValueError("query count must be non-negative")
    if slack < 0:
        raise ValueError("slack must be non-negative")
    lo_n, hi_n = block_size if isinstance(block_size, tuple) else (block_size, block_size)
    if not 1 <= lo_n <= hi_n:
        raise ValueError("block size must be >= 1")

    min_len = -(-t // hi_n) + 1
    max_len = t // lo_n + 1
    if not dedupe:
        if min_len > max_len:
            raise ValueError(f"query count {t} is inconsistent with block size {block_size}")
        return LengthEstimate(min_len, max_len)

    max_len = max(min_len, max_len) + slack
    if dummy_db_size is not None and dummy_db_size > 0:
        # distinct names observed overall: the first block plus T new names
        observed = len(view.first_block) + t
        length = max_len
        while True:
            mean, sd = _occupancy_moments((length + 1) * lo_n, dummy_db_size + length + 1)
            if mean - z * sd > observed:
                break
            length += 1
        max_len = max(max_len, length)
    return LengthEstimate(min_len, max_len)


def attack_1bd_improved(
    view: AdversaryView1BD,
    db: PatternDatabase,
    block_size: int | tuple[int, int],
    **estimate_kw,
) -> AttackResult:
    est = estimate_length(view, block_size, **estimate_kw)
    base = attack_1bd(view, db)
    matches = frozenset(pid for pid in base.matches if len(db.patterns[pid]) in est)
    return AttackResult(matches, SCENARIO_1BD_IMPROVED)


def has_perfect_matching(adjacency: Sequence[Sequence[int]], n_right: int) -> bool:
    """True if every left vertex can be matched to a distinct right vertex.

    ``adjacency[u]`` lists the right vertices adjacent to left vertex ``u``.
    Augmenting-path search (Kuhn's algorithm), iterative to stay clear of
    the recursion limit on long patterns.
    """
    n_left = len(adjacency)
    if n_left > n_right:
        return False
    match_left = [-1] * n_left
    match_right = [-1] * n_right
    for root in range(n_left):
        visited = [False] * n_right
        came_from: dict[int, int] = {}
        stack = [(root, 0)]
        end = -1
        while stack:
            u, pos = stack.pop()
            adj = adjacency[u]
            if pos >= len(adj):
                continue
            stack.append((u, pos + 1))
            v = adj[pos]
            if visited[v]:
                continue
            visited[v] = True
            came_from[v] = u
            if match_right[v] < 0:
                end = v
                break
            stack.append((match_right[v], 0))
        if end < 0:
            return False
        v = end
        while v >= 0:
            u = came_from[v]
            nxt = match_left[u]
            match_left[u] = v
            match_right[v] = u
            v = nxt
    return True


def attack_abd(view: AdversaryViewABD, db: PatternDatabase, *, prefilter: bool = True) -> AttackResult:
    """Match patterns whose names can be spread one per block.

    With ``prefilter`` the cheap necessary conditions (each block holds a
    name of the pattern; each name occurs in some block) reject candidates
    before the matching test. The match set is the same either way.
    """
    blocks = view.blocks
    n_blocks = len(blocks)
    candidates = [
        pid
        for name in blocks[0]
        for pid in db.by_primary(name)
        if len(db.patterns[pid]) == n_blocks
    ]
    matches = set()
    if not candidates:
        return AttackResult(frozenset(), SCENARIO_ABD)
    where: dict[str, list[int]] = {}
    for j, b in enumerate(blocks):
        for q in b:
            where.setdefault(q, []).append(j)
    for pid in candidates:
        if pid in matches:
            continue
        adjacency = [where.get(q, []) for q in db.patterns[pid].names]
        if prefilter:
            if any(not adj for adj in adjacency):
                continue
            covered = set()
            for adj in adjacency:
                covered.update(adj)
            if len(covered) != n_blocks:
                continue
        if has_perfect_matching(adjacency, n_blocks):
            matches.add(pid)
    return AttackResult(frozenset(matches), SCENARIO_ABD)
