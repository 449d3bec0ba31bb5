"""Experiment driver: simulate visits, attack them, aggregate k-identifiability.

Every random decision draws from a stream derived from the master seed and
a fixed key, so results do not depend on execution order or on the number
of worker processes:

* synthetic database: ``[seed, 0]``
* pattern sample:     ``[seed, 1]``
* dummy database j:   ``[seed, 2, j]``
* trial:              ``[seed, 3, cell, pattern_id, trial]``

A cell is one ``(N, S)`` combination; all scenarios of a cell attack the
same traces.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adversary import (
    SCENARIO_1BD,
    SCENARIO_1BD_IMPROVED,
    SCENARIO_ABD,
    SCENARIOS,
    AttackResult,
    attack_1bd,
    attack_abd,
    estimate_length,
)
from .analytic import ModelInput, expected_by_length, expected_mean
from .client import (
    PATTERN_BASED,
    RANDOM_SET,
    ClientConfig,
    InsufficientDummiesError,
    Trace,
    generate_trace,
    view_1bd,
    view_abd,
)
from .patterns import (
    DummyDatabase,
    PatternDatabase,
    SynthSpec,
    build_dummy_db,
    gen_synthetic_db,
    load_pattern_file,
)

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "KDistribution",
    "LengthByK",
    "CellResult",
    "ExperimentResult",
    "ComparisonRow",
    "load_db",
    "derive_rng",
    "attack_trace",
    "simulate_cell",
    "run_experiment",
    "mean_detected_patterns",
    "length_composition",
    "compare_analytic",
    "write_report",
]

FULL = "full"
SKIPPED = -1
_TAG_SYNTH, _TAG_SAMPLE, _TAG_DUMMY, _TAG_TRIAL = 0, 1, 2, 3


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


@dataclass
class ExperimentConfig:
    block_sizes: list[int]
    scenarios: list[str] = field(default_factory=lambda: [SCENARIO_1BD])
    db_path: str | None = None
    synthetic: SynthSpec | None = None
    dummy_db_sizes: list[int | str] = field(default_factory=lambda: [FULL])
    strategy: str = RANDOM_SET
    dedupe: bool = False
    variable_n: tuple[int, int] | None = None
    padding_multiple: int | None = None
    trials_per_pattern: int = 1
    master_seed: int = 0
    sample: int | None = None
    slack: int = 1
    workers: int = 1

    def validate(self) -> None:
        if (self.db_path is None) == (self.synthetic is None):
            raise ValueError("exactly one of db_path and synthetic must be given")
        if self.db_path is not None and not os.path.exists(self.db_path):
            raise ValueError(f"pattern database not found: {self.db_path}")
        if self.synthetic is not None:
            self.synthetic.validate()
        if not self.block_sizes:
            raise ValueError("at least one block size is required")
        if any(int(n) < 1 for n in self.block_sizes):
            raise ValueError("block sizes must be >= 1")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        bad = [s for s in self.scenarios if s not in SCENARIOS]
        if bad:
            raise ValueError(f"unknown scenarios: {bad}")
        if len(set(self.scenarios)) != len(self.scenarios):
            raise ValueError("duplicate scenarios")
        if not self.dummy_db_sizes:
            raise ValueError("at least one dummy database size is required")
        for s in self.dummy_db_sizes:
            if s != FULL and (not isinstance(s, int) or s < 1):
                raise ValueError(f"dummy database size must be a positive integer or 'full', got {s!r}")
        if self.trials_per_pattern < 1:
            raise ValueError("trials_per_pattern must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.sample is not None and self.sample < 1:
            raise ValueError("sample must be >= 1")
        if self.slack < 0:
            raise ValueError("slack must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for n in self.block_sizes:
            self.client_config(n)

    def client_config(self, n: int) -> ClientConfig:
        return ClientConfig(
            block_size=int(n),
            strategy=self.strategy,
            variable_n=self.variable_n,
            padding_multiple=self.padding_multiple,
            dedupe_across_blocks=self.dedupe,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synthetic"] = self.synthetic.to_dict() if self.synthetic else None
        d["variable_n"] = list(self.variable_n) if self.variable_n else None
        d.pop("workers")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if d.get("synthetic") is not None:
            d["synthetic"] = SynthSpec.from_dict(d["synthetic"])
        if d.get("variable_n") is not None:
            d["variable_n"] = tuple(d["variable_n"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Aggregates

@dataclass(frozen=True)
class KDistribution:
    counts: dict[int, int]

    @classmethod
    def from_ks(cls, ks: Sequence[int]) -> "KDistribution":
        values, freq = np.unique(np.asarray(ks, dtype=np.int64), return_counts=True)
        return cls({int(v): int(c) for v, c in zip(values, freq)})

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def fraction_at_most(self, k: int) -> float:
        if not self.total:
            return float("nan")
        return sum(c for v, c in self.counts.items() if v <= k) / self.total

    @property
    def fraction_1_identifiable(self) -> float:
        if not self.total:
            return float("nan")
        return self.counts.get(1, 0) / self.total

    @property
    def fraction_le_5(self) -> float:
        return self.fraction_at_most(5)

    @property
    def median_k(self) -> int:
        """Lower median of the k multiset."""
        target = (self.total - 1) // 2
        seen = 0
        for v in sorted(self.counts):
            seen += self.counts[v]
            if seen > target:
                return v
        raise ValueError("empty distribution")

    @property
    def max_k(self) -> int:
        return max(self.counts)

    @property
    def mean_k(self) -> float:
        return sum(v * c for v, c in self.counts.items()) / self.total

    def cumulative(self) -> list[tuple[int, int, float, float]]:
        """Rows of (k, count, fraction, cumulative fraction)."""
        rows, acc = [], 0
        for v in sorted(self.counts):
            acc += self.counts[v]
            rows.append((v, self.counts[v], self.counts[v] / self.total, acc / self.total))
        return rows

    def summary(self) -> dict:
        if not self.total:
            return {"visits": 0}
        return {
            "visits": self.total,
            "fraction_1_identifiable": self.fraction_1_identifiable,
            "fraction_le_5": self.fraction_le_5,
            "median_k": self.median_k,
            "max_k": self.max_k,
            "mean_k": self.mean_k,
        }


@dataclass(frozen=True)
class LengthByK:
    rows: dict[int, tuple[int, float, float]]  # k -> (n_k, mean length, SD)

    @property
    def total(self) -> int:
        return sum(r[0] for r in self.rows.values())

    def spearman(self) -> float:
        """Rank correlation between k and mean pattern length over the table rows."""
        from scipy.stats import spearmanr

        ks = sorted(self.rows)
        if len(ks) < 2:
            return float("nan")
        return float(spearmanr(ks, [self.rows[k][1] for k in ks]).statistic)


@dataclass
class CellResult:
    N: int
    S: int | str
    dummy_size: int
    scenario: str
    pattern_ids: np.ndarray
    lengths: np.ndarray
    ks: np.ndarray
    sound: np.ndarray  # true pattern among the matches

    @property
    def in_model(self) -> np.ndarray:
        return self.ks > 0

    @property
    def out_of_model(self) -> int:
        return int((self.ks == 0).sum())

    @property
    def skipped(self) -> int:
        return int((self.ks == SKIPPED).sum())

    @property
    def unsound(self) -> int:
        return int((self.in_model & ~self.sound).sum())

    def kdist(self) -> KDistribution:
        return KDistribution.from_ks(self.ks[self.in_model])

    def summary(self) -> dict:
        row = {"N": self.N, "S": self.S, "dummy_db_size": self.dummy_size, "scenario": self.scenario}
        row.update(self.kdist().summary())
        row["out_of_model"] = self.out_of_model
        row["skipped"] = self.skipped
        row["unsound"] = self.unsound
        return row


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list[CellResult]
    pattern_count: int
    name_count: int
    comparison: list["ComparisonRow"] = field(default_factory=list)

    def cell(self, N: int, scenario: str, S: int | str = FULL) -> CellResult:
        for c in self.cells:
            if c.N == N and c.scenario == scenario and c.S == S:
                return c
        raise KeyError((N, S, scenario))


def mean_detected_patterns(cell: CellResult) -> float:
    """Empirical mean k over all visits of a cell."""
    ks = cell.ks[cell.ks != SKIPPED]
    if not len(ks):
        raise ValueError("cell has no visits")
    return float(ks.mean())


def length_composition(cell: CellResult) -> LengthByK:
    rows = {}
    ks, lengths = cell.ks[cell.in_model], cell.lengths[cell.in_model]
    for k in np.unique(ks):
        sel = lengths[ks == k].astype(float)
        rows[int(k)] = (int(sel.size), float(sel.mean()), float(sel.std(ddof=0)))
    return LengthByK(rows)


# ---------------------------------------------------------------------------
# Simulation

def load_db(cfg: ExperimentConfig) -> PatternDatabase:
    if cfg.db_path is not None:
        return load_pattern_file(cfg.db_path)
    return gen_synthetic_db(cfg.synthetic, derive_rng(cfg.master_seed, _TAG_SYNTH))


def attack_trace(
    trace: Trace,
    db: PatternDatabase,
    scenarios: Sequence[str],
    cfg: ClientConfig,
    *,
    slack: int = 1,
    dummy_db_size: int | None = None,
) -> dict[str, AttackResult]:
    """Run the requested attacks on one trace."""
    out: dict[str, AttackResult] = {}
    if SCENARIO_1BD in scenarios or SCENARIO_1BD_IMPROVED in scenarios:
        view = view_1bd(trace)
        base = attack_1bd(view, db)
        if SCENARIO_1BD in scenarios:
            out[SCENARIO_1BD] = base
        if SCENARIO_1BD_IMPROVED in scenarios:
            est = estimate_length(
                view,
                cfg.variable_n or cfg.block_size,
                dedupe=cfg.dedupe_across_blocks,
                slack=slack,
                dummy_db_size=dummy_db_size if cfg.dedupe_across_blocks else None,
            )
            out[SCENARIO_1BD_IMPROVED] = AttackResult(
                frozenset(p for p in base.matches if len(db.patterns[p]) in est),
                SCENARIO_1BD_IMPROVED,
            )
    if SCENARIO_ABD in scenarios:
        out[SCENARIO_ABD] = attack_abd(view_abd(trace), db)
    return {s: out[s] for s in scenarios}


Inspector = Callable[[Trace, dict[str, AttackResult]], None]


def simulate_cell(
    db: PatternDatabase,
    dummies: DummyDatabase | None,
    cfg: ClientConfig,
    scenarios: Sequence[str],
    pattern_ids: Sequence[int],
    *,
    seed: int,
    cell_index: int,
    trials: int = 1,
    slack: int = 1,
    inspect: Inspector | None = None,
) -> dict[str, np.ndarray]:
    """Simulate ``trials`` visits of each pattern; return k per scenario and visit.

    The returned dict has one int array per scenario plus ``"sound"`` arrays
    under ``"<scenario>:sound"``. Visits for which no trace can be built
    (pattern-based strategy without usable dummy patterns) get k = -1. ``inspect`` sees every trace with its
    attack results.
    """
    n = len(pattern_ids) * trials
    ks = {s: np.zeros(n, dtype=np.int64) for s in scenarios}
    sound = {s: np.zeros(n, dtype=bool) for s in scenarios}
    dsize = dummies.size if dummies is not None else None
    i = 0
    for pid in pattern_ids:
        pattern = db.patterns[pid]
        for t in range(trials):
            rng = derive_rng(seed, _TAG_TRIAL, cell_index, int(pid), t)
            try:
                trace = generate_trace(pattern, cfg, rng, dummies=dummies, db=db, pattern_id=int(pid))
            except InsufficientDummiesError:
                # no valid pattern-based dummies: reported as skipped, k = -1
                for s in scenarios:
                    ks[s][i] = SKIPPED
                i += 1
                continue
            results = attack_trace(trace, db, scenarios, cfg, slack=slack, dummy_db_size=dsize)
            for s, r in results.items():
                ks[s][i] = r.k
                sound[s][i] = pid in r.matches
            if inspect is not None:
                inspect(trace, results)
            i += 1
    out: dict[str, np.ndarray] = dict(ks)
    out.update({f"{s}:sound": v for s, v in sound.items()})
    return out


_worker_state: dict = {}


def _worker_init(db, dummies_by_size):
    _worker_state["db"] = db
    _worker_state["dummies"] = dummies_by_size


def _worker_run(args):
    cfg, scenarios, pids, seed, cell_index, trials, slack, size_key = args
    return simulate_cell(
        _worker_state["db"],
        _worker_state["dummies"][size_key],
        cfg,
        scenarios,
        pids,
        seed=seed,
        cell_index=cell_index,
        trials=trials,
        slack=slack,
    )


def _select_patterns(cfg: ExperimentConfig, db: PatternDatabase) -> np.ndarray:
    if cfg.sample is None or cfg.sample >= len(db):
        return np.arange(len(db))
    rng = derive_rng(cfg.master_seed, _TAG_SAMPLE)
    return np.sort(rng.choice(len(db), size=cfg.sample, replace=False))


def _dummy_databases(cfg: ExperimentConfig, db: PatternDatabase) -> dict[int | str, DummyDatabase | None]:
    out: dict[int | str, DummyDatabase | None] = {}
    for j, s in enumerate(cfg.dummy_db_sizes):
        if cfg.strategy == PATTERN_BASED:
            out[s] = None
        elif s == FULL:
            out[s] = DummyDatabase(db.all_names)
        else:
            if s > len(db.all_names):
                raise ValueError(f"dummy database size {s} exceeds the {len(db.all_names)} available names")
            out[s] = build_dummy_db(db, s, derive_rng(cfg.master_seed, _TAG_DUMMY, j))
    return out


def run_experiment(
    cfg: ExperimentConfig,
    db: PatternDatabase | None = None,
    *,
    inspect: Inspector | None = None,
) -> ExperimentResult:
    """Simulate every (N, S) cell for all configured scenarios."""
    cfg.validate()
    if db is None:
        db = load_db(cfg)
    pids = _select_patterns(cfg, db)
    dummies = _dummy_databases(cfg, db)
    for s, d in dummies.items():
        if d is not None:
            for n in cfg.block_sizes:
                need = cfg.client_config(n).max_block_size
                if d.size < need:
                    raise ValueError(f"dummy database of {d.size} names is too small for N={need}")

    cells = [(n, s) for n in cfg.block_sizes for s in cfg.dummy_db_sizes]
    lengths = np.array([len(db.patterns[p]) for p in pids], dtype=np.int64)
    lengths = np.repeat(lengths, cfg.trials_per_pattern)
    visit_pids = np.repeat(pids, cfg.trials_per_pattern)

    raw: list[dict[str, np.ndarray]] = []
    if cfg.workers > 1 and inspect is None:
        chunks = np.array_split(pids, cfg.workers * 4)
        chunks = [c for c in chunks if len(c)]
        tasks = [
            (cfg.client_config(n), list(cfg.scenarios), [int(p) for p in c], cfg.master_seed,
             ci, cfg.trials_per_pattern, cfg.slack, s)
            for ci, (n, s) in enumerate(cells)
            for c in chunks
        ]
        with ProcessPoolExecutor(cfg.workers, initializer=_worker_init, initargs=(db, dummies)) as ex:
            parts = list(ex.map(_worker_run, tasks))
        per_cell = len(chunks)
        for ci in range(len(cells)):
            group = parts[ci * per_cell : (ci + 1) * per_cell]
            raw.append({key: np.concatenate([g[key] for g in group]) for key in group[0]})
    else:
        for ci, (n, s) in enumerate(cells):
            log.info("simulating N=%s S=%s over %d patterns", n, s, len(pids))
            raw.append(
                simulate_cell(
                    db, dummies[s], cfg.client_config(n), cfg.scenarios, pids,
                    seed=cfg.master_seed, cell_index=ci, trials=cfg.trials_per_pattern,
                    slack=cfg.slack, inspect=inspect,
                )
            )

    results = []
    for (n, s), r in zip(cells, raw):
        d = dummies[s]
        for scen in cfg.scenarios:
            results.append(
                CellResult(
                    N=n, S=s, dummy_size=d.size if d is not None else len(db.all_names),
                    scenario=scen, pattern_ids=visit_pids, lengths=lengths,
                    ks=r[scen], sound=r[f"{scen}:sound"],
                )
            )
    res = ExperimentResult(cfg, results, len(db), len(db.all_names))
    if (
        cfg.strategy == RANDOM_SET
        and not cfg.dedupe
        and cfg.variable_n is None
        and SCENARIO_1BD in cfg.scenarios
    ):
        res.comparison = _comparison_rows(res, db)
    return res


# ---------------------------------------------------------------------------
# Analytic comparison

@dataclass(frozen=True)
class ComparisonRow:
    N: int
    S: int | str
    analytic_F: float
    empirical_mean_k: float
    standard_error: float
    z: float
    visits: int


def _comparison_rows(res: ExperimentResult, db: PatternDatabase) -> list[ComparisonRow]:
    rows = []
    for cell in res.cells:
        if cell.scenario != SCENARIO_1BD:
            continue
        inp = ModelInput.from_db(db, cell.N, Q_size=cell.dummy_size)
        if len(cell.pattern_ids) == len(db) * res.config.trials_per_pattern:
            analytic = expected_mean(inp).F_N
        else:
            # F(N) restricted to the simulated patterns' lengths
            e = expected_by_length(inp, np.unique(cell.lengths))
            analytic = float(np.mean([e[int(m)] for m in cell.lengths]))
        ks = cell.ks.astype(float)
        mean = float(ks.mean())
        se = float(ks.std(ddof=1) / math.sqrt(ks.size)) if ks.size > 1 else 0.0
        if se > 0:
            z = (mean - analytic) / se
        else:
            z = 0.0 if math.isclose(mean, analytic, rel_tol=0, abs_tol=1e-9) else math.copysign(math.inf, mean - analytic)
        rows.append(ComparisonRow(cell.N, cell.S, analytic, mean, se, z, int(ks.size)))
    return rows


def compare_analytic(cfg: ExperimentConfig, db: PatternDatabase | None = None) -> list[ComparisonRow]:
    """Analytic F(N) next to the simulated mean k (1BD, no dedupe, random set)."""
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "workers": cfg.workers})
    cfg.scenarios = [SCENARIO_1BD]
    cfg.strategy = RANDOM_SET
    cfg.dedupe = False
    cfg.variable_n = None
    cfg.padding_multiple = None
    return run_experiment(cfg, db).comparison


# ---------------------------------------------------------------------------
# Report emission

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_report(res: ExperimentResult, out_dir) -> Path:
    """Write config, per-cell k distributions, length composition and summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "config.json").open("w", encoding="utf-8") as fh:
        json.dump(res.config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    length_rows = []
    summary_rows = []
    for cell in res.cells:
        kd = cell.kdist()
        _write_csv(
            out / f"kdist_{cell.N}_{cell.S}_{cell.scenario}.csv",
            ["k", "count", "fraction", "cumulative"],
            [(k, c, _fmt(f), _fmt(cf)) for k, c, f, cf in kd.cumulative()],
        )
        for k, (n_k, mean, sd) in sorted(length_composition(cell).rows.items()):
            length_rows.append((cell.N, cell.S, cell.scenario, k, n_k, _fmt(mean), _fmt(sd)))
        summary_rows.append(cell.summary())
    _write_csv(
        out / "length_by_k.csv",
        ["N", "S", "scenario", "k", "n_k", "mean_length", "sd_length"],
        length_rows,
    )
    if res.comparison:
        _write_csv(
            out / "compare.csv",
            ["N", "S", "analytic_F", "empirical_mean_k", "standard_error", "z", "visits"],
            [
                (r.N, r.S, _fmt(r.analytic_F), _fmt(r.empirical_mean_k), _fmt(r.standard_error), _fmt(r.z), r.visits)
                for r in res.comparison
            ],
        )
    summary = {
        "pattern_count": res.pattern_count,
        "name_count": res.name_count,
        "strategy": res.config.strategy,
        "cells": summary_rows,
    }
    with (out / "summary.json").open("w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
