"""Query patterns, pattern databases and dummy databases.

A query pattern is the set of domain names a browser resolves when it loads
a website: the site's own (primary) name first, followed by the secondary
names of embedded content. Patterns are stored in a :class:`PatternDatabase`
which the adversary uses to match observed traffic; the client draws dummy
names from a :class:`DummyDatabase`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from functools import cached_property, lru_cache
from typing import IO, Iterable, Sequence

import numpy as np

__all__ = [
    "PatternFormatError",
    "normalize_name",
    "Pattern",
    "PatternDatabase",
    "DummyDatabase",
    "DatasetStats",
    "SynthSpec",
    "load_pattern_db",
    "load_pattern_file",
    "save_pattern_db",
    "save_pattern_file",
    "dumps_pattern_db",
    "db_stats",
    "build_dummy_db",
    "gen_synthetic_db",
]


class PatternFormatError(ValueError):
    """Raised for malformed pattern files; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def normalize_name(name: str) -> str:
    """Lowercase a domain name and strip the trailing root dot."""
    if not isinstance(name, str):
        raise ValueError(f"domain name must be a string, got {type(name).__name__}")
    out = name.strip().lower().rstrip(".")
    if not out:
        raise ValueError("empty domain name")
    if any(c.isspace() for c in out):
        raise ValueError(f"domain name contains whitespace: {name!r}")
    return out


@dataclass(frozen=True)
class Pattern:
    primary: str
    secondaries: tuple[str, ...] = ()

    @classmethod
    def create(cls, primary: str, secondaries: Iterable[str] = ()) -> "Pattern":
        """Normalize names, drop duplicates and any secondary equal to the primary."""
        prim = normalize_name(primary)
        seen = {prim}
        secs = []
        for s in secondaries:
            s = normalize_name(s)
            if s not in seen:
                seen.add(s)
                secs.append(s)
        return cls(prim, tuple(secs))

    @property
    def names(self) -> tuple[str, ...]:
        return (self.primary, *self.secondaries)

    def __len__(self) -> int:
        return 1 + len(self.secondaries)


class PatternDatabase:
    """Immutable collection of patterns indexed by primary name and by length.

    Pattern ids are positions in :attr:`patterns`. Primary names need not be
    unique; :meth:`by_primary` returns every matching id.
    """

    def __init__(self, patterns: Iterable[Pattern]):
        self.patterns: tuple[Pattern, ...] = tuple(patterns)
        by_primary: dict[str, list[int]] = defaultdict(list)
        by_length: dict[int, list[int]] = defaultdict(list)
        names: set[str] = set()
        for pid, p in enumerate(self.patterns):
            by_primary[p.primary].append(pid)
            by_length[len(p)].append(pid)
            names.update(p.names)
        self.index_by_primary: dict[str, tuple[int, ...]] = {
            k: tuple(v) for k, v in by_primary.items()
        }
        self.index_by_length: dict[int, tuple[int, ...]] = {
            k: tuple(v) for k, v in sorted(by_length.items())
        }
        self.all_names: frozenset[str] = frozenset(names)

    def __len__(self) -> int:
        return len(self.patterns)

    def __getitem__(self, pid: int) -> Pattern:
        return self.patterns[pid]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatternDatabase):
            return NotImplemented
        return self.patterns == other.patterns

    def __repr__(self) -> str:
        return f"PatternDatabase({len(self.patterns)} patterns, {len(self.all_names)} names)"

    def by_primary(self, name: str) -> tuple[int, ...]:
        return self.index_by_primary.get(name, ())

    def by_length(self, length: int) -> tuple[int, ...]:
        return self.index_by_length.get(length, ())

    @cached_property
    def sorted_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.all_names))

    @property
    def max_length(self) -> int:
        return max(self.index_by_length) if self.index_by_length else 0

    def length_histogram(self) -> dict[int, int]:
        return {n: len(ids) for n, ids in self.index_by_length.items()}


class DummyDatabase:
    """The client's pool of dummy names.

    Names are kept in sorted order so that index-based draws from a seeded
    generator are reproducible regardless of set iteration order.
    """

    def __init__(self, names: Iterable[str]):
        ordered = sorted(set(names))
        if not ordered:
            raise ValueError("dummy database must contain at least one name")
        self.names: tuple[str, ...] = tuple(ordered)
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def size(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def index(self, name: str) -> int | None:
        return self._index.get(name)

    def as_set(self) -> frozenset[str]:
        return frozenset(self.names)


# ---------------------------------------------------------------------------
# Ingestion and serialization

def _read_text(source: IO) -> str:
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data


def _parse_jsonl(text: str) -> list[Pattern]:
    patterns = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PatternFormatError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or "primary" not in rec:
            raise PatternFormatError(lineno, "expected an object with a 'primary' field")
        secs = rec.get("secondaries", [])
        if not isinstance(secs, list) or not all(isinstance(s, str) for s in secs):
            raise PatternFormatError(lineno, "'secondaries' must be an array of strings")
        try:
            patterns.append(Pattern.create(rec["primary"], secs))
        except ValueError as exc:
            raise PatternFormatError(lineno, str(exc)) from None
    return patterns


def _parse_csv(text: str) -> list[Pattern]:
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        return []
    reader = csv.reader(lines)
    patterns = []
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or not any(cell.strip() for cell in row):
            continue
        if not header_seen:
            if [c.strip().lower() for c in row] != ["primary", "secondaries"]:
                raise PatternFormatError(lineno, "missing header 'primary,secondaries'")
            header_seen = True
            continue
        if len(row) not in (1, 2):
            raise PatternFormatError(lineno, f"expected 2 columns, got {len(row)}")
        secs = [s for s in row[1].split(";") if s.strip()] if len(row) == 2 else []
        try:
            patterns.append(Pattern.create(row[0], secs))
        except ValueError as exc:
            raise PatternFormatError(lineno, str(exc)) from None
    return patterns


def load_pattern_db(source: IO, format: str = "jsonl") -> PatternDatabase:
    """Read a pattern database from a text or byte stream.

    ``format`` is ``"jsonl"`` (one ``{"primary": ..., "secondaries": [...]}``
    object per line) or ``"csv"`` (header ``primary,secondaries`` followed by
    rows with ``;``-separated secondaries).
    """
    text = _read_text(source)
    if format == "jsonl":
        patterns = _parse_jsonl(text)
    elif format == "csv":
        patterns = _parse_csv(text)
    else:
        raise ValueError(f"unknown pattern format: {format!r}")
    if not patterns:
        raise ValueError("empty database")
    return PatternDatabase(patterns)


def _format_from_path(path: str) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "jsonl"


def load_pattern_file(path, format: str | None = None) -> PatternDatabase:
    with open(path, "rb") as fh:
        return load_pattern_db(fh, format or _format_from_path(path))


def save_pattern_db(db: PatternDatabase, sink: IO[str], format: str = "jsonl") -> None:
    if format == "jsonl":
        for p in db.patterns:
            sink.write(json.dumps({"primary": p.primary, "secondaries": list(p.secondaries)}))
            sink.write("\n")
    elif format == "csv":
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["primary", "secondaries"])
        for p in db.patterns:
            writer.writerow([p.primary, ";".join(p.secondaries)])
    else:
        raise ValueError(f"unknown pattern format: {format!r}")


def save_pattern_file(db: PatternDatabase, path, format: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        save_pattern_db(db, fh, format or _format_from_path(path))


def dumps_pattern_db(db: PatternDatabase, format: str = "jsonl") -> str:
    buf = io.StringIO()
    save_pattern_db(db, buf, format)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Statistics

@dataclass(frozen=True)
class DatasetStats:
    pattern_count: int
    unique_name_count: int
    mean_length: float
    sd_length: float
    max_length: int
    length_histogram: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_histogram"] = {str(k): v for k, v in sorted(self.length_histogram.items())}
        return d


def db_stats(db: PatternDatabase) -> DatasetStats:
    """Summary statistics over pattern lengths (population SD)."""
    if len(db) == 0:
        raise ValueError("empty database")
    lengths = np.fromiter((len(p) for p in db.patterns), dtype=np.int64, count=len(db))
    return DatasetStats(
        pattern_count=len(db),
        unique_name_count=len(db.all_names),
        mean_length=float(lengths.mean()),
        sd_length=float(lengths.std(ddof=0)),
        max_length=int(lengths.max()),
        length_histogram=db.length_histogram(),
    )


# ---------------------------------------------------------------------------
# Dummy database construction

def build_dummy_db(db: PatternDatabase, size: int, rng: np.random.Generator) -> DummyDatabase:
    """Collect exactly ``size`` unique names by drawing whole patterns.

    Patterns are drawn uniformly without replacement and all their names are
    added. The last pattern is truncated name by name, in stored order, once
    the target is reached.
    """
    total = len(db.all_names)
    if not 1 <= size <= total:
        raise ValueError(f"dummy database size must be in [1, {total}], got {size}")
    chosen: dict[str, None] = {}
    for pid in rng.permutation(len(db)):
        for name in db.patterns[pid].names:
            chosen.setdefault(name)
            if len(chosen) == size:
                return DummyDatabase(chosen)
    raise AssertionError("unreachable: exhausted all patterns")


# ---------------------------------------------------------------------------
# Synthetic generation

@dataclass(frozen=True)
class SynthSpec:
    """Parameters for :func:`gen_synthetic_db`.

    Lengths follow a log-normal distribution rounded to integers and
    truncated to ``[1, max_length]``; its parameters are fitted so that the
    discrete distribution has exactly ``mean_length`` and ``sd_length``.
    ``fixed_length`` bypasses the distribution. Each secondary name is, with
    probability ``overlap_rate``, re-used from the secondaries generated so
    far, picking the name of creation rank r with probability proportional
    to ``r ** -zipf_exponent``; early names become widely shared hubs.
    """

    pattern_count: int
    mean_length: float = 13.02
    sd_length: float = 14.28
    max_length: int = 315
    overlap_rate: float = 0.0
    fixed_length: int | None = None
    zipf_exponent: float = 1.0

    def validate(self) -> None:
        if not isinstance(self.pattern_count, int) or self.pattern_count < 1:
            raise ValueError("pattern_count must be a positive integer")
        if not 0.0 <= self.overlap_rate <= 1.0:
            raise ValueError("overlap_rate must be in [0, 1]")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be non-negative")
        if self.fixed_length is not None:
            if self.fixed_length < 1:
                raise ValueError("fixed_length must be >= 1")
            return
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if not 1.0 <= self.mean_length <= self.max_length:
            raise ValueError("mean_length must lie in [1, max_length]")
        if self.sd_length < 0:
            raise ValueError("sd_length must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _lognormal_pmf(mu: float, sigma: float, max_length: int) -> np.ndarray:
    from scipy.stats import norm

    edges = np.arange(1, max_length + 1, dtype=float) + 0.5
    cdf = norm.cdf((np.log(edges) - mu) / sigma)
    pmf = np.diff(np.concatenate(([0.0], cdf)))
    return pmf / cdf[-1]


@lru_cache(maxsize=32)
def length_distribution(mean: float, sd: float, max_length: int) -> tuple[float, ...]:
    """Probabilities of lengths 1..max_length with the requested moments."""
    if sd == 0:
        if mean != int(mean):
            raise ValueError("sd_length=0 requires an integer mean_length")
        pmf = np.zeros(max_length)
        pmf[int(mean) - 1] = 1.0
        return tuple(pmf)
    from scipy.optimize import least_squares

    lengths = np.arange(1, max_length + 1, dtype=float)

    def residual(x):
        pmf = _lognormal_pmf(x[0], math.exp(x[1]), max_length)
        m = pmf @ lengths
        s = math.sqrt(max(pmf @ (lengths - m) ** 2, 0.0))
        return [(m - mean) / mean, (s - sd) / sd]

    s2 = math.log1p((sd / mean) ** 2)
    x0 = [math.log(mean) - s2 / 2, 0.5 * math.log(s2)]
    fit = least_squares(residual, x0, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    if max(abs(r) for r in fit.fun) > 1e-6:
        raise ValueError(
            f"cannot fit a length distribution with mean {mean} and SD {sd} "
            f"within [1, {max_length}]"
        )
    return tuple(_lognormal_pmf(fit.x[0], math.exp(fit.x[1]), max_length))


def _zipf_ranks(u: np.ndarray, m: int, s: float) -> np.ndarray:
    """Map uniforms to ranks 0..m-1 with P(rank r) roughly proportional to (r+1)^-s."""
    # inverse CDF of the continuous density x^-s on [1, m + 1)
    if abs(s - 1.0) < 1e-12:
        x = np.exp(u * math.log(m + 1))
    else:
        a = 1.0 - s
        x = (1.0 + u * ((m + 1) ** a - 1.0)) ** (1.0 / a)
    return np.minimum(x.astype(np.int64), m) - 1


def gen_synthetic_db(spec: SynthSpec, rng: np.random.Generator) -> PatternDatabase:
    """Generate a synthetic pattern database with names ``d<counter>.example``."""
    spec.validate()
    if spec.fixed_length is not None:
        lengths = np.full(spec.pattern_count, spec.fixed_length, dtype=np.int64)
    else:
        pmf = np.asarray(length_distribution(spec.mean_length, spec.sd_length, spec.max_length))
        lengths = rng.choice(np.arange(1, spec.max_length + 1), size=spec.pattern_count, p=pmf)

    counter = 0
    shared: list[str] = []  # reusable secondaries in creation order
    patterns = []
    for length in lengths:
        primary = f"d{counter}.example"
        counter += 1
        n_sec = int(length) - 1
        reuse = rng.random(n_sec) < spec.overlap_rate
        pool = len(shared)  # names of earlier patterns only
        ranks = _zipf_ranks(rng.random(n_sec), max(pool, 1), spec.zipf_exponent)
        secs: list[str] = []
        seen = {primary}
        for i in range(n_sec):
            name = None
            if reuse[i] and pool:
                cand = shared[ranks[i]]
                if cand not in seen:
                    name = cand
            if name is None:
                name = f"d{counter}.example"
                counter += 1
                shared.append(name)
            seen.add(name)
            secs.append(name)
        patterns.append(Pattern(primary, tuple(secs)))
    return PatternDatabase(patterns)
