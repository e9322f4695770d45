"""Cluster-tuple symbol sequences, run de-duplication and acyclic n-gram mining.

A partition's tuple sequence is compressed into runs of identical symbols.
Patterns are windows of consecutive, time-contiguous runs; a masked timestep
ends a run and no window spans it.
"""
from __future__ import annotations

import json
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

Symbol = tuple  # one cluster id per variable
Pattern = tuple  # tuple of Symbols


class Run(NamedTuple):
    symbol: Symbol
    t_start: int
    t_end: int  # inclusive

    @property
    def length(self) -> int:
        return self.t_end - self.t_start + 1


@dataclass
class TupleLabels:
    symbols: np.ndarray  # (T, NPART, V) int, -1 components where invalid
    variables: tuple = ()

    @property
    def valid(self) -> np.ndarray:
        return (self.symbols >= 0).all(axis=2)

    @property
    def shape(self):
        return self.symbols.shape[:2]

    def column(self, k: int) -> list:
        """Symbols of partition ``k`` over time, ``None`` where invalid."""
        col = self.symbols[:, k, :]
        ok = (col >= 0).all(axis=1)
        return [tuple(int(v) for v in row) if good else None for row, good in zip(col.tolist(), ok)]


def build_tuple_labels(clusterings: Sequence[np.ndarray], variables: Sequence[str] = ()) -> TupleLabels:
    """Stack per-variable (T, NPART) label arrays into cluster tuples."""
    if not clusterings:
        raise ValueError("need at least one variable clustering")
    shape = np.shape(clusterings[0])
    for i, lab in enumerate(clusterings):
        if np.shape(lab) != shape:
            raise ValueError(f"label array {i} has shape {np.shape(lab)}, expected {shape}")
    sym = np.stack([np.asarray(lab, dtype=np.int64) for lab in clusterings], axis=2)
    invalid = (sym < 0).any(axis=2)
    sym[invalid] = -1
    return TupleLabels(symbols=sym, variables=tuple(variables))


def deduplicate(symbols: Sequence) -> list[Run]:
    """Maximal runs of equal consecutive symbols; ``None`` entries are gaps."""
    runs: list[Run] = []
    cur = None
    start = 0
    for t, s in enumerate(symbols):
        if s != cur or s is None:
            if cur is not None:
                runs.append(Run(cur, start, t - 1))
            cur, start = s, t
    if cur is not None:
        runs.append(Run(cur, start, len(symbols) - 1))
    return runs


def expand(runs: Sequence[Run], length: int | None = None) -> list:
    """Inverse of :func:`deduplicate`."""
    n = length if length is not None else (runs[-1].t_end + 1 if runs else 0)
    out = [None] * n
    for r in runs:
        for t in range(r.t_start, r.t_end + 1):
            out[t] = r.symbol
    return out


class Occurrence(NamedTuple):
    partition: int
    run_start: int  # index of first run in the partition's run list
    run_end: int  # index of last run, inclusive
    t_start: int
    t_end: int
    covered: int  # timesteps covered by the runs of the window
    arm: str = ""
    member: int = 0

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start + 1


def _pattern_key(p: Pattern):
    return (len(p), p)


@dataclass
class PatternIndex:
    occurrences: dict = field(default_factory=dict)  # Pattern -> list[Occurrence]

    def patterns(self) -> list:
        return sorted(self.occurrences, key=_pattern_key)

    def __len__(self) -> int:
        return len(self.occurrences)

    def __contains__(self, pattern) -> bool:
        return pattern in self.occurrences

    def instances(self, pattern) -> int:
        return len(self.occurrences.get(pattern, ()))

    def total_partition_timesteps(self, arm: str | None = None, member: int | None = None) -> int:
        return sum(
            o.covered
            for occ in self.occurrences.values()
            for o in occ
            if (arm is None or o.arm == arm) and (member is None or o.member == member)
        )

    def select(self, arm: str | None = None, member: int | None = None) -> "PatternIndex":
        out = {}
        for p, occ in self.occurrences.items():
            keep = [o for o in occ if (arm is None or o.arm == arm) and (member is None or o.member == member)]
            if keep:
                out[p] = keep
        return PatternIndex(out)

    def sorted(self) -> "PatternIndex":
        return PatternIndex({p: sorted(self.occurrences[p], key=_occ_key) for p in self.patterns()})


def _occ_key(o: Occurrence):
    # total order over every field, so merges never depend on input order
    return (o.arm, o.member, o.partition, o.run_start, o.run_end, o.t_start, o.t_end, o.covered)


def merge_indices(indices: Iterable[PatternIndex]) -> PatternIndex:
    """Union of occurrence lists under a total order on patterns and occurrences."""
    acc = defaultdict(list)
    for idx in indices:
        for p, occ in idx.occurrences.items():
            acc[p].extend(occ)
    return PatternIndex(dict(acc)).sorted()


def mine_runs(
    runs: Sequence[Run],
    n_min: int = 1,
    n_max: int = 4,
    acyclic: bool = True,
    partition: int = 0,
    arm: str = "",
    member: int = 0,
    out: dict | None = None,
) -> dict:
    """Windows of ``n_min..n_max`` consecutive contiguous runs of one partition.

    With ``acyclic`` a window stops growing at the first repeated symbol: the
    shorter windows stand, no window containing the repeat is emitted.
    """
    if not 1 <= n_min <= n_max:
        raise ValueError(f"need 1 <= n_min <= n_max, got {n_min}, {n_max}")
    out = {} if out is None else out
    nrun = len(runs)
    for i in range(nrun):
        seen = set()
        syms = []
        covered = 0
        for j in range(i, min(nrun, i + n_max)):
            r = runs[j]
            if j > i and r.t_start != runs[j - 1].t_end + 1:
                break  # masked gap
            if acyclic:
                if r.symbol in seen:
                    break
                seen.add(r.symbol)
            syms.append(r.symbol)
            covered += r.length
            n = j - i + 1
            if n >= n_min:
                occ = Occurrence(partition, i, j, runs[i].t_start, r.t_end, covered, arm, member)
                out.setdefault(tuple(syms), []).append(occ)
    return out


def mine_ngrams(
    runs_by_partition: Sequence[Sequence[Run]],
    n_min: int = 1,
    n_max: int = 4,
    acyclic: bool = True,
    arm: str = "",
    member: int = 0,
) -> PatternIndex:
    acc: dict = {}
    for k, runs in enumerate(runs_by_partition):
        mine_runs(runs, n_min, n_max, acyclic, partition=k, arm=arm, member=member, out=acc)
    return PatternIndex(acc).sorted()


def runs_for(tl: TupleLabels) -> list[list[Run]]:
    return [deduplicate(tl.column(k)) for k in range(tl.shape[1])]


def mine_member(tl: TupleLabels, n_min=1, n_max=4, acyclic=True, arm="", member=0) -> PatternIndex:
    return mine_ngrams(runs_for(tl), n_min, n_max, acyclic, arm=arm, member=member)


def partition_timesteps(index: PatternIndex, pattern) -> int:
    return sum(o.covered for o in index.occurrences.get(tuple(pattern), ()))


def duration_stats(index: PatternIndex, pattern=None) -> dict:
    """Histogram of occurrence durations per arm: ``{arm: Counter(duration -> count)}``.

    ``pattern=None`` pools every pattern in the index.
    """
    hist: dict = defaultdict(Counter)
    if pattern is None:
        occs = (o for occ in index.occurrences.values() for o in occ)
    else:
        occs = index.occurrences.get(tuple(pattern), ())
    for o in occs:
        hist[o.arm][o.duration] += 1
    return {arm: hist[arm] for arm in sorted(hist)}


# --------------------------------------------------------------------------
# persistence


def _sym_json(p: Pattern):
    return [list(s) for s in p]


def write_index_jsonl(index: PatternIndex, path, with_occurrences: bool = True) -> Path:
    """One JSON record per pattern, patterns ordered by (length, symbols)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for p in index.patterns():
        occ = sorted(index.occurrences[p], key=_occ_key)
        rec = {
            "symbols": _sym_json(p),
            "instances": len(occ),
            "partition_timesteps": sum(o.covered for o in occ),
        }
        if with_occurrences:
            rec["occurrences"] = [
                [o.arm, o.member, o.partition, o.run_start, o.run_end, o.t_start, o.t_end, o.covered] for o in occ
            ]
        lines.append(json.dumps(rec, separators=(",", ":")))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def read_index_jsonl(path) -> PatternIndex:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        p = tuple(tuple(s) for s in rec["symbols"])
        occ = rec.get("occurrences")
        if occ is None:
            raise ValueError("index file carries no occurrence lists; cannot rebuild index")
        out[p] = [
            Occurrence(part, rs, re_, ts, te, cov, arm, mem)
            for arm, mem, part, rs, re_, ts, te, cov in occ
        ]
    return PatternIndex(out).sorted()


_OCC_STRUCT = struct.Struct("<III")


def write_occurrence_log(index: PatternIndex, path) -> Path:
    """Flat (partition u32, t_start u32, t_end u32) records in index order."""
    path = Path(path)
    buf = bytearray()
    for p in index.patterns():
        for o in sorted(index.occurrences[p], key=_occ_key):
            buf += _OCC_STRUCT.pack(o.partition, o.t_start, o.t_end)
    path.write_bytes(bytes(buf))
    return path


def read_occurrence_log(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % _OCC_STRUCT.size:
        raise ValueError("occurrence log length is not a multiple of the record size")
    return np.frombuffer(raw, dtype="<u4").reshape(-1, 3).astype(np.int64)


def format_pattern(p: Pattern) -> str:
    return "->".join("(" + ",".join(str(v) for v in s) + ")" for s in p)


def parse_pattern(text: str) -> Pattern:
    parts = [s.strip() for s in text.replace("→", "->").split("->")]
    return tuple(tuple(int(v) for v in s.strip("()").split(",")) for s in parts)
