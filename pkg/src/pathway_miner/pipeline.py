"""Ensemble-level orchestration: signatures, fitting, labels, mining, assertions."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import clustering, detection, rules, sequences
from .clustering import FittedVariable
from .grid_io import EnsemblePair
from .partitioning import PartitionGrid, SignatureSpec, SignatureTensor, compute_signatures, make_partitions

logger = logging.getLogger(__name__)


def pmap(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map; results are identical for any thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def member_names(pair: EnsemblePair) -> list[str]:
    return [f"{arm}/{i}" for arm, i, _ in pair.members()]


def split_member(name: str) -> tuple[str, int]:
    arm, i = name.split("/")
    return arm, int(i)


def ensemble_signatures(
    pair: EnsemblePair,
    grid: PartitionGrid,
    spec: SignatureSpec,
    variable: str,
    missing_policy: str = "exclude",
    threads: int = 1,
) -> list[SignatureTensor]:
    """Signature tensors in member order (forced first, then baseline)."""
    datasets = [ds for _, _, ds in pair.members()]
    return pmap(lambda ds: compute_signatures(ds, grid, spec, variable, missing_policy), datasets, threads)


def fit_variable(
    sigs: Sequence[SignatureTensor],
    members: Sequence[str],
    k: int,
    seed: int = 0,
    n_init: int = 1,
    max_iter: int = 300,
    tol: float = 1e-6,
    threads: int = 1,
) -> FittedVariable:
    """Fit one clustering on every member's signatures, relabel, and split labels back per member."""
    points = np.concatenate([s.points() for s in sigs], axis=0)
    if points.shape[0] < k:
        raise ValueError(f"{sigs[0].variable}: k={k} exceeds the {points.shape[0]} valid signature points")
    runs = pmap(
        lambda s: clustering.kmeans(points, k, "plusplus", s, max_iter=max_iter, tol=tol),
        range(seed, seed + n_init),
        threads,
    )
    best = min(runs, key=lambda c: c.inertia)
    fitted = clustering.relabel_by_centroid(best)
    T, npart = sigs[0].valid.shape
    labels = np.full((len(sigs), T, npart), clustering.INVALID, dtype=np.int64)
    offset = 0
    for m, s in enumerate(sigs):
        n = int(s.valid.sum())
        labels[m][s.valid] = fitted.labels[offset : offset + n]
        offset += n
    return FittedVariable(
        variable=sigs[0].variable,
        k=k,
        centroids=fitted.centroids,
        seed=best.seed,
        permutation=fitted.permutation,
        inertia=fitted.inertia,
        signature=sigs[0].spec.to_dict(),
        members=list(members),
        labels=labels,
        extra={"n_iter": best.n_iter, "n_points": int(points.shape[0])},
    )


def membership_by_member(fv: FittedVariable) -> dict:
    return {name: detection.membership_counts(fv.labels[m], fv.k) for m, name in enumerate(fv.members)}


@dataclass
class Detection:
    variable: str
    membership: dict  # member name -> MembershipSeries
    per_cluster: list  # SignificanceSeries per cluster id
    lat_mode: dict  # member name -> (nlat_bands, T)


def detect_variable(fv: FittedVariable, grid: PartitionGrid, alpha: float = 0.05) -> Detection:
    ms = membership_by_member(fv)
    forced = [ms[n] for n in fv.members if n.startswith("forced/")]
    baseline = [ms[n] for n in fv.members if n.startswith("baseline/")]
    per_cluster = [detection.detect_significance(forced, baseline, c, alpha) for c in range(fv.k)]
    lat_mode = {n: detection.latitude_mode(fv.labels[m], grid) for m, n in enumerate(fv.members)}
    return Detection(fv.variable, ms, per_cluster, lat_mode)


def tuple_labels(fitted: Sequence[FittedVariable], member: str) -> sequences.TupleLabels:
    return sequences.build_tuple_labels(
        [fv.member_labels(member) for fv in fitted], [fv.variable for fv in fitted]
    )


def mine_ensemble(
    fitted: Sequence[FittedVariable],
    n_min: int = 1,
    n_max: int = 4,
    acyclic: bool = True,
    threads: int = 1,
) -> sequences.PatternIndex:
    members = fitted[0].members

    def one(name):
        arm, i = split_member(name)
        return sequences.mine_member(tuple_labels(fitted, name), n_min, n_max, acyclic, arm=arm, member=i)

    return sequences.merge_indices(pmap(one, members, threads))


@dataclass
class MiningSummaryRow:
    member: int
    unique_evolutions: int
    baseline_pts: int
    forced_pts: int


def mining_summary(index: sequences.PatternIndex, n_members: int) -> list[MiningSummaryRow]:
    """Per member index: unique patterns over both arms and partition-timesteps per arm."""
    rows = []
    for m in range(n_members):
        sub = index.select(member=m)
        rows.append(
            MiningSummaryRow(
                member=m,
                unique_evolutions=len(sub),
                baseline_pts=sub.total_partition_timesteps(arm="baseline"),
                forced_pts=sub.total_partition_timesteps(arm="forced"),
            )
        )
    return rows


@dataclass
class AssertionResult:
    filtered: sequences.PatternIndex
    forced: list  # PrevalenceSeries per forced member
    baseline: list
    significance: detection.SignificanceSeries
    top: list = field(default_factory=list)  # (pattern, baseline_pts, forced_pts)


def run_assertions(
    index: sequences.PatternIndex,
    ruleset: rules.RuleSet,
    schema: Sequence[str],
    T: int,
    npart: int,
    n_members: int,
    alpha: float = 0.05,
    top_n: int = 5,
    top_length: int | None = None,
) -> AssertionResult:
    filtered = rules.filter_patterns(index, ruleset, schema)
    forced = [rules.prevalence(filtered, T, npart, "forced", m) for m in range(n_members)]
    baseline = [rules.prevalence(filtered, T, npart, "baseline", m) for m in range(n_members)]
    sig = rules.prevalence_significance(forced, baseline, alpha)
    ranked = []
    for p in filtered.patterns():
        if top_length is not None and len(p) != top_length:
            continue
        occ = filtered.occurrences[p]
        b = sum(o.covered for o in occ if o.arm == "baseline")
        f = sum(o.covered for o in occ if o.arm == "forced")
        ranked.append((p, b, f))
    ranked.sort(key=lambda r: (-(r[1] + r[2]), len(r[0]), r[0]))
    return AssertionResult(filtered, forced, baseline, sig, ranked[:top_n])


def longest_flagged_run(flags: np.ndarray, sign: int = 1) -> tuple[int, int, int]:
    """(length, start, end) of the longest contiguous run of ``flags == sign``."""
    best = (0, -1, -1)
    start = None
    for t, f in enumerate(list(flags) + [0]):
        if f == sign and start is None:
            start = t
        elif f != sign and start is not None:
            if t - start > best[0]:
                best = (t - start, start, t - 1)
            start = None
    return best
