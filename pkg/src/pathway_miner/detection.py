"""Cluster membership series, latitude modes, cluster statistics and significance tests."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .partitioning import PartitionGrid
from .stats import WelchResult, welch_t

FLAG_NONE, FLAG_INCREASE, FLAG_DECREASE = 0, 1, -1
FLAG_NAMES = {FLAG_NONE: "none", FLAG_INCREASE: "increase", FLAG_DECREASE: "decrease"}


@dataclass
class MembershipSeries:
    counts: np.ndarray  # (k, T) int
    valid: np.ndarray  # (T,) number of valid partitions

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def fraction(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.valid > 0, self.counts / np.maximum(self.valid, 1), np.nan)


def membership_counts(labels: np.ndarray, k: int) -> MembershipSeries:
    """Per-timestep cluster counts over valid partitions; ``labels`` is (T, NPART)."""
    labels = np.asarray(labels)
    T = labels.shape[0]
    counts = np.zeros((k, T), dtype=np.int64)
    for c in range(k):
        counts[c] = (labels == c).sum(axis=1)
    valid = (labels >= 0).sum(axis=1)
    return MembershipSeries(counts=counts, valid=valid)


@dataclass
class SignificanceSeries:
    t_stat: np.ndarray
    p_value: np.ndarray
    flag: np.ndarray  # FLAG_* per timestep
    alpha: float
    mean_forced: np.ndarray
    mean_baseline: np.ndarray

    def flag_names(self) -> list[str]:
        return [FLAG_NAMES[int(f)] for f in self.flag]


def _flag(res: WelchResult, diff: float, alpha: float) -> int:
    if not res.p_value < alpha or diff == 0:
        return FLAG_NONE
    return FLAG_INCREASE if diff > 0 else FLAG_DECREASE


def significance(forced: np.ndarray, baseline: np.ndarray, alpha: float = 0.05) -> SignificanceSeries:
    """Per-timestep Welch test of (E, T) forced samples against (E', T) baseline samples."""
    forced = np.asarray(forced, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if forced.shape[0] < 2 or baseline.shape[0] < 2:
        raise ValueError(
            f"significance needs >= 2 members per arm, got {forced.shape[0]} and {baseline.shape[0]}"
        )
    T = forced.shape[1]
    t_stat = np.empty(T)
    p = np.empty(T)
    flag = np.zeros(T, dtype=np.int64)
    with np.errstate(invalid="ignore"):
        mf = np.nanmean(forced, axis=0) if np.isnan(forced).any() else forced.mean(axis=0)
        mb = np.nanmean(baseline, axis=0) if np.isnan(baseline).any() else baseline.mean(axis=0)
    for t in range(T):
        fa = forced[:, t][np.isfinite(forced[:, t])]
        ba = baseline[:, t][np.isfinite(baseline[:, t])]
        if fa.size < 2 or ba.size < 2:
            # timestep with no valid partitions in too many members
            t_stat[t], p[t] = np.nan, np.nan
            continue
        res = welch_t(fa, ba)
        t_stat[t], p[t] = res.t_stat, res.p_value
        flag[t] = _flag(res, mf[t] - mb[t], alpha)
    return SignificanceSeries(t_stat=t_stat, p_value=p, flag=flag, alpha=alpha, mean_forced=mf, mean_baseline=mb)


def detect_significance(
    forced: Sequence[MembershipSeries],
    baseline: Sequence[MembershipSeries],
    cluster: int,
    alpha: float = 0.05,
) -> SignificanceSeries:
    """Test membership fraction of ``cluster`` between the two arms at every timestep."""
    if len(forced) < 2 or len(baseline) < 2:
        raise ValueError("detect_significance needs >= 2 members per arm")
    f = np.stack([m.fraction[cluster] for m in forced])
    b = np.stack([m.fraction[cluster] for m in baseline])
    return significance(f, b, alpha)


def latitude_mode(labels: np.ndarray, grid: PartitionGrid) -> np.ndarray:
    """Most common cluster id per partition latitude band: (nlat_bands, T), -1 if none valid.

    Ties go to the lower cluster id.
    """
    labels = np.asarray(labels)
    T = labels.shape[0]
    by_band = labels.reshape(T, grid.nlat_bands, grid.nlon_bands)
    kmax = max(int(labels.max()) + 1, 1)
    counts = np.zeros((grid.nlat_bands, T, kmax), dtype=np.int64)
    for c in range(kmax):
        counts[:, :, c] = (by_band == c).sum(axis=2).T
    mode = np.argmax(counts, axis=2)  # first maximum = lowest id
    mode[counts.sum(axis=2) == 0] = -1
    return mode


@dataclass
class ClusterStat:
    cluster: int
    count: int
    mean: float
    std: float


def cluster_stats(ds, labels, grid: PartitionGrid, variable: str, k: int | None = None) -> list[ClusterStat]:
    """Mean and population std of raw unmasked cell values pooled per cluster.

    ``ds``/``labels`` may be a single dataset and (T, NPART) label array, or
    parallel sequences of them (pooled over all members).
    """
    if not isinstance(ds, (list, tuple)):
        ds, labels = [ds], [labels]
    if k is None:
        k = max(int(np.max(lab)) for lab in labels) + 1
    n = np.zeros(k, dtype=np.int64)
    s = np.zeros(k)
    chunks = []
    for d, lab in zip(ds, labels):
        var = d[variable]
        vals = grid.blocks(var.values)
        miss = grid.blocks(var.missing)
        lab = np.asarray(lab)
        cell_lab = np.broadcast_to(lab[:, :, None], vals.shape)
        use = (~miss) & (cell_lab >= 0)
        lv, vv = cell_lab[use], vals[use]
        n += np.bincount(lv, minlength=k)[:k]
        s += np.bincount(lv, weights=vv, minlength=k)[:k]
        chunks.append((lv, vv))
    mean = np.where(n > 0, s / np.maximum(n, 1), np.nan)
    ss = np.zeros(k)
    for lv, vv in chunks:
        ss += np.bincount(lv, weights=(vv - mean[lv]) ** 2, minlength=k)[:k]
    std = np.where(n > 0, np.sqrt(ss / np.maximum(n, 1)), np.nan)
    return [ClusterStat(c, int(n[c]), float(mean[c]), float(std[c])) for c in range(k)]


# --------------------------------------------------------------------------
# CSV output


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")
    return path


def write_membership_csv(path, times, series: MembershipSeries) -> Path:
    header = ["time", "valid"] + [f"count_{c}" for c in range(series.k)] + [f"fraction_{c}" for c in range(series.k)]
    frac = series.fraction
    rows = (
        [times[t], int(series.valid[t])]
        + [int(series.counts[c, t]) for c in range(series.k)]
        + [float(frac[c, t]) for c in range(series.k)]
        for t in range(len(times))
    )
    return write_csv(path, header, rows)


def write_significance_csv(path, times, per_cluster: Sequence[SignificanceSeries]) -> Path:
    header = ["time"]
    for c in range(len(per_cluster)):
        header += [f"c{c}_t_stat", f"c{c}_p_value", f"c{c}_flag"]
    rows = []
    for t in range(len(times)):
        row = [times[t]]
        for s in per_cluster:
            row += [float(s.t_stat[t]), float(s.p_value[t]), FLAG_NAMES[int(s.flag[t])]]
        rows.append(row)
    return write_csv(path, header, rows)


def write_latitude_mode_csv(path, times, mode: np.ndarray, band_lats) -> Path:
    header = ["time"] + [f"lat_{lat:g}" for lat in band_lats]
    rows = ([times[t]] + [int(v) for v in mode[:, t]] for t in range(len(times)))
    return write_csv(path, header, rows)
