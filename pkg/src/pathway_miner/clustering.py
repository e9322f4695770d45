"""k-means, adjusted Rand index and the averaged near-optimal ARI stability score."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

INVALID = -1
LABEL_INVALID_U16 = 0xFFFF

N_PLUSPLUS_RUNS = 10
N_RANDOM_RUNS = 6

_CHUNK = 1 << 16


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray  # (k, d)
    labels: np.ndarray  # labels of the fitted points, INVALID where masked
    inertia: float
    seed: int = 0
    n_iter: int = 0
    inertia_history: list = field(default_factory=list, repr=False)
    permutation: tuple = ()  # new id -> original id, set by relabel_by_centroid

    def predict(self, points: np.ndarray) -> np.ndarray:
        return _assign(np.asarray(points, dtype=np.float64), self.centroids)[0]


def _check_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"points must be (n, d) with d >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("points contain non-finite values")
    return x


def _sqdist(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances; fixed reduction order."""
    d = np.empty((x.shape[0], centroids.shape[0]))
    for j, c in enumerate(centroids):
        diff = x - c
        d[:, j] = np.einsum("ij,ij->i", diff, diff)
    return d


def _assign(x: np.ndarray, centroids: np.ndarray):
    """Labels (lowest index wins ties) and the squared distance to the assigned centroid."""
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    for s in range(0, n, _CHUNK):
        d = _sqdist(x[s : s + _CHUNK], centroids)
        lab = np.argmin(d, axis=1)
        labels[s : s + _CHUNK] = lab
        best[s : s + _CHUNK] = d[np.arange(lab.size), lab]
    return labels, best


def kmeanspp_init(points, k: int, seed: int) -> np.ndarray:
    """k-means++ seeding: first centre uniform, the rest drawn with D^2 weights."""
    x = _check_points(points)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(n))]
    d2 = _sqdist(x, x[idx[0]][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            i = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining mass is on already-chosen locations
            i = int(rng.integers(n))
        idx.append(i)
        d2 = np.minimum(d2, _sqdist(x, x[i][None])[:, 0])
    return x[idx].copy()


def random_init(points, k: int, seed: int) -> np.ndarray:
    """k distinct points drawn uniformly without replacement."""
    x = _check_points(points)
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={x.shape[0]}")
    rng = np.random.default_rng(seed)
    return x[rng.choice(x.shape[0], size=k, replace=False)].copy()


def _update(x, labels, k, best, centroids):
    counts = np.bincount(labels, minlength=k)
    new = np.empty_like(centroids)
    for j in range(x.shape[1]):
        new[:, j] = np.bincount(labels, weights=x[:, j], minlength=k)
    nonempty = counts > 0
    new[nonempty] /= counts[nonempty, None]
    empty = np.flatnonzero(~nonempty)
    if empty.size:
        # reseed each empty cluster at the point farthest from its current centroid
        far = np.argsort(-best, kind="stable")[: empty.size]
        new[empty] = x[far]
        logger.debug("reseeded %d empty cluster(s)", empty.size)
    return new


def kmeans(
    points,
    k: int,
    init: str = "plusplus",
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> Clustering:
    """Lloyd's algorithm from a k-means++ or random initialisation."""
    x = _check_points(points)
    n = x.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"kmeans needs n >= k >= 1, got n={n}, k={k}")
    if init == "plusplus":
        centroids = kmeanspp_init(x, k, seed)
    elif init == "random":
        centroids = random_init(x, k, seed)
    else:
        raise ValueError(f"unknown init {init!r}")

    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        labels, best = _assign(x, centroids)
        history.append(float(best.sum()))
        new = _update(x, labels, k, best, centroids)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    labels, best = _assign(x, centroids)
    inertia = float(best.sum())
    history.append(inertia)
    return Clustering(
        k=k,
        centroids=centroids,
        labels=labels,
        inertia=inertia,
        seed=seed,
        n_iter=n_iter,
        inertia_history=history,
        permutation=tuple(range(k)),
    )


def relabel_by_centroid(c: Clustering) -> Clustering:
    """Renumber clusters so the mean centroid component increases with the id."""
    means = c.centroids.mean(axis=1)
    order = np.argsort(means, kind="stable")  # equal means keep original order
    ties = np.flatnonzero(np.diff(means[order]) == 0)
    if ties.size:
        logger.warning("relabel: %d exact centroid-mean tie(s), broken by original id", ties.size)
    inverse = np.empty(c.k, dtype=np.int64)
    inverse[order] = np.arange(c.k)
    labels = np.where(c.labels >= 0, inverse[np.clip(c.labels, 0, None)], c.labels)
    base = c.permutation or tuple(range(c.k))
    return replace(
        c,
        centroids=c.centroids[order].copy(),
        labels=labels,
        permutation=tuple(int(base[i]) for i in order),
    )


# --------------------------------------------------------------------------
# Rand / adjusted Rand index


def _contingency(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label arrays must be 1-D and equal length, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValueError("need at least 2 items to compare clusterings")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _pair_sums(table):
    n = int(table.sum())
    same_both = sum(comb(int(v), 2) for v in table.ravel() if v > 1)
    same_a = sum(comb(int(v), 2) for v in table.sum(axis=1))
    same_b = sum(comb(int(v), 2) for v in table.sum(axis=0))
    return n, same_both, same_a, same_b


def rand_index(a, b) -> float:
    n, both, sa, sb = _pair_sums(_contingency(a, b))
    total = comb(n, 2)
    # agreeing pairs: together in both, or apart in both
    agree = both + (total - sa - sb + both)
    return agree / total


def adjusted_rand_index(a, b) -> float:
    """Hubert-Arabie adjusted Rand index; 1.0 when both labelings are trivial and equal."""
    n, both, sa, sb = _pair_sums(_contingency(a, b))
    total = comb(n, 2)
    # integer numerators keep the result exact until the final division
    num = both * total - sa * sb
    den = (sa + sb) * total - 2 * sa * sb
    if den == 0:
        return 1.0
    return 2 * num / den


# --------------------------------------------------------------------------
# stability


@dataclass
class StabilityEstimate:
    k: int
    averaged_ari: float
    aris: list
    inertia: float
    params: dict = field(default_factory=dict)


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def stability_estimate(points, k: int, seed: int = 0, threads: int = 1, **kw) -> StabilityEstimate:
    """Averaged near-optimal ARI for one k.

    Ten k-means++ runs (seeds ``seed..seed+9``) give the minimum-inertia
    reference; six randomly initialised runs (seeds ``seed+10..seed+15``) are
    each compared against it.
    """
    x = _check_points(points)
    pp = _map(lambda s: kmeans(x, k, "plusplus", s, **kw), range(seed, seed + N_PLUSPLUS_RUNS), threads)
    ref = min(pp, key=lambda c: c.inertia)  # first minimum wins on exact ties
    rs = range(seed + N_PLUSPLUS_RUNS, seed + N_PLUSPLUS_RUNS + N_RANDOM_RUNS)
    rand = _map(lambda s: kmeans(x, k, "random", s, **kw), rs, threads)
    aris = [adjusted_rand_index(c.labels, ref.labels) for c in rand]
    return StabilityEstimate(k=k, averaged_ari=float(np.mean(aris)), aris=aris, inertia=ref.inertia)


def recommend_k(ks: Sequence[int], scores: Sequence[float], k_min_exclusive: int = 3):
    """Peaks of the stability curve restricted to k > ``k_min_exclusive``.

    Returns ``(recommended, peaks, note)``. A boundary point is a peak when it
    beats its single inner neighbour; interior points must be >= both
    neighbours and > at least one. With no peak (flat curve) the smallest
    qualifying k is recommended.
    """
    pairs = sorted((int(k), float(s)) for k, s in zip(ks, scores) if k > k_min_exclusive)
    if not pairs:
        return None, [], f"no k > {k_min_exclusive} in range"
    kk = [p[0] for p in pairs]
    ss = [p[1] for p in pairs]
    peaks = []
    if len(ss) == 1:
        peaks = [kk[0]]
    else:
        for i, s in enumerate(ss):
            left = ss[i - 1] if i > 0 else None
            right = ss[i + 1] if i + 1 < len(ss) else None
            neigh = [v for v in (left, right) if v is not None]
            if all(s >= v for v in neigh) and any(s > v for v in neigh):
                peaks.append(kk[i])
    if peaks:
        return peaks[0], peaks, "first peak"
    return kk[0], [], "flat stability curve: smallest k above threshold"


@dataclass
class SweepResult:
    rows: list  # StabilityEstimate with params filled in
    recommended: dict  # (p, signature) -> (k, peaks, note)


def stability_sweep(
    points_for,
    k_range: Iterable[int],
    p_range: Iterable = (None,),
    spec_set: Iterable = (None,),
    seed: int = 0,
    threads: int = 1,
    k_min_exclusive: int = 3,
    **kw,
) -> SweepResult:
    """Stability estimate for every (p, signature, k) combination.

    ``points_for(p, spec)`` returns the signature points for one
    configuration; pass a constant function when only k varies.
    """
    k_range = list(k_range)
    p_range = list(p_range)
    spec_set = list(spec_set)
    if not k_range or not p_range or not spec_set:
        raise ValueError("stability sweep ranges must be non-empty")
    rows, recommended = [], {}
    for p in p_range:
        for spec in spec_set:
            pts = points_for(p, spec) if callable(points_for) else points_for
            ests = []
            for k in k_range:
                est = stability_estimate(pts, k, seed=seed, threads=threads, **kw)
                est.params = {"p": p, "signature": spec}
                ests.append(est)
                logger.info("stability p=%s sig=%s k=%d ari=%.4f", p, spec, k, est.averaged_ari)
            rows.extend(ests)
            recommended[(p, spec)] = recommend_k(
                [e.k for e in ests], [e.averaged_ari for e in ests], k_min_exclusive
            )
    return SweepResult(rows=rows, recommended=recommended)


# --------------------------------------------------------------------------
# persistence


def labels_to_u16(labels: np.ndarray) -> bytes:
    lab = np.asarray(labels)
    if lab.size and lab.max() >= LABEL_INVALID_U16:
        raise ValueError("cluster id too large for u16 label file")
    out = np.where(lab < 0, LABEL_INVALID_U16, lab).astype("<u2")
    return out.tobytes()


def labels_from_u16(raw: bytes, shape) -> np.ndarray:
    arr = np.frombuffer(raw, dtype="<u2").astype(np.int64)
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"label payload has {arr.size} entries, expected shape {tuple(shape)}")
    arr = arr.reshape(shape)
    arr[arr == LABEL_INVALID_U16] = INVALID
    return arr


@dataclass
class FittedVariable:
    """A fitted, relabeled clustering of one variable plus labels per ensemble member."""

    variable: str
    k: int
    centroids: np.ndarray
    seed: int
    permutation: tuple
    inertia: float
    signature: dict
    members: list  # e.g. ["forced/0", ..., "baseline/4"]
    labels: np.ndarray  # (M, T, NPART)
    extra: dict = field(default_factory=dict)

    def member_labels(self, member: str) -> np.ndarray:
        return self.labels[self.members.index(member)]


def write_fitted(fv: FittedVariable, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    label_file = f"{fv.variable}_labels.bin"
    meta = {
        "format_version": 1,
        "variable": fv.variable,
        "k": fv.k,
        "seed": fv.seed,
        "permutation": list(fv.permutation),
        "inertia": fv.inertia,
        "centroids": fv.centroids.tolist(),
        "signature": fv.signature,
        "members": list(fv.members),
        "labels_shape": list(fv.labels.shape),
        "labels_file": label_file,
        **({"extra": fv.extra} if fv.extra else {}),
    }
    (directory / label_file).write_bytes(labels_to_u16(fv.labels))
    path = directory / f"{fv.variable}.json"
    path.write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return path


def read_fitted(path) -> FittedVariable:
    path = Path(path)
    meta = json.loads(path.read_text(encoding="utf-8"))
    labels = labels_from_u16((path.parent / meta["labels_file"]).read_bytes(), meta["labels_shape"])
    return FittedVariable(
        variable=meta["variable"],
        k=meta["k"],
        centroids=np.asarray(meta["centroids"], dtype=np.float64),
        seed=meta["seed"],
        permutation=tuple(meta["permutation"]),
        inertia=meta["inertia"],
        signature=meta["signature"],
        members=list(meta["members"]),
        labels=labels,
        extra=meta.get("extra", {}),
    )
