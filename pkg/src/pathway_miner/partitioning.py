"""Analysis partitions and per-partition signatures."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid_io import FieldDataset

MISSING_POLICIES = ("exclude", "invalidate")


@dataclass(frozen=True)
class PartitionGrid:
    """Disjoint ``p x p`` cell blocks over the largest p-divisible subgrid.

    Partitions are numbered row-major: ``k = band * nlon_bands + col``.
    """

    p: int
    nlat_bands: int
    nlon_bands: int
    lats: np.ndarray = field(repr=False)
    lons: np.ndarray = field(repr=False)

    @property
    def npart(self) -> int:
        return self.nlat_bands * self.nlon_bands

    def rect(self, k: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """Cell-index rectangle ``[(i0, j0), (i1, j1))`` of partition ``k``."""
        band, col = divmod(k, self.nlon_bands)
        i0, j0 = band * self.p, col * self.p
        return (i0, j0), (i0 + self.p, j0 + self.p)

    def bands(self, k: int) -> tuple[int, int]:
        return divmod(k, self.nlon_bands)

    @property
    def rects(self) -> list:
        return [self.rect(k) for k in range(self.npart)]

    @property
    def centroids(self) -> np.ndarray:
        """(NPART, 2) array of partition centre (lat, lon) in degrees."""
        lat_c = self.lats[: self.nlat_bands * self.p].reshape(self.nlat_bands, self.p).mean(axis=1)
        lon_c = self.lons[: self.nlon_bands * self.p].reshape(self.nlon_bands, self.p).mean(axis=1)
        return np.stack(np.meshgrid(lat_c, lon_c, indexing="ij"), axis=-1).reshape(-1, 2)

    @property
    def band_lats(self) -> np.ndarray:
        return self.centroids[:: self.nlon_bands, 0]

    def blocks(self, arr: np.ndarray) -> np.ndarray:
        """Reshape (T, NLAT, NLON) to (T, NPART, p*p), dropping leftover rows/cols."""
        T = arr.shape[0]
        p, nb, mb = self.p, self.nlat_bands, self.nlon_bands
        sub = arr[:, : nb * p, : mb * p]
        return sub.reshape(T, nb, p, mb, p).transpose(0, 1, 3, 2, 4).reshape(T, nb * mb, p * p)

    def cell_mask(self, part_mask: np.ndarray, nlat: int, nlon: int) -> np.ndarray:
        """Expand a per-partition boolean (NPART,) to a cell mask (NLAT, NLON)."""
        out = np.zeros((nlat, nlon), dtype=bool)
        grid = np.asarray(part_mask, dtype=bool).reshape(self.nlat_bands, self.nlon_bands)
        out[: self.nlat_bands * self.p, : self.nlon_bands * self.p] = np.kron(
            grid, np.ones((self.p, self.p), dtype=bool)
        ).astype(bool)
        return out

    def partition_fraction(self, cells: np.ndarray) -> np.ndarray:
        """Fraction of each partition's cells that are set in a (NLAT, NLON) mask."""
        return self.blocks(np.asarray(cells, dtype=np.float64)[None])[0].mean(axis=1)


def make_partitions(ds: FieldDataset, p: int) -> PartitionGrid:
    _, nlat, nlon = ds.shape
    if p < 1 or p > min(nlat, nlon):
        raise ValueError(f"partition size p={p} must lie in [1, {min(nlat, nlon)}]")
    return PartitionGrid(p=p, nlat_bands=nlat // p, nlon_bands=nlon // p, lats=ds.lats.copy(), lons=ds.lons.copy())


@dataclass(frozen=True)
class SignatureSpec:
    kind: str = "percentile"
    quantiles: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if self.kind not in ("mean", "percentile"):
            raise ValueError(f"unknown signature kind {self.kind!r}")
        if self.kind == "percentile":
            q = np.asarray(self.quantiles, dtype=float)
            if q.size == 0 or q[0] < 0 or q[-1] > 1 or np.any(np.diff(q) <= 0):
                raise ValueError(f"quantiles must be strictly increasing within [0, 1]: {self.quantiles}")
            object.__setattr__(self, "quantiles", tuple(float(x) for x in q))

    @property
    def dim(self) -> int:
        return 1 if self.kind == "mean" else len(self.quantiles)

    @classmethod
    def from_dict(cls, d) -> "SignatureSpec":
        if isinstance(d, str):
            if d == "mean":
                return cls("mean", ())
            if d.startswith("percentile(") and d.endswith(")"):
                n = int(d[len("percentile(") : -1])
                return cls("percentile", tuple(np.linspace(0, 1, n)))
            raise ValueError(f"unknown signature {d!r}")
        return cls(d.get("kind", "percentile"), tuple(d.get("quantiles", ())))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "quantiles": list(self.quantiles)}


def signature(values, spec: SignatureSpec) -> np.ndarray | None:
    """Signature vector of one multiset of values; ``None`` if it is empty."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        return None
    if spec.kind == "mean":
        return np.array([x.mean()])
    return np.quantile(x, spec.quantiles, method="linear")


@dataclass
class SignatureTensor:
    values: np.ndarray  # (T, NPART, D)
    valid: np.ndarray  # (T, NPART) bool
    variable: str = ""
    spec: SignatureSpec = field(default_factory=SignatureSpec)

    @property
    def shape(self):
        return self.values.shape

    def points(self) -> np.ndarray:
        """Valid signature rows stacked as (n, D)."""
        return self.values[self.valid]


def compute_signatures(
    ds: FieldDataset,
    grid: PartitionGrid,
    spec: SignatureSpec,
    variable: str,
    missing_policy: str = "exclude",
) -> SignatureTensor:
    """Signature of every (timestep, partition) over its unmasked cells.

    With ``missing_policy="invalidate"`` a partition with any masked cell is
    invalid at that timestep; with ``"exclude"`` only all-masked partitions are.
    """
    if missing_policy not in MISSING_POLICIES:
        raise ValueError(f"missing_policy must be one of {MISSING_POLICIES}")
    var = ds[variable]
    vals = grid.blocks(var.values)
    miss = grid.blocks(var.missing)
    T, npart, _ = vals.shape
    n_missing = miss.sum(axis=2)
    if missing_policy == "invalidate":
        valid = n_missing == 0
    else:
        valid = n_missing < miss.shape[2]

    out = np.zeros((T, npart, spec.dim))
    clean = valid & (n_missing == 0)
    partial = valid & ~clean
    if spec.kind == "mean":
        out[clean, 0] = vals[clean].mean(axis=1)
    else:
        q = np.quantile(vals[clean], spec.quantiles, axis=1, method="linear")
        out[clean] = q.T
    for t, k in zip(*np.nonzero(partial)):
        out[t, k] = signature(vals[t, k][~miss[t, k]], spec)
    return SignatureTensor(values=out, valid=valid, variable=variable, spec=spec)


def write_signatures(sig: SignatureTensor, directory) -> Path:
    """Persist as a dataset-style manifest with dims (T, NPART, D)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    T, npart, d = sig.values.shape
    stored = np.where(sig.valid[:, :, None], sig.values, np.nan).astype("<f8")
    (directory / "signatures.bin").write_bytes(stored.tobytes())
    meta = {
        "format_version": 1,
        "dims": {"time": T, "npart": npart, "dim": d},
        "variable": sig.variable,
        "signature": sig.spec.to_dict(),
        "dtype": "f64",
        "file": "signatures.bin",
        "invalid": "NaN",
    }
    (directory / "manifest.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return directory


def read_signatures(directory) -> SignatureTensor:
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    dims = meta["dims"]
    shape = (dims["time"], dims["npart"], dims["dim"])
    raw = (directory / meta["file"]).read_bytes()
    if len(raw) != 8 * int(np.prod(shape)):
        raise ValueError(f"{meta['variable']}: signature payload size does not match {shape}")
    stored = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    valid = ~np.isnan(stored).any(axis=2)
    stored[~valid] = 0.0
    spec = SignatureSpec.from_dict(meta["signature"])
    return SignatureTensor(values=stored, valid=valid, variable=meta["variable"], spec=spec)


def stack_points(tensors: Sequence[SignatureTensor]) -> np.ndarray:
    """Concatenate the valid rows of several tensors (e.g. all ensemble members)."""
    return np.concatenate([s.points() for s in tensors], axis=0)
