"""Gridded multi-variable datasets: manifest+binary I/O and a synthetic scenario.

A dataset lives in a directory holding ``manifest.json`` and one little-endian
flat binary file per variable (time-major, then latitude, then longitude).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
DEFAULT_SENTINEL = -9999.0

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class DatasetError(ValueError):
    """Raised for malformed dataset manifests or payloads."""


@dataclass
class Variable:
    name: str
    values: np.ndarray  # (T, NLAT, NLON) float64
    missing: np.ndarray  # same shape, bool
    units: str = ""
    dtype: str = "f64"
    sentinel: float = DEFAULT_SENTINEL


@dataclass
class FieldDataset:
    variables: dict[str, Variable]
    times: list
    lats: np.ndarray
    lons: np.ndarray

    def __post_init__(self):
        self.lats = np.asarray(self.lats, dtype=np.float64)
        self.lons = np.asarray(self.lons, dtype=np.float64)
        self.validate()

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.times), self.lats.size, self.lons.size)

    @property
    def names(self) -> list[str]:
        return list(self.variables)

    def __getitem__(self, name: str) -> Variable:
        try:
            return self.variables[name]
        except KeyError:
            raise KeyError(f"unknown variable {name!r}; have {self.names}") from None

    def validate(self) -> None:
        shape = self.shape
        for name, var in self.variables.items():
            if var.values.shape != shape:
                raise DatasetError(f"{name}: shape {var.values.shape} != grid {shape}")
            if var.missing.shape != shape:
                raise DatasetError(f"{name}: mask shape {var.missing.shape} != grid {shape}")
        _check_axis("lats", self.lats)
        _check_axis("lons", self.lons)
        if self.lats.size and (self.lats[0] < -90 or self.lats[-1] > 90):
            raise DatasetError("lats: values outside [-90, 90]")
        if self.lons.size:
            lo, hi = self.lons[0], self.lons[-1]
            if not ((lo >= 0 and hi < 360) or (lo >= -180 and hi < 180)):
                raise DatasetError("lons: values must lie in [0, 360) or [-180, 180)")

    def masked(self, name: str) -> np.ma.MaskedArray:
        var = self[name]
        return np.ma.MaskedArray(var.values, mask=var.missing)


def _check_axis(name: str, axis: np.ndarray) -> None:
    if axis.ndim != 1:
        raise DatasetError(f"{name}: must be one-dimensional")
    if axis.size > 1 and not np.all(np.diff(axis) > 0):
        raise DatasetError(f"{name}: coordinates must be strictly increasing")


@dataclass
class EnsemblePair:
    forced: list[FieldDataset]
    baseline: list[FieldDataset]

    def __post_init__(self):
        if not self.forced or len(self.forced) != len(self.baseline):
            raise DatasetError(
                f"ensemble needs >=1 paired member, got {len(self.forced)} forced "
                f"and {len(self.baseline)} baseline"
            )
        ref = self.forced[0]
        for arm, members in (("forced", self.forced), ("baseline", self.baseline)):
            for i, ds in enumerate(members):
                if ds.shape != ref.shape or ds.names != ref.names:
                    raise DatasetError(f"{arm}[{i}]: grid or variables differ from forced[0]")
                if not (np.array_equal(ds.lats, ref.lats) and np.array_equal(ds.lons, ref.lons)):
                    raise DatasetError(f"{arm}[{i}]: coordinates differ from forced[0]")
                if list(ds.times) != list(ref.times):
                    raise DatasetError(f"{arm}[{i}]: time axis differs from forced[0]")

    @property
    def size(self) -> int:
        return len(self.forced)

    def members(self):
        """Yield ``(arm, index, dataset)`` with forced members first."""
        for i, ds in enumerate(self.forced):
            yield "forced", i, ds
        for i, ds in enumerate(self.baseline):
            yield "baseline", i, ds


# --------------------------------------------------------------------------
# manifest + binary format


def load_dataset(path) -> FieldDataset:
    """Read a dataset directory (or a path to its manifest)."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.is_file():
        raise DatasetError(f"manifest: file not found: {manifest_path}")
    root = manifest_path.parent
    try:
        meta = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest: invalid JSON ({exc})") from None

    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetError(f"format_version: unsupported value {version!r}")
    try:
        dims = meta["dims"]
        shape = (int(dims["time"]), int(dims["nlat"]), int(dims["nlon"]))
        times, lats, lons = meta["times"], meta["lats"], meta["lons"]
        specs = meta["variables"]
    except KeyError as exc:
        raise DatasetError(f"manifest: missing field {exc.args[0]!r}") from None

    for name, axis, n in (("times", times, shape[0]), ("lats", lats, shape[1]), ("lons", lons, shape[2])):
        if len(axis) != n:
            raise DatasetError(f"{name}: length {len(axis)} does not match dims ({n})")

    variables = {}
    for spec in specs:
        name = spec.get("name", "?")
        dtype_code = spec.get("dtype")
        if dtype_code not in _DTYPES:
            raise DatasetError(f"{name}: unknown dtype {dtype_code!r}")
        dtype = _DTYPES[dtype_code]
        payload = root / spec["file"]
        if not payload.is_file():
            raise DatasetError(f"{name}: payload file not found: {payload}")
        raw = payload.read_bytes()
        expected = math.prod(shape) * dtype.itemsize
        if len(raw) != expected:
            raise DatasetError(
                f"{name}: payload is {len(raw)} bytes, expected {expected} for shape {shape} {dtype_code}"
            )
        stored = np.frombuffer(raw, dtype=dtype).reshape(shape)
        sentinel = float(spec.get("sentinel", DEFAULT_SENTINEL))
        missing = stored == dtype.type(sentinel)
        if np.issubdtype(stored.dtype, np.floating):
            missing |= np.isnan(stored)
        values = stored.astype(np.float64)
        variables[name] = Variable(
            name=name,
            values=values,
            missing=missing,
            units=spec.get("units", ""),
            dtype=dtype_code,
            sentinel=sentinel,
        )
    return FieldDataset(variables=variables, times=list(times), lats=lats, lons=lons)


def write_dataset(ds: FieldDataset, directory) -> Path:
    """Write ``ds`` as manifest + one binary payload per variable."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    T, nlat, nlon = ds.shape
    specs = []
    for name, var in ds.variables.items():
        dtype = _DTYPES[var.dtype]
        # NaN payload cells are already missing; keep them as NaN
        out = np.where(var.missing & ~np.isnan(var.values), var.sentinel, var.values).astype(dtype)
        fname = f"{name}.bin"
        (directory / fname).write_bytes(out.tobytes(order="C"))
        specs.append(
            {
                "name": name,
                "units": var.units,
                "dtype": var.dtype,
                "file": fname,
                "sentinel": var.sentinel,
            }
        )
    meta = {
        "format_version": FORMAT_VERSION,
        "dims": {"time": T, "nlat": nlat, "nlon": nlon},
        "times": list(ds.times),
        "lats": [float(x) for x in ds.lats],
        "lons": [float(x) for x in ds.lons],
        "variables": specs,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return directory


def write_ensemble(pair: EnsemblePair, directory) -> list[Path]:
    directory = Path(directory)
    return [write_dataset(ds, directory / f"{arm}_{i:02d}") for arm, i, ds in pair.members()]


def load_ensemble(forced_paths: Sequence, baseline_paths: Sequence) -> EnsemblePair:
    return EnsemblePair(
        forced=[load_dataset(p) for p in forced_paths],
        baseline=[load_dataset(p) for p in baseline_paths],
    )


def trim_poles(ds: FieldDataset, nrows: int) -> FieldDataset:
    """Drop ``nrows`` latitude rows at each pole."""
    nlat = ds.lats.size
    if nrows < 0 or 2 * nrows >= nlat:
        raise DatasetError(f"trim_poles: nrows={nrows} leaves no rows of {nlat}")
    if nrows == 0:
        return ds
    sl = slice(nrows, nlat - nrows)
    variables = {
        name: replace(var, values=var.values[:, sl, :].copy(), missing=var.missing[:, sl, :].copy())
        for name, var in ds.variables.items()
    }
    return FieldDataset(variables=variables, times=list(ds.times), lats=ds.lats[sl].copy(), lons=ds.lons.copy())


# --------------------------------------------------------------------------
# synthetic forced / counterfactual ensembles

VARIABLE_NAMES = ("AEROD_v", "FLNT", "T050")


@dataclass
class ScenarioConfig:
    """Parameters of the synthetic eruption-like scenario.

    Variable A (aerosol) is raised by the plume, B (outgoing longwave) is
    lowered and C (stratospheric temperature) is raised after ``lag_c`` steps.
    """

    ntime: int = 365
    nlat: int = 36
    nlon: int = 72
    members: int = 5
    t_event: int = 30
    event_lat: float = 15.0
    event_lon: float = 120.0
    spread_rate: float = 1.5  # zonal degrees per step
    poleward_ratio: float = 0.15  # meridional spread as a fraction of zonal
    plume_sigma0: float = 6.0
    rise_time: float = 10.0
    decay_time: float = 400.0
    gain_a: float = 1.0
    gain_b: float = 40.0
    gain_c: float = 8.0
    lag_c: int = 10
    noise_phi: float = 0.9  # AR(1) coefficient in time
    noise_amp: float = 1.0  # multiplies each variable's base noise scale
    noise_smooth: float = 2.0  # Gaussian smoothing length in cells
    independent_noise: bool = False  # forced members draw their own noise
    missing_polar_rows: int = 0  # seasonal polar gap in variable A
    # seasonal background aerosol source present in both arms
    dust_gain: float = 1.5
    dust_lat: float = 20.0
    dust_lon: float = 10.0
    dust_sigma: float = 15.0
    dust_peak_day: int = 200
    dust_width: float = 25.0  # days
    dtype: str = "f64"
    seed: int = 0
    names: tuple = VARIABLE_NAMES

    def validate(self) -> None:
        if not 0 <= self.t_event < self.ntime:
            raise ValueError(f"t_event={self.t_event} outside [0, {self.ntime})")
        if self.members < 1:
            raise ValueError("members must be >= 1")
        if self.spread_rate <= 0:
            raise ValueError("spread_rate must be > 0")
        if self.lag_c < 0:
            raise ValueError("lag_c must be >= 0")
        if not 0 <= self.noise_phi < 1:
            raise ValueError("noise_phi must lie in [0, 1)")
        if len(self.names) != 3:
            raise ValueError("scenario defines exactly three variables")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")


def scenario_axes(cfg: ScenarioConfig):
    dlat = 180.0 / cfg.nlat
    dlon = 360.0 / cfg.nlon
    lats = -90.0 + dlat * (np.arange(cfg.nlat) + 0.5)
    lons = dlon * (np.arange(cfg.nlon) + 0.5)
    return lats, lons


def plume(cfg: ScenarioConfig) -> np.ndarray:
    """Plume intensity P(t, lat, lon) in [0, 1]; zero before the event."""
    lats, lons = scenario_axes(cfg)
    dlon = (lons - cfg.event_lon + 180.0) % 360.0 - 180.0
    dlat = lats - cfg.event_lat
    out = np.zeros((cfg.ntime, cfg.nlat, cfg.nlon))
    for t in range(cfg.t_event, cfg.ntime):
        age = t - cfg.t_event
        sig_lon = cfg.plume_sigma0 + cfg.spread_rate * age
        sig_lat = cfg.plume_sigma0 + cfg.poleward_ratio * cfg.spread_rate * age
        amp = (1.0 - math.exp(-(age + 1) / cfg.rise_time)) * math.exp(-age / cfg.decay_time)
        out[t] = amp * np.exp(
            -0.5 * (dlat[:, None] / sig_lat) ** 2 - 0.5 * (dlon[None, :] / sig_lon) ** 2
        )
    return out


def dust(cfg: ScenarioConfig) -> np.ndarray:
    """Seasonal background source intensity, identical in every member and arm."""
    lats, lons = scenario_axes(cfg)
    dlon = (lons - cfg.dust_lon + 180.0) % 360.0 - 180.0
    dlat = lats - cfg.dust_lat
    shape = np.exp(-0.5 * (dlat[:, None] / cfg.dust_sigma) ** 2 - 0.5 * (dlon[None, :] / cfg.dust_sigma) ** 2)
    day = np.arange(cfg.ntime) % 365
    dd = np.minimum(np.abs(day - cfg.dust_peak_day), 365 - np.abs(day - cfg.dust_peak_day))
    season = np.exp(-0.5 * (dd / cfg.dust_width) ** 2)
    return cfg.dust_gain * season[:, None, None] * shape[None]


def plume_footprint(cfg: ScenarioConfig, t: int, threshold: float = 0.05) -> np.ndarray:
    """Cells the plume has reached (intensity >= threshold) at any step <= t."""
    p = plume(cfg)[: t + 1]
    return p.max(axis=0) >= threshold


def _lagged(p: np.ndarray, lag: int) -> np.ndarray:
    if lag == 0:
        return p
    out = np.zeros_like(p)
    out[lag:] = p[:-lag]
    return out


def _smooth_ar1(rng: np.random.Generator, cfg: ScenarioConfig) -> np.ndarray:
    shape = (cfg.ntime, cfg.nlat, cfg.nlon)
    white = rng.standard_normal(shape)
    if cfg.noise_smooth > 0:
        white = gaussian_filter(white, sigma=(0, cfg.noise_smooth, cfg.noise_smooth), mode=("constant", "nearest", "wrap"))
        white /= white.std()
    out = np.empty(shape)
    out[0] = white[0]
    scale = math.sqrt(1.0 - cfg.noise_phi**2)
    for t in range(1, cfg.ntime):
        out[t] = cfg.noise_phi * out[t - 1] + scale * white[t]
    return out


# base climate and noise scale per variable: (mean field fn, noise sd, units)
def _base_fields(lats: np.ndarray):
    s2 = np.sin(np.deg2rad(lats)) ** 2
    return (
        (np.full_like(lats, 0.1), 0.02, "1"),
        (280.0 - 100.0 * s2, 6.0, "W m-2"),
        (224.0 - 24.0 * s2, 1.5, "K"),
    )


def _member_noise(cfg: ScenarioConfig, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [_smooth_ar1(rng, cfg) for _ in range(3)]


def _assemble(cfg, lats, lons, noise, p, signs, times, missing) -> FieldDataset:
    variables = {}
    for v, ((mean, sd, units), name) in enumerate(zip(_base_fields(lats), cfg.names)):
        values = mean[None, :, None] + cfg.noise_amp * sd * noise[v]
        if p is not None:
            values = values + signs[v] * p[v]
        mask = missing if v == 0 else np.zeros(values.shape, dtype=bool)
        variables[name] = Variable(
            name=name,
            values=values,
            missing=mask.copy(),
            units=units,
            dtype=cfg.dtype,
        )
    return FieldDataset(variables=variables, times=list(times), lats=lats, lons=lons)


def _polar_mask(cfg: ScenarioConfig) -> np.ndarray:
    mask = np.zeros((cfg.ntime, cfg.nlat, cfg.nlon), dtype=bool)
    n = cfg.missing_polar_rows
    if n <= 0:
        return mask
    day = np.arange(cfg.ntime) % 365
    # northern winter roughly days [0, 60) and [335, 365), southern winter [152, 244)
    north = (day < 60) | (day >= 335)
    south = (day >= 152) & (day < 244)
    mask[north, -n:, :] = True
    mask[south, :n, :] = True
    return mask


def _quantize(ds: FieldDataset) -> FieldDataset:
    """Round values through the storage dtype so in-memory and on-disk data agree."""
    for var in ds.variables.values():
        var.values = var.values.astype(_DTYPES[var.dtype]).astype(np.float64)
    return ds


def generate_scenario(cfg: ScenarioConfig) -> EnsemblePair:
    """Paired forced/baseline ensemble with a spreading plume injected at ``t_event``."""
    cfg.validate()
    lats, lons = scenario_axes(cfg)
    times = list(range(cfg.ntime))
    p = plume(cfg)
    forcing = [cfg.gain_a * p, cfg.gain_b * p, cfg.gain_c * _lagged(p, cfg.lag_c)]
    signs = (1.0, -1.0, 1.0)
    background = None
    if cfg.dust_gain != 0:
        d = dust(cfg)
        background = [cfg.gain_a * d, cfg.gain_b * d, cfg.gain_c * _lagged(d, cfg.lag_c)]
    missing = _polar_mask(cfg)
    forced, baseline = [], []
    for m in range(cfg.members):
        noise = _member_noise(cfg, cfg.seed + m)
        baseline.append(_quantize(_assemble(cfg, lats, lons, noise, background, signs, times, missing)))
        if cfg.independent_noise:
            noise = _member_noise(cfg, cfg.seed + 10_000 + m)
        total = forcing if background is None else [f + b for f, b in zip(forcing, background)]
        forced.append(_quantize(_assemble(cfg, lats, lons, noise, total, signs, times, missing)))
    return EnsemblePair(forced=forced, baseline=baseline)
