"""Run configuration: one JSON file plus ``--set key=value`` overrides."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .grid_io import ScenarioConfig
from .partitioning import SignatureSpec

SEED_ENV = "PATHWAY_MINER_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class SweepConfig:
    k_range: list = field(default_factory=lambda: list(range(1, 13)))
    partition_sizes: list = field(default_factory=lambda: [3])
    signatures: list = field(default_factory=lambda: ["percentile(5)"])
    sample: int = 20000  # points per configuration; 0 uses all
    k_min_exclusive: int = 3


@dataclass
class RunConfig:
    """Defaults follow the reference parameter choices: 3x3 partitions, percentile(5), k = 4/4/5."""

    scenario: dict | None = None
    datasets: dict | None = None  # {"forced": [dirs], "baseline": [dirs]}
    variables: list = field(default_factory=lambda: ["AEROD_v", "FLNT", "T050"])
    trim_rows: int = 0
    partition_size: int = 3
    signature: Any = "percentile(5)"  # one spec for all, or {variable: spec}
    k: dict = field(default_factory=lambda: {"AEROD_v": 4, "FLNT": 4, "T050": 5})
    sweep: SweepConfig = field(default_factory=SweepConfig)
    missing_policy: str = "exclude"
    seed: int = 0
    n_init: int = 1
    max_iter: int = 300
    tol: float = 1e-6
    alpha: float = 0.05
    n_min: int = 1
    n_max: int = 4
    acyclic: bool = True
    rules: str | None = None  # path to a .rules file
    rules_text: str | None = None  # inline alternative to ``rules``
    top_n: int = 5
    top_length: int = 4
    out: str = "out"
    base_dir: str = field(default=".", repr=False)

    def validate(self) -> None:
        if (self.scenario is None) == (self.datasets is None):
            raise ConfigError("config needs exactly one of 'scenario' or 'datasets'")
        if self.datasets is not None:
            f, b = self.datasets.get("forced", []), self.datasets.get("baseline", [])
            if not f or len(f) != len(b):
                raise ConfigError("datasets.forced and datasets.baseline must be non-empty and equal length")
        if not self.variables:
            raise ConfigError("variables must be non-empty")
        if self.partition_size < 1:
            raise ConfigError("partition_size must be >= 1")
        for v in self.variables:
            if v not in self.k:
                raise ConfigError(f"k: no cluster count given for variable {v!r}")
            if int(self.k[v]) < 1:
                raise ConfigError(f"k[{v}] must be >= 1")
        if not self.sweep.k_range:
            raise ConfigError("sweep.k_range must be non-empty")
        if not self.sweep.partition_sizes or not self.sweep.signatures:
            raise ConfigError("sweep.partition_sizes and sweep.signatures must be non-empty")
        if not 1 <= self.n_min <= self.n_max:
            raise ConfigError("need 1 <= n_min <= n_max")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.missing_policy not in ("exclude", "invalidate"):
            raise ConfigError("missing_policy must be 'exclude' or 'invalidate'")
        if self.rules is not None and self.rules_text is not None:
            raise ConfigError("give at most one of 'rules' and 'rules_text'")
        try:
            for v in self.variables:
                self.signature_for(v)
            for s in self.sweep.signatures:
                SignatureSpec.from_dict(s)
        except ValueError as exc:
            raise ConfigError(f"signature: {exc}") from None
        if self.scenario is not None:
            sc = self.scenario_config()
            if set(self.variables) - set(sc.names):
                raise ConfigError(f"variables {self.variables} not all produced by the scenario {list(sc.names)}")

    def signature_for(self, variable: str) -> SignatureSpec:
        sig = self.signature
        if isinstance(sig, dict) and "kind" not in sig:
            sig = sig.get(variable, "percentile(5)")
        return SignatureSpec.from_dict(sig)

    def scenario_config(self) -> ScenarioConfig:
        known = {f.name for f in dataclasses.fields(ScenarioConfig)}
        extra = set(self.scenario) - known
        if extra:
            raise ConfigError(f"scenario: unknown field(s) {sorted(extra)}")
        if "seed" in self.scenario:
            raise ConfigError("scenario: set the top-level 'seed' instead of scenario.seed")
        kw = dict(self.scenario)
        if "names" in kw:
            kw["names"] = tuple(kw["names"])
        cfg = ScenarioConfig(**kw, seed=self.seed)
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(f"scenario: {exc}") from None
        return cfg

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.out)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_override(d: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = d
    for part in parts[:-1]:
        if node.get(part) is None:
            node[part] = {}
        node = node[part]
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part!r} is not a mapping")
    node[parts[-1]] = _coerce(value)


def from_dict(d: dict, base_dir=".") -> RunConfig:
    d = dict(d)
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"base_dir"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown config key(s): {sorted(extra)}")
    sweep = d.pop("sweep", None) or {}
    sweep_known = {f.name for f in dataclasses.fields(SweepConfig)}
    if set(sweep) - sweep_known:
        raise ConfigError(f"sweep: unknown key(s) {sorted(set(sweep) - sweep_known)}")
    try:
        cfg = RunConfig(**d, sweep=SweepConfig(**sweep), base_dir=str(base_dir))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None, overrides=(), out: str | None = None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    if path is not None:
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        base = path.parent
    else:
        d, base = {}, Path(".")
    for a in overrides:
        apply_override(d, a)
    if out is not None:
        d["out"] = str(Path(out).resolve())
    if env.get(SEED_ENV):
        try:
            d["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    cfg = from_dict(d, base)
    cfg.validate()
    return cfg
