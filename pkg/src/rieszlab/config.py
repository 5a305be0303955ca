"""Experiment configuration: TOML loading, model construction and validation.

A config looks like::

    seed = 0
    pipelines = ["hardy", "riesz"]
    p = [1.5, 2.0]
    q = 1.5

    [model]
    builder = "connected_sum"   # or "lattice_box", "conic_end"
    n = 3
    levels = [9, 17]            # sides (lattice) or level counts (conic)
    refinement = "extend"       # "extend": fixed spacing; "spacing": fixed extent
    spacing = 1.0
    neck = 2.0                  # physical neck length

    [quadrature]
    nodes = 200
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

from .geometry import LatticeSpec, WeightedGraph, build_conic_end, build_connected_sum, build_lattice_box
from .spectral import DENSE_CAP, QuadratureSettings

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

PIPELINES = ("volume-growth", "heat-bounds", "cz", "covering", "hardy", "riesz",
             "reverse-riesz", "weak-type", "assembly")
BUILDERS = ("lattice_box", "connected_sum", "conic_end")
DENSE_PIPELINES = ("heat-bounds", "assembly")
MEMORY_BUDGET_GB = 4.0


class ConfigError(ValueError):
    """Malformed configuration file (bad TOML, unknown keys, wrong types)."""


@dataclass
class ModelSpec:
    builder: str = "connected_sum"
    n: int = 3
    levels: list = field(default_factory=lambda: [9])
    refinement: str = "extend"
    spacing: float = 1.0
    neck: float = 2.0
    cross_scale: float = 1.0

    def level_spacing(self, level: int) -> float:
        if self.refinement == "spacing":
            return self.spacing * (self.levels[0] - 1) / (level - 1)
        return self.spacing

    def build(self, level: int) -> WeightedGraph:
        if self.builder == "conic_end":
            return build_conic_end(self.n, int(level), self.cross_scale)
        h = self.level_spacing(level)
        if self.builder == "lattice_box":
            return build_lattice_box(self.n, int(level), h)
        spec = LatticeSpec(self.n, int(level), h)
        return build_connected_sum(spec, spec, max(1, int(round(self.neck / h))))

    def vertex_count(self, level: int) -> int | None:
        """Vertex count without building (``None`` for conic ends)."""
        if self.builder == "lattice_box":
            return int(level) ** self.n
        if self.builder == "connected_sum":
            neck = max(1, int(round(self.neck / self.level_spacing(level))))
            return 2 * int(level) ** self.n + neck - 1
        return None


@dataclass
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    pipelines: list = field(default_factory=list)
    p: list = field(default_factory=lambda: [2.0])
    q: float = 1.5
    r0: float | None = None
    quadrature: QuadratureSettings = field(default_factory=QuadratureSettings)
    seed: int = 0
    out: str = "run"
    instances: int = 10
    dictionary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quadrature"] = self.quadrature.to_dict()
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        model = raw.pop("model", {})
        if not isinstance(model, dict):
            raise ConfigError("[model] must be a table")
        bad = set(model) - set(ModelSpec.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown model keys: {sorted(bad)}")
        quad = raw.pop("quadrature", {})
        bad = set(quad) - set(QuadratureSettings.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown quadrature keys: {sorted(bad)}")
        p = raw.pop("p", [2.0])
        p = [float(v) for v in (p if isinstance(p, list) else [p])]
        if "levels" in model and not isinstance(model["levels"], list):
            model["levels"] = [model["levels"]]
        try:
            return cls(model=ModelSpec(**model), quadrature=QuadratureSettings(**quad), p=p, **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


@dataclass
class Diagnostic:
    severity: str  # "error" or "warning"
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.key}: {self.message}"


def validate(cfg: ExperimentConfig) -> list[Diagnostic]:
    """Range, quadrature and memory checks; an empty list means the config is usable."""
    out: list[Diagnostic] = []

    def err(key, msg):
        out.append(Diagnostic("error", key, msg))

    def warn(key, msg):
        out.append(Diagnostic("warning", key, msg))

    m = cfg.model
    for name in cfg.pipelines:
        if name not in PIPELINES:
            err("pipelines", f"unknown pipeline {name!r}; choose from {', '.join(PIPELINES)}")
    if m.builder not in BUILDERS:
        err("model.builder", f"unknown builder {m.builder!r}")
    if m.refinement not in ("extend", "spacing"):
        err("model.refinement", f"must be 'extend' or 'spacing', got {m.refinement!r}")
    if not m.levels:
        err("model.levels", "at least one refinement level is required")
    if any((not isinstance(v, int)) or v < 1 for v in m.levels):
        err("model.levels", f"levels must be integers >= 1, got {m.levels}")
    elif m.builder != "conic_end" and any(v < 2 for v in m.levels):
        err("model.levels", "lattice sides must be >= 2")
    if m.n < 1:
        err("model.n", f"dimension must be >= 1, got {m.n}")
    if m.builder == "conic_end" and m.n > 3:
        err("model.n", "conic ends are built for n <= 3 only")
    if not m.spacing > 0:
        err("model.spacing", "spacing must be positive")
    if m.builder == "connected_sum" and not m.neck > 0:
        err("model.neck", "neck length must be positive")

    if not 1 <= cfg.q <= 2:
        err("q", f"q = {cfg.q} outside [1, 2]")
    for p in cfg.p:
        if not p >= 1:
            err("p", f"p = {p} must be >= 1")
        if "riesz" in cfg.pipelines and not p > 1:
            err("p", f"riesz pipeline needs p > 1, got {p}")
        if "assembly" in cfg.pipelines and not cfg.q <= p <= 2:
            err("p", f"assembly needs p in [q, 2] (reverse Riesz holds for every p in [q, 2)); "
                     f"got p = {p} with q = {cfg.q}")
        if "assembly" in cfg.pipelines and p == 1:
            err("p", "assembly needs p > 1")
        if "hardy" in cfg.pipelines and m.builder != "conic_end" and p >= m.n:
            warn("p", f"Hardy on a Euclidean end needs p < n; p = {p}, n = {m.n}")
    if cfg.r0 is not None and not cfg.r0 > 0:
        err("r0", "r0 must be positive")
    if cfg.instances < 1:
        err("instances", "need at least one instance")

    qs = cfg.quadrature
    if qs.nodes < 8:
        err("quadrature.nodes", f"need at least 8 nodes, got {qs.nodes}")
    if not qs.tol > 0:
        err("quadrature.tol", "tolerance must be positive")
    if qs.eps is not None and not qs.eps > 0:
        err("quadrature.eps", "eps must be positive")
    if qs.eps is not None and qs.R is not None and not qs.eps < qs.R:
        err("quadrature", f"need eps < R, got eps = {qs.eps}, R = {qs.R}")

    if all(isinstance(v, int) and v >= 2 for v in m.levels) and m.builder in BUILDERS[:2]:
        for level in m.levels:
            n = m.vertex_count(level)
            dense = any(name in DENSE_PIPELINES for name in cfg.pipelines)
            if dense and n > DENSE_CAP:
                err("model.levels", f"level {level} has {n} vertices; heat-bounds and assembly "
                                    f"need the dense eigenbasis (<= {DENSE_CAP})")
            gb = 8.0 * min(n, DENSE_CAP) ** 2 * 3 / 1e9 + 8.0 * n * 200 / 1e9
            if gb > MEMORY_BUDGET_GB:
                warn("model.levels", f"level {level}: about {gb:.1f} GB estimated")
    return out


def resolve_out(cfg: ExperimentConfig, out: str | None) -> Path:
    return Path(out if out is not None else cfg.out)

