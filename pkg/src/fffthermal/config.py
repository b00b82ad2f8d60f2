"""Run configuration: YAML files with geometry, materials, scenario, output
and calibration blocks.  Missing entries fall back to the PLA / bed defaults.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .calibration import Case
from .mesostructure import (FilamentSection, GeometryError, InfillSpec, Pattern,
                            VoidGeometry, VoxelGrid, build_continuum_grid,
                            build_infill_grid, build_void_grid, coarsen,
                            simplify_infill)
from .thermal import AIR_PROPS, PLA_PROPS, MaterialProperties, ThermalScenario

SAMPLE_DIR = Path(__file__).parent / "configs"
SAMPLES = ("S1", "S2", "S3", "S4", "S5", "S6", "S7")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class VoidConfig:
    a: float
    subdivision: int = 8


@dataclass(frozen=True)
class GeometryConfig:
    length: float = 30.0
    width: float = 30.0
    height: float = 20.0
    filament: FilamentSection = field(default_factory=FilamentSection)
    infill: InfillSpec = field(default_factory=InfillSpec)
    void: Optional[VoidConfig] = None
    coarsen: int = 1
    coarsen_rule: str = "pattern"   # pattern | majority | conserve

    def build(self, coarsen_factor: Optional[int] = None) -> VoxelGrid:
        """Voxel grid for this geometry, coarsened by ``coarsen_factor`` (or the
        configured factor).  Patterned infill is re-laid on the coarse raster
        unless ``coarsen_rule`` asks for block merging."""
        f = self.coarsen if coarsen_factor is None else int(coarsen_factor)
        dims = (self.length, self.width, self.height)
        if self.void is not None:
            grid = build_void_grid(VoidGeometry(self.void.a, self.filament), *dims,
                                   subdivision=self.void.subdivision)
        elif self.infill.pattern is Pattern.DENSE:
            grid = build_continuum_grid(*dims, self.filament)
        elif f > 1 and self.coarsen_rule == "pattern":
            return simplify_infill(self.infill, *dims, self.filament, f)
        else:
            grid = build_infill_grid(self.infill, *dims, self.filament)
        if f > 1:
            rule = "majority" if self.coarsen_rule == "pattern" else self.coarsen_rule
            grid = coarsen(grid, f, rule)
        return grid


@dataclass(frozen=True)
class MaterialsConfig:
    pla: MaterialProperties = PLA_PROPS
    air: MaterialProperties = AIR_PROPS


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    snapshot_every: float = 0.0
    plots: bool = True


@dataclass(frozen=True)
class CalibrationConfig:
    case: int = 3
    experiment: Optional[str] = None
    h_bounds: tuple[float, float] = (5.0, 60.0)
    T_c_side_bounds: Optional[tuple[float, float]] = None
    T_c_top_bounds: Optional[tuple[float, float]] = None
    lattice: int = 5
    coarse_factor: Optional[int] = None   # search grid factor, counted from filament scale


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    materials: MaterialsConfig = field(default_factory=MaterialsConfig)
    scenario: ThermalScenario = field(default_factory=ThermalScenario)
    output: OutputConfig = field(default_factory=OutputConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    base_dir: Optional[str] = field(default=None, compare=False)

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p


# -- parsing ---------------------------------------------------------------

def _block(data: dict, name: str) -> dict:
    block = data.get(name)
    if block is None:
        return {}
    if not isinstance(block, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(block).__name__}")
    return block


def _check_keys(block: dict, allowed, where: str) -> None:
    extra = set(block) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")


def _num(block: dict, key: str, where: str, default, *, positive=False, nonneg=False,
         integer=False, allow_none=False):
    value = block.get(key, default)
    if value is None:
        if allow_none:
            return None
        raise ConfigError(f"{where}.{key}: value is required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
    if integer:
        if float(value) != int(value):
            raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where}.{key}: must be finite")
    if positive and not value > 0:
        raise ConfigError(f"{where}.{key}: must be > 0, got {value}")
    if nonneg and value < 0:
        raise ConfigError(f"{where}.{key}: must be >= 0, got {value}")
    return value


def _pair(block: dict, key: str, where: str, default):
    value = block.get(key, default)
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where}.{key}: expected [low, high]")
    lo, hi = (_num({"v": v}, "v", f"{where}.{key}", None) for v in value)
    if lo > hi:
        raise ConfigError(f"{where}.{key}: low {lo} exceeds high {hi}")
    return (lo, hi)


def _material(block: dict, where: str, default: MaterialProperties) -> MaterialProperties:
    _check_keys(block, ("density", "specific_heat", "conductivity"), where)
    return MaterialProperties(
        _num(block, "density", where, default.density, positive=True),
        _num(block, "specific_heat", where, default.specific_heat, positive=True),
        _num(block, "conductivity", where, default.conductivity, positive=True),
    )


def config_from_dict(data: dict, base_dir: Optional[str] = None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    _check_keys(data, ("name", "geometry", "materials", "scenario", "output", "calibration"),
                "config")

    g = _block(data, "geometry")
    _check_keys(g, ("length", "width", "height", "filament", "infill", "void", "coarsen",
                    "coarsen_rule"), "geometry")
    fil = _block(g, "filament")
    _check_keys(fil, ("width", "layer_height"), "geometry.filament")
    section = FilamentSection(
        _num(fil, "width", "geometry.filament", 0.45, positive=True),
        _num(fil, "layer_height", "geometry.filament", 0.2, positive=True))
    inf = _block(g, "infill")
    _check_keys(inf, ("pattern", "density", "perimeter_walls", "solid_top_bottom_layers",
                      "gyroid_period"), "geometry.infill")
    pattern = inf.get("pattern", "dense")
    try:
        pattern = Pattern(str(pattern).lower())
    except ValueError:
        raise ConfigError(f"geometry.infill.pattern: must be one of "
                          f"{[p.value for p in Pattern]}, got {pattern!r}") from None
    density = _num(inf, "density", "geometry.infill", 1.0)
    if not 0.0 < density <= 1.0:
        raise ConfigError(f"geometry.infill.density: must be in (0, 1], got {density}")
    try:
        infill = InfillSpec(
            pattern, density,
            _num(inf, "perimeter_walls", "geometry.infill", 2, integer=True, nonneg=True),
            _num(inf, "solid_top_bottom_layers", "geometry.infill", 0, integer=True, nonneg=True),
            _num(inf, "gyroid_period", "geometry.infill", 6.0, positive=True))
    except GeometryError as exc:
        raise ConfigError(f"geometry.infill: {exc}") from None
    void = None
    if g.get("void") is not None:
        vb = _block(g, "void")
        _check_keys(vb, ("a", "subdivision"), "geometry.void")
        a = _num(vb, "a", "geometry.void", None, nonneg=True)
        if not a < 1 / math.sqrt(2):
            raise ConfigError(f"geometry.void.a: must be in [0, 1/sqrt(2)), got {a}")
        sub = _num(vb, "subdivision", "geometry.void", 8, integer=True)
        if sub < 4 or sub % 2:
            raise ConfigError(f"geometry.void.subdivision: must be even and >= 4, got {sub}")
        if 0 < a * sub < 1:
            raise ConfigError(f"geometry.void.subdivision: {sub} cannot resolve a={a}; "
                              f"need a * subdivision >= 1")
        void = VoidConfig(a, sub)
    rule = g.get("coarsen_rule", "pattern")
    if rule not in ("pattern", "majority", "conserve"):
        raise ConfigError(f"geometry.coarsen_rule: must be pattern, majority or conserve, "
                          f"got {rule!r}")
    geometry = GeometryConfig(
        _num(g, "length", "geometry", 30.0, positive=True),
        _num(g, "width", "geometry", 30.0, positive=True),
        _num(g, "height", "geometry", 20.0, positive=True),
        section, infill, void,
        _num(g, "coarsen", "geometry", 1, integer=True, positive=True),
        rule)

    m = _block(data, "materials")
    _check_keys(m, ("pla", "air"), "materials")
    materials = MaterialsConfig(_material(_block(m, "pla"), "materials.pla", PLA_PROPS),
                                _material(_block(m, "air"), "materials.air", AIR_PROPS))

    s = _block(data, "scenario")
    _check_keys(s, ("T_b", "T_a", "T_c_side", "T_c_top", "h", "q_vol", "duration", "dt"),
                "scenario")
    d = ThermalScenario()
    scenario = ThermalScenario(
        T_b=_num(s, "T_b", "scenario", d.T_b, allow_none=True) if "T_b" in s else d.T_b,
        T_a=_num(s, "T_a", "scenario", d.T_a),
        T_c_side=_num(s, "T_c_side", "scenario", d.T_c_side),
        T_c_top=_num(s, "T_c_top", "scenario", d.T_c_top),
        h=_num(s, "h", "scenario", d.h, nonneg=True),
        q_vol=_num(s, "q_vol", "scenario", d.q_vol),
        duration=_num(s, "duration", "scenario", d.duration, positive=True),
        dt=_num(s, "dt", "scenario", d.dt, positive=True))

    o = _block(data, "output")
    _check_keys(o, ("directory", "snapshot_every", "plots"), "output")
    plots = o.get("plots", True)
    if not isinstance(plots, bool):
        raise ConfigError(f"output.plots: expected true/false, got {plots!r}")
    output = OutputConfig(str(o.get("directory", "out")),
                          _num(o, "snapshot_every", "output", 0.0, nonneg=True), plots)

    c = _block(data, "calibration")
    _check_keys(c, ("case", "experiment", "h_bounds", "T_c_side_bounds", "T_c_top_bounds",
                    "lattice", "coarse_factor"), "calibration")
    case = _num(c, "case", "calibration", 3, integer=True)
    if case not in (1, 2, 3):
        raise ConfigError(f"calibration.case: must be 1, 2 or 3, got {case}")
    h_bounds = _pair(c, "h_bounds", "calibration", (5.0, 60.0))
    if h_bounds[0] < 0:
        raise ConfigError("calibration.h_bounds: must be >= 0")
    exp = c.get("experiment")
    calibration = CalibrationConfig(
        case, None if exp is None else str(exp), h_bounds,
        _pair(c, "T_c_side_bounds", "calibration", None),
        _pair(c, "T_c_top_bounds", "calibration", None),
        _num(c, "lattice", "calibration", 5, integer=True, positive=True),
        _num(c, "coarse_factor", "calibration", None, integer=True, positive=True,
             allow_none=True))

    name = str(data.get("name", "run"))
    return RunConfig(name, geometry, materials, scenario, output, calibration, base_dir)


def parse_config(path) -> RunConfig:
    """Read and validate a YAML run configuration."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(data, str(path.parent))


def config_to_dict(cfg: RunConfig) -> dict:
    g = cfg.geometry
    out: dict[str, Any] = {
        "name": cfg.name,
        "geometry": {
            "length": g.length, "width": g.width, "height": g.height,
            "filament": {"width": g.filament.width, "layer_height": g.filament.layer_height},
            "infill": {
                "pattern": g.infill.pattern.value,
                "density": g.infill.density,
                "perimeter_walls": g.infill.perimeter_walls,
                "solid_top_bottom_layers": g.infill.solid_top_bottom_layers,
                "gyroid_period": g.infill.gyroid_period,
            },
            "coarsen": g.coarsen,
            "coarsen_rule": g.coarsen_rule,
        },
        "materials": {
            "pla": dataclasses.asdict(cfg.materials.pla),
            "air": dataclasses.asdict(cfg.materials.air),
        },
        "scenario": dataclasses.asdict(cfg.scenario),
        "output": dataclasses.asdict(cfg.output),
        "calibration": {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in dataclasses.asdict(cfg.calibration).items()
        },
    }
    if g.void is not None:
        out["geometry"]["void"] = {"a": g.void.a, "subdivision": g.void.subdivision}
    return out


def emit_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def load_sample(name: str) -> RunConfig:
    """One of the shipped specimen configs ``S1`` ... ``S7``."""
    path = SAMPLE_DIR / f"{name.upper()}.yaml"
    if not path.exists():
        raise ConfigError(f"no sample config {name!r}; available: {', '.join(SAMPLES)}")
    return parse_config(path)


def problem_case(cfg: RunConfig) -> Case:
    return Case(cfg.calibration.case)
