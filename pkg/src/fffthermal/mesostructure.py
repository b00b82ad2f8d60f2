"""Voxelized FFF mesostructures.

Grids are structured hexahedral boxes with one material label per cell.  The
bottom face (z = 0) is the bed contact, every other exterior face is free
surface.  Array layout is ``material[i, j, k]`` with ``i`` along x (length),
``j`` along y (width) and ``k`` along z (build direction).
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

AIR = 0
PLA = 1

MAX_A = 1.0 / math.sqrt(2.0)


class GeometryError(ValueError):
    """Raised for invalid or unreachable geometry requests."""


class Pattern(str, enum.Enum):
    RECTILINEAR = "rectilinear"
    GYROID = "gyroid"
    DENSE = "dense"


@dataclass(frozen=True)
class FilamentSection:
    """Cross-section of one extruded filament (mm)."""

    width: float = 0.45
    layer_height: float = 0.2

    def __post_init__(self):
        if not (self.width > 0 and self.layer_height > 0):
            raise GeometryError(
                f"filament width and layer height must be > 0, got "
                f"{self.width}, {self.layer_height}")

    def scaled(self, factor: float) -> "FilamentSection":
        return FilamentSection(self.width * factor, self.layer_height * factor)


@dataclass(frozen=True)
class VoidGeometry:
    a: float
    section: FilamentSection = field(default_factory=FilamentSection)

    def __post_init__(self):
        if not 0.0 <= self.a < MAX_A:
            raise GeometryError(f"void parameter a={self.a} outside [0, 1/sqrt(2))")

    @property
    def void_fraction(self) -> float:
        return void_fraction_from_a(self.a)


@dataclass(frozen=True)
class SampleMeasurement:
    """Weighed sample: mass (g), caliper volume (cm^3), material density (g/cm^3)."""

    mass: float
    total_volume: float
    density: float = 1.24
    extrusion_factor: float = 1.0

    def __post_init__(self):
        if self.mass <= 0 or self.total_volume <= 0 or self.density <= 0:
            raise GeometryError("mass, total volume and density must be positive")


@dataclass(frozen=True)
class InfillSpec:
    pattern: Pattern = Pattern.DENSE
    density: float = 1.0
    perimeter_walls: int = 2
    solid_top_bottom_layers: int = 0
    gyroid_period: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if not 0.0 < self.density <= 1.0:
            raise GeometryError(f"infill density {self.density} not in (0, 1]")
        if self.pattern is Pattern.DENSE and self.density != 1.0:
            raise GeometryError("DENSE infill requires density = 1")
        if self.perimeter_walls < 0 or self.solid_top_bottom_layers < 0:
            raise GeometryError("wall and layer counts must be >= 0")
        if self.gyroid_period <= 0:
            raise GeometryError("gyroid period must be > 0")


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Structured box of hexahedral cells with per-cell material labels.

    ``spacing`` is in mm.  The material array is made read-only on
    construction so grids can be shared freely.
    """

    material: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        # own copy: freezing the caller's array would be a surprising side effect
        mat = np.array(self.material, dtype=np.uint8, order="C")
        if mat.ndim != 3 or min(mat.shape) < 1:
            raise GeometryError(f"material must be a non-empty 3D array, got {mat.shape}")
        if not np.isin(mat, (AIR, PLA)).all():
            raise GeometryError("material labels must be 0 (AIR) or 1 (PLA)")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise GeometryError(f"spacings must be three positive numbers, got {self.spacing}")
        mat.setflags(write=False)
        object.__setattr__(self, "material", mat)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.material.shape

    @property
    def n_cells(self) -> int:
        return int(self.material.size)

    @property
    def n_nodes(self) -> int:
        nx, ny, nz = self.shape
        return (nx + 1) * (ny + 1) * (nz + 1)

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(n * d for n, d in zip(self.shape, self.spacing))

    @property
    def cell_volume(self) -> float:
        dx, dy, dz = self.spacing
        return dx * dy * dz

    @property
    def pla_fraction(self) -> float:
        return float(self.material.mean())

    def same_as(self, other: "VoxelGrid") -> bool:
        return (self.shape == other.shape
                and np.allclose(self.spacing, other.spacing, rtol=1e-12)
                and np.array_equal(self.material, other.material))


# -- void geometry ---------------------------------------------------------

def void_fraction_from_a(a: float) -> float:
    """Air area fraction ``2 a**2`` of the diamond-void cross-section."""
    if not 0.0 <= a < MAX_A:
        raise GeometryError(f"void parameter a={a} outside [0, 1/sqrt(2))")
    return 2.0 * a * a


def a_from_void_fraction(v_air: float) -> float:
    if not 0.0 <= v_air < 1.0:
        raise GeometryError(f"air fraction {v_air} outside [0, 1)")
    return math.sqrt(v_air / 2.0)


def fractions_from_measurement(s: SampleMeasurement, tol: float = 0.02) -> dict:
    """Invert mass/volume measurements to filament and air fractions.

    Returns a dict with ``V_extr`` (cm^3), ``v_fr_f``, ``v_fr_a`` and ``a``.
    A slightly negative air fraction (within ``tol``) is clamped to zero,
    anything beyond is reported as inconsistent.
    """
    v_extr = s.mass / s.density
    v_f = v_extr / s.total_volume
    v_a = 1.0 - v_f
    if v_a < -tol:
        raise GeometryError(
            f"extruded volume {v_extr:.4g} cm^3 exceeds total volume "
            f"{s.total_volume:.4g} cm^3 beyond tolerance")
    v_a = max(v_a, 0.0)
    return {"V_extr": v_extr, "v_fr_f": v_f, "v_fr_a": v_a, "a": math.sqrt(v_a / 2.0)}


# -- grid builders ---------------------------------------------------------

def _inplane_count(length: float, width: float) -> int:
    # Largest odd number of filament widths that fits: keeps a filament on the
    # footprint center line and reproduces 65 cells for 30 mm / 0.45 mm.
    n = int(math.floor(length / width + 1e-9))
    if n >= 2 and n % 2 == 0:
        n -= 1
    return n


def grid_counts(length: float, width: float, height: float,
                section: FilamentSection) -> tuple[int, int, int]:
    if min(length, width, height) <= 0:
        raise GeometryError("specimen dimensions must be > 0")
    nx = _inplane_count(length, section.width)
    ny = _inplane_count(width, section.width)
    nz = int(round(height / section.layer_height))
    if min(nx, ny, nz) < 1:
        raise GeometryError(
            f"dimensions {length}x{width}x{height} mm give fewer than one cell "
            f"for filament {section.width}x{section.layer_height} mm")
    return nx, ny, nz


def build_continuum_grid(length: float, width: float, height: float,
                         section: FilamentSection = FilamentSection()) -> VoxelGrid:
    nx, ny, nz = grid_counts(length, width, height, section)
    return VoxelGrid(np.full((nx, ny, nz), PLA, dtype=np.uint8),
                     (length / nx, width / ny, height / nz))


def _corner_void_mask(a: float, subdivision: int) -> np.ndarray:
    """AIR mask for one filament cell split ``subdivision`` times in y and z.

    Each sub-cell's overlap with the four corner quarter-diamonds is
    estimated by supersampling; the ``round(2 a^2 s^2)`` sub-cells with the
    largest overlap are voided so the cell air fraction tracks ``2 a^2``.
    """
    s = subdivision
    n_air = int(round(2.0 * a * a * s * s))
    mask = np.zeros((s, s), dtype=bool)
    if n_air == 0:
        return mask
    m = 16
    t = (np.arange(s * m) + 0.5) / (s * m)
    d = np.minimum(t, 1.0 - t)
    inside = (d[:, None] + d[None, :]) <= a
    overlap = inside.reshape(s, m, s, m).mean(axis=(1, 3))
    # stable ordering: overlap first, then distance of the sub-cell to its corner
    c = (np.arange(s) + 0.5) / s
    dc = np.minimum(c, 1.0 - c)
    dist = dc[:, None] + dc[None, :]
    order = np.lexsort((np.arange(s * s), dist.ravel(), -np.round(overlap.ravel(), 12)))
    mask.ravel()[order[:n_air]] = True
    return mask


def build_void_grid(geom: VoidGeometry, length: float, width: float, height: float,
                    subdivision: int = 8, filament_cells: Optional[int] = None) -> VoxelGrid:
    """Continuum grid with every filament cross-section cell sub-voxelized.

    Filaments run along x, so each cell is split ``subdivision`` times in y
    and z and the quarter-diamond voids at the cell corners become AIR.
    The voids are prismatic along x, so ``filament_cells`` may use fewer
    (longer) cells in that direction without changing the geometry.
    """
    if subdivision < 4 or subdivision % 2:
        raise GeometryError(f"subdivision must be even and >= 4, got {subdivision}")
    base = build_continuum_grid(length, width, height, geom.section)
    nx, ny, nz = base.shape
    if filament_cells is not None:
        if filament_cells < 1:
            raise GeometryError(f"filament_cells must be >= 1, got {filament_cells}")
        nx = int(filament_cells)
    if 0 < geom.a * subdivision < 1:
        raise GeometryError(f"subdivision {subdivision} cannot resolve void parameter "
                            f"a={geom.a}; need a * subdivision >= 1")
    cell = _corner_void_mask(geom.a, subdivision)
    s = subdivision
    plane = np.tile(np.where(cell, AIR, PLA).astype(np.uint8), (ny, nz))
    material = np.broadcast_to(plane, (nx, ny * s, nz * s)).copy()
    _, dy, dz = base.spacing
    return VoxelGrid(material, (length / nx, dy / s, dz / s))


def _rectilinear(spec: InfillSpec, shape, interior) -> np.ndarray:
    nx, ny, nz = shape
    (x0, x1), (y0, y1), (z0, z1) = interior
    mat = np.zeros(shape, dtype=np.uint8)
    placed = {0: 0, 1: 0}
    for k in range(z0, z1):
        along_x = (k - z0) % 2 == 0
        n = (y1 - y0) if along_x else (x1 - x0)
        if n <= 0:
            continue
        c = (k - z0) // 2
        m = int(round(spec.density * n * (c + 1))) - int(round(spec.density * n * c))
        m = min(max(m, 0), n)
        placed[int(along_x)] += m
        if m == 0:
            continue
        pos = np.floor((np.arange(m) + 0.5) * n / m).astype(int)
        if along_x:
            mat[x0:x1, y0 + pos, k] = PLA
        else:
            mat[x0 + pos, y0:y1, k] = PLA
    return mat


def _gyroid(spec: InfillSpec, shape, spacing, interior) -> np.ndarray:
    (x0, x1), (y0, y1), (z0, z1) = interior
    w = 2.0 * np.pi / spec.gyroid_period
    x, y, z = (w * (np.arange(n) + 0.5) * d for n, d in zip(shape, spacing))
    g = np.abs(np.sin(x)[:, None, None] * np.cos(y)[None, :, None]
               + np.sin(y)[None, :, None] * np.cos(z)[None, None, :]
               + np.sin(z)[None, None, :] * np.cos(x)[:, None, None])
    sub = g[x0:x1, y0:y1, z0:z1]
    if sub.size == 0:
        return np.zeros(shape, dtype=np.uint8)
    lo, hi = 0.0, float(sub.max()) + 1e-12
    target = spec.density
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if (sub <= mid).mean() < target:
            lo = mid
        else:
            hi = mid
    # pick whichever bracket lands closer to the requested density
    t = lo if abs((sub <= lo).mean() - target) < abs((sub <= hi).mean() - target) else hi
    return (g <= t).astype(np.uint8)


def build_infill_grid(spec: InfillSpec, length: float, width: float, height: float,
                      section: FilamentSection = FilamentSection(),
                      tolerance: float = 0.03) -> VoxelGrid:
    """Grid for a printed block with perimeter walls and patterned infill.

    Raises GeometryError if the raster cannot reach ``spec.density`` within
    ``tolerance`` over the interior (everything inside the walls and solid
    top/bottom layers).
    """
    base = build_continuum_grid(length, width, height, section)
    if spec.pattern is Pattern.DENSE:
        return base
    shape = base.shape
    p, b = spec.perimeter_walls, spec.solid_top_bottom_layers
    interior = ((p, shape[0] - p), (p, shape[1] - p), (b, shape[2] - b))
    if spec.pattern is Pattern.RECTILINEAR:
        mat = _rectilinear(spec, shape, interior)
    else:
        mat = _gyroid(spec, shape, base.spacing, interior)
    inner = np.zeros(shape, dtype=bool)
    (x0, x1), (y0, y1), (z0, z1) = interior
    inner[x0:x1, y0:y1, z0:z1] = True
    if inner.any():
        achieved = float(mat[inner].mean())
        if abs(achieved - spec.density) > tolerance:
            raise GeometryError(
                f"{spec.pattern.value} infill cannot reach density {spec.density:.3f} "
                f"on this raster; achieved {achieved:.3f}")
    mat[~inner] = PLA
    return VoxelGrid(mat, base.spacing)


def interior_fraction(grid: VoxelGrid, spec: InfillSpec) -> float:
    """PLA fraction inside the perimeter walls and solid layers."""
    p, b = spec.perimeter_walls, spec.solid_top_bottom_layers
    nx, ny, nz = grid.shape
    return float(grid.material[p:nx - p, p:ny - p, b:nz - b].mean())


def simplify_infill(spec: InfillSpec, length: float, width: float, height: float,
                    section: FilamentSection, factor: int) -> VoxelGrid:
    """Regenerate an infill pattern with cells ``factor`` times the filament size.

    Keeps the pattern and density but lays it out on the coarse raster, the
    way a coarse FE model of the infill would be drawn.  Wall and solid layer
    counts shrink with the factor, keeping at least one wall when the fine
    model had any.
    """
    if factor < 1:
        raise GeometryError("factor must be >= 1")
    if factor == 1:
        return build_infill_grid(spec, length, width, height, section)
    walls = spec.perimeter_walls
    coarse = replace(
        spec,
        perimeter_walls=max(1, int(round(walls / factor))) if walls else 0,
        solid_top_bottom_layers=int(math.ceil(spec.solid_top_bottom_layers / factor)),
    )
    return build_infill_grid(coarse, length, width, height, section.scaled(factor))


def _block_sums(a: np.ndarray, factor: int) -> np.ndarray:
    out = a
    for axis in range(3):
        starts = np.arange(0, out.shape[axis], factor)
        out = np.add.reduceat(out, starts, axis=axis)
    return out


def coarsen(grid: VoxelGrid, factor: int, rule: str = "majority") -> VoxelGrid:
    """Merge ``factor``^3 blocks of cells into one, keeping the outer box.

    ``rule="majority"`` makes a coarse cell PLA when at least half of the
    fine cells it covers are PLA.  ``rule="conserve"`` instead ranks blocks
    by PLA fraction and fills the top ones until the overall PLA volume
    fraction matches the fine grid.
    """
    if factor < 2:
        raise GeometryError(f"coarsening factor must be >= 2, got {factor}")
    mat = grid.material.astype(np.int64)
    counts = _block_sums(mat, factor)
    sizes = _block_sums(np.ones_like(mat), factor)
    frac = counts / sizes
    if rule == "majority":
        coarse = (frac >= 0.5).astype(np.uint8)
    elif rule == "conserve":
        n_pla = int(round(grid.pla_fraction * frac.size))
        order = np.lexsort((np.arange(frac.size), -frac.ravel()))
        coarse = np.zeros(frac.size, dtype=np.uint8)
        coarse[order[:n_pla]] = PLA
        coarse = coarse.reshape(frac.shape)
    else:
        raise ValueError(f"unknown coarsening rule {rule!r}")
    ext = grid.extent
    spacing = tuple(e / n for e, n in zip(ext, coarse.shape))
    return VoxelGrid(coarse, spacing, grid.origin)


# -- export ----------------------------------------------------------------

_HEADER = struct.Struct("<3q3d")


def save_grid(grid: VoxelGrid, path) -> None:
    """Binary dump: counts (int64) and spacings (float64), then one byte per cell."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*grid.shape, *grid.spacing))
        fh.write(grid.material.tobytes(order="C"))


def load_grid(path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise GeometryError(f"{path}: truncated grid header")
    nx, ny, nz, dx, dy, dz = _HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    if body.size != nx * ny * nz:
        raise GeometryError(f"{path}: expected {nx * ny * nz} cells, found {body.size}")
    return VoxelGrid(body.reshape(nx, ny, nz).copy(), (dx, dy, dz))


def write_vtk_grid(grid: VoxelGrid, path, title: str = "fff voxel grid") -> None:
    """Legacy VTK structured points, CELL_DATA material (0=AIR, 1=PLA)."""
    nx, ny, nz = grid.shape
    # VTK wants x varying fastest
    values = grid.material.transpose(2, 1, 0).ravel()
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title[:255] + "\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}\n")
        fh.write("ORIGIN {:.9g} {:.9g} {:.9g}\n".format(*grid.origin))
        fh.write("SPACING {:.9g} {:.9g} {:.9g}\n".format(*grid.spacing))
        fh.write(f"CELL_DATA {grid.n_cells}\n")
        fh.write("SCALARS material unsigned_char 1\nLOOKUP_TABLE default\n")
        for start in range(0, values.size, 40):
            fh.write(" ".join(map(str, values[start:start + 40].tolist())) + "\n")
