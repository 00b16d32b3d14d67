"""Parametric 2D unit-cell classes and their pixel rasterization.

Each class is a set of rods (line segments in the unit cell [0, 1]^2) that
share one thickness parameter; a rod may carry a width multiplier so that a
class can be stiffer along one axis. Rods are periodic: a pixel is solid when
its centre lies within half the rod width of any periodic image of a rod.

Grids are indexed [iy, ix] with iy = 0 at the bottom of the cell.
"""

from enum import Enum
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from lvto.utils import LvtoError, logger

DEFAULT_RESOLUTION = 100
MIN_WIDTH_PX = 2
VF_TOL = 0.005

# distances and thresholds are compared on this decimal grid, so pixels that are
# equidistant from the rods up to float noise switch on together
_FIELD_DECIMALS = 9


class InvalidThicknessError(LvtoError):
    pass


class InfeasibleTargetError(LvtoError):
    pass


class SymmetryTag(Enum):
    CUBIC = "cubic"
    X_STIFF = "x-stiff"
    Y_STIFF = "y-stiff"


class Rod:
    p0: tuple[float, float]
    p1: tuple[float, float]
    width: float

    def __init__(self, p0: tuple[float, float], p1: tuple[float, float], width: float = 1.0):
        self.p0 = p0
        self.p1 = p1
        self.width = width

    def __repr__(self) -> str:
        return f"Rod({self.p0}, {self.p1}, width={self.width})"


class MicroClass:
    id: int
    name: str
    rods: list[Rod]
    symmetry: SymmetryTag

    def __init__(self, id: int, name: str, rods: list[Rod], symmetry: SymmetryTag):  # noqa: A002
        self.id = id
        self.name = name
        self.rods = rods
        self.symmetry = symmetry

    def __repr__(self) -> str:
        return f"MicroClass({self.id}, {self.name!r}, {len(self.rods)} rods, {self.symmetry.value})"


def _plus(wx: float = 1.0, wy: float = 1.0) -> list[Rod]:
    return [Rod((0.0, 0.5), (1.0, 0.5), wx), Rod((0.5, 0.0), (0.5, 1.0), wy)]


def _x() -> list[Rod]:
    return [Rod((0.0, 0.0), (1.0, 1.0)), Rod((0.0, 1.0), (1.0, 0.0))]


def _frame_diamond() -> list[Rod]:
    # a bare periodic frame is the cross shifted by half a cell
    frame = [
        Rod((0.0, 0.0), (1.0, 0.0)),
        Rod((0.0, 1.0), (1.0, 1.0)),
        Rod((0.0, 0.0), (0.0, 1.0)),
        Rod((1.0, 0.0), (1.0, 1.0)),
    ]
    diamond = [
        Rod((0.5, 0.0), (1.0, 0.5)),
        Rod((1.0, 0.5), (0.5, 1.0)),
        Rod((0.5, 1.0), (0.0, 0.5)),
        Rod((0.0, 0.5), (0.5, 0.0)),
    ]
    return frame + diamond


CLASSES: tuple[MicroClass, ...] = (
    MicroClass(1, "A", _plus(), SymmetryTag.CUBIC),
    MicroClass(2, "B", _x(), SymmetryTag.CUBIC),
    MicroClass(3, "C", _frame_diamond(), SymmetryTag.CUBIC),
    MicroClass(4, "D", _plus() + _x(), SymmetryTag.CUBIC),
    MicroClass(5, "E", _plus(wx=2.0) + _x(), SymmetryTag.X_STIFF),
    MicroClass(6, "F", _plus(wy=2.0) + _x(), SymmetryTag.Y_STIFF),
)


def get_class(class_id: int) -> MicroClass:
    if not 1 <= class_id <= len(CLASSES):
        raise KeyError(f"unknown microstructure class: {class_id}")
    return CLASSES[class_id - 1]


class PixelGrid:
    cells: NDArray[np.bool_]

    def __init__(self, cells: NDArray[np.bool_]):
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise ValueError(f"expected a square grid, got shape {cells.shape}")

        self.cells = cells
        self.cells.setflags(write=False)

    @property
    def resolution(self) -> int:
        return self.cells.shape[0]

    @property
    def volume_fraction(self) -> float:
        return float(self.cells.sum()) / self.cells.size

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PixelGrid) and np.array_equal(self.cells, other.cells)

    def __repr__(self) -> str:
        res = self.resolution
        return f"PixelGrid({res}x{res}, vf={self.volume_fraction:.4f})"


def _segment_distance(
    px: NDArray[np.float64], py: NDArray[np.float64], rod: Rod
) -> NDArray[np.float64]:
    (ax, ay), (bx, by) = rod.p0, rod.p1
    dx, dy = bx - ax, by - ay
    length2 = dx * dx + dy * dy
    s = np.clip(((px - ax) * dx + (py - ay) * dy) / length2, 0.0, 1.0)
    return np.hypot(px - ax - s * dx, py - ay - s * dy)


@lru_cache(maxsize=32)
def distance_field(class_id: int, resolution: int) -> NDArray[np.float64]:
    """Normalized distance from each pixel centre to the nearest periodic rod image.

    A pixel is solid at thickness t iff its value is <= t / 2, both rounded to
    `_FIELD_DECIMALS` places; a centre exactly on a rod boundary is solid."""

    cls = get_class(class_id)
    centres = (np.arange(resolution) + 0.5) / resolution
    px, py = np.meshgrid(centres, centres)

    field = np.full((resolution, resolution), np.inf)
    for rod in cls.rods:
        for sx in (-1.0, 0.0, 1.0):
            for sy in (-1.0, 0.0, 1.0):
                d = _segment_distance(px + sx, py + sy, rod) / rod.width
                np.minimum(field, d, out=field)

    field = np.round(field, _FIELD_DECIMALS)
    field.setflags(write=False)
    return field


def rasterize(cls: MicroClass, thickness: float, resolution: int = DEFAULT_RESOLUTION) -> PixelGrid:
    if not 0.0 < thickness <= 1.0:
        raise InvalidThicknessError(f"thickness must be in (0, 1], got {thickness}")

    field = distance_field(cls.id, resolution)
    return PixelGrid(field <= np.round(0.5 * thickness, _FIELD_DECIMALS))


def min_thickness(resolution: int = DEFAULT_RESOLUTION, min_width_px: int = MIN_WIDTH_PX) -> float:
    return min_width_px / resolution


def min_volume_fraction(
    cls: MicroClass,
    resolution: int = DEFAULT_RESOLUTION,
    min_width_px: int = MIN_WIDTH_PX,
) -> float:
    return rasterize(cls, min_thickness(resolution, min_width_px), resolution).volume_fraction


def solve_thickness(
    cls: MicroClass,
    target_vf: float,
    resolution: int = DEFAULT_RESOLUTION,
    tol: float = VF_TOL,
    min_width_px: int = MIN_WIDTH_PX,
    max_iter: int = 60,
) -> tuple[float, float]:
    """Bisect the rod thickness until the rasterized volume fraction is within
    `tol` of `target_vf`. Returns (thickness, achieved vf).

    Pixel quantization can make the tolerance unreachable; in that case the
    closest achievable thickness is returned."""

    lo = min_thickness(resolution, min_width_px)
    hi = 1.0

    def vf(t: float) -> float:
        return rasterize(cls, t, resolution).volume_fraction

    vf_lo, vf_hi = vf(lo), vf(hi)
    if target_vf < vf_lo - tol or target_vf > vf_hi + tol:
        raise InfeasibleTargetError(
            f"class {cls.name}: target vf {target_vf:.4f} outside [{vf_lo:.4f}, {vf_hi:.4f}]"
        )

    best = min((lo, vf_lo), (hi, vf_hi), key=lambda p: abs(p[1] - target_vf))
    if abs(best[1] - target_vf) <= tol:
        return best

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        achieved = vf(mid)

        if abs(achieved - target_vf) < abs(best[1] - target_vf):
            best = (mid, achieved)

        if abs(achieved - target_vf) <= tol:
            return mid, achieved

        if achieved < target_vf:
            lo = mid
        else:
            hi = mid

    logger.debug(
        f"class {cls.name}: target vf {target_vf:.4f} not reachable within {tol}, "
        f"using {best[1]:.4f}"
    )
    return best


class MixedInput:
    rho: float
    class_id: int

    def __init__(self, rho: float, class_id: int):
        self.rho = rho
        self.class_id = class_id

    def __repr__(self) -> str:
        return f"MixedInput(rho={self.rho:.4f}, class_id={self.class_id})"


class LibrarySample:
    class_id: int
    target_vf: float
    achieved_vf: float
    thickness: float
    grid: PixelGrid

    def __init__(
        self,
        class_id: int,
        target_vf: float,
        achieved_vf: float,
        thickness: float,
        grid: PixelGrid,
    ):
        self.class_id = class_id
        self.target_vf = target_vf
        self.achieved_vf = achieved_vf
        self.thickness = thickness
        self.grid = grid

    @property
    def input(self) -> MixedInput:
        return MixedInput(self.achieved_vf, self.class_id)

    @property
    def name(self) -> str:
        return f"{get_class(self.class_id).name}_{self.target_vf:.4f}"

    def __repr__(self) -> str:
        return f"LibrarySample({self.name}, achieved={self.achieved_vf:.4f})"


def vf_targets(samples_per_class: int, vf_range: tuple[float, float]) -> list[float]:
    lo, hi = vf_range
    if samples_per_class < 1:
        raise ValueError(f"samples_per_class must be at least 1, got {samples_per_class}")

    if samples_per_class == 1:
        return [hi]

    return np.linspace(lo, hi, samples_per_class).tolist()


def build_library(
    samples_per_class: int = 20,
    vf_range: tuple[float, float] = (0.1, 0.95),
    resolution: int = DEFAULT_RESOLUTION,
    tol: float = VF_TOL,
    min_width_px: int = MIN_WIDTH_PX,
    classes: tuple[MicroClass, ...] = CLASSES,
) -> list[LibrarySample]:
    """One sample per (class, target vf), class-major, with identical targets
    for every class. Targets below a class's thinnest admissible rods are
    clamped to that minimum. Every sample whose achieved vf misses its target by
    more than `tol` is reported as a warning."""

    samples: list[LibrarySample] = []
    for cls in classes:
        for target in vf_targets(samples_per_class, vf_range):
            try:
                thickness, achieved = solve_thickness(cls, target, resolution, tol, min_width_px)
            except InfeasibleTargetError:
                thickness = min_thickness(resolution, min_width_px)
                achieved = rasterize(cls, thickness, resolution).volume_fraction
                if target > achieved:
                    raise
                logger.warning(
                    f"class {cls.name}: target vf {target:.4f} below minimum, using {achieved:.4f}"
                )
            else:
                if abs(achieved - target) > tol:
                    logger.warning(
                        f"class {cls.name}: target vf {target:.4f} missed by more than {tol}, "
                        f"using {achieved:.4f}"
                    )

            grid = rasterize(cls, thickness, resolution)
            samples.append(LibrarySample(cls.id, target, achieved, thickness, grid))

    return samples
