"""Group outline extraction and truncated Fourier representation.

The pipeline is: disc positions -> dilated occupancy grid -> outer boundary
of the largest blob -> arc-length resampled contour -> complex Fourier
coefficients. Low harmonic counts keep the macro shape and drop raster
detail, which is what the planner wants to steer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Point2, polygon_area, _points_array

DEFAULT_HARMONICS = 5
DEFAULT_BOUNDARY_SAMPLES = 256


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean occupancy raster standing in for a segmented camera image.

    cells[iy, ix] covers the square whose center is
    origin + ((ix + 0.5) * resolution, (iy + 0.5) * resolution).
    """

    resolution: float
    origin: Point2
    width: int
    height: int
    cells: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        if self.cells.shape != (self.height, self.width):
            raise ValueError("cells shape does not match width/height")

    def cell_center(self, ix: int, iy: int) -> Point2:
        return Point2(
            self.origin.x + (ix + 0.5) * self.resolution,
            self.origin.y + (iy + 0.5) * self.resolution,
        )


@dataclass(frozen=True)
class ContourSamples:
    """Closed contour sampled at M parameters tau_k = 2*pi*k/M.

    Points are interpreted as complex values z_k = x_k + i*y_k. Contours
    produced by trace_boundary run counterclockwise.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("contour points must be an (M, 2) array")
        if len(pts) < 8:
            raise ValueError("contour needs at least 8 samples")
        if not np.all(np.isfinite(pts)):
            raise ValueError("contour points must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def taus(self) -> np.ndarray:
        m = len(self.points)
        return 2.0 * np.pi * np.arange(m) / m

    @property
    def complex_values(self) -> np.ndarray:
        return self.points[:, 0] + 1j * self.points[:, 1]

    def length(self) -> float:
        closed = np.vstack([self.points, self.points[:1]])
        return float(np.sum(np.hypot(*np.diff(closed, axis=0).T)))


@dataclass(frozen=True)
class FourierDescriptor:
    """Two-sided truncated Fourier series of a closed contour.

    coefficients[k] holds c_n for n = k - n_harmonics, so the array runs
    n = -N..N and has exactly 2N+1 entries. The parameter period is 2*pi.
    """

    n_harmonics: int
    coefficients: np.ndarray
    period: float = field(default=2.0 * math.pi)

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=complex)
        if self.n_harmonics < 0:
            raise ValueError("harmonic count must be nonnegative")
        if coeffs.shape != (2 * self.n_harmonics + 1,):
            raise ValueError("need exactly 2N+1 coefficients")
        object.__setattr__(self, "coefficients", coeffs)

    def coefficient(self, n: int) -> complex:
        if abs(n) > self.n_harmonics:
            raise IndexError(f"harmonic {n} outside +/-{self.n_harmonics}")
        return complex(self.coefficients[n + self.n_harmonics])


def rasterize(
    particle_positions,
    particle_radius: float,
    dilation: float,
    resolution: float,
) -> OccupancyGrid:
    """Stamp dilated particle discs into a boolean grid.

    A cell is occupied iff its center lies within particle_radius + dilation
    of some particle center. The grid is sized to the particle bounding box
    plus margin, not the whole arena.
    """
    pts = _points_array(particle_positions)
    if len(pts) == 0:
        raise ValueError("cannot rasterize an empty particle set")
    if resolution > particle_radius / 2:
        raise ValueError("resolution must be at most half the particle radius")
    reach = particle_radius + dilation
    margin = reach + 2 * resolution
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    width = max(1, int(math.ceil((hi[0] - lo[0]) / resolution)))
    height = max(1, int(math.ceil((hi[1] - lo[1]) / resolution)))
    origin = Point2(float(lo[0]), float(lo[1]))

    cells = np.zeros((height, width), dtype=bool)
    # Cell centers along each axis.
    cx = lo[0] + (np.arange(width) + 0.5) * resolution
    cy = lo[1] + (np.arange(height) + 0.5) * resolution
    span = int(math.ceil(reach / resolution)) + 1
    for px, py in pts:
        ix = int((px - lo[0]) / resolution)
        iy = int((py - lo[1]) / resolution)
        x0, x1 = max(0, ix - span), min(width, ix + span + 1)
        y0, y1 = max(0, iy - span), min(height, iy + span + 1)
        wx = cx[x0:x1] - px
        wy = cy[y0:y1] - py
        d2 = wy[:, None] ** 2 + wx[None, :] ** 2
        cells[y0:y1, x0:x1] |= d2 <= reach * reach
    return OccupancyGrid(resolution, origin, width, height, cells)


def trace_boundary(
    grid: OccupancyGrid, samples: int = DEFAULT_BOUNDARY_SAMPLES
) -> ContourSamples:
    """Outer boundary of the largest occupied blob, resampled uniformly.

    The boundary is the 0.5 isoline of the binary grid (sub-cell accurate),
    oriented counterclockwise, and resampled to `samples` points uniform in
    arc length so that tau_k = 2*pi*k/samples.
    """
    # Imported here so that modules needing only the Fourier math (e.g. the
    # table printers) do not pay the scipy/skimage import cost.
    from scipy import ndimage
    from skimage import measure

    if not grid.cells.any():
        raise ValueError("grid has no occupied cells")
    labels, count = ndimage.label(grid.cells, structure=np.ones((3, 3), dtype=int))
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    largest = int(np.argmax(sizes))
    mask = labels == largest

    # Pad with empty cells so boundary-touching blobs still close.
    padded = np.pad(mask, 1).astype(float)
    contours = measure.find_contours(padded, 0.5, fully_connected="high")
    if not contours:
        raise ValueError("no isoline found in occupancy grid")

    def to_world(rc: np.ndarray) -> np.ndarray:
        # find_contours indexes cell centers of the padded array; unpad
        # by 1 and shift half a cell into the cell-center frame.
        out = np.empty_like(rc)
        out[:, 0] = grid.origin.x + (rc[:, 1] - 1 + 0.5) * grid.resolution
        out[:, 1] = grid.origin.y + (rc[:, 0] - 1 + 0.5) * grid.resolution
        return out

    world = [to_world(c) for c in contours]
    outer = max(world, key=lambda c: abs(polygon_area(c)))
    if np.allclose(outer[0], outer[-1]):
        outer = outer[:-1]
    if polygon_area(outer) < 0:
        outer = np.roll(outer[::-1], 1, axis=0)
    return ContourSamples(_resample_closed(outer, samples))


def _resample_closed(vertices: np.ndarray, m: int) -> np.ndarray:
    """Resample a closed polyline to m points uniform in arc length."""
    closed = np.vstack([vertices, vertices[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        return np.repeat(vertices[:1], m, axis=0)
    s = np.arange(m) * total / m
    x = np.interp(s, cum, closed[:, 0])
    y = np.interp(s, cum, closed[:, 1])
    return np.column_stack([x, y])


def fit_fourier(samples: ContourSamples, n_harmonics: int) -> FourierDescriptor:
    """Coefficients c_n = (1/M) sum_k z_k e^{-i n tau_k} for n in -N..N.

    This is the uniform Riemann sum of the coefficient integral, exact for
    band-limited contours. Requires M >= 2N+1.
    """
    m = len(samples)
    if m < 2 * n_harmonics + 1:
        raise ValueError(
            f"{m} samples cannot resolve {n_harmonics} harmonics (need >= {2 * n_harmonics + 1})"
        )
    z = samples.complex_values
    taus = samples.taus
    ns = np.arange(-n_harmonics, n_harmonics + 1)
    basis = np.exp(-1j * np.outer(ns, taus))
    coeffs = basis @ z / m
    return FourierDescriptor(n_harmonics, coeffs)


def reconstruct(desc: FourierDescriptor, samples: int) -> ContourSamples:
    """Evaluate z(tau_k) = sum_n c_n e^{i n tau_k} at tau_k = 2*pi*k/samples."""
    if samples < 8:
        raise ValueError("reconstruction needs at least 8 samples")
    taus = 2.0 * np.pi * np.arange(samples) / samples
    ns = np.arange(-desc.n_harmonics, desc.n_harmonics + 1)
    z = np.exp(1j * np.outer(taus, ns)) @ desc.coefficients
    return ContourSamples(np.column_stack([z.real, z.imag]))
