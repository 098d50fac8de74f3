"""Double-sided oblique illumination of the probe.

Two identical beams pivot at ``(-a, h)`` and ``(+a, h)`` above the sample
surface and tilt inward by ``theta`` from the surface normal.  Each carries
half the pulse energy and has a Gaussian cross-section with 1/e^2 diameter
``d``.  On the surface the footprint is an ellipse, stretched by
``1/cos(theta)`` along x, with peak fluence scaled by ``cos(theta)``.

Coordinates: x lateral (across the probe), y along the transducer
elevation, z depth below the surface.  Fluence is in mJ/cm^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

MM2_PER_CM2 = 100.0

BRIGHT = "bright"
DARK = "dark"
HYBRID = "hybrid"


class IlluminationError(ValueError):
    pass


@dataclass(frozen=True)
class IlluminationScheme:
    d: float
    theta: float
    a: float = 55.0
    h: float = 55.0
    pulse_energy: float = 10.0
    profile: str = "gaussian"

    def __post_init__(self):
        if not self.d > 0:
            raise IlluminationError(f"beam diameter must be positive, got {self.d}")
        if not 0 <= self.theta < 90:
            raise IlluminationError(f"incidence angle must be in [0, 90) degrees, got {self.theta}")
        if not (self.a > 0 and self.h > 0):
            raise IlluminationError("pivot offset and height must be positive")
        if not self.pulse_energy > 0:
            raise IlluminationError("pulse energy must be positive")
        if self.profile != "gaussian":
            raise IlluminationError(f"unsupported beam profile {self.profile!r}")

    @property
    def waist_x(self) -> float:
        """1/e^2 half-width of each surface footprint along x (mm)."""
        return 0.5 * self.d / math.cos(math.radians(self.theta))

    @property
    def waist_y(self) -> float:
        return 0.5 * self.d


@dataclass(frozen=True)
class Grid:
    """Regular lattice; ``z`` is None for a surface map."""

    x: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray] = None

    @classmethod
    def symmetric(cls, half_x: float, half_y: float, pitch: float) -> "Grid":
        """Grid centred on the probe axis, so x -> -x maps nodes onto nodes."""
        nx = int(math.ceil(half_x / pitch))
        ny = int(math.ceil(half_y / pitch))
        return cls(pitch * np.arange(-nx, nx + 1), pitch * np.arange(-ny, ny + 1))

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0]) if len(self.x) > 1 else 0.0

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0]) if len(self.y) > 1 else 0.0


@dataclass(frozen=True)
class FluenceMap:
    """Fluence samples; ``values`` is (ny, nx) on the surface or (nz, ny, nx) in volume."""

    grid: Grid
    values: np.ndarray
    scheme: IlluminationScheme

    @property
    def peak(self) -> float:
        return float(self.values.max())

    def surface_energy(self) -> float:
        """Energy (mJ) landing on the surface, by the rectangle rule."""
        surf = self.values if self.values.ndim == 2 else self.values[0]
        return float(np.sum(surf, dtype=np.float64)) * self.grid.dx * self.grid.dy / MM2_PER_CM2

    def plane(self) -> "FluenceMap":
        """The y = 0 slice (the imaging plane)."""
        j = int(np.argmin(np.abs(self.grid.y)))
        if abs(self.grid.y[j]) > 1e-12:
            raise IlluminationError("grid has no y = 0 row")
        vals = self.values[..., j : j + 1, :]
        return FluenceMap(Grid(self.grid.x, self.grid.y[j : j + 1], self.grid.z), vals, self.scheme)

    def crop_x(self, x_min: float, x_max: float) -> "FluenceMap":
        keep = (self.grid.x >= x_min) & (self.grid.x <= x_max)
        return FluenceMap(Grid(self.grid.x[keep], self.grid.y, self.grid.z), self.values[..., keep], self.scheme)

    def outside_plane(self, x, z) -> np.ndarray:
        """Mask of imaging-plane points not covered by a volume map."""
        if self.grid.z is None:
            raise IlluminationError("outside_plane needs a volume map")
        gx, gz = self.grid.x, self.grid.z
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        tol = 1e-9
        return (x < gx[0] - tol) | (x > gx[-1] + tol) | (z < gz[0] - tol) | (z > gz[-1] + tol)

    def sample_plane(self, x, z) -> np.ndarray:
        """Bilinear fluence at imaging-plane points ``(x, z)`` of a volume map.

        Raises:
            IlluminationError: naming the first point outside the grid.
        """
        if self.grid.z is None:
            raise IlluminationError("sample_plane needs a volume map")
        vol = self.plane().values[:, 0, :]
        gx, gz = self.grid.x, self.grid.z
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        outside = self.outside_plane(x, z)
        if np.any(outside):
            i = int(np.flatnonzero(outside)[0])
            raise IlluminationError(f"point {i} at (x={x[i]:.4g}, z={z[i]:.4g}) mm is outside the fluence grid")
        ix = np.clip(np.searchsorted(gx, x) - 1, 0, len(gx) - 2) if len(gx) > 1 else np.zeros(len(x), int)
        iz = np.clip(np.searchsorted(gz, z) - 1, 0, len(gz) - 2) if len(gz) > 1 else np.zeros(len(z), int)
        if len(gx) > 1:
            tx = np.clip((x - gx[ix]) / (gx[ix + 1] - gx[ix]), 0.0, 1.0)
            ix1 = ix + 1
        else:
            tx, ix1 = np.zeros(len(x)), ix
        if len(gz) > 1:
            tz = np.clip((z - gz[iz]) / (gz[iz + 1] - gz[iz]), 0.0, 1.0)
            iz1 = iz + 1
        else:
            tz, iz1 = np.zeros(len(z)), iz
        top = vol[iz, ix] * (1 - tx) + vol[iz, ix1] * tx
        bot = vol[iz1, ix] * (1 - tx) + vol[iz1, ix1] * tx
        return top * (1 - tz) + bot * tz


@dataclass(frozen=True)
class SchemeClass:
    label: str
    center_ratio: float


def spot_centers(scheme: IlluminationScheme) -> tuple[float, float]:
    """Surface hit points of the beams from the left and right pivots (mm)."""
    if scheme.theta >= 90:
        raise IlluminationError("beam at or beyond grazing incidence never meets the surface")
    s = scheme.a - scheme.h * math.tan(math.radians(scheme.theta))
    return (-s, s)


def _beam(scheme: IlluminationScheme, xc: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    wx, wy = scheme.waist_x, scheme.waist_y
    energy = 0.5 * scheme.pulse_energy
    peak = 2.0 * energy / (math.pi * wx * wy) * MM2_PER_CM2
    return peak * np.exp(-2.0 * (x - xc) ** 2 / wx**2 - 2.0 * y**2 / wy**2)


def surface_fluence_at(scheme: IlluminationScheme, x, y=0.0, beams: str = "both") -> np.ndarray:
    """Closed-form surface fluence at arbitrary points.

    ``beams`` selects ``"both"``, ``"left"`` or ``"right"``.  The two beams are
    summed left + right in that order so mirrored points give identical bits.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xl, xr = spot_centers(scheme)
    if beams == "left":
        return _beam(scheme, xl, x, y)
    if beams == "right":
        return _beam(scheme, xr, x, y)
    # pair each beam with its mirror so F(x) == F(-x) exactly
    left = _beam(scheme, xl, x, y)
    right = _beam(scheme, xl, -x, y)
    return np.minimum(left, right) + np.maximum(left, right)


def required_extent(scheme: IlluminationScheme) -> tuple[float, float]:
    """Half-widths (x, y) a surface grid must reach: spot centres +/- 2d."""
    xl, xr = spot_centers(scheme)
    return max(abs(xl), abs(xr)) + 2 * scheme.d, 2 * scheme.d


def fluence_surface(scheme: IlluminationScheme, grid: Grid, beams: str = "both") -> FluenceMap:
    """Surface fluence map of a scheme on ``grid``.

    Raises:
        IlluminationError: if the grid does not cover the spots +/- 2d.
    """
    need_x, need_y = required_extent(scheme)
    tol = 1e-9
    if (
        grid.x[0] > -need_x + tol
        or grid.x[-1] < need_x - tol
        or grid.y[0] > -need_y + tol
        or grid.y[-1] < need_y - tol
    ):
        raise IlluminationError(
            f"grid too small: need x in [-{need_x:.4g}, {need_x:.4g}] mm and y in [-{need_y:.4g}, {need_y:.4g}] mm"
        )
    X, Y = np.meshgrid(grid.x, grid.y)
    return FluenceMap(Grid(grid.x, grid.y), surface_fluence_at(scheme, X, Y, beams), scheme)


def fluence_volume(surface: FluenceMap, mu_eff: float, z) -> FluenceMap:
    """Extrude a surface map into depth with exponential decay ``exp(-mu_eff z)``."""
    if mu_eff < 0:
        raise IlluminationError(f"mu_eff must be >= 0, got {mu_eff}")
    if surface.values.ndim != 2:
        raise IlluminationError("expected a surface map")
    z = np.asarray(z, dtype=float)
    decay = np.exp(-mu_eff * z)
    vals = decay[:, None, None] * surface.values[None, :, :]
    return FluenceMap(Grid(surface.grid.x, surface.grid.y, z), vals, surface.scheme)


def peak_surface_fluence(scheme: IlluminationScheme) -> float:
    """Maximum of the surface fluence, located on the line y = 0."""
    xl, xr = spot_centers(scheme)
    lo = min(xl, xr) - 2 * scheme.waist_x
    hi = max(xl, xr) + 2 * scheme.waist_x
    xs = np.linspace(lo, hi, 4001)
    f = surface_fluence_at(scheme, xs)
    k = int(np.argmax(f))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, len(xs) - 1)]
    res = minimize_scalar(lambda x: -float(surface_fluence_at(scheme, x)), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-10})
    return max(float(f[k]), -float(res.fun))


def classify_scheme(scheme: IlluminationScheme, bright: float = 0.5, dark: float = 0.1) -> SchemeClass:
    """Label a scheme from the fluence at the probe axis relative to the peak."""
    ratio = float(surface_fluence_at(scheme, 0.0)) / peak_surface_fluence(scheme)
    ratio = min(max(ratio, 0.0), 1.0)
    if ratio >= bright:
        label = BRIGHT
    elif ratio <= dark:
        label = DARK
    else:
        label = HYBRID
    return SchemeClass(label, ratio)
