"""Wavelet denoising and delay-and-sum reconstruction of arc-array frames."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pywt
from scipy.signal import hilbert

from .pa_forward import SignalFrame, TransducerArray, element_positions

MAD_TO_SIGMA = 0.6745


class ReconError(ValueError):
    pass


@dataclass(frozen=True)
class ReconGrid:
    """Pixel lattice in the imaging plane; rows run in depth (y), columns in x."""

    nx: int
    ny: int
    pitch: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ReconError("grid needs at least one pixel per axis")
        if not self.pitch > 0:
            raise ReconError("pitch must be positive")

    @classmethod
    def covering(cls, x_min: float, x_max: float, y_min: float, y_max: float, pitch: float) -> "ReconGrid":
        nx = int(round((x_max - x_min) / pitch)) + 1
        ny = int(round((y_max - y_min) / pitch)) + 1
        return cls(nx, ny, pitch, (x_min, y_min))

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.pitch * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.pitch * np.arange(self.ny)

    def index_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the pixel nearest to (x, y)."""
        return (int(round((y - self.origin[1]) / self.pitch)), int(round((x - self.origin[0]) / self.pitch)))

    def position(self, row: int, col: int) -> tuple[float, float]:
        return (self.origin[0] + col * self.pitch, self.origin[1] + row * self.pitch)


@dataclass
class ReconImage:
    grid: ReconGrid
    values: np.ndarray
    rf: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.values.shape != (self.grid.ny, self.grid.nx):
            raise ReconError(f"values shape {self.values.shape} does not match grid ({self.grid.ny}, {self.grid.nx})")

    def argmax(self) -> tuple[int, int]:
        return tuple(int(i) for i in np.unravel_index(np.argmax(self.values), self.values.shape))


# ---------------------------------------------------------------------------
# denoising


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def wavelet_coefficients(trace: np.ndarray, levels: int = 4, wavelet: str = "db4") -> list:
    return pywt.wavedec(trace, wavelet, mode="periodization", level=levels)


def denoise_trace(trace: np.ndarray, levels: int = 4, wavelet: str = "db4") -> tuple[np.ndarray, list, list]:
    """Soft-threshold one trace; returns (output, input coeffs, shrunk coeffs).

    Each detail level gets its own universal threshold
    ``T_j = sigma_j * sqrt(2 ln n)`` with ``sigma_j`` from the median absolute
    detail coefficient.  The approximation band is left untouched.
    """
    n = len(trace)
    coeffs = wavelet_coefficients(trace, levels, wavelet)
    shrunk = [coeffs[0].copy()]
    factor = math.sqrt(2.0 * math.log(n))
    for d in coeffs[1:]:
        sigma = np.median(np.abs(d)) / MAD_TO_SIGMA
        shrunk.append(soft_threshold(d, sigma * factor))
    out = pywt.waverec(shrunk, wavelet, mode="periodization")[:n]
    return out, coeffs, shrunk


def wavelet_denoise(frame: SignalFrame, levels: int = 4, wavelet: str = "db4") -> SignalFrame:
    """Per-channel wavelet shrinkage with a level-adaptive universal threshold."""
    if levels < 1:
        raise ReconError("levels must be >= 1")
    if frame.n_samples < 2**levels:
        raise ReconError(f"{frame.n_samples} samples is too few for {levels} wavelet levels")
    out = np.empty_like(frame.data)
    for k in range(frame.n_elements):
        out[k] = denoise_trace(frame.data[k], levels, wavelet)[0]
    return SignalFrame(out, frame.sample_rate, frame.t0)


# ---------------------------------------------------------------------------
# beamforming


def das_rf(frame: SignalFrame, array: TransducerArray, grid: ReconGrid, c: float) -> np.ndarray:
    """Pre-envelope delay-and-sum image (ny, nx); ``c`` in m/s.

    Delays that fall outside the recorded window contribute zero.
    """
    if frame.n_elements != array.n_elements:
        raise ReconError(f"frame has {frame.n_elements} channels, array has {array.n_elements}")
    if c <= 0:
        raise ReconError("sound speed must be positive")
    c_mm_us = c / 1000.0
    X, Y = np.meshgrid(grid.x, grid.y)
    n = frame.n_samples
    rf = np.zeros((grid.ny, grid.nx))
    for k, (ex, ey) in enumerate(element_positions(array)):
        r = np.hypot(X - ex, Y - ey)
        s = (r / c_mm_us - frame.t0) * frame.sample_rate
        i0 = np.floor(s).astype(np.int64)
        frac = s - i0
        inside = (i0 >= 0) & (i0 < n - 1)
        i0c = np.clip(i0, 0, n - 2)
        trace = frame.data[k]
        v = trace[i0c] * (1.0 - frac) + trace[i0c + 1] * frac
        # the last sample itself is a valid delay
        on_last = s == n - 1
        v = np.where(on_last, trace[n - 1], v)
        rf += np.where(inside | on_last, v, 0.0)
    return rf


def envelope(rf: np.ndarray, method: str = "hilbert") -> np.ndarray:
    """Envelope along depth lines (axis 0)."""
    if method == "hilbert":
        ny = rf.shape[0]
        nfft = 1 << int(math.ceil(math.log2(max(2 * ny, 2))))
        return np.abs(hilbert(rf, N=nfft, axis=0)[:ny])
    if method == "rectify":
        return np.abs(rf)
    raise ReconError(f"unknown envelope method {method!r}")


def das_reconstruct(frame: SignalFrame, array: TransducerArray, grid: ReconGrid, c: float,
                    envelope_method: str = "hilbert") -> ReconImage:
    rf = das_rf(frame, array, grid, c)
    return ReconImage(grid, envelope(rf, envelope_method), rf)


def pipeline(frame: SignalFrame, array: TransducerArray, grid: ReconGrid, c: float, denoise: bool = True,
             levels: int = 4, wavelet: str = "db4", envelope_method: str = "hilbert") -> ReconImage:
    if denoise:
        frame = wavelet_denoise(frame, levels, wavelet)
    return das_reconstruct(frame, array, grid, c, envelope_method)


def default_grid(pitch: float = 0.1, fov: tuple = (-20.0, 20.0, 5.0, 45.0)) -> ReconGrid:
    return ReconGrid.covering(*fov, pitch)
