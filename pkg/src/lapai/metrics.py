"""Image quality measures for reconstructed vessel images.

Contrast is Weber contrast of a vessel ROI against far background (Michelson
on request).  Node count is the number of branch points in the skeleton of
the thresholded image, with nearby branch points merged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from skimage.morphology import remove_small_objects, skeletonize

from .recon import ReconGrid, ReconImage

SNR_CAP_DB = 300.0
METRICS_HEADER = "d_mm,theta_deg,class,contrast,node_count"


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class RoiSpec:
    """How the ROI and background masks were drawn (distances in mm)."""

    roi_halfwidth: float = 0.3
    bg_distance: float = 3.0
    zone_radius: Optional[float] = None
    zone_center: tuple = (0.0, 25.0)

    def describe(self) -> str:
        text = f"roi: <= {self.roi_halfwidth} mm from a vessel; background: >= {self.bg_distance} mm from every vessel"
        if self.zone_radius is not None:
            cx, cy = self.zone_center
            text += f"; both within {self.zone_radius} mm of ({cx}, {cy})"
        return text


@dataclass(frozen=True)
class MetricsReport:
    contrast: float
    node_count: int
    scheme: object = None
    roi_spec: Optional[RoiSpec] = None
    label: str = ""

    def __post_init__(self):
        if self.node_count < 0:
            raise MetricsError("node_count must be >= 0")
        if self.contrast < -1:
            raise MetricsError("contrast must be >= -1")

    def csv_row(self) -> str:
        return f"{self.scheme.d:.6g},{self.scheme.theta:.6g},{self.label},{self.contrast:.9g},{self.node_count}"


def _values(image: Union[ReconImage, np.ndarray]) -> np.ndarray:
    return image.values if isinstance(image, ReconImage) else np.asarray(image, dtype=float)


def contrast(image, roi_mask: np.ndarray, bg_mask: np.ndarray, kind: str = "weber") -> float:
    """Weber ``(mu_roi - mu_bg) / mu_bg`` or Michelson ``(mu_roi - mu_bg) / (mu_roi + mu_bg)``.

    Raises:
        MetricsError: on empty, overlapping or misshaped masks, or a zero
            background mean ("degenerate background").
    """
    v = _values(image)
    roi = np.asarray(roi_mask, dtype=bool)
    bg = np.asarray(bg_mask, dtype=bool)
    if roi.shape != v.shape or bg.shape != v.shape:
        raise MetricsError(f"mask shapes {roi.shape}, {bg.shape} do not match image {v.shape}")
    if not roi.any() or not bg.any():
        raise MetricsError("ROI and background masks must be nonempty")
    if np.any(roi & bg):
        raise MetricsError("ROI and background masks overlap")
    m_roi = float(v[roi].mean())
    m_bg = float(v[bg].mean())
    if kind == "weber":
        if m_bg <= 0:
            raise MetricsError("degenerate background")
        return (m_roi - m_bg) / m_bg
    if kind == "michelson":
        if m_roi + m_bg <= 0:
            raise MetricsError("degenerate background")
        return (m_roi - m_bg) / (m_roi + m_bg)
    raise MetricsError(f"unknown contrast kind {kind!r}")


def branch_points(skeleton: np.ndarray) -> np.ndarray:
    """(k, 2) row/col of skeleton pixels with three or more 8-neighbours."""
    sk = skeleton.astype(np.int32)
    nb = ndimage.convolve(sk, np.ones((3, 3), np.int32), mode="constant") - sk
    return np.argwhere(skeleton & (nb >= 3))


def merge_points(points: np.ndarray, radius: float) -> int:
    """Number of clusters when points closer than ``radius`` are linked."""
    if len(points) == 0:
        return 0
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    n = len(points)
    if len(pairs) == 0:
        return n
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    return int(connected_components(adj, directed=False)[0])


def prune_spurs(skeleton: np.ndarray, length: int) -> np.ndarray:
    """Strip ``length`` pixels from every free end of a skeleton."""
    sk = skeleton.copy()
    kernel = np.ones((3, 3), np.int32)
    for _ in range(length):
        nb = ndimage.convolve(sk.astype(np.int32), kernel, mode="constant") - sk
        ends = sk & (nb <= 1)
        if not ends.any():
            break
        sk &= ~ends
    return sk


def count_nodes(image, threshold_fraction: float = 0.5, merge_radius: float = 3.0, *, smooth_sigma: float = 0.0,
                min_size: int = 0, prune_length: int = 0, floor: float = 0.0) -> int:
    """Count vessel crossings in an image.

    Binarizes at ``threshold_fraction`` of the image max, thins to a
    one-pixel skeleton and counts branch points (three or more skeleton
    neighbours) merged within ``merge_radius`` pixels.  An empty
    binarization counts zero.

    The keyword options default to off and exist for reconstructed images:
    ``smooth_sigma`` Gaussian pre-filter (pixels), ``min_size`` drops
    smaller blobs, ``prune_length`` strips short spurs before branch points
    are found, and ``floor`` is an absolute level a pixel must also reach
    (e.g. the peak of a laser-off reconstruction).  With ``floor`` set the
    count is no longer scale invariant.
    """
    if not 0 < threshold_fraction < 1:
        raise MetricsError(f"threshold_fraction must be in (0, 1), got {threshold_fraction}")
    v = _values(image)
    if smooth_sigma > 0:
        v = ndimage.gaussian_filter(v, smooth_sigma, mode="nearest")
    peak = float(v.max()) if v.size else 0.0
    if peak <= 0:
        return 0
    mask = v >= max(threshold_fraction * peak, floor)
    if min_size > 0:
        mask = remove_small_objects(mask, min_size=min_size)
    if not mask.any():
        return 0
    sk = skeletonize(mask)
    if prune_length > 0:
        sk = prune_spurs(sk, prune_length)
    return merge_points(branch_points(sk), merge_radius)


def snr_db(signal, reference) -> float:
    """``10 log10(|ref|^2 / |signal - ref|^2)``, capped at 300 dB for a perfect match."""
    s = np.asarray(signal, dtype=float)
    r = np.asarray(reference, dtype=float)
    if s.shape != r.shape:
        raise MetricsError(f"length mismatch: {s.shape} vs {r.shape}")
    ref_e = float(np.sum(r**2))
    if ref_e == 0:
        raise MetricsError("zero reference")
    err_e = float(np.sum((s - r) ** 2))
    if err_e == 0:
        return SNR_CAP_DB
    return min(10.0 * math.log10(ref_e / err_e), SNR_CAP_DB)


# ---------------------------------------------------------------------------
# masks from vessel geometry


def segment_distance(grid: ReconGrid, segments) -> np.ndarray:
    """Distance (mm) from every pixel centre to the nearest segment."""
    X, Y = np.meshgrid(grid.x, grid.y)
    d = np.full(X.shape, np.inf)
    for (x0, y0), (x1, y1) in segments:
        vx, vy = x1 - x0, y1 - y0
        l2 = vx * vx + vy * vy
        if l2 == 0:
            t = np.zeros_like(X)
        else:
            t = np.clip(((X - x0) * vx + (Y - y0) * vy) / l2, 0.0, 1.0)
        d = np.minimum(d, np.hypot(X - x0 - t * vx, Y - y0 - t * vy))
    return d


def render_segments(grid: ReconGrid, segments, width: float = 0.3) -> ReconImage:
    """Binary ground-truth image: 1 within ``width / 2`` of a segment, else 0."""
    d = segment_distance(grid, segments)
    return ReconImage(grid, (d <= width / 2).astype(float))


def vessel_masks(grid: ReconGrid, segments, spec: RoiSpec = RoiSpec()) -> tuple[np.ndarray, np.ndarray]:
    d = segment_distance(grid, segments)
    roi, bg = d <= spec.roi_halfwidth, d >= spec.bg_distance
    if spec.zone_radius is not None:
        X, Y = np.meshgrid(grid.x, grid.y)
        zone = np.hypot(X - spec.zone_center[0], Y - spec.zone_center[1]) <= spec.zone_radius
        roi, bg = roi & zone, bg & zone
    return roi, bg


def evaluate(image: ReconImage, segments, scheme=None, label: str = "", spec: RoiSpec = RoiSpec(),
             kind: str = "weber", **node_opts) -> MetricsReport:
    """Contrast against the vessel geometry plus node count; ``node_opts`` go to count_nodes."""
    roi, bg = vessel_masks(image.grid, segments, spec)
    c = contrast(image, roi, bg, kind)
    n = count_nodes(image, **node_opts)
    return MetricsReport(c, n, scheme, spec, label)
