"""Synthetic photoacoustic channel data on an arc transducer.

The imaging plane is (x, z): x lateral, z depth below the sample surface,
both in mm.  Times are in microseconds and frequencies in MHz, so a sound
speed of 1500 m/s is 1.5 mm/us.

Each absorber is a point source.  Channel ``k`` records

    s_k(t) = sum_i  mu_a[i] * fluence(pos_i) * pulse(t - r_ik / c) / r_ik

with the Grueneisen parameter fixed at 1.  Elements are ideal point
receivers (no directivity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .illumination import FluenceMap, Grid, IlluminationError

PULSE_SUPPORT_SIGMAS = 6.0


class ForwardError(ValueError):
    pass


@dataclass(frozen=True)
class TransducerArray:
    """Arc array whose centre of curvature sits on the probe axis at ``focus_depth``."""

    n_elements: int = 32
    arc_radius: float = 40.0
    angular_span: float = 120.0
    center_frequency: float = 2.5
    fractional_bandwidth: float = 0.6
    focus_depth: float = 25.0

    def __post_init__(self):
        if self.n_elements < 1:
            raise ForwardError("need at least one element")
        if self.arc_radius <= 0:
            raise ForwardError("arc radius must be positive")
        if not 0 <= self.angular_span < 360:
            raise ForwardError("angular span must be in [0, 360) degrees")
        if self.center_frequency <= 0:
            raise ForwardError("center frequency must be positive")
        if not 0 < self.fractional_bandwidth < 2:
            raise ForwardError("fractional bandwidth must be in (0, 2)")

    @property
    def envelope_sigma(self) -> float:
        """Std-dev (us) of the Gaussian pulse envelope giving the -6 dB bandwidth."""
        bw = self.fractional_bandwidth * self.center_frequency
        return math.sqrt(2.0 * math.log(2.0)) / (math.pi * bw)

    @property
    def max_frequency(self) -> float:
        return self.center_frequency * (1.0 + self.fractional_bandwidth / 2.0)


@dataclass(frozen=True)
class AcquisitionConfig:
    """Sampling and noise settings.

    ``noise_snr`` is in dB.  By default the noise RMS is set relative to the
    RMS of the noiseless frame being acquired; pass ``noise_reference_rms``
    to pin it to a fixed level instead (detector noise that does not follow
    the illumination).  Channel ``k`` draws from the generator seeded with
    ``(rng_seed, noise_stream, k)``, so results do not depend on threading
    and independent streams (e.g. a laser-off frame) are one field away.
    """

    sample_rate: float = 40.0
    n_samples: int = 2048
    noise_snr: Optional[float] = None
    rng_seed: int = 0
    t0: float = 0.0
    noise_reference_rms: Optional[float] = None
    noise_stream: int = 0

    def __post_init__(self):
        if self.sample_rate <= 0 or self.n_samples < 1:
            raise ForwardError("sample_rate and n_samples must be positive")


@dataclass
class SignalFrame:
    data: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ForwardError("frame data must be (n_elements, n_samples)")
        if not np.all(np.isfinite(self.data)):
            raise ForwardError("frame contains non-finite samples")

    @property
    def n_elements(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate


@dataclass
class Scene:
    """Point absorbers in the imaging plane.

    ``positions`` is (n, 2) with columns (x, z).  Vessel phantoms also carry
    their centre-line ``segments`` and the ground-truth ``crossings``.
    """

    positions: np.ndarray
    mu_a: np.ndarray
    radius: np.ndarray
    background_mu_eff: float = 0.03
    sound_speed: float = 1500.0
    fov: tuple = (-20.0, 20.0, 5.0, 45.0)
    segments: list = field(default_factory=list)
    crossings: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        n = len(self.positions)
        self.mu_a = np.broadcast_to(np.asarray(self.mu_a, dtype=float), (n,)).copy()
        self.radius = np.broadcast_to(np.asarray(self.radius, dtype=float), (n,)).copy()
        if np.any(self.mu_a < 0):
            raise ForwardError("absorption coefficients must be >= 0")
        if self.sound_speed <= 0:
            raise ForwardError("sound speed must be positive")
        x0, x1, z0, z1 = self.fov
        x, z = self.positions.T
        bad = (x < x0) | (x > x1) | (z < z0) | (z > z1)
        if np.any(bad):
            raise ForwardError(f"absorber {int(np.flatnonzero(bad)[0])} is outside the field of view")

    @property
    def c_mm_per_us(self) -> float:
        return self.sound_speed / 1000.0

    def with_mu_a(self, mu_a) -> "Scene":
        return Scene(self.positions, mu_a, self.radius, self.background_mu_eff, self.sound_speed, self.fov,
                     list(self.segments), self.crossings)

    def subset(self, idx) -> "Scene":
        idx = np.asarray(idx)
        return Scene(self.positions[idx], self.mu_a[idx], self.radius[idx], self.background_mu_eff,
                     self.sound_speed, self.fov)


def point_scene(points: Sequence[Sequence[float]], mu_a=1.0, **kw) -> Scene:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return Scene(pts, mu_a, 0.1, **kw)


def element_positions(array: TransducerArray) -> np.ndarray:
    """(n, 2) element coordinates, equally spaced in angle, mirror-symmetric about x = 0."""
    n = array.n_elements
    if n == 1:
        phi = np.zeros(1)
    else:
        # integer numerators keep element k and n-1-k exact mirror images
        phi = np.radians(array.angular_span) * (2 * np.arange(n) - (n - 1)) / (2 * (n - 1))
    x = array.arc_radius * np.sin(phi)
    z = array.focus_depth - array.arc_radius * np.cos(phi)
    return np.column_stack([x, z])


def pa_pulse(t, array: TransducerArray) -> np.ndarray:
    """Unit-peak Gaussian-envelope cosine at the array centre frequency."""
    t = np.asarray(t, dtype=float)
    sigma = array.envelope_sigma
    return np.exp(-0.5 * (t / sigma) ** 2) * np.cos(2.0 * math.pi * array.center_frequency * t)


def uniform_fluence(value: float, scene: Scene, pitch: float = 1.0) -> FluenceMap:
    """Constant volume fluence covering the scene's field of view."""
    x0, x1, z0, z1 = scene.fov
    x = np.arange(x0, x1 + pitch / 2, pitch)
    z = np.arange(min(z0, 0.0), z1 + pitch / 2, pitch)
    vals = np.full((len(z), 1, len(x)), float(value))
    return FluenceMap(Grid(x, np.zeros(1), z), vals, None)


def _clean_channel(k, elem, pos, amp, array, acq, c):
    r = np.hypot(pos[:, 0] - elem[0], pos[:, 1] - elem[1])
    tau = r / c
    fs = acq.sample_rate
    half = int(math.ceil(PULSE_SUPPORT_SIGMAS * array.envelope_sigma * fs)) + 1
    start = np.floor((tau - acq.t0) * fs).astype(np.int64) - half
    idx = start[:, None] + np.arange(2 * half + 1)[None, :]
    t_rel = acq.t0 + idx / fs - tau[:, None]
    w = (amp / r)[:, None] * pa_pulse(t_rel, array)
    ok = (idx >= 0) & (idx < acq.n_samples)
    return np.bincount(idx[ok], weights=w[ok], minlength=acq.n_samples)


def simulate(scene: Scene, fluence: FluenceMap, array: TransducerArray, acq: AcquisitionConfig) -> SignalFrame:
    """Noiseless point-source channel data, plus optional seeded white noise.

    Raises:
        ForwardError: if the sampling rate is below the band-limited Nyquist
            rate or an absorber lies outside the fluence grid.
    """
    if acq.sample_rate <= 2.0 * array.max_frequency:
        raise ForwardError(
            f"sample rate {acq.sample_rate} MHz is below Nyquist for a {array.max_frequency:.3g} MHz band edge"
        )
    pos = scene.positions
    if len(pos):
        try:
            outside = fluence.outside_plane(pos[:, 0], pos[:, 1])
        except IlluminationError as exc:
            raise ForwardError(str(exc)) from None
        if np.any(outside):
            i = int(np.flatnonzero(outside)[0])
            raise ForwardError(f"absorber {i} at (x={pos[i, 0]:.4g}, z={pos[i, 1]:.4g}) mm is outside the fluence grid")
        phi = fluence.sample_plane(pos[:, 0], pos[:, 1])
    else:
        phi = np.zeros(0)
    amp = scene.mu_a * phi
    elems = element_positions(array)
    c = scene.c_mm_per_us
    data = np.zeros((array.n_elements, acq.n_samples))
    live = amp != 0
    if np.any(live):
        for k, e in enumerate(elems):
            data[k] = _clean_channel(k, e, pos[live], amp[live], array, acq, c)
    if acq.noise_snr is not None:
        ref = acq.noise_reference_rms
        if ref is None:
            ref = float(np.sqrt(np.mean(data**2)))
        sigma = ref * 10.0 ** (-acq.noise_snr / 20.0)
        for k in range(array.n_elements):
            rng = np.random.default_rng([acq.rng_seed, acq.noise_stream, k])
            data[k] += sigma * rng.standard_normal(acq.n_samples)
    return SignalFrame(data, acq.sample_rate, acq.t0)


def frame_rms(frame: SignalFrame) -> float:
    return float(np.sqrt(np.mean(frame.data**2)))


# ---------------------------------------------------------------------------
# vessel phantom


def segment_intersection(p1, p2, q1, q2) -> Optional[np.ndarray]:
    """Intersection point of closed segments p1-p2 and q1-q2, if any (non-parallel only)."""
    p1, p2, q1, q2 = (np.asarray(v, dtype=float) for v in (p1, p2, q1, q2))
    r, s = p2 - p1, q2 - q1
    den = r[0] * s[1] - r[1] * s[0]
    if abs(den) < 1e-12:
        return None
    qp = q1 - p1
    t = (qp[0] * s[1] - qp[1] * s[0]) / den
    u = (qp[0] * r[1] - qp[1] * r[0]) / den
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return p1 + t * r
    return None


def count_segment_crossings(segments) -> int:
    n = 0
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            if segment_intersection(*segments[i], *segments[j]) is not None:
                n += 1
    return n


def _clip_segment(p0, p1, box):
    """Liang-Barsky clip of segment p0-p1 to box (x0, x1, z0, z1); None if fully outside."""
    (x0, z0), (x1, z1) = p0, p1
    dx, dz = x1 - x0, z1 - z0
    lo, hi = 0.0, 1.0
    for p, q in ((-dx, x0 - box[0]), (dx, box[1] - x0), (-dz, z0 - box[2]), (dz, box[3] - z0)):
        if p == 0:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            lo = max(lo, t)
        else:
            hi = min(hi, t)
    if lo >= hi:
        return None
    return ((x0 + lo * dx, z0 + lo * dz), (x0 + hi * dx, z0 + hi * dz))


def make_vessel_phantom(
    n_crossings: int,
    fov: float = 40.0,
    seed: int = 0,
    *,
    depth: float = 25.0,
    half_width: float = 4.5,
    row_gap: float = 5.0,
    min_spacing: float = 2.5,
    tilt: float = 45.0,
    absorber_pitch: float = 0.2,
    taper: float = 2.0,
    overhang: float = 5.0,
    row_extent: float = 0.0,
    mu_a: float = 1.0,
    background_mu_eff: float = 0.03,
    sound_speed: float = 1500.0,
) -> Scene:
    """Crossing-vessel phantom with exactly ``n_crossings`` vessel crossings.

    Two parallel "row" vessels tilt one way; crossing vessels tilt the other
    way and cut one or both rows.  Vessels within a family are parallel, so
    only row/cross pairs can meet.  Tilts stay well away from vertical so the
    limited-angle arc can see every vessel.  The ground truth is recounted by
    brute force before the scene is returned.

    Raises:
        ForwardError: if the crossings cannot be packed at ``min_spacing``.
    """
    if n_crossings < 0:
        raise ForwardError("n_crossings must be >= 0")
    rng = np.random.default_rng(seed)
    half_fov = fov / 2.0
    fov_box = (-half_fov, half_fov, depth - half_fov, depth + half_fov)

    n_cross = (n_crossings + 1) // 2
    if n_cross > 1 and 2 * half_width / (n_cross - 1) < min_spacing:
        raise ForwardError(
            f"infeasible packing: {n_crossings} crossings need {n_cross} crossing vessels "
            f"at >= {min_spacing} mm spacing within +/-{half_width} mm"
        )

    sa = math.tan(math.radians(tilt + rng.uniform(-3, 3)))
    sb = -math.tan(math.radians(tilt + rng.uniform(-3, 3)))
    zc = depth + rng.uniform(-1.0, 1.0)
    if n_crossings == 0:
        offsets = np.array([-row_gap / 2, 0.0, row_gap / 2])
    elif n_crossings == 1:
        offsets = np.zeros(1)
    else:
        offsets = np.array([-row_gap / 2, row_gap / 2])
    # a crossing vessel centred at u meets the row with offset o at x = u + o / (sb - sa)
    spread = max(abs(offsets).max(), overhang) / abs(sb - sa)
    row_len = max(half_width + spread + overhang, row_extent)

    segments = [((-row_len, zc + o - sa * row_len), (row_len, zc + o + sa * row_len)) for o in offsets]

    if n_cross == 1:
        us = np.array([rng.uniform(-1.0, 1.0)])
    elif n_cross > 1:
        us = np.linspace(-half_width, half_width, n_cross)
        us = us + rng.uniform(-0.15, 0.15, n_cross) * (us[1] - us[0])
    else:
        us = np.zeros(0)
    for j, u in enumerate(us):
        odd_last = n_crossings % 2 == 1 and j == n_cross - 1 and len(offsets) > 1
        if len(offsets) == 1:
            lo, hi = -overhang, overhang
        elif odd_last:
            lo, hi = offsets[0] - overhang, 0.5 * (offsets[0] + offsets[1])
        else:
            lo, hi = offsets[0] - overhang, offsets[-1] + overhang
        ends = []
        for g in (lo, hi):
            x = u + g / (sb - sa)
            ends.append((x, zc + sa * u + sb * (x - u)))
        segments.append(tuple(ends))

    inner = (fov_box[0] + 0.5, fov_box[1] - 0.5, fov_box[2] + 0.5, fov_box[3] - 0.5)
    segments = [c for c in (_clip_segment(a, b, inner) for a, b in segments) if c is not None]
    crossings = []
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            p = segment_intersection(*segments[i], *segments[j])
            if p is not None:
                crossings.append(p)
    crossings = np.array(crossings).reshape(-1, 2)
    if len(crossings) != n_crossings:
        raise ForwardError(f"phantom generator produced {len(crossings)} crossings, wanted {n_crossings}")

    pts, weights = [], []
    for (x0, z0), (x1, z1) in segments:
        length = math.hypot(x1 - x0, z1 - z0)
        n = max(int(round(length / absorber_pitch)), 1) + 1
        s = np.linspace(0.0, 1.0, n)
        pts.append(np.column_stack([x0 + s * (x1 - x0), z0 + s * (z1 - z0)]))
        # raised-cosine fade at both ends keeps end-point arcs out of the image
        edge = np.minimum(s, 1.0 - s) * length
        w = np.ones(n)
        if taper > 0:
            fade = edge < taper
            w[fade] = 0.5 - 0.5 * np.cos(math.pi * edge[fade] / taper)
        weights.append(w)
    pos = np.vstack(pts)
    mu = mu_a * np.concatenate(weights)
    return Scene(pos, mu, absorber_pitch / 2, background_mu_eff, sound_speed, fov_box, segments, crossings)
