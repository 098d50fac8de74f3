"""Scheme sweep: illumination -> forward model -> reconstruction -> metrics for each (d, theta).

One seed drives the phantom and every noise draw.  All schemes share the
same detector-noise realization (common random numbers), so differences
between rows come from the illumination alone.  A laser-off frame drawn
from an independent noise stream sets the node-detection floor.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .config import RunConfig
from .formats import quantize_frame, write_image
from .illumination import FluenceMap, Grid, SchemeClass, classify_scheme, fluence_surface, fluence_volume, required_extent
from .metrics import METRICS_HEADER, MetricsReport, RoiSpec, evaluate
from .pa_forward import Scene, SignalFrame, TransducerArray, frame_rms, make_vessel_phantom, simulate, uniform_fluence
from .recon import ReconImage, pipeline

SWEEP_HEADER = METRICS_HEADER + ",best"
DARK_STREAM = 1


class SweepError(RuntimeError):
    pass


@dataclass
class SchemeResult:
    d: float
    theta: float
    scheme_class: SchemeClass
    report: MetricsReport
    image: ReconImage
    best: bool = False

    def csv_row(self) -> str:
        return f"{self.report.csv_row()},{int(self.best)}"

    @property
    def stem(self) -> str:
        return f"d{self.d:g}_theta{self.theta:g}"


class Experiment:
    """Everything a sweep needs that does not depend on the scheme."""

    def __init__(self, cfg: RunConfig, denoise: Optional[bool] = None):
        self.cfg = cfg
        self.denoise = cfg.recon.denoise if denoise is None else denoise
        self.array: TransducerArray = cfg.array.build()
        self.scene: Scene = build_scene(cfg)
        self.grid = cfg.recon_grid()
        self.noise_rms = noise_reference(cfg, self.scene, self.array)
        self._floor: Optional[float] = None

    def fluence(self, d: float, theta: float) -> FluenceMap:
        return scheme_fluence(self.cfg, self.cfg.illumination.scheme(d, theta), self.scene)

    def acquire(self, fluence: FluenceMap, stream: int = 0) -> SignalFrame:
        acq = self.cfg.acquisition_config(self.noise_rms, stream)
        return quantize_frame(simulate(self.scene, fluence, self.array, acq))

    def reconstruct(self, frame: SignalFrame) -> ReconImage:
        return reconstruct_frame(self.cfg, frame, self.denoise, self.array)

    def node_floor(self) -> float:
        """Peak of the smoothed laser-off reconstruction, times ``floor_factor``."""
        m = self.cfg.metrics
        if not m.dark_frame or self.cfg.acquisition.noise_snr is None or self.noise_rms is None:
            return 0.0
        if self._floor is None:
            dark = self.reconstruct(self.acquire(uniform_fluence(0.0, self.scene), DARK_STREAM)).values
            if m.smooth_sigma > 0:
                dark = ndimage.gaussian_filter(dark, m.smooth_sigma, mode="nearest")
            self._floor = m.floor_factor * float(dark.max())
        return self._floor

    def measure(self, image: ReconImage, d: float, theta: float) -> SchemeResult:
        """Score an already reconstructed image of scheme (d, theta)."""
        cfg = self.cfg
        scheme = cfg.illumination.scheme(d, theta)
        cls = classify_scheme(scheme, cfg.illumination.bright_threshold, cfg.illumination.dark_threshold)
        m = cfg.metrics
        spec = RoiSpec(m.roi_halfwidth, m.bg_distance, m.zone_radius, (0.0, cfg.scene.depth))
        report = evaluate(
            image, self.scene.segments, scheme, cls.label, spec, m.contrast,
            threshold_fraction=m.threshold_fraction, merge_radius=m.merge_radius, smooth_sigma=m.smooth_sigma,
            min_size=m.min_size, prune_length=m.prune_length, floor=self.node_floor(),
        )
        return SchemeResult(d, theta, cls, report, image)

    def evaluate(self, d: float, theta: float) -> SchemeResult:
        image = self.reconstruct(self.acquire(self.fluence(d, theta)))
        return self.measure(image, d, theta)


def reconstruct_frame(cfg: RunConfig, frame: SignalFrame, denoise: Optional[bool] = None,
                      array: Optional[TransducerArray] = None) -> ReconImage:
    """Configured denoise + DAS + envelope; needs no scene, only the array, grid and sound speed."""
    r = cfg.recon
    return pipeline(frame, array or cfg.array.build(), cfg.recon_grid(), cfg.scene.sound_speed,
                    r.denoise if denoise is None else denoise, r.levels, r.wavelet, r.envelope)


def build_scene(cfg: RunConfig) -> Scene:
    s = cfg.scene
    return make_vessel_phantom(
        s.n_crossings, s.fov, cfg.seed, depth=s.depth, half_width=s.half_width, row_gap=s.row_gap,
        min_spacing=s.min_spacing, tilt=s.tilt, absorber_pitch=s.absorber_pitch, mu_a=s.mu_a,
        background_mu_eff=s.background_mu_eff, sound_speed=s.sound_speed, taper=s.taper, overhang=s.overhang,
        row_extent=s.row_extent,
    )


def scheme_fluence(cfg: RunConfig, scheme, scene: Scene) -> FluenceMap:
    """Imaging-plane fluence volume of ``scheme`` covering the scene's field of view."""
    pitch = cfg.illumination.pitch
    hx, hy = required_extent(scheme)
    surface = fluence_surface(scheme, Grid.symmetric(hx + pitch, hy + pitch, pitch))
    x0, x1, _, z1 = scene.fov
    plane = surface.plane().crop_x(x0 - pitch, x1 + pitch)
    z = pitch * np.arange(int(math.ceil(z1 / pitch)) + 2)
    return fluence_volume(plane, scene.background_mu_eff, z)


def noise_reference(cfg: RunConfig, scene: Scene, array: TransducerArray) -> Optional[float]:
    """Fixed detector-noise reference: RMS of the noiseless scene under uniform reference fluence."""
    a = cfg.acquisition
    if a.noise_snr is None or a.noise_reference == "frame":
        return None
    clean = simulate(scene, uniform_fluence(a.reference_fluence, scene), array, cfg.acquisition_config())
    return frame_rms(clean)


def run_sweep(cfg: RunConfig, threads: int = 1, denoise: Optional[bool] = None) -> list[SchemeResult]:
    """Evaluate every scheme; rows come back in sweep-list order whatever ``threads`` is."""
    pairs = cfg.sweep.pairs()
    if not pairs:
        raise SweepError("sweep list is empty")
    exp = Experiment(cfg, denoise)
    exp.node_floor()

    def one(pair):
        d, t = pair
        try:
            return exp.evaluate(d, t)
        except (ValueError, ArithmeticError) as exc:
            raise SweepError(f"scheme (d={d:g}, theta={t:g}): {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    best = max(range(len(results)), key=lambda i: (results[i].report.contrast, -i))
    results[best].best = True
    return results


def sweep_csv(results: list[SchemeResult]) -> str:
    return SWEEP_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in results)


def write_sweep(results: list[SchemeResult], out: Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.csv"]
    written[0].write_text(sweep_csv(results))
    for r in results:
        p = out / f"{r.stem}.pgm"
        write_image(p, r.image)
        written += [p, p.with_suffix(".csv")]
    return written
