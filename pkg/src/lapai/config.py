"""JSON run configuration.

Every section has defaults, so ``{}`` is a valid config.  Unknown keys are
rejected.  :meth:`RunConfig.check` builds the owning modules' objects so
their preconditions run before any computation starts.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import zoom_optics
from .illumination import IlluminationError, IlluminationScheme
from .pa_forward import AcquisitionConfig, ForwardError, TransducerArray
from .recon import ReconError, ReconGrid

DEFAULT_SCHEMES = ((12.0, 45.0), (16.0, 45.0), (20.0, 45.0), (20.0, 50.0), (20.0, 60.0), (20.0, 87.0))


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ZoomSection(_Section):
    f1: float = 100.0
    f2: float = -50.0
    f3: float = 240.0
    N: float = 4.0
    m2_long: float = -2.0
    m1_long: float = -3.0
    n_samples: int = Field(200, ge=1)

    def build(self) -> zoom_optics.ZoomConfig:
        return zoom_optics.ZoomConfig(self.f1, self.f2, self.f3, self.N, self.m2_long, self.m1_long)


class IlluminationSection(_Section):
    a: float = 55.0
    h: float = 55.0
    pulse_energy: float = 10.0
    profile: Literal["gaussian"] = "gaussian"
    bright_threshold: float = 0.5
    dark_threshold: float = 0.1
    pitch: float = Field(0.25, gt=0)

    def scheme(self, d: float, theta: float) -> IlluminationScheme:
        return IlluminationScheme(d, theta, self.a, self.h, self.pulse_energy, self.profile)


class SceneSection(_Section):
    n_crossings: int = Field(8, ge=0)
    fov: float = Field(40.0, gt=0)
    depth: float = 25.0
    mu_a: float = Field(1.0, ge=0)
    background_mu_eff: float = Field(0.03, ge=0)
    sound_speed: float = Field(1500.0, gt=0)
    absorber_pitch: float = Field(0.2, gt=0)
    half_width: float = 4.5
    row_gap: float = 5.0
    min_spacing: float = 2.5
    tilt: float = 45.0
    taper: float = 2.0
    overhang: float = 5.0
    row_extent: float = 0.0


class ArraySection(_Section):
    n_elements: int = 32
    arc_radius: float = 40.0
    angular_span: float = 120.0
    center_frequency: float = 2.5
    fractional_bandwidth: float = 0.6
    focus_depth: float = 25.0

    def build(self) -> TransducerArray:
        return TransducerArray(**self.model_dump())


class AcquisitionSection(_Section):
    """``noise_reference`` "fixed" pins detector noise to the RMS of the scene
    under uniform ``reference_fluence``; "frame" scales it to each frame."""

    sample_rate: float = 40.0
    n_samples: int = 2048
    t0: float = 0.0
    noise_snr: Optional[float] = 70.0
    noise_reference: Literal["fixed", "frame"] = "fixed"
    reference_fluence: float = Field(10.0, gt=0)


class ReconSection(_Section):
    pitch: float = Field(0.1, gt=0)
    levels: int = Field(4, ge=1)
    wavelet: str = "db4"
    envelope: Literal["hilbert", "rectify"] = "hilbert"
    denoise: bool = True


class MetricsSection(_Section):
    contrast: Literal["weber", "michelson"] = "weber"
    roi_halfwidth: float = Field(0.3, gt=0)
    bg_distance: float = Field(1.5, gt=0)
    zone_radius: Optional[float] = Field(10.0, gt=0)
    threshold_fraction: float = Field(0.5, gt=0, lt=1)
    merge_radius: float = Field(3.0, ge=0)
    smooth_sigma: float = Field(3.0, ge=0)
    min_size: int = Field(100, ge=0)
    prune_length: int = Field(10, ge=0)
    dark_frame: bool = True
    floor_factor: float = Field(1.0, ge=0)


class SweepSection(_Section):
    """Either an explicit ``schemes`` list of [d, theta] pairs or the product of ``d`` and ``theta``."""

    schemes: Optional[list[tuple[float, float]]] = None
    d: Optional[list[float]] = None
    theta: Optional[list[float]] = None

    @model_validator(mode="after")
    def _one_form(self):
        if self.schemes is not None and (self.d is not None or self.theta is not None):
            raise ValueError("give either schemes or d/theta lists, not both")
        if (self.d is None) != (self.theta is None):
            raise ValueError("d and theta lists must be given together")
        return self

    def pairs(self) -> list[tuple[float, float]]:
        if self.schemes is not None:
            return [tuple(p) for p in self.schemes]
        if self.d is not None:
            return [(d, t) for d in self.d for t in self.theta]
        return list(DEFAULT_SCHEMES)


class RunConfig(_Section):
    zoom: ZoomSection = ZoomSection()
    illumination: IlluminationSection = IlluminationSection()
    scene: SceneSection = SceneSection()
    array: ArraySection = ArraySection()
    acquisition: AcquisitionSection = AcquisitionSection()
    recon: ReconSection = ReconSection()
    metrics: MetricsSection = MetricsSection()
    sweep: SweepSection = SweepSection()
    seed: int = Field(0, ge=0, lt=2**64)

    def acquisition_config(self, noise_reference_rms: Optional[float] = None, stream: int = 0) -> AcquisitionConfig:
        a = self.acquisition
        return AcquisitionConfig(a.sample_rate, a.n_samples, a.noise_snr, self.seed, a.t0, noise_reference_rms, stream)

    def recon_grid(self) -> ReconGrid:
        h = self.scene.fov / 2
        return ReconGrid.covering(-h, h, self.scene.depth - h, self.scene.depth + h, self.recon.pitch)

    def check(self, need_schemes: bool = False) -> None:
        """Run module preconditions; raises ConfigError naming the section."""
        try:
            self.zoom.build()
        except zoom_optics.ZoomError as exc:
            raise ConfigError(f"zoom: {exc}") from None
        try:
            array = self.array.build()
            acq = self.acquisition_config()
            if acq.sample_rate <= 2.0 * array.max_frequency:
                raise ForwardError(
                    f"sample rate {acq.sample_rate} MHz is below Nyquist for a {array.max_frequency:.3g} MHz band edge"
                )
        except ForwardError as exc:
            raise ConfigError(f"array/acquisition: {exc}") from None
        try:
            self.recon_grid()
        except ReconError as exc:
            raise ConfigError(f"recon: {exc}") from None
        if self.recon.wavelet not in _wavelets():
            raise ConfigError(f"recon: unknown wavelet {self.recon.wavelet!r}")
        if self.acquisition.n_samples < 2**self.recon.levels:
            raise ConfigError(f"recon: {self.acquisition.n_samples} samples is too few for {self.recon.levels} levels")
        pairs = self.sweep.pairs()
        if need_schemes and not pairs:
            raise ConfigError("sweep: scheme list is empty")
        for d, t in pairs:
            try:
                self.illumination.scheme(d, t)
            except IlluminationError as exc:
                raise ConfigError(f"sweep: scheme (d={d:g}, theta={t:g}): {exc}") from None


def _wavelets() -> list[str]:
    import pywt

    return pywt.wavelist(kind="discrete")


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Parse a JSON config file (or defaults when ``path`` is None) and apply top-level overrides.

    Raises:
        ConfigError: on syntax errors, unknown keys or invalid values.
        OSError: if the file cannot be read.
    """
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    for dotted, value in (overrides or {}).items():
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(msgs) from None
