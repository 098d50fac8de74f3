"""Adjustable-illumination photoacoustic probe: optics, illumination, forward model, reconstruction, metrics."""

__version__ = "0.1.0"
