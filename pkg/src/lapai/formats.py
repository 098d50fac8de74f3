"""On-disk formats: PAF1 channel frames, 16-bit PGM images with CSV sidecars."""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .pa_forward import SignalFrame
from .recon import ReconGrid, ReconImage

PAF_MAGIC = b"PAF1"
PAF_HEADER = struct.Struct("<4sIIdd")
PGM_MAX = 65535

RECON_SIDECAR_HEADER = "nx,ny,pitch_mm,origin_x_mm,origin_y_mm,max_value"
FLUENCE_SIDECAR_HEADER = "nx,ny,dx_mm,dy_mm,peak_mJ_cm2"


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# PAF1 frames


def quantize_frame(frame: SignalFrame) -> SignalFrame:
    """Round samples to float32, exactly as a PAF1 round trip does."""
    return SignalFrame(frame.data.astype("<f4").astype(np.float64), frame.sample_rate, frame.t0)


def encode_frame(frame: SignalFrame) -> bytes:
    n_el, n_s = frame.data.shape
    head = PAF_HEADER.pack(PAF_MAGIC, n_el, n_s, float(frame.sample_rate), float(frame.t0))
    return head + np.ascontiguousarray(frame.data, dtype="<f4").tobytes()


def decode_frame(buf: bytes) -> SignalFrame:
    if len(buf) < 4:
        raise FormatError("truncated PAF1 magic", len(buf))
    if buf[:4] != PAF_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {PAF_MAGIC!r}", 0)
    if len(buf) < PAF_HEADER.size:
        raise FormatError("truncated PAF1 header", len(buf))
    _, n_el, n_s, fs, t0 = PAF_HEADER.unpack_from(buf)
    if n_el == 0 or n_s == 0:
        raise FormatError("PAF1 frame has zero channels or samples", 4 if n_el == 0 else 8)
    if not (np.isfinite(fs) and fs > 0):
        raise FormatError(f"invalid sample rate {fs}", 12)
    if not np.isfinite(t0):
        raise FormatError(f"invalid start time {t0}", 20)
    need = PAF_HEADER.size + 4 * n_el * n_s
    if len(buf) < need:
        # first byte of the first incomplete sample
        got = (len(buf) - PAF_HEADER.size) // 4
        raise FormatError(
            f"truncated PAF1 data: expected {need} bytes for {n_el}x{n_s} samples, got {len(buf)}",
            PAF_HEADER.size + 4 * got,
        )
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after PAF1 data", need)
    data = np.frombuffer(buf, dtype="<f4", count=n_el * n_s, offset=PAF_HEADER.size).reshape(n_el, n_s)
    bad = ~np.isfinite(data)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError("non-finite sample in PAF1 data", PAF_HEADER.size + 4 * i)
    return SignalFrame(data.astype(np.float64), fs, t0)


def write_frame(path, frame: SignalFrame) -> None:
    Path(path).write_bytes(encode_frame(frame))


def read_frame(path) -> SignalFrame:
    return decode_frame(Path(path).read_bytes())


def frame_csv(frame: SignalFrame) -> str:
    """Small-frame CSV export: one row per sample, time then one column per channel."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_us"] + [f"ch{k}" for k in range(frame.n_elements)])
    for t, row in zip(frame.times, frame.data.T):
        w.writerow([f"{t:.9g}"] + [f"{v:.9g}" for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# PGM


def encode_pgm(values: np.ndarray) -> tuple[bytes, float]:
    """16-bit binary PGM scaled so the max maps to 65535; returns (bytes, max)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise FormatError("PGM needs a 2D array")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise FormatError("PGM values must be finite and nonnegative")
    peak = float(v.max()) if v.size else 0.0
    scaled = np.zeros(v.shape) if peak == 0 else np.rint(v / peak * PGM_MAX)
    ny, nx = v.shape
    head = f"P5\n{nx} {ny}\n{PGM_MAX}\n".encode("ascii")
    return head + scaled.astype(">u2").tobytes(), peak


def decode_pgm(buf: bytes) -> np.ndarray:
    """Parse a binary 16-bit PGM into raw integer levels (ny, nx)."""
    pos = 0
    fields = []
    while len(fields) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", pos)
        fields.append((buf[start:pos], start))
    magic, (w, w_at), (h, h_at), (mx, mx_at) = fields[0][0], fields[1], fields[2], fields[3]
    if magic != b"P5":
        raise FormatError(f"bad PGM magic {magic!r}", 0)
    try:
        nx, ny, maxval = int(w), int(h), int(mx)
    except ValueError:
        raise FormatError("non-numeric PGM header field", w_at) from None
    if nx < 1 or ny < 1:
        raise FormatError("PGM dimensions must be positive", w_at if nx < 1 else h_at)
    if maxval != PGM_MAX:
        raise FormatError(f"expected maxval {PGM_MAX}, got {maxval}", mx_at)
    pos += 1  # single whitespace before the raster
    need = pos + 2 * nx * ny
    if len(buf) < need:
        raise FormatError(f"truncated PGM raster: need {need} bytes, got {len(buf)}", pos + 2 * ((len(buf) - pos) // 2))
    return np.frombuffer(buf, dtype=">u2", count=nx * ny, offset=pos).reshape(ny, nx)


def recon_sidecar(grid: ReconGrid, peak: float) -> str:
    ox, oy = grid.origin
    return f"{RECON_SIDECAR_HEADER}\n{grid.nx},{grid.ny},{grid.pitch:.9g},{ox:.9g},{oy:.9g},{peak:.17g}\n"


def write_image(path, image: ReconImage) -> None:
    """Write ``path`` (PGM) and ``path`` with a ``.csv`` suffix (sidecar)."""
    path = Path(path)
    data, peak = encode_pgm(image.values)
    path.write_bytes(data)
    path.with_suffix(".csv").write_text(recon_sidecar(image.grid, peak))


def read_image(path) -> ReconImage:
    """Load a PGM plus sidecar back into physical units (quantized to 16 bits)."""
    path = Path(path)
    levels = decode_pgm(path.read_bytes())
    side = path.with_suffix(".csv")
    text = side.read_text()
    rows = list(csv.reader(text.splitlines()))
    if len(rows) != 2 or ",".join(rows[0]) != RECON_SIDECAR_HEADER:
        raise FormatError(f"bad sidecar {side.name}: expected header {RECON_SIDECAR_HEADER}", 0)
    body_at = text.index("\n") + 1
    try:
        if len(rows[1]) != 6:
            raise ValueError
        nx, ny = int(rows[1][0]), int(rows[1][1])
        pitch, ox, oy, peak = (float(v) for v in rows[1][2:])
    except ValueError:
        raise FormatError(f"bad sidecar {side.name}: expected 6 numeric fields", body_at) from None
    if levels.shape != (ny, nx):
        raise FormatError(f"sidecar says {nx}x{ny}, PGM is {levels.shape[1]}x{levels.shape[0]}", 0)
    grid = ReconGrid(nx, ny, pitch, (ox, oy))
    return ReconImage(grid, levels.astype(np.float64) * (peak / PGM_MAX))


def write_fluence(path, fluence) -> None:
    """Surface (or imaging-plane) fluence map as PGM + sidecar."""
    path = Path(path)
    vals = fluence.values if fluence.values.ndim == 2 else fluence.values[:, 0, :]
    data, peak = encode_pgm(vals)
    path.write_bytes(data)
    g = fluence.grid
    dy = g.dy if g.z is None else float(g.z[1] - g.z[0])
    path.with_suffix(".csv").write_text(
        f"{FLUENCE_SIDECAR_HEADER}\n{vals.shape[1]},{vals.shape[0]},{g.dx:.9g},{dy:.9g},{peak:.9g}\n"
    )
