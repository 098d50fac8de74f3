import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lapai.formats import (
    PAF_HEADER,
    FormatError,
    decode_frame,
    decode_pgm,
    encode_frame,
    encode_pgm,
    frame_csv,
    quantize_frame,
    read_image,
    write_image,
)
from lapai.pa_forward import SignalFrame
from lapai.recon import ReconGrid, ReconImage


def frame(n_el=3, n_s=5, seed=0):
    return SignalFrame(np.random.default_rng(seed).standard_normal((n_el, n_s)), 40.0, 1.5)


class TestPaf:
    def test_round_trip_is_quantization(self):
        f = frame()
        back = decode_frame(encode_frame(f))
        np.testing.assert_array_equal(back.data, quantize_frame(f).data)
        assert (back.sample_rate, back.t0) == (40.0, 1.5)

    @given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 20)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    @settings(max_examples=30)
    def test_float32_round_trip_exact(self, data):
        f = SignalFrame(data.astype(np.float64), 10.0)
        assert np.array_equal(decode_frame(encode_frame(f)).data, f.data)

    def test_header_layout(self):
        buf = encode_frame(frame(2, 7))
        magic, n_el, n_s, fs, t0 = struct.unpack_from("<4sIIdd", buf)
        assert (magic, n_el, n_s, fs, t0) == (b"PAF1", 2, 7, 40.0, 1.5)
        assert len(buf) == 28 + 4 * 14

    def test_truncated_data_offset(self):
        buf = encode_frame(frame(2, 4))
        cut = buf[: PAF_HEADER.size + 4 * 5 + 2]
        with pytest.raises(FormatError) as exc:
            decode_frame(cut)
        assert exc.value.offset == PAF_HEADER.size + 4 * 5
        assert f"byte offset {PAF_HEADER.size + 20}" in str(exc.value)

    @pytest.mark.parametrize("n, offset", [(2, 2), (10, 10)])
    def test_truncated_header(self, n, offset):
        with pytest.raises(FormatError) as exc:
            decode_frame(encode_frame(frame())[:n])
        assert exc.value.offset == offset

    def test_bad_magic(self):
        buf = b"PAF2" + encode_frame(frame())[4:]
        with pytest.raises(FormatError, match="magic") as exc:
            decode_frame(buf)
        assert exc.value.offset == 0

    def test_trailing_bytes(self):
        buf = encode_frame(frame())
        with pytest.raises(FormatError, match="trailing") as exc:
            decode_frame(buf + b"\0")
        assert exc.value.offset == len(buf)

    def test_non_finite_sample(self):
        buf = bytearray(encode_frame(frame(1, 3)))
        buf[PAF_HEADER.size + 4 : PAF_HEADER.size + 8] = struct.pack("<f", float("nan"))
        with pytest.raises(FormatError) as exc:
            decode_frame(bytes(buf))
        assert exc.value.offset == PAF_HEADER.size + 4

    def test_bad_sample_rate(self):
        buf = PAF_HEADER.pack(b"PAF1", 1, 1, 0.0, 0.0) + b"\0" * 4
        with pytest.raises(FormatError, match="sample rate"):
            decode_frame(buf)

    def test_csv(self):
        f = frame(2, 3)
        lines = frame_csv(f).splitlines()
        assert lines[0] == "t_us,ch0,ch1"
        assert len(lines) == 4
        assert float(lines[1].split(",")[1]) == pytest.approx(f.data[0, 0])


class TestPgm:
    def test_header_and_scaling(self):
        v = np.array([[0.0, 1.0], [2.0, 4.0]])
        buf, peak = encode_pgm(v)
        assert buf.startswith(b"P5\n2 2\n65535\n")
        assert peak == 4.0
        np.testing.assert_array_equal(decode_pgm(buf), [[0, 16384], [32768, 65535]])

    def test_zero_image(self):
        buf, peak = encode_pgm(np.zeros((3, 2)))
        assert peak == 0.0 and not decode_pgm(buf).any()

    def test_negative_rejected(self):
        with pytest.raises(FormatError):
            encode_pgm(np.array([[-1.0]]))

    def test_truncated_raster(self):
        buf, _ = encode_pgm(np.ones((4, 4)))
        with pytest.raises(FormatError, match="truncated") as exc:
            decode_pgm(buf[:-3])
        assert exc.value.offset is not None

    def test_image_round_trip(self, tmp_path):
        g = ReconGrid(5, 4, 0.1, (-0.2, 24.8))
        vals = np.random.default_rng(3).uniform(0, 7, (4, 5))
        write_image(tmp_path / "a.pgm", ReconImage(g, vals))
        back = read_image(tmp_path / "a.pgm")
        assert back.grid == g
        np.testing.assert_allclose(back.values, vals, atol=vals.max() / 65535)

    def test_bad_sidecar(self, tmp_path):
        g = ReconGrid(2, 2, 0.1)
        write_image(tmp_path / "a.pgm", ReconImage(g, np.ones((2, 2))))
        (tmp_path / "a.csv").write_text("nx,ny,pitch_mm,origin_x_mm,origin_y_mm,max_value\n2,x,1,1,1,1\n")
        with pytest.raises(FormatError, match="numeric"):
            read_image(tmp_path / "a.pgm")

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(encode_pgm(np.ones((2, 2)))[0])
        with pytest.raises(FileNotFoundError):
            read_image(tmp_path / "a.pgm")
