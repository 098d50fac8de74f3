import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lapai.illumination import Grid, FluenceMap
from lapai.pa_forward import (
    AcquisitionConfig,
    ForwardError,
    Scene,
    SignalFrame,
    TransducerArray,
    count_segment_crossings,
    element_positions,
    make_vessel_phantom,
    pa_pulse,
    point_scene,
    simulate,
    uniform_fluence,
)

ARRAY = TransducerArray()
ACQ = AcquisitionConfig()
C = 1.5  # mm/us


def run(points, mu_a=1.0, acq=ACQ, array=ARRAY, fluence=1.0):
    sc = point_scene(points, mu_a)
    return simulate(sc, uniform_fluence(fluence, sc), array, acq)


def matched_peak(trace, array, fs):
    """Lag (samples) maximising correlation with the sampled pulse."""
    half = int(6 * array.envelope_sigma * fs) + 1
    tmpl = pa_pulse(np.arange(-half, half + 1) / fs, array)
    xc = np.correlate(trace, tmpl, mode="same")
    return int(np.argmax(xc))


def ls_amplitude(trace, tau, array, fs):
    """Least-squares amplitude of pulse(t - tau) in ``trace``."""
    p = pa_pulse(np.arange(len(trace)) / fs - tau, array)
    return float(trace @ p / (p @ p))


class TestElements:
    def test_single_element_at_apex(self):
        p = element_positions(TransducerArray(n_elements=1))
        np.testing.assert_array_equal(p, [[0.0, 25.0 - 40.0]])

    def test_angular_gap(self):
        p = element_positions(ARRAY)
        centre = np.array([0.0, ARRAY.focus_depth])
        ang = np.degrees(np.arctan2(p[:, 0] - centre[0], centre[1] - p[:, 1]))
        np.testing.assert_allclose(np.diff(ang), 120 / 31, rtol=1e-12)
        np.testing.assert_allclose(np.hypot(*(p - centre).T), 40.0, rtol=1e-14)

    def test_mirror_pairs(self):
        p = element_positions(ARRAY)
        q = p[::-1]
        assert np.max(np.abs(p[:, 0] + q[:, 0])) <= 1e-12
        assert np.max(np.abs(p[:, 1] - q[:, 1])) <= 1e-12

    def test_invalid_bandwidth(self):
        with pytest.raises(ForwardError):
            TransducerArray(fractional_bandwidth=2.0)


class TestPulse:
    def test_unit_peak(self):
        assert pa_pulse(0.0, ARRAY) == 1.0
        t = np.linspace(-2, 2, 4001)
        assert np.max(np.abs(pa_pulse(t, ARRAY))) == 1.0

    @pytest.mark.parametrize("bw", [0.3, 0.6, 0.9])
    def test_spectral_width(self, bw):
        arr = TransducerArray(fractional_bandwidth=bw)
        fs, n = 400.0, 1 << 16
        t = (np.arange(n) - n // 2) / fs
        spec = np.abs(np.fft.rfft(pa_pulse(t, arr)))
        f = np.fft.rfftfreq(n, 1 / fs)
        above = np.flatnonzero(spec >= 0.5 * spec.max())
        lo, hi = above[0], above[-1]
        # linear interpolation of the half-amplitude crossings
        f_lo = np.interp(0.5 * spec.max(), [spec[lo - 1], spec[lo]], [f[lo - 1], f[lo]])
        f_hi = np.interp(0.5 * spec.max(), [spec[hi + 1], spec[hi]], [f[hi + 1], f[hi]])
        assert (f_hi - f_lo) / arr.center_frequency == pytest.approx(bw, rel=0.02)

    def test_gaussian_decay_bound(self):
        s = ARRAY.envelope_sigma
        t = np.linspace(-12 * s, 12 * s, 200001)
        p = np.abs(pa_pulse(t, ARRAY))
        assert np.all(p <= np.exp(-0.5 * (t / s) ** 2) + 1e-15)
        # exp(-x^2/2) < 1e-6 needs x > sqrt(2 ln 1e6) ~ 5.257
        cut = math.sqrt(2 * math.log(1e6))
        assert np.all(p[np.abs(t) > cut * s] < 1e-6)
        energy = np.sum(p**2) * (t[1] - t[0])
        assert np.isfinite(energy) and energy > 0


class TestSimulate:
    def test_time_of_flight_on_axis(self):
        # element 15/16 are off axis; build a single-element array at the apex
        arr = TransducerArray(n_elements=1)
        apex = element_positions(arr)[0]
        fr = run([(0.0, apex[1] + 37.5)], array=arr)
        lag = matched_peak(fr.data[0], arr, fr.sample_rate)
        assert abs(lag / fr.sample_rate - 25.0) <= 0.5 / fr.sample_rate

    def test_time_of_flight_random_pairs(self):
        rng = np.random.default_rng(11)
        elems = element_positions(ARRAY)
        for _ in range(100):
            p = (rng.uniform(-20, 20), rng.uniform(5, 45))
            k = int(rng.integers(ARRAY.n_elements))
            fr = run([p])
            r = math.dist(p, elems[k])
            lag = matched_peak(fr.data[k], ARRAY, fr.sample_rate)
            assert abs(lag - r / C * fr.sample_rate) <= 1.0

    def test_inverse_distance_amplitude(self):
        rng = np.random.default_rng(12)
        elems = element_positions(ARRAY)
        for _ in range(100):
            k = int(rng.integers(ARRAY.n_elements))
            p1 = (rng.uniform(-20, 20), rng.uniform(5, 45))
            p2 = (rng.uniform(-20, 20), rng.uniform(5, 45))
            r1, r2 = math.dist(p1, elems[k]), math.dist(p2, elems[k])
            a1 = ls_amplitude(run([p1]).data[k], r1 / C, ARRAY, ACQ.sample_rate)
            a2 = ls_amplitude(run([p2]).data[k], r2 / C, ARRAY, ACQ.sample_rate)
            assert a1 / a2 == pytest.approx(r2 / r1, rel=0.01)

    def test_zero_fluence(self):
        fr = run([(0, 25), (3, 30)], fluence=0.0)
        assert not fr.data.any()

    def test_linearity(self):
        pts = [(0, 25), (-4, 18), (7, 33)]
        a = run(pts, mu_a=[0.5, 1.0, 1.5]).data
        b = run(pts, mu_a=[1.0, 2.0, 3.0]).data
        np.testing.assert_array_equal(b, 2 * a)

    @given(st.lists(st.tuples(st.floats(-20, 20), st.floats(5, 45)), min_size=1, max_size=4),
           st.lists(st.tuples(st.floats(-20, 20), st.floats(5, 45)), min_size=1, max_size=4))
    @settings(max_examples=15, deadline=None)
    def test_superposition(self, a, b):
        both = run(a + b).data
        np.testing.assert_allclose(both, run(a).data + run(b).data, rtol=0, atol=1e-12 * np.abs(both).max())

    def test_seeded_noise(self):
        acq = AcquisitionConfig(noise_snr=10.0, rng_seed=5)
        f1, f2 = run([(1, 20)], acq=acq), run([(1, 20)], acq=acq)
        assert np.array_equal(f1.data, f2.data)
        f3 = run([(1, 20)], acq=AcquisitionConfig(noise_snr=10.0, rng_seed=6))
        assert not np.array_equal(f1.data, f3.data)

    def test_noise_level(self):
        clean = run([(1, 20)])
        noisy = run([(1, 20)], acq=AcquisitionConfig(noise_snr=10.0, rng_seed=1))
        rms = math.sqrt(np.mean(clean.data**2))
        nrms = math.sqrt(np.mean((noisy.data - clean.data) ** 2))
        assert 20 * math.log10(rms / nrms) == pytest.approx(10.0, abs=0.1)

    def test_absorber_outside_fluence_grid(self):
        sc = point_scene([(0, 25), (15, 40)])
        x = np.arange(-10, 10.5, 0.5)
        z = np.arange(0, 45.5, 0.5)
        fl = FluenceMap(Grid(x, np.zeros(1), z), np.ones((len(z), 1, len(x))), None)
        with pytest.raises(ForwardError, match="absorber 1 "):
            simulate(sc, fl, ARRAY, ACQ)

    def test_below_nyquist(self):
        with pytest.raises(ForwardError, match="Nyquist"):
            run([(0, 25)], acq=AcquisitionConfig(sample_rate=6.0))

    def test_outside_fov(self):
        with pytest.raises(ForwardError, match="absorber 0"):
            point_scene([(0, 50)])

    def test_frame_rejects_nan(self):
        with pytest.raises(ForwardError):
            SignalFrame(np.array([[0.0, np.nan]]), 40.0)


class TestPhantom:
    def test_no_crossings(self):
        sc = make_vessel_phantom(0, seed=2)
        assert count_segment_crossings(sc.segments) == 0
        assert len(sc.crossings) == 0

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
    @pytest.mark.parametrize("seed", [0, 1, 7])
    def test_exact_count(self, n, seed):
        sc = make_vessel_phantom(n, seed=seed)
        assert count_segment_crossings(sc.segments) == n
        assert len(sc.crossings) == n

    def test_crossings_lie_on_segments(self):
        sc = make_vessel_phantom(8, seed=4)
        for p in sc.crossings:
            on = 0
            for a, b in sc.segments:
                a, b = np.asarray(a), np.asarray(b)
                d = abs((b - a)[0] * (p - a)[1] - (b - a)[1] * (p - a)[0]) / np.linalg.norm(b - a)
                on += d < 1e-9
            assert on == 2

    def test_deterministic(self):
        a, b = make_vessel_phantom(8, seed=9), make_vessel_phantom(8, seed=9)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.crossings, b.crossings)

    def test_inside_fov(self):
        sc = make_vessel_phantom(8, seed=3)
        assert isinstance(sc, Scene)
        x0, x1, z0, z1 = sc.fov
        assert (x0, x1, z0, z1) == (-20, 20, 5, 45)

    def test_infeasible_packing(self):
        with pytest.raises(ForwardError, match="infeasible packing"):
            make_vessel_phantom(30)

    def test_negative(self):
        with pytest.raises(ForwardError):
            make_vessel_phantom(-1)
