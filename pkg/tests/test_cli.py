import csv
import json
from pathlib import Path

import pytest

from lapai.cli import main
from lapai.formats import PAF_HEADER

GOLDEN = Path(__file__).parent / "golden" / "sweep_metrics.csv"


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "run.json"
    p.write_text("{}")
    return p


@pytest.fixture(scope="module")
def sweeps(config, tmp_path_factory):
    root = tmp_path_factory.mktemp("sweeps")
    codes = [main(["sweep", "--config", str(config), "--out", str(root / f"t{n}"), "--threads", str(n)])
             for n in (1, 4)]
    assert codes == [0, 0]
    return root / "t1", root / "t4"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestZoomSolve:
    def test_demo(self, tmp_path, capsys):
        assert main(["zoom-solve", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "max afocality residual" in out and "max conservation residual" in out
        table = rows(tmp_path / "trajectory.csv")
        assert table[0] == ["m2", "m1", "branch", "dx1_mm", "dx2_mm", "f_comb_mm", "M"]
        assert len(table) == 201

    def test_single_state_residuals_exactly_zero(self, tmp_path, capsys):
        code = main(["zoom-solve", "--out", str(tmp_path), "--set", "zoom.N=1", "--set", "zoom.m2_long=-1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "max afocality residual: 0.000e+00" in out
        assert "max conservation residual: 0.000e+00" in out
        assert len(rows(tmp_path / "trajectory.csv")) == 2

    def test_positive_f2_is_validation_error(self, tmp_path, capsys):
        assert main(["zoom-solve", "--out", str(tmp_path), "--set", "zoom.f2=50"]) == 1
        assert "f2" in capsys.readouterr().err
        assert not (tmp_path / "trajectory.csv").exists()

    def test_infeasible_prints_interval(self, tmp_path, capsys):
        # m1_long = -1.2 puts the compensator quadratic off its real branch mid-range
        assert main(["zoom-solve", "--out", str(tmp_path), "--set", "zoom.m1_long=-1.2"]) == 2
        assert "m2 in [" in capsys.readouterr().err


class TestSweep:
    def test_deterministic_across_threads(self, sweeps):
        a, b = sweeps
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        assert len(names) == 1 + 2 * 6
        for n in names:
            assert (a / n).read_bytes() == (b / n).read_bytes(), n

    def test_golden_schema(self, sweeps):
        got, want = rows(sweeps[0] / "metrics.csv"), rows(GOLDEN)
        assert got[0] == want[0] == ["d_mm", "theta_deg", "class", "contrast", "node_count", "best"]
        assert len(got) == len(want) == 7
        for g, w in zip(got[1:], want[1:]):
            assert g[:3] == w[:3] and g[4:] == w[4:]
            assert float(g[3]) == pytest.approx(float(w[3]), rel=1e-6)

    def test_one_best(self, sweeps):
        assert [r[5] for r in rows(sweeps[0] / "metrics.csv")[1:]].count("1") == 1

    def test_env_threads(self, config, tmp_path, monkeypatch, sweeps):
        monkeypatch.setenv("LAPAI_THREADS", "3")
        assert main(["sweep", "--config", str(config), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "metrics.csv").read_bytes() == (sweeps[0] / "metrics.csv").read_bytes()

    def test_bad_threads(self, config, tmp_path, capsys):
        assert main(["sweep", "--config", str(config), "--out", str(tmp_path), "--threads", "0"]) == 1

    def test_empty_list_is_usage_error(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"sweep": {"schemes": []}}))
        assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err and "empty" in err

    def test_config_required(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["sweep"])
        assert exc.value.code == 1

    def test_missing_config_is_io(self, tmp_path):
        assert main(["sweep", "--config", str(tmp_path / "nope.json")]) == 3

    def test_unknown_key_is_validation(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"scene": {"vessels": 3}}))
        assert main(["sweep", "--config", str(p)]) == 1

    def test_bad_scheme_named(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"sweep": {"schemes": [[12, 45], [20, 120]]}}))
        assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
        assert "d=20, theta=120" in capsys.readouterr().err


class TestSingleSteps:
    def test_round_trip_matches_sweep(self, config, sweeps, tmp_path):
        sim, rec = tmp_path / "sim", tmp_path / "rec"
        assert main(["simulate", "--config", str(config), "--out", str(sim), "--d", "20", "--theta", "60"]) == 0
        paf = sim / "d20_theta60.paf"
        assert main(["reconstruct", "--config", str(config), "--out", str(rec), str(paf)]) == 0
        for suffix in (".pgm", ".csv"):
            assert (rec / f"d20_theta60{suffix}").read_bytes() == (sweeps[0] / f"d20_theta60{suffix}").read_bytes()

    def test_metrics_on_sweep_image(self, config, sweeps, tmp_path, capsys):
        img = sweeps[0] / "d12_theta45.pgm"
        assert main(["metrics", "--config", str(config), "--out", str(tmp_path), str(img)]) == 0
        got = rows(tmp_path / "metrics.csv")
        ref = rows(sweeps[0] / "metrics.csv")[1]
        assert got[0] == ["d_mm", "theta_deg", "class", "contrast", "node_count"]
        assert got[1][:3] == ref[:3]
        # PGM quantization to 16 bits moves contrast only slightly
        assert float(got[1][3]) == pytest.approx(float(ref[3]), rel=1e-3)

    def test_truncated_frame_reports_offset(self, config, tmp_path, capsys):
        sim = tmp_path / "sim"
        assert main(["simulate", "--config", str(config), "--out", str(sim)]) == 0
        paf = sim / "d12_theta45.paf"
        paf.write_bytes(paf.read_bytes()[: PAF_HEADER.size + 4 * 100 + 1])
        assert main(["reconstruct", "--config", str(config), "--out", str(tmp_path), str(paf)]) == 3
        assert f"byte offset {PAF_HEADER.size + 400}" in capsys.readouterr().err

    def test_missing_frame_is_io(self, tmp_path):
        assert main(["reconstruct", str(tmp_path / "none.paf")]) == 3
