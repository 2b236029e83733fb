import json
import math

import numpy as np
import pytest

from starkzz.cli import main
from starkzz.config import (apply_override, config_hash, load_preset,
                            to_system, validate_config)
from starkzz.errors import ConfigError


def read_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    header = lines[0].split(",")
    rows = [l.split(",") for l in lines[1:]]
    return header, rows


class TestConfig:
    def test_presets_load(self):
        for name in ("device-a", "device-b-pair", "device-b-chain"):
            doc = load_preset(name)
            system = to_system(doc)
            assert system.num_transmons >= 2

    def test_unknown_key_path(self):
        doc = load_preset("device-a")
        doc["transmons"][0]["color"] = "blue"
        with pytest.raises(ConfigError) as err:
            validate_config(doc)
        assert "transmons[0].color" in str(err.value)

    def test_override_paths(self):
        doc = load_preset("device-a")
        out = apply_override(doc, "drives.0.amplitude=0.01")
        assert out["drives"][0]["amplitude"] == 0.01
        with pytest.raises(ConfigError):
            apply_override(doc, "drives.7.amplitude=0.01")
        with pytest.raises(ConfigError):
            apply_override(doc, "no-equals-sign")

    def test_bare_fit_applied_on_load(self):
        system = to_system(load_preset("device-a"))
        # bare frequencies differ from the measured dressed entries
        assert system.transmons[0].frequency != pytest.approx(4.960, abs=1e-5)

    def test_hash_stable_under_key_order(self):
        doc = load_preset("device-a")
        shuffled = json.loads(json.dumps(doc))
        assert config_hash(doc) == config_hash(shuffled)


class TestZzCommand:
    def test_preset_report(self, tmp_path, capsys):
        out = tmp_path / "zz.json"
        assert main(["zz", "--preset", "device-a", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["static_zz_numeric"] == pytest.approx(875e-6, rel=0.05)
        assert abs(report["zz_numeric"]) < 25e-6
        assert report["stark_shift_q0"] == pytest.approx(-7.8e-3, rel=0.3)
        assert report["stark_shift_q1"] == pytest.approx(-1.7e-3, rel=0.3)

    def test_zero_coupling_override(self, tmp_path):
        out = tmp_path / "zz.json"
        code = main(["zz", "--preset", "device-a", "--set",
                     "couplings.0.strength=0.0", "--set", "drives=[]",
                     "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        for key in ("zz_numeric", "zz_perturbative", "static_zz_numeric",
                    "static_zz_perturbative"):
            assert abs(report[key]) < 1e-12

    def test_requires_exactly_one_source(self):
        assert main(["zz"]) == 2
        assert main(["zz", "--preset", "device-a", "--config", "x.json"]) == 2


class TestSweepCommand:
    def test_phase_sweep_cosine(self, tmp_path):
        out = tmp_path / "sweep.csv"
        code = main(["sweep", "--preset", "device-a",
                     "--set", "drives.0.amplitude=0.040",
                     "--set", "drives.1.amplitude=0.020",
                     "--set", "drives.0.frequency=5.075",
                     "--set", "drives.1.frequency=5.075",
                     "--axis", "drives.phase_difference:0:6.283185307179586:41",
                     "--out", str(out)])
        assert code == 0
        header, rows = read_rows(out)
        phi = np.array([float(r[0]) for r in rows])
        zz = np.array([float(r[header.index("zz_numeric")]) for r in rows])
        design = np.stack([np.ones_like(phi), np.cos(phi), np.sin(phi)], axis=1)
        coef, *_ = np.linalg.lstsq(design, zz, rcond=None)
        model = design @ coef
        r2 = 1 - np.sum((zz - model) ** 2) / np.sum((zz - zz.mean()) ** 2)
        assert r2 > 0.999
        assert abs(math.atan2(-coef[2], coef[1])) < math.radians(2)

    def test_byte_identical_reruns(self, tmp_path):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for path, threads in zip(paths, ("4", "1")):
            code = main(["sweep", "--preset", "device-a",
                         "--axis", "drives.scale:0.2:1.0:5",
                         "--threads", threads, "--out", str(path)])
            assert code == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_header_units_and_hash(self, tmp_path):
        out = tmp_path / "sweep.csv"
        main(["sweep", "--preset", "device-a",
              "--axis", "drives.scale:0.5:1.0:3", "--out", str(out)])
        text = out.read_text()
        assert "# tool: starkzz" in text
        assert "hash" in text
        assert "# column zz_numeric: GHz" in text

    def test_degenerate_axis_rejected(self, tmp_path):
        code = main(["sweep", "--preset", "device-a",
                     "--axis", "drives.scale:1:1:2",
                     "--out", str(tmp_path / "x.csv")])
        assert code == 2

    def test_failed_point_recorded_and_run_continues(self, tmp_path):
        out = tmp_path / "sweep.csv"
        # the first axis point drives an invalid (negative) amplitude; the
        # row records the failure and the remaining points still evaluate
        code = main(["sweep", "--preset", "device-a",
                     "--axis", "drives.0.amplitude:-0.01:0.01:3",
                     "--out", str(out)])
        assert code == 0
        header, rows = read_rows(out)
        errors = [r[header.index("error")] for r in rows]
        assert errors[0] != ""
        assert errors[-1] == ""
        assert math.isnan(float(rows[0][header.index("zz_numeric")]))

    def test_two_axes_row_major(self, tmp_path):
        out = tmp_path / "grid.csv"
        code = main(["sweep", "--preset", "device-a",
                     "--axis", "drives.0.amplitude:0.01:0.02:2",
                     "--axis", "drives.1.amplitude:0.01:0.03:3",
                     "--out", str(out)])
        assert code == 0
        _, rows = read_rows(out)
        firsts = [float(r[0]) for r in rows]
        seconds = [float(r[1]) for r in rows]
        assert firsts == sorted(firsts)
        assert seconds[:3] == sorted(seconds[:3])
        assert len(rows) == 6


class TestCalibrateCommand:
    def test_cancel_device_b(self, tmp_path):
        out = tmp_path / "cancel.json"
        code = main(["calibrate", "cancel", "--preset", "device-b-pair",
                     "--out", str(out)])
        assert code == 0
        result = json.loads(out.read_text())
        assert result["amplitudes"][0] == pytest.approx(15e-3, rel=0.2)
        assert abs(result["residual_zz"]) < 5e-6

    def test_cz_zero_amplitude_exit_code(self, tmp_path):
        code = main(["calibrate", "cz", "--preset", "device-a",
                     "--duration", "200.0", "--gate-amplitude", "0.0",
                     "--out", str(tmp_path / "cz.json")])
        assert code == 3
