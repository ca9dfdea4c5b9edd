import json
import logging
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from spdcsim.cli import EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from spdcsim.correlator import CorrelationMode, G2Curve
from spdcsim.io import read_curve_csv, read_table_csv, read_tags, sha256_of, write_curve_csv, write_tags
from spdcsim.resonator import (CouplingState, intrinsic_bandwidth, lithium_niobate_disk, q_absorption,
                               q_coupling, q_total)
from spdcsim.tags import TagStream

CONFIG = """\
duration_s: {duration}
seed: {seed}
source:
  model: PAIR_POISSON
  pair_rate_hz: {rate}
  bandwidth_hz: 13e6
detectors:
  default: {{efficiency: 1.0, dead_time_s: 0.0, dark_rate_hz: 0.0, tick_s: 1e-9}}
"""


def write_config(tmp_path, rate=1e4, duration=1.0, seed=3, name="c.yaml"):
    p = tmp_path / name
    p.write_text(CONFIG.format(rate=rate, duration=duration, seed=seed))
    return str(p)


def listing(d):
    return sorted(os.listdir(d)) if os.path.isdir(d) else []


def toy_file(path, tags, ch=0, tick=1e-9, span=1e-6):
    write_tags(path, [TagStream(ch, np.asarray(tags, dtype=np.int64), tick, span)])
    return str(path)


class TestSimulate:
    def test_outputs_and_manifest(self, tmp_path):
        out = tmp_path / "o"
        assert main(["simulate", write_config(tmp_path), "-o", str(out)]) == EXIT_OK
        assert listing(out) == ["config.yaml", "idler.bin", "manifest.json", "s1.bin", "s2.bin"]
        man = json.loads((out / "manifest.json").read_text())
        assert man["seed"] == 3 and man["command"] == "simulate"
        for entry in man["outputs"]:
            assert entry["sha256"] == sha256_of(out / entry["path"])
        assert {e["path"] for e in man["outputs"]} == set(listing(out)) - {"manifest.json"}

    def test_zero_rate_gives_empty_files(self, tmp_path):
        out = tmp_path / "o"
        assert main(["simulate", write_config(tmp_path, rate=0), "-o", str(out), "--format", "csv"]) == 0
        for name in ("idler", "s1", "s2"):
            hdr, streams = read_tags(out / f"{name}.csv")
            assert hdr.n_records == 0 and all(len(s) == 0 for s in streams.values())
            assert hdr.span == pytest.approx(1.0)

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path, rate=5e4)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", cfg, "-o", str(a)]) == 0
        assert main(["simulate", cfg, "-o", str(b)]) == 0
        for f in listing(a):
            assert (a / f).read_bytes() == (b / f).read_bytes(), f

    def test_seed_changes_output(self, tmp_path):
        main(["simulate", write_config(tmp_path, seed=1, rate=5e4), "-o", str(tmp_path / "a")])
        main(["simulate", write_config(tmp_path, seed=2, rate=5e4), "-o", str(tmp_path / "b")])
        assert (tmp_path / "a" / "s1.bin").read_bytes() != (tmp_path / "b" / "s1.bin").read_bytes()

    def test_config_error_exit_and_no_outputs(self, tmp_path, caplog):
        p = tmp_path / "bad.yaml"
        p.write_text(CONFIG.format(rate=-5, duration=1, seed=1))
        out = tmp_path / "o"
        with caplog.at_level(logging.ERROR):
            assert main(["simulate", str(p), "-o", str(out)]) == EXIT_CONFIG
        assert f"{p}:5" in caplog.text and "pair_rate_hz" in caplog.text
        assert listing(out) == []

    def test_missing_config(self, tmp_path):
        assert main(["simulate", str(tmp_path / "nope.yaml"), "-o", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["simulate"])
        assert exc.value.code == EXIT_USAGE


class TestCorrelate:
    def test_toy_histogram(self, tmp_path):
        a = toy_file(tmp_path / "a.bin", [100], 0)
        b = toy_file(tmp_path / "b.bin", [103, 110], 1)
        out = tmp_path / "o"
        assert main(["correlate", a, b, "--mode", "WINDOWED_PAIRWISE", "--bin-width", "3e-9",
                     "--max-lag", "12e-9", "-o", str(out)]) == 0
        c = read_curve_csv(out / "g2.csv")
        # delays 3 ns and 10 ns: bins centred on 3 ns and 9 ns
        expect = np.zeros(9, dtype=int)
        expect[4 + 1] = 1
        expect[4 + 3] = 1
        assert c.counts.tolist() == expect.tolist()
        norm = 1 * 2 * 3e-9 / 1e-6
        np.testing.assert_allclose(c.g2, expect / norm)

    def test_autocorrelation_symmetric(self, tmp_path):
        rng = np.random.default_rng(5)
        a = toy_file(tmp_path / "a.bin", np.sort(rng.integers(0, 10**6, 3000)), span=1e-3)
        out = tmp_path / "o"
        assert main(["correlate", a, "--mode", "WINDOWED_PAIRWISE", "-o", str(out)]) == 0
        c = read_curve_csv(out / "g2.csv")
        assert np.array_equal(c.counts, c.counts[::-1])
        doc = json.loads((out / "g2.json").read_text())
        assert doc["meta"]["autocorrelation"] is True

    def test_peaked_cross_of_simulation(self, tmp_path):
        cfg = write_config(tmp_path, rate=2e4, duration=5.0)
        main(["simulate", cfg, "-o", str(tmp_path / "s")])
        out = tmp_path / "o"
        assert main(["correlate", str(tmp_path / "s" / "idler.bin"), str(tmp_path / "s" / "s1.bin"),
                     "--mode", "WINDOWED_PAIRWISE", "-o", str(out)]) == 0
        c = read_curve_csv(out / "g2.csv")
        k0 = int(np.argmin(np.abs(c.tau)))
        assert c.g2[k0] > 20
        # the peak decays over a few 1/gamma (about 12 ns)
        far = np.abs(c.tau) > 100e-9
        assert c.g2[far].mean() < 0.01 * c.g2[k0]

    def test_format_error(self, tmp_path):
        bad = tmp_path / "x.bin"
        bad.write_bytes(b"garbage" * 10)
        out = tmp_path / "o"
        assert main(["correlate", str(bad), "-o", str(out)]) == EXIT_FORMAT
        assert listing(out) == []

    def test_tick_mismatch(self, tmp_path):
        a = toy_file(tmp_path / "a.bin", [1], tick=1e-9)
        b = toy_file(tmp_path / "b.bin", [1], tick=162e-12)
        assert main(["correlate", a, b, "-o", str(tmp_path / "o")]) == EXIT_FORMAT
        assert listing(tmp_path / "o") == []

    def test_empty_stream_is_numerical_error(self, tmp_path):
        a = toy_file(tmp_path / "a.bin", [])
        assert main(["correlate", a, "-o", str(tmp_path / "o")]) == EXIT_NUMERICAL
        assert listing(tmp_path / "o") == []


class TestHerald:
    def test_no_triples_warns(self, tmp_path, caplog):
        i = toy_file(tmp_path / "i.bin", [10], 0)
        s1 = toy_file(tmp_path / "s1.bin", [500], 1)
        s2 = toy_file(tmp_path / "s2.bin", [900], 2)
        with caplog.at_level(logging.WARNING):
            assert main(["herald", i, s1, s2, "-o", str(tmp_path / "o")]) == 0
        assert "no heralded triples" in caplog.text
        c = read_curve_csv(tmp_path / "o" / "conditioned_g2.csv")
        assert np.all(c.g2 == 0)
        assert np.all(np.abs(c.tau) - 1.5e-9 <= 20e-9 + 1e-18)


class TestFit:
    def curve_file(self, tmp_path, peak):
        tau = (np.arange(-100, 101)) * 3e-9
        lam = 2 * math.pi * 13e6
        g2 = 1 + (peak - 1) * np.exp(-lam * np.abs(tau))
        p = tmp_path / "g.csv"
        write_curve_csv(p, G2Curve(tau, g2, 1e-3 * g2, None, 3e-9, CorrelationMode.WINDOWED_PAIRWISE))
        return str(p)

    def test_noiseless_recovery(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["fit", self.curve_file(tmp_path, 40.0), "-o", str(out)]) == 0
        rep = json.loads((out / "fit.json").read_text())
        assert rep["derived"]["bandwidth_hz"] == pytest.approx(13e6, rel=1e-6)
        assert rep["parameters"]["amplitude"] == pytest.approx(39.0, rel=1e-6)
        assert "13.000 MHz" in capsys.readouterr().out
        assert set(read_table_csv(out / "fit_curve.csv")) == {"tau_s", "g2", "model_g2", "stderr"}

    def test_mode_number_report(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["fit", self.curve_file(tmp_path, 1.35), "-o", str(out)]) == 0
        rep = json.loads((out / "fit.json").read_text())
        assert rep["derived"]["n_modes_effective"] == pytest.approx(1 / 0.35, rel=1e-5)
        assert "about 3 effective modes" in capsys.readouterr().out

    def test_flat_curve_is_numerical_error(self, tmp_path):
        p = tmp_path / "g.csv"
        tau = np.arange(-20, 21) * 3e-9
        write_curve_csv(p, G2Curve(tau, np.ones(41), np.full(41, 0.01), None, 3e-9))
        assert main(["fit", str(p), "-o", str(tmp_path / "o")]) == EXIT_NUMERICAL
        assert listing(tmp_path / "o") == []


class TestDesign:
    def test_q_budget_and_gap_sweep(self, tmp_path):
        spec = tmp_path / "d.yaml"
        spec.write_text("resonator: {radius_m: 1.9e-3, absorption_per_m: 0.2}\nwavelength_m: 1064e-9\n"
                        "gap_m: 50e-9\n")
        out = tmp_path / "o"
        assert main(["design", str(spec), "--no-phase-match", "-o", str(out)]) == 0
        doc = json.loads((out / "design.json").read_text())["q_budget"]
        disk = lithium_niobate_disk()
        qa, qc = q_absorption(disk, 1064e-9), q_coupling(disk, CouplingState(50e-9, 1064e-9))
        assert doc["q_absorption"] == pytest.approx(qa, rel=1e-12)
        assert doc["q_total"] == pytest.approx(q_total([qa, qc]), rel=1e-12)
        gap = read_table_csv(out / "bandwidth_vs_gap.csv")
        assert len(gap["d_m"]) == 61 and np.all(np.diff(gap["bandwidth_hz"]) < 0)
        assert gap["bandwidth_hz"][-1] > intrinsic_bandwidth(disk, 1064e-9)
        rad = read_table_csv(out / "bandwidth_vs_radius.csv")
        assert np.all(np.diff(rad["bandwidth_hz"]) < 0)
        assert "phase_match.csv" not in listing(out)

    def test_unknown_field(self, tmp_path):
        spec = tmp_path / "d.yaml"
        spec.write_text("resonator: {radius_m: 1.9e-3}\ncolour: red\n")
        assert main(["design", str(spec), "--no-phase-match", "-o", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_unphysical_prism(self, tmp_path):
        # a prism slower than the disk cannot couple
        (tmp_path / "disp.yaml").write_text(
            "materials:\n  LiNbO3_congruent:\n    valid: {wavelength_um: [0.4, 3.4], temperature_C: [-50, 200]}\n"
            "    ordinary: {form: sellmeier3, B: [4.0], C: [0.0]}\n"
            "    extraordinary: {form: sellmeier3, B: [3.9], C: [0.0]}\n"
            "  glass:\n    valid: {wavelength_um: [0.3, 3.0], temperature_C: [-50, 200]}\n"
            "    isotropic: {form: sellmeier3, B: [1.1], C: [0.0]}\n")
        spec = tmp_path / "d.yaml"
        spec.write_text("resonator: {prism: glass, dispersion_file: disp.yaml}\n")
        assert main(["design", str(spec), "--no-phase-match", "-o", str(tmp_path / "o")]) == EXIT_NUMERICAL
        assert listing(tmp_path / "o") == []


class TestPumpScan:
    def test_needs_three_powers(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["pump-scan", cfg, "--powers", "1", "2", "-o", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_zero_power_gives_no_coincidences(self, tmp_path):
        cfg = write_config(tmp_path, duration=2.0)
        out = tmp_path / "o"
        assert main(["pump-scan", cfg, "--powers", "0", "1e-3", "2e-3", "-o", str(out)]) == 0
        tab = read_table_csv(out / "pump_scan.csv")
        assert tab["coincidences"][0] == 0
        assert tab["coincidences"][2] > tab["coincidences"][1] > 0

    def test_all_zero_is_numerical_error(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "o"
        assert main(["pump-scan", cfg, "--powers", "0", "0", "0", "-o", str(out)]) == EXIT_NUMERICAL
        assert listing(out) == []


class TestConvert:
    def test_round_trip(self, tmp_path):
        a = toy_file(tmp_path / "a.bin", [1, 5, 9])
        assert main(["convert", a, str(tmp_path / "a.csv")]) == 0
        assert main(["convert", str(tmp_path / "a.csv"), str(tmp_path / "b.bin")]) == 0
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_console_script_version():
    r = subprocess.run([sys.executable, "-m", "spdcsim.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip().startswith("spdcsim ")
