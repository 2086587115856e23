import json

import pytest

from rb5d_stark.cli import main


def read_csv(path):
    return path.read_text().strip().splitlines()


@pytest.fixture()
def sim_config(tmp_path):
    cfg = {
        "simulate": {
            "excited_level": "5D5/2",
            "polarizations": ["sigma_plus"],
            "field_kv_per_cm": [0.0, 2.5],
            "grid_min_mhz": -60.0,
            "grid_max_mhz": 160.0,
            "grid_step_mhz": 1.0,
            "seed": 11,
        }
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSimulate:
    def test_emits_one_csv_per_field_and_polarization(self, tmp_path,
                                                      sim_config):
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(sim_config),
                     "--out", str(out)]) == 0
        files = sorted(p.name for p in out.glob("spectrum_*.csv"))
        assert len(files) == 2
        report = json.loads((out / "run_report.json").read_text())
        for name in files:
            assert name in report["outputs"]
        assert "resolved_config.json" in report["outputs"]

    def test_reproducible_outputs(self, tmp_path, sim_config):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(sim_config), "--out", str(out1)])
        main(["simulate", "--config", str(sim_config), "--out", str(out2)])
        for p1 in out1.glob("spectrum_*.csv"):
            p2 = out2 / p1.name
            assert p1.read_bytes() == p2.read_bytes()

    def test_unusable_output_path_is_config_error(self, tmp_path, sim_config):
        blocker = tmp_path / "blocker"
        blocker.write_text("file, not a directory")
        assert main(["simulate", "--config", str(sim_config),
                     "--out", str(blocker / "sub")]) == 2


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"pump": {"b_gauss_sweeep": [1.0]}}))
        assert main(["pump", "--config", str(path),
                     "--out", str(tmp_path / "out")]) == 2

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"nonsense": {}}))
        assert main(["pump", "--config", str(path),
                     "--out", str(tmp_path / "out")]) == 2

    def test_unreadable_config_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["pump", "--config", str(path),
                     "--out", str(tmp_path / "out")]) == 2


class TestExtract:
    def test_p_value_mode_recovers_published_alphas(self, tmp_path):
        out = tmp_path / "out"
        assert main(["extract", "--out", str(out)]) == 0
        rows = read_csv(out / "alpha_table.csv")
        table = {r.split(",")[0]: (float(r.split(",")[1]), float(r.split(",")[2]))
                 for r in rows[1:]}
        assert abs(table["alpha_S(5D5/2)"][0] / 18600.0 - 1) < 0.02
        assert abs(table["alpha_S(5D3/2)"][0] / 18400.0 - 1) < 0.02
        assert table["alpha_S(5D5/2)"][1] > 0
        assert (out / "equations.jsonl").exists()
        assert (out / "p_table.csv").exists()

    def test_spectra_mode_round_trip(self, tmp_path):
        sim_out = tmp_path / "sim"
        cfg = {
            "simulate": {
                "excited_level": "5D5/2",
                "polarizations": ["sigma_plus", "sigma_minus"],
                "field_kv_per_cm": [0.0, 1.5, 2.0, 2.5],
                "seed": 3,
            },
            "extract": {"mode": "spectra", "spectra_dir": str(sim_out),
                        "dominant_only": False},
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["simulate", "--config", str(path),
                     "--out", str(sim_out)]) == 0
        ext_out = tmp_path / "ext"
        assert main(["extract", "--config", str(path),
                     "--out", str(ext_out)]) == 0
        rows = read_csv(ext_out / "alpha_table.csv")
        table = {r.split(",")[0]: float(r.split(",")[1]) for r in rows[1:]}
        # single-seed statistics: generous bands
        assert abs(table["alpha_S(5D5/2)"] / 18600.0 - 1) < 0.02
        assert abs(table["alpha_T(5D5/2)"] / -1440.0 - 1) < 0.45

    def test_single_field_has_no_lever_arm(self, tmp_path):
        sim_out = tmp_path / "sim"
        cfg = {
            "simulate": {"polarizations": ["sigma_plus"],
                         "field_kv_per_cm": [0.0], "seed": 1},
            "extract": {"mode": "spectra", "spectra_dir": str(sim_out)},
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["simulate", "--config", str(path),
                     "--out", str(sim_out)]) == 0
        assert main(["extract", "--config", str(path),
                     "--out", str(tmp_path / "ext")]) == 3


class TestPump:
    def test_sweep_outputs(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"pump": {"b_gauss_sweep": [0.0, 0.3, 2.0, 10.0],
                        "trace_b_gauss": 0.3}}
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["pump", "--config", str(path), "--out", str(out)]) == 0
        rows = read_csv(out / "pump_sweep.csv")
        vals = {float(r.split(",")[0]): float(r.split(",")[1])
                for r in rows[1:]}
        assert vals[0.0] >= 0.98
        assert vals[0.0] >= vals[0.3] >= vals[2.0] >= vals[10.0]
        assert (out / "pump_trace_0.3G.csv").exists()

    def test_empty_sweep_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"pump": {"b_gauss_sweep": []}}))
        assert main(["pump", "--config", str(path),
                     "--out", str(tmp_path / "out")]) == 2


class TestField:
    def test_report_contents(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"field": {"spacing_mm": 0.494}}
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["field", "--config", str(path), "--out", str(out)]) == 0
        report = json.loads((out / "field_report.json").read_text())
        assert abs(report["central_vs_nominal_percent"]) < 0.2
        assert report["uniformity_max_deviation_percent"] < 0.05
        assert (out / "field_slice_xy.csv").exists()

    def test_too_coarse_spacing_fails(self, tmp_path):
        cfg = {"field": {"spacing_mm": 0.6}}
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        assert main(["field", "--config", str(path),
                     "--out", str(tmp_path / "out")]) == 3


class TestPaper:
    def test_bundle(self, tmp_path):
        out = tmp_path / "out"
        assert main(["paper", "--out", str(out)]) == 0
        for name in ("excitation_probabilities.csv", "p_predictions.csv",
                     "alpha_table.csv", "uncertainty_budget.csv",
                     "pump_sweep.csv", "field_report.json",
                     "run_report.json"):
            assert (out / name).exists(), name
        budget = read_csv(out / "uncertainty_budget.csv")
        total = float(budget[-1].split(",")[1])
        assert abs(total - 0.41) < 0.005
        preds = read_csv(out / "p_predictions.csv")
        for row in preds[1:]:
            excess = float(row.split(",")[4])
            assert 0.0 < excess < 2.5  # documented uniform offset


class TestPlot:
    def test_svg_emission(self, tmp_path, sim_config):
        pytest.importorskip("matplotlib")
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(sim_config),
                     "--out", str(out), "--plot"]) == 0
        assert len(list(out.glob("*.svg"))) == 2


class TestSymbols:
    def test_wigner_values_printed(self, capsys):
        assert main(["symbols", "3j", "1", "1", "1", "1", "-1", "0"]) == 0
        out = capsys.readouterr().out.strip()
        assert float(out) == pytest.approx(0.4082482904638631, rel=1e-12)

    def test_six_j(self, capsys):
        assert main(["symbols", "6j", "1", "1", "1", "0", "1", "1"]) == 0
        assert float(capsys.readouterr().out.strip()) == pytest.approx(-1 / 3)
