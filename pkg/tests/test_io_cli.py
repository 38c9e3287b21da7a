from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import make_radio, make_scene, on_grid_target
from mars_jcas.channel import synthesize_if_cube
from mars_jcas.cli import main, preset_path
from mars_jcas.harness import schedule_for
from mars_jcas.io import (
    ConfigError,
    config_from_dict,
    config_hash,
    dbm_to_watts,
    format_cell,
    parse_config,
    plan_to_dict,
    read_cube,
    read_manifest,
    scene_to_dict,
    write_csv,
    write_cube,
)
from mars_jcas.pipeline import PipelineSpec, run_pipeline
from mars_jcas.scene import validate_scene


class TestConfigParsing:
    def test_table1_car_preset_values(self):
        scene_cfg, plan = parse_config(preset_path("table1_car"))
        r = scene_cfg.radio
        assert r.carrier_freq_hz == 5e9
        assert r.subcarrier_spacing_hz == 60e3
        assert r.num_subcarriers == 2048
        assert r.avg_tx_power_w == pytest.approx(0.01)       # 10 dBm
        assert r.noise_density_w_per_hz == pytest.approx(dbm_to_watts(-174.0),
                                                         rel=1e-12, abs=0)
        assert r.uplink_power_w == pytest.approx(dbm_to_watts(23.0))
        assert scene_cfg.array.rx_cols == 8 and scene_cfg.array.rx_rows == 8
        assert scene_cfg.array.tx_cols == 2
        assert scene_cfg.waveform.chirp_pri_indices == (1, 3, 6, 10)
        assert plan.scenario == "car"
        # Spacing resolved to half the 5 GHz wavelength.
        lam = 299792458.0 / 5e9
        assert scene_cfg.array.rx_spacing_x_m == pytest.approx(lam / 2)

    def test_antenna_gain_keys(self, tmp_path):
        raw = yaml.safe_load(preset_path("desk_small").read_text())
        raw["radio"]["gain_tx_dbi"] = 3.0
        raw["radio"]["gain_rx"] = 2.0
        cfg = tmp_path / "g.yaml"
        cfg.write_text(yaml.safe_dump(raw))
        scene_cfg, _ = parse_config(cfg)
        assert scene_cfg.radio.gain_tx == pytest.approx(10 ** 0.3)
        assert scene_cfg.radio.gain_rx == 2.0

    def test_empty_file_lists_required_sections(self, tmp_path):
        cfg = tmp_path / "empty.yaml"
        cfg.write_text("")
        with pytest.raises(ConfigError, match="radio"):
            parse_config(cfg)

    def test_unknown_key_named(self, tmp_path):
        raw = yaml.safe_load(preset_path("desk_small").read_text())
        raw["radio"]["carier_freq_ghz"] = 5.0  # typo
        cfg = tmp_path / "typo.yaml"
        cfg.write_text(yaml.safe_dump(raw))
        with pytest.raises(ConfigError, match="carier_freq_ghz"):
            parse_config(cfg)

    def test_duplicate_unit_variants_rejected(self, tmp_path):
        raw = yaml.safe_load(preset_path("desk_small").read_text())
        raw["radio"]["carrier_freq_hz"] = 5e9  # alongside carrier_freq_ghz
        cfg = tmp_path / "dup.yaml"
        cfg.write_text(yaml.safe_dump(raw))
        with pytest.raises(ConfigError, match="only one of"):
            parse_config(cfg)

    def test_type_mismatch_path_qualified(self, tmp_path):
        raw = yaml.safe_load(preset_path("desk_small").read_text())
        raw["radio"]["num_subcarriers"] = "many"
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump(raw))
        with pytest.raises(ConfigError, match="num_subcarriers"):
            parse_config(cfg)

    def test_effective_dict_round_trip(self):
        scene_cfg, plan = parse_config(preset_path("desk_small"))
        effective = scene_to_dict(scene_cfg)
        effective["experiment"] = plan_to_dict(plan)
        back_scene, back_plan = config_from_dict(effective, source="round")
        assert back_scene == scene_cfg
        assert back_plan == plan

    def test_config_hash_key_order_invariant(self):
        a = {"radio": {"x": 1.0, "y": 2.0}, "seed": 3}
        b = {"seed": 3, "radio": {"y": 2.0, "x": 1.0}}
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash({"radio": {"x": 1.0, "y": 2.5}, "seed": 3})


class TestCubeFormat:
    def _cube(self):
        scene = make_scene(radio=make_radio(power_w=10.0))
        scene = replace(scene, targets=(on_grid_target(scene),))
        sched = schedule_for(scene, PipelineSpec(structure="comb"), 1)
        return scene, synthesize_if_cube(scene, sched)

    def test_round_trip_exact(self, tmp_path):
        scene, cube = self._cube()
        path = tmp_path / "c.bin"
        write_cube(path, cube)
        back = read_cube(path)
        np.testing.assert_array_equal(back.chirp_branch, cube.chirp_branch)
        np.testing.assert_array_equal(back.tone_branch_compressed,
                                      cube.tone_branch_compressed)
        assert back.sample_rate_hz == cube.sample_rate_hz
        assert back.schedule.to_dict() == cube.schedule.to_dict()

    def test_estimator_accepts_file_cube(self, tmp_path):
        scene, cube = self._cube()
        path = tmp_path / "c.bin"
        write_cube(path, cube)
        back = read_cube(path)
        pipe = PipelineSpec(structure="comb", suppressor="sthp", eps_mode="inf")
        direct = run_pipeline(cube, scene, pipe, 1)[0]
        loaded = run_pipeline(back, scene, pipe, 1)[0]
        assert direct == loaded

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTACUBE" + b"\0" * 64)
        with pytest.raises(ValueError, match="magic"):
            read_cube(path)


class TestCsv:
    def test_cell_formats(self):
        assert format_cell(None) == ""
        assert format_cell(True) == "1"
        assert format_cell(3) == "3"
        assert format_cell(0.5) == format(0.5, ".17e")
        assert format_cell("comb") == "comb"

    def test_write_csv_deterministic(self, tmp_path):
        rows = [{"a": 1, "b": 0.1}, {"a": 2, "b": None}]
        p1, p2 = tmp_path / "x.csv", tmp_path / "y.csv"
        write_csv(p1, ["a", "b"], rows)
        write_csv(p2, ["a", "b"], rows)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == "a,b"
        assert lines[2] == "2,"


class TestCli:
    def test_resolution_prints_and_writes(self, tmp_path, capsys):
        code = main(["resolution", "--preset", "table1_car", "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "range_res_m" in out
        csv = (tmp_path / "resolution.csv").read_text().splitlines()
        row = dict(zip(("quantity", "no_va", "va"), csv[1].split(",")))
        assert float(row["no_va"]) == pytest.approx(1.22, abs=0.005)
        manifest = read_manifest(tmp_path / "manifest.json")
        assert manifest.outputs[0]["path"] == "resolution.csv"

    def test_waveform_symbol_dump(self, tmp_path, capsys):
        code = main(["waveform", "--preset", "desk_small", "--out", str(tmp_path),
                     "--symbol", "1"])
        assert code == 0
        assert "overhead_fraction" in capsys.readouterr().out
        sym = (tmp_path / "symbol_1.csv").read_text().splitlines()
        assert sym[0] == "index,re,im"
        assert len(sym) == 1 + 512
        sched = yaml.safe_load((tmp_path / "schedule.yaml").read_text())
        assert sched["chirp_pri_indices"] == [1, 6, 15]

    def test_unknown_preset_is_config_error(self, capsys):
        assert main(["resolution", "--preset", "nope"]) == 3
        assert "unknown preset" in capsys.readouterr().err

    def test_usage_error_exit_code(self):
        assert main(["resolution"]) == 2
        assert main(["not-a-command"]) == 2

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        raw = yaml.safe_load(preset_path("desk_small").read_text())
        raw["waveform"]["chirp_pri_indices"] = [0, 3]
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump(raw))
        assert main(["resolution", "--config", str(cfg)]) == 3
        assert "index 0" in capsys.readouterr().err

    def _fast_config(self, tmp_path, drops=2):
        raw = yaml.safe_load(preset_path("desk_small").read_text())
        raw["clutter"]["enabled"] = False
        raw["experiment"]["num_drops"] = drops
        cfg = tmp_path / "fast.yaml"
        cfg.write_text(yaml.safe_dump(raw))
        return cfg

    def test_simulate_writes_cube_and_estimates(self, tmp_path, capsys):
        cfg = self._fast_config(tmp_path)
        out = tmp_path / "sim"
        code = main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--targets", "1", "--dump-cube", "--dump-spectra"])
        assert code == 0
        est = (out / "estimates.csv").read_text().splitlines()
        assert len(est) == 2
        cube = read_cube(out / "cube_comb-sthp-inf-fft-va.bin")
        assert cube.chirp_branch.shape[0] == 16
        manifest = read_manifest(out / "manifest.json")
        names = {o["path"] for o in manifest.outputs}
        assert "estimates.csv" in names and "truth.csv" in names
        assert any(n.startswith("range_spectrum") for n in names)

    def test_simulate_table1_cube_header_dims(self, tmp_path, capsys):
        # Table-I geometry: 64 elements, 4 chirp symbols, 2048 samples each.
        raw = yaml.safe_load(preset_path("table1_car").read_text())
        raw["clutter"]["enabled"] = False
        raw["experiment"]["num_drops"] = 1
        cfg = tmp_path / "t1.yaml"
        cfg.write_text(yaml.safe_dump(raw))
        out = tmp_path / "sim"
        code = main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--targets", "1", "--dump-cube"])
        assert code == 0
        cube = read_cube(out / "cube_comb-sthp-inf-fft.bin")
        assert cube.chirp_branch.shape == (64, 4 * 2048)
        assert cube.tone_branch_compressed.shape == (64, 496)
        assert cube.schedule.num_chirp_occasions == 4
        assert cube.sample_rate_hz == pytest.approx(122.88e6)

    def test_montecarlo_and_replay_byte_identical(self, tmp_path, capsys):
        cfg = self._fast_config(tmp_path)
        out1 = tmp_path / "run1"
        assert main(["montecarlo", "--config", str(cfg), "--out", str(out1)]) == 0
        out2 = tmp_path / "run2"
        code = main(["replay", "--manifest", str(out1 / "manifest.json"),
                     "--out", str(out2)])
        assert code == 0
        for name in ("curves.csv", "records.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_scale_full_raises_drop_floor_but_yields_to_override(self, tmp_path, capsys):
        cfg = self._fast_config(tmp_path)
        out = tmp_path / "scaled"
        # --drops wins over the --scale floor, keeping the smoke run cheap;
        # the flag must still be recorded for replay.
        code = main(["montecarlo", "--config", str(cfg), "--out", str(out),
                     "--scale", "full", "--drops", "2"])
        assert code == 0
        manifest = read_manifest(out / "manifest.json")
        assert "--scale" in manifest.command and "full" in manifest.command
        records = (out / "records.csv").read_text().splitlines()
        assert len(records) == 1 + 2

    def test_replay_single_drop(self, tmp_path, capsys):
        cfg = self._fast_config(tmp_path)
        out1 = tmp_path / "run1"
        assert main(["montecarlo", "--config", str(cfg), "--out", str(out1)]) == 0
        out2 = tmp_path / "drop"
        code = main(["replay", "--manifest", str(out1 / "manifest.json"),
                     "--out", str(out2), "--drop", "1"])
        assert code == 0
        assert (out2 / "drop_1_records.csv").exists()

    def test_replay_detects_tampering(self, tmp_path, capsys):
        cfg = self._fast_config(tmp_path)
        out1 = tmp_path / "run1"
        assert main(["montecarlo", "--config", str(cfg), "--out", str(out1)]) == 0
        manifest = json.loads((out1 / "manifest.json").read_text())
        manifest["outputs"][0]["sha256"] = "0" * 64
        (out1 / "manifest.json").write_text(json.dumps(manifest))
        out2 = tmp_path / "run2"
        code = main(["replay", "--manifest", str(out1 / "manifest.json"),
                     "--out", str(out2)])
        assert code == 4
