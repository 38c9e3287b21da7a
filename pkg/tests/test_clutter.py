from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.constants import c as C0

from conftest import make_array, make_radio, make_scene
from mars_jcas.clutter import (
    GtriParams,
    build_clutter_map,
    gtri_reflectivity,
    terrain_preset,
)
from mars_jcas.scene import ClutterConfig, received_power, steering_ura_from_sin


class TestGtri:
    def test_identity_collapse(self):
        params = GtriParams(a=1.0, b=1.0, c=0.0, d=0.0, sigma_h_m=0.0)
        assert gtri_reflectivity(0.3, params, 0.06) == pytest.approx(0.3)

    def test_zero_grazing_zero_reflectivity(self):
        params = GtriParams(a=2.0, b=1.5, c=0.0, d=1.0, sigma_h_m=0.0)
        assert gtri_reflectivity(0.0, params, 0.06) == 0.0

    def test_grass_preset_one_line_oracle(self):
        p = terrain_preset("grass_5ghz")
        lam = C0 / 5e9
        got = gtri_reflectivity(0.05, p, lam)
        want = p.a * (0.05 + p.c) ** p.b * math.exp(-p.d / (1 + 0.1 * p.sigma_h_m / lam))
        assert got == pytest.approx(want, rel=1e-12)

    def test_negative_base_non_integer_exponent(self):
        params = GtriParams(a=1.0, b=0.5, c=-0.2, d=0.0, sigma_h_m=0.0)
        with pytest.raises(ValueError, match="non-integer"):
            gtri_reflectivity(0.1, params, 0.06)

    def test_negative_grazing_rejected(self):
        params = GtriParams(a=1.0, b=1.0, c=0.0, d=0.0, sigma_h_m=0.0)
        with pytest.raises(ValueError):
            gtri_reflectivity(-0.1, params, 0.06)

    def test_unknown_terrain(self):
        with pytest.raises(KeyError, match="unknown terrain"):
            terrain_preset("lava_5ghz")


class TestClutterMap:
    def test_default_grid_is_two_million_patches(self, desk_clutter):
        assert desk_clutter.patch_count == 2_000_000
        assert desk_clutter.num_tx_slots == 4

    def test_station_height_required(self):
        scene = make_scene(clutter_enabled=True)
        scene = replace(scene, clutter=replace(scene.clutter, station_height_m=0.0))
        with pytest.raises(ValueError, match="height"):
            build_clutter_map(scene)

    def test_tiny_grid_matches_brute_force(self):
        scene = make_scene(clutter_enabled=True)
        scene = replace(scene, clutter=replace(scene.clutter, area_x_m=20.0, area_y_m=10.0,
                                               station_height_m=5.0))
        cmap = build_clutter_map(scene)
        params = cmap.params
        lam = scene.wavelength_m
        arr = scene.array

        # Per-patch python loop, no aggregation machinery.
        from mars_jcas.seeding import rng_for
        rng = rng_for(scene.seed, "clutter")
        xs = np.arange(20) - 9.5
        ys = np.arange(10) + 0.5
        n_bins = scene.radio.num_subcarriers
        tables = np.zeros((n_bins, arr.num_rx), dtype=complex)
        tone = np.zeros(arr.num_rx, dtype=complex)
        h = 5.0
        phases = rng.uniform(0, 2 * np.pi, size=200)
        idx = 0
        for x in xs:
            for y in ys:
                r = math.sqrt(x * x + y * y + h * h)
                graz = math.asin(h / r)
                sigma0 = params.a * (graz + params.c) ** params.b * math.exp(
                    -params.d / (1 + 0.1 * params.sigma_h_m / lam))
                amp = math.sqrt(received_power("radar", 1.0, 1.0, 1.0, lam, r,
                                               rcs_m2=max(sigma0, 1e-300)))
                coeff = amp * np.exp(1j * phases[idx])
                idx += 1
                steer = steering_ura_from_sin(x / r, -h / r, arr.rx_cols, arr.rx_rows,
                                              arr.rx_spacing_x_m, arr.rx_spacing_y_m, lam)
                b = round(r / cmap.range_res_m)
                tables[b] += coeff * steer
                tone += coeff * steer * np.exp(2j * np.pi * scene.radio.carrier_freq_hz
                                               * 2 * r / C0)
        # The grid walks x-major in the implementation; phases must line up.
        np.testing.assert_allclose(cmap.chirp_tables[0], tables, rtol=1e-9, atol=1e-25)
        np.testing.assert_allclose(cmap.tone_vec, tone, rtol=1e-9, atol=1e-25)

    def test_area_standoff_shifts_first_populated_bin(self):
        scene = make_scene(clutter_enabled=True, seed=4)
        near = replace(scene, clutter=ClutterConfig(enabled=True, area_x_m=40.0,
                                                    area_y_m=20.0, station_height_m=10.0))
        far = replace(scene, clutter=ClutterConfig(enabled=True, area_x_m=40.0,
                                                   area_y_m=20.0, station_height_m=10.0,
                                                   area_standoff_m=200.0))
        m_near = build_clutter_map(near)
        m_far = build_clutter_map(far)
        p_near = np.sum(np.abs(m_near.chirp_tables[0]) ** 2, axis=1)
        p_far = np.sum(np.abs(m_far.chirp_tables[0]) ** 2, axis=1)
        first = lambda p: int(np.nonzero(p)[0][0])
        assert first(p_near) * m_near.range_res_m < 30.0
        assert first(p_far) * m_far.range_res_m >= 200.0

    def test_power_in_annulus_positive_and_scaled(self, desk_clutter):
        power = np.sum(np.abs(desk_clutter.chirp_tables[0]) ** 2, axis=1)
        # Ring energy exists across the populated ranges and none beyond the area.
        assert power[2:300].sum() > 0
        max_bin = int(math.hypot(1000, 1000) / desk_clutter.range_res_m) + 1
        assert power[max_bin + 2:].sum() == 0

    def test_reference_slot_matches_unit_tx_phase(self):
        # Slot 0 is the reference transmit element: identical to a no-VA build.
        scene = make_scene(arr=make_array(tx=2), clutter_enabled=True, seed=7151)
        scene = replace(scene, clutter=ClutterConfig(enabled=True, station_height_m=10.0,
                                                     area_x_m=60.0, area_y_m=30.0))
        no_va = build_clutter_map(scene)
        va = build_clutter_map(replace(scene, array=scene.array.with_va(True)))
        np.testing.assert_allclose(va.chirp_tables[0], no_va.chirp_tables[0], rtol=1e-12)
        assert not np.allclose(va.chirp_tables[1], no_va.chirp_tables[0])
