"""Composable detection pipelines over synthesized receiver data.

The main chain: expand the compressed tone branch, form the angle-velocity
map, extract coarse peaks (STTE), optionally refine with MUSIC, then per
target assemble the chirp branch (VA slots are Doppler-compensated with the
coarse velocity before stacking) and run the selected range stage (STAP,
STHP, or the matched filter). With VA and FFT refinement the spatial
steering is picked from the virtual array's finer FFT-native angle bins
within one coarse bin, scored by the range-stage peak itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .channel import IfCube
from .estimator import (
    TargetEstimate,
    angle_velocity_map,
    expand_nn,
    fa_angle_snapshot,
    fa_range_doppler_map,
    music_refine,
    reshape_space_time,
    signed_bin,
    space_time_steering,
    stap_range_spectrum,
    sthp_range_spectrum,
    stte_peaks,
    temporal_steering,
    va_assemble,
)
from .scene import ValidatedScene, steering_ura_from_sin
from .waveform import MarsSchedule


@dataclass(frozen=True)
class PipelineSpec:
    """One point in the structure x suppressor x eps x refinement x VA grid."""

    structure: str = "comb"     # comb | lshape | fa
    suppressor: str = "sthp"    # stap | sthp | mf
    eps_mode: str = "inf"       # zero | em | inf
    refinement: str = "fft"     # fft | music
    va: bool = False
    music_factor: int = 10
    stte_guard: int = 1

    @property
    def tag(self) -> str:
        parts = [self.structure, self.suppressor, self.eps_mode, self.refinement]
        if self.va:
            parts.append("va")
        return "-".join(parts)


def _compensated_chirp(cube: IfCube, scene: ValidatedScene, doppler_hz: float):
    """Per-occasion VA assembly of the chirp branch, slots rotated back by
    the estimated Doppler so the stacked snapshot keeps the URA structure.

    Static clutter stays occasion-invariant under this rotation (every
    occasion gets the same per-slot phase), so the STHP null survives.
    """
    schedule = cube.schedule
    n = scene.radio.num_subcarriers
    slots = schedule.slots_per_chirp
    arr = scene.array.with_va(slots > 1)
    occasions = []
    for w in range(schedule.num_chirp_occasions):
        mats = []
        for e in range(slots):
            block = cube.chirp_symbol(w * slots + e)
            if slots > 1 and e:
                block = block * np.exp(-2j * np.pi * doppler_hz * e * scene.radio.pri_s)
            mats.append(block)
        assembled, geom = va_assemble(mats, arr)
        occasions.append(assembled)
    return np.concatenate(occasions, axis=1), geom


def _angle_candidates(peak_sin_x: float, peak_sin_y: float, pipe: PipelineSpec,
                      scene: ValidatedScene, geom) -> list:
    """Spatial hypotheses for the range stage: the coarse (or refined) angle
    alone, or the virtual array's FFT bins within +-1 coarse bin."""
    if pipe.refinement == "music" or not pipe.va:
        return [(peak_sin_x, peak_sin_y)]
    lam = scene.wavelength_m
    res_x = lam / (geom.rx_cols * geom.rx_spacing_x_m)
    res_y = lam / (geom.rx_rows * geom.rx_spacing_y_m)
    eta_x = max(1, scene.array.tx_cols)
    eta_y = max(1, scene.array.tx_rows)
    kx = int(round(peak_sin_x / res_x))
    ky = int(round(peak_sin_y / res_y))
    cands = []
    for dx in range(-eta_x, eta_x + 1):
        for dy in range(-eta_y, eta_y + 1):
            sx = (kx + dx) * res_x
            sy = (ky + dy) * res_y
            if sx * sx + sy * sy <= 1.0:
                cands.append((sx, sy))
    return cands or [(peak_sin_x, peak_sin_y)]


def _range_stage(y_st, schedule: MarsSchedule, scene: ValidatedScene, geom,
                 pipe: PipelineSpec, velocity_mps: float, sin_x: float, sin_y: float):
    """Run the selected suppressor once; returns (d, range_m, bin, peak_mag)."""
    radio = scene.radio
    dr = scene.range_res_m
    if pipe.suppressor == "sthp":
        a_t = temporal_steering(velocity_mps, schedule, radio)
        a_s = steering_ura_from_sin(sin_x, sin_y, geom.rx_cols, geom.rx_rows,
                                    geom.rx_spacing_x_m, geom.rx_spacing_y_m,
                                    scene.wavelength_m)
        d, rng_m, bin_ = sthp_range_spectrum(y_st.y_st, a_t, a_s, pipe.eps_mode,
                                             range_res_m=dr, velocity_mps=velocity_mps)
    else:
        eps_mode = "inf" if pipe.suppressor == "mf" else pipe.eps_mode
        a_st = space_time_steering(velocity_mps, sin_x, sin_y, geom, schedule, radio)
        d, rng_m, bin_ = stap_range_spectrum(y_st.y_st, a_st, eps_mode, range_res_m=dr)
    return d, rng_m, bin_, float(np.abs(d[bin_]))


def run_pipeline(cube: IfCube, scene: ValidatedScene, pipe: PipelineSpec,
                 num_targets: int, debug: dict = None) -> list:
    """Full detection chain on one cube; returns one TargetEstimate per
    extracted peak, strongest first. ``debug``, when given, collects the
    angle-velocity map and each target's range spectrum for dumping."""
    if pipe.structure == "fa":
        raise ValueError("FA pipelines take measurements, not IF cubes; "
                         "use run_fa_pipeline")
    schedule = cube.schedule
    radio = scene.radio
    y_e2 = expand_nn(cube.tone_branch_compressed, schedule)
    avm = angle_velocity_map(y_e2, scene.array.with_va(False), radio)
    if debug is not None:
        debug["avmap"] = avm
    peaks = stte_peaks(avm, num_targets, pipe.stte_guard)
    if pipe.suppressor == "sthp" and schedule.num_chirp_occasions < 2:
        raise ValueError("STHP needs at least two chirp occasions (W >= 2)")

    dv = scene.velocity_res_mps
    estimates = []
    for peak in peaks:
        vel = peak.velocity_mps
        sin_x, sin_y = peak.sin_psi_x, peak.sin_psi_y
        if pipe.refinement == "music":
            vel, psi_x, psi_y = music_refine(y_e2, peak, scene.array.with_va(False),
                                             radio, num_sources=num_targets,
                                             factor=pipe.music_factor)
            sin_x, sin_y = math.sin(psi_x), math.sin(psi_y)
        fd = 2.0 * vel * radio.carrier_freq_hz / SPEED_OF_LIGHT
        chirp_eff, geom = _compensated_chirp(cube, scene, fd)
        y_st = reshape_space_time(chirp_eff, radio.num_subcarriers)

        best = None
        for cand_x, cand_y in _angle_candidates(sin_x, sin_y, pipe, scene, geom):
            result = _range_stage(y_st, schedule, scene, geom, pipe, vel, cand_x, cand_y)
            if best is None or result[3] > best[0][3]:
                best = (result, cand_x, cand_y)
        (d, rng_m, rng_bin, peak_mag), win_x, win_y = best
        if debug is not None:
            debug.setdefault("spectra", []).append(d)

        method = pipe.suppressor if pipe.suppressor != "mf" else "mf"
        estimates.append(TargetEstimate(
            velocity_mps=vel,
            psi_x_rad=math.asin(max(-1.0, min(1.0, win_x))),
            psi_y_rad=math.asin(max(-1.0, min(1.0, win_y))),
            range_m=rng_m,
            amplitude=peak_mag,
            velocity_bin=int(round(vel / dv)),
            angle_x_bin=int(round(win_x / avm.sin_res_x)),
            angle_y_bin=int(round(win_y / avm.sin_res_y)),
            range_bin=rng_bin,
            refinement=pipe.refinement,
            method=method,
            eps_mode="inf" if pipe.suppressor == "mf" else pipe.eps_mode,
        ))
    return estimates


def run_fa_pipeline(fa_meas: np.ndarray, scene: ValidatedScene, schedule: MarsSchedule,
                    num_targets: int, guard: int = 1) -> list:
    """FA baseline: nonuniform matched filter over (range, velocity), then a
    spatial FFT of the correlation snapshot at each peak for the angles.
    The same zero-velocity guard as STTE keeps the static ridge out."""
    radio = scene.radio
    famap = fa_range_doppler_map(fa_meas, schedule, radio, scene.range_res_m)
    values = famap.values.copy()
    n_rng, m = values.shape
    guard_mask = np.abs(signed_bin(np.arange(m), m)) <= guard
    values[:, guard_mask] = -np.inf

    arr = scene.array
    estimates = []
    for _ in range(num_targets):
        flat = int(np.argmax(values))
        r_bin, v_bin = np.unravel_index(flat, values.shape)
        if not np.isfinite(values[r_bin, v_bin]):
            raise ValueError("run_fa_pipeline: map exhausted before K peaks")
        snap = fa_angle_snapshot(fa_meas, schedule, radio, int(r_bin), int(v_bin))
        spat = np.abs(np.fft.fft2(snap.reshape(arr.rx_rows, arr.rx_cols)))
        by, bx = np.unravel_index(int(np.argmax(spat)), spat.shape)
        lam = scene.wavelength_m
        res_x = lam / (arr.rx_cols * arr.rx_spacing_x_m)
        res_y = lam / (arr.rx_rows * arr.rx_spacing_y_m)
        sin_x = float(signed_bin(bx, arr.rx_cols)) * res_x
        sin_y = float(signed_bin(by, arr.rx_rows)) * res_y
        vel = famap.velocity(int(v_bin))
        estimates.append(TargetEstimate(
            velocity_mps=vel,
            psi_x_rad=math.asin(max(-1.0, min(1.0, sin_x))),
            psi_y_rad=math.asin(max(-1.0, min(1.0, sin_y))),
            range_m=float(r_bin) * scene.range_res_m,
            amplitude=float(famap.values[r_bin, v_bin]),
            velocity_bin=int(signed_bin(v_bin, m)),
            angle_x_bin=int(signed_bin(bx, arr.rx_cols)),
            angle_y_bin=int(signed_bin(by, arr.rx_rows)),
            range_bin=int(r_bin),
            refinement="fft",
            method="mf",
            eps_mode="inf",
        ))
        for dr in (-1, 0, 1):
            for dv in (-1, 0, 1):
                rr = r_bin + dr
                if 0 <= rr < n_rng:
                    values[rr, (v_bin + dv) % m] = -np.inf
    return estimates
