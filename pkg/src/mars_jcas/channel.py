"""Post-mixing receiver data synthesis.

Signals are generated directly in the IF domain (the mixing algebra in
closed form) rather than at RF sample rates: the chirp branch as per-symbol
beat tones, the tone branch at the per-PRI integrate-and-hold output. Self
interference enters as DC and is removed by ideal DCOC on the chirp branch
and by the band-pass DC removal on the tone branch; the uplink interferer
reaches only the tone branch, attenuated by the low-pass response at its
subcarrier offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .clutter import ClutterMap
from .scene import (
    Target,
    ValidatedScene,
    received_power,
    steering_ura_from_sin,
)
from .seeding import rng_for
from .waveform import MarsSchedule


@dataclass(frozen=True)
class IfCube:
    """Sampled two-branch receiver data for one CPI.

    ``chirp_branch`` holds every chirp symbol's N beat samples side by side
    (occasion-major, VA slot order within an occasion), ``tone_branch_compressed``
    one integrated value per tone-bearing PRI.
    """

    chirp_branch: np.ndarray           # (L, num_chirp_symbols * N)
    tone_branch_compressed: np.ndarray  # (L, num_tone_pris)
    schedule: MarsSchedule
    sample_rate_hz: float

    @property
    def num_elements(self) -> int:
        return self.chirp_branch.shape[0]

    def chirp_symbol(self, index: int) -> np.ndarray:
        """One chirp symbol's (L, N) sample block."""
        n = int(round(self.chirp_branch.shape[1] / max(1, self.schedule.num_chirp_symbols)))
        return self.chirp_branch[:, index * n:(index + 1) * n]


def butterworth_power_gain(freq_hz, cutoff_hz: float, order: int):
    """|H(f)|^2 = 1 / (1 + (f/f_cut)^(2a)) low-pass power response."""
    return 1.0 / (1.0 + np.abs(np.asarray(freq_hz, dtype=float) / cutoff_hz) ** (2 * order))


def _target_phase(seed: int, t: Target) -> float:
    key = (f"{t.range_m:.9e},{t.radial_velocity_mps:.9e},"
           f"{t.psi_x_rad:.9e},{t.psi_y_rad:.9e},{t.rcs_m2:.9e}")
    return float(rng_for(seed, "target-phase", key).uniform(0.0, 2.0 * np.pi))


def _target_coeff(scene: ValidatedScene, t: Target, seed: int) -> complex:
    """Round-trip channel coefficient at unit transmit power."""
    p = received_power("radar", 1.0, scene.radio.gain_tx, scene.radio.gain_rx,
                       scene.wavelength_m, t.range_m, t.rcs_m2)
    return math.sqrt(p) * np.exp(1j * _target_phase(seed, t))


def _rx_steering(scene: ValidatedScene, t: Target) -> np.ndarray:
    a = scene.array
    return steering_ura_from_sin(t.sin_psi_x, t.sin_psi_y, a.rx_cols, a.rx_rows,
                                 a.rx_spacing_x_m, a.rx_spacing_y_m, scene.wavelength_m)


def _tx_slot_phase(scene: ValidatedScene, t: Target, tx_col: int, tx_row: int) -> complex:
    """Phase picked up from the active transmit element's position."""
    a = scene.array
    if not a.va_enabled:
        return 1.0
    xpos = tx_col * a.rx_cols * a.rx_spacing_x_m
    ypos = tx_row * a.rx_rows * a.rx_spacing_y_m
    k = 2.0 * np.pi / scene.wavelength_m
    return np.exp(1j * k * (t.sin_psi_x * xpos + t.sin_psi_y * ypos))


def _integration_factor(doppler_hz: float, n: int, sample_rate_hz: float, exact: bool) -> complex:
    """Coherent sum over the symbol of the within-symbol Doppler rotation."""
    if not exact or doppler_hz == 0.0:
        return float(n)
    z = np.exp(2j * np.pi * doppler_hz / sample_rate_hz)
    return (z**n - 1.0) / (z - 1.0)


def _uplink_direction(scene: ValidatedScene, seed: int) -> np.ndarray:
    rng = rng_for(seed, "uplink-direction")
    while True:
        sx, sy = rng.uniform(-0.7, 0.7, size=2)
        if sx * sx + sy * sy <= 1.0:
            break
    a = scene.array
    return steering_ura_from_sin(sx, sy, a.rx_cols, a.rx_rows,
                                 a.rx_spacing_x_m, a.rx_spacing_y_m, scene.wavelength_m)


def _uplink_residual_power(scene: ValidatedScene, schedule: MarsSchedule) -> float:
    """Uplink power surviving the whole tone-branch chain, on the unit-gain
    (pre-integration) amplitude scale.

    Each data subcarrier sits (k + cfo) subcarrier spacings away from the
    tone; it is attenuated by the low-pass power response there, then by the
    integrate-and-hold transfer |D_N|^2/N^2, which nulls exact multiples of
    the spacing (OFDM orthogonality) and leaves only the fractional-offset
    leakage.
    """
    radio, rec = scene.radio, scene.receiver
    if radio.uplink_power_w <= 0:
        return 0.0
    p_rx = received_power("comm", radio.uplink_power_w, 1.0, 1.0,
                          scene.wavelength_m, radio.uplink_distance_m)
    df = radio.subcarrier_spacing_hz
    guard = schedule.guard_subcarriers
    cutoff = rec.butterworth_cutoff_hz
    if cutoff is None:
        cutoff = (1 + guard) * df / 2.0
    n = radio.num_subcarriers
    k = np.arange(n) - schedule.tone_subcarrier_index
    mask = np.abs(k) > guard
    offsets = (k[mask] + rec.uplink_cfo_fraction) * df
    gains = butterworth_power_gain(offsets, cutoff, rec.butterworth_order)
    # Boxcar-integration power transfer, normalized to the tone's N^2 gain.
    phase = np.pi * offsets / (n * df)
    num = np.sin(n * phase) ** 2
    den = n**2 * np.sin(phase) ** 2
    integ = np.divide(num, den, out=np.ones_like(num), where=den > 0)
    return float(p_rx / n * np.sum(gains * integ))


def _complex_noise(rng, scale: float, shape) -> np.ndarray:
    return (rng.normal(scale=scale / math.sqrt(2.0), size=shape)
            + 1j * rng.normal(scale=scale / math.sqrt(2.0), size=shape))


def synthesize_if_cube(scene: ValidatedScene, schedule: MarsSchedule,
                       clutter: Optional[ClutterMap] = None,
                       seed: Optional[int] = None) -> IfCube:
    """Generate both receiver branches for one CPI of the given schedule.

    Raises ``ValueError`` when a target's round-trip delay exceeds the OFDM
    symbol (its beat frequency would alias out of the receive window).
    """
    if schedule.structure == "fa":
        raise ValueError("FA structures produce per-subcarrier measurements; "
                         "use synthesize_fa_measurements")
    seed = scene.seed if seed is None else seed
    radio, arr, rec = scene.radio, scene.array, scene.receiver
    n = radio.num_subcarriers
    n_el = arr.num_rx
    bw = scene.bandwidth_hz
    t_sym = scene.symbol_duration_s

    for t in scene.targets:
        if t.delay_s() > t_sym:
            raise ValueError(f"target at {t.range_m} m has delay {t.delay_s():.3e} s "
                             f"> symbol duration {t_sym:.3e} s (beat would alias)")

    si_phases = np.exp(1j * rng_for(seed, "si").uniform(0.0, 2.0 * np.pi, size=n_el))
    rng_cnoise = rng_for(seed, "noise-chirp")
    rng_tnoise = rng_for(seed, "noise-tone")
    rng_uplink = rng_for(seed, "uplink-symbols")

    coeffs = [_target_coeff(scene, t, seed) for t in scene.targets]
    steers = [_rx_steering(scene, t) for t in scene.targets]

    # Chirp branch: per-bin clutter beat tones collapse to an inverse DFT.
    flat_slots = [(e, p, a, b) for occ in schedule.va_slots
                  for e, (p, a, b) in enumerate(occ)]
    clutter_base = None
    if clutter is not None:
        if clutter.num_tx_slots < schedule.slots_per_chirp:
            raise ValueError(f"clutter map has {clutter.num_tx_slots} tx slot tables, "
                             f"schedule needs {schedule.slots_per_chirp}")
        clutter_base = [n * np.fft.ifft(clutter.chirp_tables[s], axis=0).T
                        for s in range(schedule.slots_per_chirp)]

    samples = np.arange(n)
    chirp_blocks = []
    for slot_e, pri, tx_a, tx_b in flat_slots:
        p_slot = schedule.per_symbol_power_w[pri]
        t_ref = pri * radio.pri_s
        block = np.zeros((n_el, n), dtype=complex)
        for t, h, a2d in zip(scene.targets, coeffs, steers):
            tau = t.delay_s()
            fd = t.doppler_hz(radio.carrier_freq_hz)
            beat = np.exp(2j * np.pi * (bw / t_sym) * tau * samples / bw)
            if rec.exact_within_symbol_doppler:
                beat = beat * np.exp(2j * np.pi * fd * samples / bw)
            amp = (h * math.sqrt(p_slot) * _tx_slot_phase(scene, t, tx_a, tx_b)
                   * np.exp(2j * np.pi * fd * (t_ref - tau)))
            block += np.outer(a2d * amp, beat)
        if clutter_base is not None:
            block += math.sqrt(p_slot) * clutter_base[slot_e]
        si_amp = math.sqrt(p_slot * 10.0 ** (-radio.si_attenuation_db / 10.0))
        block += si_amp * si_phases[:, None]
        block += _complex_noise(rng_cnoise, math.sqrt(radio.noise_density_w_per_hz * bw),
                                (n_el, n))
        block -= block.mean(axis=1, keepdims=True)
        if rec.residual_dc_db is not None:
            block += si_amp * si_phases[:, None] * 10.0 ** (-rec.residual_dc_db / 20.0)
        chirp_blocks.append(block)
    chirp_branch = (np.concatenate(chirp_blocks, axis=1) if chirp_blocks
                    else np.zeros((n_el, 0), dtype=complex))

    # Tone branch, already integrated per PRI (sum over the symbol's N samples).
    tone_pris = schedule.tone_pri_indices()
    m_tone = tone_pris.size
    tone = np.zeros((n_el, m_tone), dtype=complex)
    t_m = tone_pris * radio.pri_s
    p_tone = schedule.per_symbol_power_w[tone_pris]
    sqrt_p = np.sqrt(p_tone)
    for t, h, a2d in zip(scene.targets, coeffs, steers):
        tau = t.delay_s()
        fd = t.doppler_hz(radio.carrier_freq_hz)
        gain = _integration_factor(fd, n, bw, rec.exact_within_symbol_doppler)
        phases = np.exp(2j * np.pi * fd * (t_m - tau)) * sqrt_p
        tone += np.outer(a2d, phases) * (h * gain
                                         * np.exp(2j * np.pi * radio.carrier_freq_hz * tau))
    if clutter is not None and m_tone:
        tone += np.outer(clutter.tone_vec, sqrt_p) * n
    if m_tone:
        si_amp = np.sqrt(p_tone * 10.0 ** (-radio.si_attenuation_db / 10.0))
        tone += np.outer(si_phases, si_amp) * n
        p_up = _uplink_residual_power(scene, schedule)
        if p_up > 0:
            a_up = _uplink_direction(scene, seed)
            symbols = _complex_noise(rng_uplink, math.sqrt(p_up), m_tone)
            tone += np.outer(a_up, symbols) * n
        if rec.tone_noise_bandwidth == "symbol":
            eff_bw = 1.0 / t_sym
        else:
            eff_bw = 1.0 / radio.pri_s
        tone += _complex_noise(rng_tnoise,
                               n * math.sqrt(radio.noise_density_w_per_hz * eff_bw),
                               (n_el, m_tone))
        if rec.dc_removal:
            tone -= tone.mean(axis=1, keepdims=True)

    if not (np.all(np.isfinite(chirp_branch)) and np.all(np.isfinite(tone))):
        raise ValueError("synthesize_if_cube produced non-finite samples; "
                         "check powers and geometry")
    return IfCube(chirp_branch=chirp_branch, tone_branch_compressed=tone,
                  schedule=schedule, sample_rate_hz=bw)


def tone_branch_unfused(scene: ValidatedScene, schedule: MarsSchedule,
                        clutter: Optional[ClutterMap] = None) -> np.ndarray:
    """Noiseless tone branch at sample level (L x num_tone_pris*N), for
    checking the fused integrate-and-hold against explicit column sums."""
    radio, rec = scene.radio, scene.receiver
    n = radio.num_subcarriers
    n_el = scene.array.num_rx
    tone_pris = schedule.tone_pri_indices()
    out = np.zeros((n_el, tone_pris.size * n), dtype=complex)
    samples = np.arange(n)
    seed = scene.seed
    for col, pri in enumerate(tone_pris):
        p = schedule.per_symbol_power_w[pri]
        t_ref = pri * radio.pri_s
        cell = np.zeros((n_el, n), dtype=complex)
        for t in scene.targets:
            tau = t.delay_s()
            fd = t.doppler_hz(radio.carrier_freq_hz)
            a2d = _rx_steering(scene, t)
            h = _target_coeff(scene, t, seed)
            phase = np.exp(2j * np.pi * radio.carrier_freq_hz * tau) \
                * np.exp(2j * np.pi * fd * (t_ref - tau))
            within = (np.exp(2j * np.pi * fd * samples / scene.bandwidth_hz)
                      if rec.exact_within_symbol_doppler else np.ones(n))
            cell += np.outer(a2d * (h * math.sqrt(p) * phase), within)
        if clutter is not None:
            cell += math.sqrt(p) * clutter.tone_vec[:, None] * np.ones(n)[None, :]
        out[:, col * n:(col + 1) * n] = cell
    return out


def synthesize_fa_measurements(scene: ValidatedScene, schedule: MarsSchedule,
                               clutter: Optional[ClutterMap] = None,
                               seed: Optional[int] = None) -> np.ndarray:
    """Per-PRI single-subcarrier measurements (L x M) for an FA schedule.

    Measurement m is the demodulated coefficient of subcarrier n_m: target
    phase ramps exp(-j*2*pi*n_m*df*tau) * exp(j*2*pi*f_d*t_m), static
    clutter via the aggregated table, plus self-interference, a flat share
    of the uplink, and per-subcarrier thermal noise.
    """
    if schedule.structure != "fa":
        raise ValueError("synthesize_fa_measurements requires an FA schedule")
    seed = scene.seed if seed is None else seed
    radio, arr = scene.radio, scene.array
    n = radio.num_subcarriers
    n_el = arr.num_rx
    m = schedule.num_pri
    sub = schedule.fa_subcarrier_indices
    t_m = np.arange(m) * radio.pri_s
    out = np.zeros((n_el, m), dtype=complex)

    for t in scene.targets:
        tau = t.delay_s()
        fd = t.doppler_hz(radio.carrier_freq_hz)
        a2d = _rx_steering(scene, t)
        h = _target_coeff(scene, t, seed)
        ramp = np.exp(-2j * np.pi * sub * radio.subcarrier_spacing_hz * tau) \
            * np.exp(2j * np.pi * fd * t_m)
        out += np.outer(a2d, ramp) * (h * np.sqrt(schedule.per_symbol_power_w))

    if clutter is not None:
        bins = np.arange(clutter.num_range_bins)
        # exp(-j*2*pi*n_m*r/N): bin delays land exactly on DFT phases.
        ramps = np.exp(-2j * np.pi * np.outer(bins, sub) / n)
        out += (clutter.chirp_tables[0].T @ ramps) * np.sqrt(schedule.per_symbol_power_w)

    si_phases = np.exp(1j * rng_for(seed, "si").uniform(0.0, 2.0 * np.pi, size=n_el))
    si_amp = np.sqrt(schedule.per_symbol_power_w * 10.0 ** (-radio.si_attenuation_db / 10.0))
    out += np.outer(si_phases, si_amp)

    if radio.uplink_power_w > 0:
        p_rx = received_power("comm", radio.uplink_power_w, 1.0, 1.0,
                              scene.wavelength_m, radio.uplink_distance_m)
        a_up = _uplink_direction(scene, seed)
        symbols = _complex_noise(rng_for(seed, "uplink-symbols"),
                                 math.sqrt(p_rx / n), m)
        out += np.outer(a_up, symbols)

    noise_scale = math.sqrt(radio.noise_density_w_per_hz * radio.subcarrier_spacing_hz)
    out += _complex_noise(rng_for(seed, "noise-fa"), noise_scale, (n_el, m))
    return out
