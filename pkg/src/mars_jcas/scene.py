"""Scene configuration types, array steering math, resolutions, and link budgets.

All quantities are SI (m, s, Hz, W, radians) once they reach this module;
unit conversion from friendlier config keys (dBm, degrees, wavelengths)
happens in :mod:`mars_jcas.io`. Every type here is immutable after
validation and every operation is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT


class SceneValidationError(ValueError):
    """Raised by :func:`validate_scene` with the full list of violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scene:\n" + "\n".join(f"  - {v}" for v in self.violations))


@dataclass(frozen=True)
class RadioParams:
    """OFDM / sensing radio parameters.

    ``bandwidth_hz`` and ``symbol_duration_s`` may be supplied explicitly by a
    config for cross-checking; they must then equal ``num_subcarriers *
    subcarrier_spacing_hz`` and ``1 / subcarrier_spacing_hz``.
    """

    carrier_freq_hz: float
    subcarrier_spacing_hz: float
    num_subcarriers: int
    pri_s: float
    cpi_s: float
    avg_tx_power_w: float
    noise_density_w_per_hz: float
    symbols_per_pri: int = 1
    si_attenuation_db: float = 50.0
    uplink_power_w: float = 0.0
    uplink_distance_m: float = 100.0
    gain_tx: float = 1.0                       # linear; 0 dBi omnidirectional
    gain_rx: float = 1.0
    bandwidth_hz: Optional[float] = None       # optional explicit cross-check
    symbol_duration_s: Optional[float] = None  # optional explicit cross-check

    @property
    def derived_bandwidth_hz(self) -> float:
        return self.num_subcarriers * self.subcarrier_spacing_hz

    @property
    def derived_symbol_duration_s(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def num_pri(self) -> int:
        return int(round(self.cpi_s / self.pri_s))

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def si_power_w(self) -> float:
        """Received self-interference power at average transmit power."""
        return self.avg_tx_power_w * 10.0 ** (-self.si_attenuation_db / 10.0)


@dataclass(frozen=True)
class ArrayGeometry:
    """Receive URA plus the small sensing-dedicated transmit array.

    When ``va_enabled`` the transmit elements are spaced at ``rx_cols *
    rx_spacing_x_m`` / ``rx_rows * rx_spacing_y_m`` so the MIMO virtual
    aperture tiles into a uniform ``(tx_cols*rx_cols) x (tx_rows*rx_rows)``
    rectangular array.
    """

    rx_cols: int
    rx_rows: int
    rx_spacing_x_m: float
    rx_spacing_y_m: float
    tx_cols: int = 1
    tx_rows: int = 1
    va_enabled: bool = False

    @property
    def num_rx(self) -> int:
        return self.rx_cols * self.rx_rows

    @property
    def num_tx(self) -> int:
        return self.tx_cols * self.tx_rows

    @property
    def slots_per_chirp(self) -> int:
        """Time-division slots one chirp occasion expands into."""
        return self.num_tx if self.va_enabled else 1

    @property
    def va_cols(self) -> int:
        return self.tx_cols * self.rx_cols if self.va_enabled else self.rx_cols

    @property
    def va_rows(self) -> int:
        return self.tx_rows * self.rx_rows if self.va_enabled else self.rx_rows

    @property
    def num_va(self) -> int:
        return self.va_cols * self.va_rows

    def with_va(self, enabled: bool) -> "ArrayGeometry":
        if enabled == self.va_enabled:
            return self
        return ArrayGeometry(
            rx_cols=self.rx_cols, rx_rows=self.rx_rows,
            rx_spacing_x_m=self.rx_spacing_x_m, rx_spacing_y_m=self.rx_spacing_y_m,
            tx_cols=self.tx_cols, tx_rows=self.tx_rows, va_enabled=enabled,
        )


@dataclass(frozen=True)
class Target:
    """Point target described in per-axis ULA angles (psi_x, psi_y)."""

    range_m: float
    radial_velocity_mps: float
    psi_x_rad: float
    psi_y_rad: float
    rcs_m2: float

    @property
    def sin_psi_x(self) -> float:
        return math.sin(self.psi_x_rad)

    @property
    def sin_psi_y(self) -> float:
        return math.sin(self.psi_y_rad)

    def delay_s(self) -> float:
        return 2.0 * self.range_m / SPEED_OF_LIGHT

    def doppler_hz(self, carrier_freq_hz: float) -> float:
        return 2.0 * self.radial_velocity_mps * carrier_freq_hz / SPEED_OF_LIGHT


@dataclass(frozen=True)
class ClutterConfig:
    """Ground clutter patch grid and terrain selection."""

    enabled: bool = False
    terrain: str = "grass_5ghz"
    area_x_m: float = 2000.0
    area_y_m: float = 1000.0
    cell_m: float = 1.0
    station_height_m: float = 10.0
    area_standoff_m: float = 0.0  # first patch row this far from the station
    # Optional per-scene overrides of the terrain preset.
    gtri_a: Optional[float] = None
    gtri_b: Optional[float] = None
    gtri_c: Optional[float] = None
    gtri_d: Optional[float] = None
    surface_rms_height_m: Optional[float] = None


@dataclass(frozen=True)
class ReceiverConfig:
    """Post-mixing receive chain knobs (both branches)."""

    butterworth_order: int = 5
    butterworth_cutoff_hz: Optional[float] = None  # default: guard-based, df/2 when guard = 0
    dc_removal: bool = True                        # tone-branch mean-across-PRIs subtraction
    residual_dc_db: Optional[float] = None         # chirp-branch DCOC leakage, None = ideal
    tone_noise_bandwidth: str = "pri"              # "pri" or "symbol"
    exact_within_symbol_doppler: bool = False
    uplink_cfo_fraction: float = 0.05              # uplink offset in subcarrier spacings


@dataclass(frozen=True)
class WaveformConfig:
    """Sensing waveform structure request (resolved by build_schedule)."""

    structure: str = "comb"  # fa | lshape | comb | conventional_chirp
    chirp_pri_indices: tuple = (1,)
    tone_subcarrier_index: Optional[int] = None  # default: nearest band center
    guard_subcarriers: int = 0
    duty_ratio: Optional[float] = None           # must equal 1/symbols_per_pri when given


@dataclass(frozen=True)
class SceneConfig:
    """Full experiment description prior to validation."""

    radio: RadioParams
    array: ArrayGeometry
    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    clutter: ClutterConfig = field(default_factory=ClutterConfig)
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    targets: tuple = ()
    seed: int = 0


@dataclass(frozen=True)
class ValidatedScene:
    """A :class:`SceneConfig` that passed validation, plus derived quantities."""

    radio: RadioParams
    array: ArrayGeometry
    waveform: WaveformConfig
    clutter: ClutterConfig
    receiver: ReceiverConfig
    targets: tuple
    seed: int
    bandwidth_hz: float
    symbol_duration_s: float
    wavelength_m: float
    num_pri: int

    @property
    def max_target_range_m(self) -> float:
        """Ranges beyond this alias the beat frequency (delay > T_sym)."""
        return SPEED_OF_LIGHT * self.symbol_duration_s / 2.0

    @property
    def range_res_m(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)

    @property
    def velocity_res_mps(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.radio.cpi_s * self.radio.carrier_freq_hz)


@dataclass(frozen=True)
class ResolutionReport:
    range_res_m: float
    velocity_res_mps: float
    sin_angle_res_x: float
    sin_angle_res_y: float
    max_unambiguous_speed_mps: float


def steering_from_sin(sin_psi: float, count: int, spacing_m: float, wavelength_m: float) -> np.ndarray:
    """ULA steering vector parameterized directly by sin(psi)."""
    n = np.arange(count)
    return np.exp(2j * np.pi * n * spacing_m * sin_psi / wavelength_m)


def steering_ula(psi_rad: float, count: int, spacing_m: float, wavelength_m: float) -> np.ndarray:
    """Steering vector of a uniform linear array; element l carries
    exp(j*2*pi*l*d*sin(psi)/lambda)."""
    if count < 1:
        raise ValueError("steering_ula: count must be >= 1")
    if spacing_m <= 0:
        raise ValueError("steering_ula: spacing must be > 0")
    return steering_from_sin(math.sin(psi_rad), count, spacing_m, wavelength_m)


def steering_ura_from_sin(sin_psi_x, sin_psi_y, cols, rows, dx, dy, wavelength_m) -> np.ndarray:
    """URA steering vector on sin-angle coordinates, y-axis factor on the
    left of the Kronecker product (x index runs fastest)."""
    ax = steering_from_sin(sin_psi_x, cols, dx, wavelength_m)
    ay = steering_from_sin(sin_psi_y, rows, dy, wavelength_m)
    return np.kron(ay, ax)


def steering_ura(psi_x_rad, psi_y_rad, cols, rows, dx, dy, wavelength_m) -> np.ndarray:
    """2D steering vector of a uniform rectangular array."""
    if cols < 1 or rows < 1:
        raise ValueError("steering_ura: cols and rows must be >= 1")
    return steering_ura_from_sin(
        math.sin(psi_x_rad), math.sin(psi_y_rad), cols, rows, dx, dy, wavelength_m
    )


def received_power(kind: str, p_tx_w: float, gain_tx: float, gain_rx: float,
                   wavelength_m: float, range_m: float,
                   rcs_m2: Optional[float] = None) -> float:
    """Link budget: one-way R^2 law for ``comm``, radar-equation R^4 law
    (with target cross section) for ``radar``."""
    if range_m <= 0:
        raise ValueError("received_power: range must be > 0")
    if kind == "comm":
        return p_tx_w * gain_tx * gain_rx * wavelength_m**2 / ((4.0 * np.pi) ** 2 * range_m**2)
    if kind == "radar":
        if rcs_m2 is None or rcs_m2 <= 0:
            raise ValueError("received_power: radar kind requires rcs_m2 > 0")
        return (p_tx_w * gain_tx * gain_rx * wavelength_m**2 * rcs_m2
                / ((4.0 * np.pi) ** 3 * range_m**4))
    raise ValueError(f"received_power: unknown kind {kind!r}")


def resolution_report(radio: RadioParams, arr: ArrayGeometry) -> ResolutionReport:
    """Range / velocity / sin-angle resolutions and the unambiguous speed.

    The sin-angle resolution uses the virtual aperture length per axis when
    the geometry enables VA, halving the no-VA value for a 2x small array.
    """
    lam = radio.wavelength_m
    return ResolutionReport(
        range_res_m=SPEED_OF_LIGHT / (2.0 * radio.derived_bandwidth_hz),
        velocity_res_mps=SPEED_OF_LIGHT / (2.0 * radio.cpi_s * radio.carrier_freq_hz),
        sin_angle_res_x=lam / (arr.va_cols * arr.rx_spacing_x_m),
        sin_angle_res_y=lam / (arr.va_rows * arr.rx_spacing_y_m),
        max_unambiguous_speed_mps=SPEED_OF_LIGHT / (4.0 * radio.carrier_freq_hz * radio.pri_s),
    )


def psi_from_spherical(theta_rad: float, phi_rad: float):
    """Convert (azimuth theta, elevation phi) spherical angles to the
    per-axis (psi_x, psi_y) angles used internally (IO helper)."""
    sx = math.cos(phi_rad) * math.sin(theta_rad)
    sy = math.sin(phi_rad) * math.sin(theta_rad)
    return math.asin(sx), math.asin(sy)


def spherical_from_psi(psi_x_rad: float, psi_y_rad: float):
    """Inverse of :func:`psi_from_spherical` (IO helper)."""
    sx, sy = math.sin(psi_x_rad), math.sin(psi_y_rad)
    theta = math.asin(min(1.0, math.hypot(sx, sy)))
    phi = math.atan2(sy, sx)
    return theta, phi


def direction_from_psi(psi_x_rad: float, psi_y_rad: float) -> np.ndarray:
    """Unit direction vector [sin psi_x, sin psi_y, sqrt(1 - .. - ..)]."""
    sx, sy = math.sin(psi_x_rad), math.sin(psi_y_rad)
    rest = 1.0 - sx * sx - sy * sy
    if rest < 0:
        raise ValueError("direction_from_psi: sin^2(psi_x) + sin^2(psi_y) > 1")
    return np.array([sx, sy, math.sqrt(rest)])


_REL_TOL = 1e-9
_STRUCTURES = ("fa", "lshape", "comb", "conventional_chirp")


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=_REL_TOL, abs_tol=0.0)


def validate_scene(config: SceneConfig) -> ValidatedScene:
    """Check every invariant of a scene and return the normalized form.

    Raises :class:`SceneValidationError` carrying the complete list of
    violations rather than stopping at the first one.
    """
    v: list[str] = []
    r, a, w = config.radio, config.array, config.waveform

    if r.carrier_freq_hz <= 0:
        v.append("radio.carrier_freq_hz must be > 0")
    if r.subcarrier_spacing_hz <= 0:
        v.append("radio.subcarrier_spacing_hz must be > 0")
    if r.num_subcarriers < 2:
        v.append("radio.num_subcarriers must be >= 2")
    for name in ("avg_tx_power_w", "noise_density_w_per_hz", "pri_s", "cpi_s"):
        if getattr(r, name) <= 0:
            v.append(f"radio.{name} must be > 0")
    if r.uplink_power_w < 0:
        v.append("radio.uplink_power_w must be >= 0")
    if r.si_attenuation_db < 0:
        v.append("radio.si_attenuation_db must be >= 0")
    if r.gain_tx <= 0 or r.gain_rx <= 0:
        v.append("radio antenna gains must be > 0 (linear)")

    bandwidth = r.derived_bandwidth_hz
    t_sym = r.derived_symbol_duration_s
    if r.bandwidth_hz is not None and not _close(r.bandwidth_hz, bandwidth):
        v.append(f"radio.bandwidth_hz={r.bandwidth_hz} inconsistent with "
                 f"num_subcarriers*subcarrier_spacing_hz={bandwidth}")
    if r.symbol_duration_s is not None and not _close(r.symbol_duration_s, t_sym):
        v.append(f"radio.symbol_duration_s={r.symbol_duration_s} inconsistent with "
                 f"1/subcarrier_spacing_hz={t_sym}")

    num_pri = int(round(r.cpi_s / r.pri_s))
    if num_pri < 1 or not _close(num_pri * r.pri_s, r.cpi_s):
        v.append(f"radio.cpi_s={r.cpi_s} is not an integer multiple of pri_s={r.pri_s}")
    if r.symbols_per_pri < 1:
        v.append("radio.symbols_per_pri must be >= 1")
    elif not _close(r.symbols_per_pri * t_sym, r.pri_s):
        v.append(f"radio.pri_s={r.pri_s} does not equal symbols_per_pri*symbol_duration "
                 f"({r.symbols_per_pri}*{t_sym})")

    if a.rx_cols < 1 or a.rx_rows < 1:
        v.append("array.rx_cols and array.rx_rows must be >= 1")
    if a.tx_cols < 1 or a.tx_rows < 1:
        v.append("array.tx_cols and array.tx_rows must be >= 1")
    if a.rx_spacing_x_m <= 0 or a.rx_spacing_y_m <= 0:
        v.append("array element spacings must be > 0")

    if w.structure not in _STRUCTURES:
        v.append(f"waveform.structure must be one of {_STRUCTURES}, got {w.structure!r}")
    if w.guard_subcarriers < 0:
        v.append("waveform.guard_subcarriers must be >= 0")
    if w.tone_subcarrier_index is not None and not (0 <= w.tone_subcarrier_index < r.num_subcarriers):
        v.append("waveform.tone_subcarrier_index out of subcarrier range")
    if w.duty_ratio is not None and not _close(w.duty_ratio, 1.0 / r.symbols_per_pri):
        v.append(f"waveform.duty_ratio={w.duty_ratio} incompatible with "
                 f"symbols_per_pri={r.symbols_per_pri} (expected {1.0 / r.symbols_per_pri})")

    if w.structure in ("lshape", "comb"):
        idx = tuple(w.chirp_pri_indices)
        slots = a.slots_per_chirp
        if len(idx) < 1:
            v.append("waveform.chirp_pri_indices must contain at least one index")
        else:
            if w.structure == "lshape" and len(idx) != 1:
                v.append("lshape structure requires exactly one chirp index")
            if any(i != int(i) for i in idx):
                v.append("waveform.chirp_pri_indices must be integers")
            if idx and min(idx) < 1:
                v.append("chirp index 0 is forbidden (no preceding tone PRI to "
                         "interpolate from); use index >= 1")
            if any(j <= i for i, j in zip(idx, idx[1:])):
                v.append("waveform.chirp_pri_indices must be strictly increasing")
            expanded = [i + s for i in idx for s in range(slots)]
            if expanded and max(expanded) >= num_pri:
                v.append(f"chirp PRI slots {expanded} exceed num_pri={num_pri}")
            if len(set(expanded)) != len(expanded):
                v.append(f"VA expansion of chirp indices {idx} into {slots} slots "
                         "each produces overlapping PRIs")
            if 10 * len(idx) >= num_pri:
                v.append(f"power allocation requires 10*W < M (W={len(idx)}, M={num_pri})")
    if w.structure == "fa" and a.va_enabled:
        v.append("FA structure combined with virtual aperture is undefined")

    for k, t in enumerate(config.targets):
        if t.range_m <= 0:
            v.append(f"targets[{k}].range_m must be > 0")
        if t.rcs_m2 <= 0:
            v.append(f"targets[{k}].rcs_m2 must be > 0")
        s2 = math.sin(t.psi_x_rad) ** 2 + math.sin(t.psi_y_rad) ** 2
        if s2 > 1.0 + 1e-12:
            v.append(f"targets[{k}]: sin^2(psi_x) + sin^2(psi_y) = {s2:.6f} > 1 "
                     "(direction vector would be complex)")

    cl = config.clutter
    if cl.enabled:
        if cl.station_height_m <= 0:
            v.append("clutter.station_height_m must be > 0 (grazing-angle model)")
        if cl.cell_m <= 0 or cl.area_x_m <= 0 or cl.area_y_m <= 0:
            v.append("clutter area and cell size must be > 0")
        if cl.area_standoff_m < 0:
            v.append("clutter.area_standoff_m must be >= 0")

    rec = config.receiver
    if rec.butterworth_order < 1:
        v.append("receiver.butterworth_order must be >= 1")
    if rec.tone_noise_bandwidth not in ("pri", "symbol"):
        v.append("receiver.tone_noise_bandwidth must be 'pri' or 'symbol'")

    if v:
        raise SceneValidationError(v)

    return ValidatedScene(
        radio=r, array=a, waveform=w, clutter=cl, receiver=rec,
        targets=tuple(config.targets), seed=config.seed,
        bandwidth_hz=bandwidth, symbol_duration_s=t_sym,
        wavelength_m=r.wavelength_m, num_pri=num_pri,
    )
