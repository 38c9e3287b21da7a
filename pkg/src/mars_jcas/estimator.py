"""Detection stack operations: tone-branch compression and expansion, the
angle-velocity map, coarse peak extraction (STTE), MUSIC refinement,
space-time reshaping and steering, adaptive / hierarchical / matched-filter
range spectra, the FA baseline correlator, and virtual-aperture assembly.

Everything operates on immutable inputs and returns new arrays; grids are
FFT-native and physical values derive from bin x resolution.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .scene import ArrayGeometry, RadioParams, steering_from_sin, steering_ura_from_sin
from .waveform import MarsSchedule


def signed_bin(index, size: int):
    """Map raw FFT bin(s) to the signed convention (negative upper half)."""
    return ((np.asarray(index) + size // 2) % size) - size // 2


@dataclass(frozen=True)
class AngleVelocityMap:
    """Magnitudes over (sin psi_x bin, sin psi_y bin, velocity bin) with the
    metadata to map bins back to physical values."""

    values: np.ndarray          # (cols, rows, M) real magnitudes
    sin_res_x: float
    sin_res_y: float
    velocity_res_mps: float

    @property
    def shape(self):
        return self.values.shape

    def sin_x(self, bin_x: int) -> float:
        return float(signed_bin(bin_x, self.values.shape[0]) * self.sin_res_x)

    def sin_y(self, bin_y: int) -> float:
        return float(signed_bin(bin_y, self.values.shape[1]) * self.sin_res_y)

    def velocity(self, bin_v: int) -> float:
        return float(signed_bin(bin_v, self.values.shape[2]) * self.velocity_res_mps)


@dataclass(frozen=True)
class SpaceTimeSnapshot:
    """Chirp-branch data stacked into (W*L, N) with range samples as columns."""

    y_st: np.ndarray
    num_chirp: int
    num_elements: int

    @property
    def num_range_samples(self) -> int:
        return self.y_st.shape[1]

    def block(self, w: int) -> np.ndarray:
        return self.y_st[w * self.num_elements:(w + 1) * self.num_elements]


@dataclass(frozen=True)
class CoarsePeak:
    """One STTE extraction from the angle-velocity map."""

    bin_x: int
    bin_y: int
    bin_v: int
    sin_psi_x: float
    sin_psi_y: float
    velocity_mps: float
    magnitude: float


@dataclass(frozen=True)
class TargetEstimate:
    velocity_mps: float
    psi_x_rad: float
    psi_y_rad: float
    range_m: float
    amplitude: float
    velocity_bin: int
    angle_x_bin: int
    angle_y_bin: int
    range_bin: int
    refinement: str = "fft"   # fft | music
    method: str = "stap"      # stap | sthp | mf
    eps_mode: str = "em"      # zero | em | inf | value

    @property
    def sin_psi_x(self) -> float:
        return math.sin(self.psi_x_rad)

    @property
    def sin_psi_y(self) -> float:
        return math.sin(self.psi_y_rad)


def column_compress(tone_raw: np.ndarray, n: int) -> np.ndarray:
    """Sum every block of ``n`` raw columns into one (the digital equivalent
    of the analog integrate-and-hold)."""
    tone_raw = np.asarray(tone_raw)
    if tone_raw.ndim != 2 or tone_raw.shape[1] % n:
        raise ValueError(f"column_compress: column count {tone_raw.shape} "
                         f"not divisible by N={n}")
    l, cols = tone_raw.shape
    return tone_raw.reshape(l, cols // n, n).sum(axis=2)


def expand_nn_indices(y_s2: np.ndarray, num_pri: int, chirp_pris: Sequence[int]) -> np.ndarray:
    """Nearest-preceding-neighbour expansion of the compressed tone branch
    to all ``num_pri`` columns; chirp PRIs copy the latest earlier tone PRI.

    With g(m) = |{chirp PRIs < m}| the source column is m - g(m) for tone
    PRIs and m - g(m) - 1 for chirp PRIs, which requires every chirp PRI
    index to be >= 1.
    """
    chirp = np.zeros(num_pri, dtype=bool)
    chirp_pris = np.asarray(list(chirp_pris), dtype=int)
    if chirp_pris.size and chirp_pris.min() < 1:
        raise ValueError("expand_nn: chirp PRI index 0 has no preceding neighbour")
    chirp[chirp_pris] = True
    expected = num_pri - int(chirp.sum())
    if y_s2.shape[1] != expected:
        raise ValueError(f"expand_nn: got {y_s2.shape[1]} compressed columns, "
                         f"expected {expected}")
    g = np.concatenate([[0], np.cumsum(chirp)[:-1]])
    src = np.arange(num_pri) - g - chirp.astype(int)
    return y_s2[:, src]


def expand_nn(y_s2: np.ndarray, schedule: MarsSchedule) -> np.ndarray:
    return expand_nn_indices(y_s2, schedule.num_pri, schedule.chirp_slot_pris())


def va_receive_geometry(arr: ArrayGeometry) -> ArrayGeometry:
    """Geometry of the assembled virtual receive array."""
    return ArrayGeometry(rx_cols=arr.va_cols, rx_rows=arr.va_rows,
                         rx_spacing_x_m=arr.rx_spacing_x_m,
                         rx_spacing_y_m=arr.rx_spacing_y_m)


def angle_velocity_map(y_e2: np.ndarray, arr: ArrayGeometry,
                       radio: RadioParams) -> AngleVelocityMap:
    """Space-domain 2D-FFT (equivalent to the Kronecker DFT synthesis
    matrix) plus a PRI-axis FFT. ``arr`` must describe the array the rows
    actually live on (pass :func:`va_receive_geometry` for assembled data).
    """
    rows = arr.rx_rows
    cols = arr.rx_cols
    if y_e2.shape[0] != rows * cols:
        raise ValueError(f"angle_velocity_map: {y_e2.shape[0]} rows not factorable "
                         f"as {cols} x {rows}")
    m = y_e2.shape[1]
    cube = y_e2.reshape(rows, cols, m)
    spectrum = np.fft.fft(np.fft.fft2(cube, axes=(0, 1)), axis=2)
    lam = SPEED_OF_LIGHT / radio.carrier_freq_hz
    return AngleVelocityMap(
        values=np.abs(spectrum).transpose(1, 0, 2),
        sin_res_x=lam / (cols * arr.rx_spacing_x_m),
        sin_res_y=lam / (rows * arr.rx_spacing_y_m),
        velocity_res_mps=SPEED_OF_LIGHT / (2.0 * m * radio.pri_s * radio.carrier_freq_hz),
    )


def stte_peaks(avmap: AngleVelocityMap, k: int, guard: int = 1) -> list:
    """Greedy extraction of the K largest map cells outside the +-guard
    zero-velocity band, each claiming a +-1-bin exclusion neighbourhood."""
    if k < 1:
        raise ValueError("stte_peaks: k must be >= 1")
    values = avmap.values.copy()
    nx, ny, nv = values.shape
    vel_signed = np.abs(signed_bin(np.arange(nv), nv))
    values[:, :, vel_signed <= guard] = -np.inf
    peaks = []
    for _ in range(k):
        flat = int(np.argmax(values))
        bx, by, bv = np.unravel_index(flat, values.shape)
        if not np.isfinite(values[bx, by, bv]):
            raise ValueError(f"stte_peaks: only {len(peaks)} extractable maxima, "
                             f"requested {k}")
        peaks.append(CoarsePeak(
            bin_x=int(bx), bin_y=int(by), bin_v=int(bv),
            sin_psi_x=avmap.sin_x(bx), sin_psi_y=avmap.sin_y(by),
            velocity_mps=avmap.velocity(bv),
            magnitude=float(avmap.values[bx, by, bv]),
        ))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                values[(bx + dx) % nx, (by + dy) % ny,
                       [(bv - 1) % nv, bv, (bv + 1) % nv]] = -np.inf
    return peaks


def _forward_backward(r: np.ndarray) -> np.ndarray:
    j = np.eye(r.shape[0])[::-1]
    return 0.5 * (r + j @ r.conj() @ j)


def _noise_projector(r: np.ndarray, num_sources: int) -> np.ndarray:
    """Signal-subspace basis E_s; the pseudo-spectrum uses I - E_s E_s^H."""
    vals, vecs = np.linalg.eigh(r)
    tol = max(r.shape[0], 8) * np.finfo(float).eps * max(vals[-1], 0.0)
    rank = int(np.sum(vals > tol))
    if rank < num_sources + 1:
        raise ValueError(f"music_refine: covariance rank {rank} < K+1 = {num_sources + 1} "
                         "(degenerate snapshot set)")
    return vecs[:, -num_sources:]


def _music_scan(e_s: np.ndarray, candidates: np.ndarray) -> int:
    """Index of the candidate steering vector with the largest pseudo-spectrum
    1 / (a^H (I - E_s E_s^H) a)."""
    energy = np.sum(np.abs(candidates) ** 2, axis=0)
    proj = np.sum(np.abs(e_s.conj().T @ candidates) ** 2, axis=0)
    denom = np.maximum(energy - proj, np.finfo(float).tiny)
    return int(np.argmax(1.0 / denom))


def music_refine(y_e2: np.ndarray, coarse: CoarsePeak, arr: ArrayGeometry,
                 radio: RadioParams, num_sources: int = 1, factor: int = 10) -> tuple:
    """Super-resolution refinement of one coarse peak.

    Spatial MUSIC over the element dimension (columns as snapshots) scans a
    ``factor``-times-finer (sin psi_x, sin psi_y) grid within +-1 coarse bin;
    temporal MUSIC over the PRI dimension (element rows as snapshots) scans
    velocity the same way. Forward-backward averaging keeps the covariance
    usable with few effective snapshots. Returns (velocity, psi_x, psi_y).
    """
    if factor < 1:
        raise ValueError("music_refine: factor must be >= 1")
    l, m = y_e2.shape
    lam = SPEED_OF_LIGHT / radio.carrier_freq_hz

    r_sp = _forward_backward(y_e2 @ y_e2.conj().T / m)
    e_s = _noise_projector(r_sp, num_sources)
    avm_res_x = lam / (arr.rx_cols * arr.rx_spacing_x_m)
    avm_res_y = lam / (arr.rx_rows * arr.rx_spacing_y_m)
    steps = np.linspace(-1.0, 1.0, 2 * factor + 1)
    sx = np.clip(coarse.sin_psi_x + steps * avm_res_x, -1.0, 1.0)
    sy = np.clip(coarse.sin_psi_y + steps * avm_res_y, -1.0, 1.0)
    gx, gy = np.meshgrid(sx, sy, indexing="ij")
    cand = np.stack([
        steering_ura_from_sin(x, y, arr.rx_cols, arr.rx_rows,
                              arr.rx_spacing_x_m, arr.rx_spacing_y_m, lam)
        for x, y in zip(gx.ravel(), gy.ravel())
    ], axis=1)
    best = _music_scan(e_s, cand)
    sin_x = float(gx.ravel()[best])
    sin_y = float(gy.ravel()[best])

    r_t = _forward_backward(y_e2.T @ y_e2.conj() / l)
    e_st = _noise_projector(r_t, num_sources)
    vel_res = SPEED_OF_LIGHT / (2.0 * m * radio.pri_s * radio.carrier_freq_hz)
    vels = coarse.velocity_mps + steps * vel_res
    t_m = np.arange(m) * radio.pri_s
    cand_t = np.exp(2j * np.pi * (2.0 * vels[None, :] * radio.carrier_freq_hz
                                  / SPEED_OF_LIGHT) * t_m[:, None])
    vel = float(vels[_music_scan(e_st, cand_t)])
    return vel, math.asin(sin_x), math.asin(sin_y)


def reshape_space_time(chirp_branch: np.ndarray, n: int) -> SpaceTimeSnapshot:
    """Stack the W chirp symbols' (L, N) blocks vertically into (W*L, N)."""
    l, cols = chirp_branch.shape
    if cols % n:
        raise ValueError(f"reshape_space_time: {cols} columns not divisible by N={n}")
    w = cols // n
    y_st = chirp_branch.reshape(l, w, n).transpose(1, 0, 2).reshape(w * l, n)
    return SpaceTimeSnapshot(y_st=y_st, num_chirp=w, num_elements=l)


def unshape_space_time(snapshot: SpaceTimeSnapshot) -> np.ndarray:
    """Inverse of :func:`reshape_space_time`."""
    w, l = snapshot.num_chirp, snapshot.num_elements
    n = snapshot.num_range_samples
    return snapshot.y_st.reshape(w, l, n).transpose(1, 0, 2).reshape(l, w * n)


def temporal_steering(velocity_mps: float, schedule: MarsSchedule,
                      radio: RadioParams) -> np.ndarray:
    """Per-occasion Doppler phases exp(j*2*pi*(2 v f_c / c) (t_w - t_0)).

    Referenced to the first chirp occasion, so W = 1 gives exactly 1 and the
    space-time steering degenerates to the spatial vector; the dropped
    common phase never affects spectra or argmax decisions.
    """
    indices = np.array(schedule.chirp_pri_indices, dtype=float)
    t_w = (indices - indices[0]) * radio.pri_s
    fd = 2.0 * velocity_mps * radio.carrier_freq_hz / SPEED_OF_LIGHT
    return np.exp(2j * np.pi * fd * t_w)


def space_time_steering(velocity_mps: float, sin_psi_x: float, sin_psi_y: float,
                        arr: ArrayGeometry, schedule: MarsSchedule,
                        radio: RadioParams) -> np.ndarray:
    """Temporal Doppler factor Kronecker-left of the spatial URA steering.
    ``arr`` must match the data rows (virtual geometry for assembled data)."""
    lam = SPEED_OF_LIGHT / radio.carrier_freq_hz
    a_2d = steering_ura_from_sin(sin_psi_x, sin_psi_y, arr.rx_cols, arr.rx_rows,
                                 arr.rx_spacing_x_m, arr.rx_spacing_y_m, lam)
    return np.kron(temporal_steering(velocity_mps, schedule, radio), a_2d)


def interference_cov(y_st: np.ndarray) -> np.ndarray:
    """Sample covariance over range snapshots: Y Y^H / N (Hermitian)."""
    n = y_st.shape[1]
    if n < 1:
        raise ValueError("interference_cov: need at least one snapshot")
    return y_st @ y_st.conj().T / n


def epsilon_m(s_i: np.ndarray) -> float:
    """Diagonal-loading level: trace / dimension."""
    if s_i.shape[0] != s_i.shape[1]:
        raise ValueError("epsilon_m: matrix must be square")
    return float(np.trace(s_i).real) / s_i.shape[0]


def _loaded_inverse(s_i: np.ndarray, eps_mode: str, epsilon: Optional[float]):
    """(S + eps I)^-1 for the requested mode; pseudo-inverse when eps = 0."""
    dim = s_i.shape[0]
    if epsilon is not None:
        eps = float(epsilon)
    elif eps_mode == "em":
        eps = epsilon_m(s_i)
    elif eps_mode == "zero":
        eps = 0.0
    else:
        raise ValueError(f"unknown eps_mode {eps_mode!r}")
    if eps == 0.0:
        rank = np.linalg.matrix_rank(s_i, hermitian=True)
        if rank < dim:
            warnings.warn(f"interference covariance rank {rank} < {dim}; "
                          "using pseudo-inverse", RuntimeWarning, stacklevel=3)
        return np.linalg.pinv(s_i, hermitian=True)
    return np.linalg.inv(s_i + eps * np.eye(dim))


def stap_range_spectrum(y_st: np.ndarray, a_st: np.ndarray, eps_mode: str = "em",
                        *, range_res_m: float = 1.0,
                        epsilon: Optional[float] = None) -> tuple:
    """Adaptive (or, for eps_mode='inf', matched-filter) range spectrum.

    Returns (d, range_m, range_bin): the N complex distance bins, the argmax
    converted through ``range_res_m``, and the raw argmax bin.
    """
    if a_st.shape[0] != y_st.shape[0]:
        raise ValueError("stap_range_spectrum: steering length does not match rows")
    if eps_mode == "inf":
        num = np.fft.fft(a_st.conj() @ y_st)
        den = float(np.vdot(a_st, a_st).real)
    else:
        q = _loaded_inverse(interference_cov(y_st), eps_mode, epsilon)
        wa = q @ a_st
        num = np.fft.fft(wa.conj() @ y_st)
        den = float(np.vdot(a_st, wa).real)
        if abs(den) < np.finfo(float).tiny:
            warnings.warn("stap_range_spectrum: steering annihilated by the "
                          "whitener; spectrum unnormalized", RuntimeWarning)
            den = 1.0
    d = num / den
    bin_ = int(np.argmax(np.abs(d)))
    return d, bin_ * range_res_m, bin_


def sthp_range_spectrum(y_st: np.ndarray, a_t: np.ndarray, a_s: np.ndarray,
                        eps_mode: str = "em", *, range_res_m: float = 1.0,
                        epsilon: Optional[float] = None,
                        velocity_mps: Optional[float] = None) -> tuple:
    """Hierarchical processing: temporal zero-forcing of the static-clutter
    signature, then an L-dimension spatial stage.

    The time weights are the first row of pinv([a_T, 1_W]), so w a_T = 1 and
    w 1 = 0 exactly. Returns (d, range_m, range_bin).
    """
    w_dim = a_t.shape[0]
    l_dim = a_s.shape[0]
    if w_dim < 2:
        raise ValueError("sthp_range_spectrum: needs W >= 2 chirp occasions")
    if y_st.shape[0] != w_dim * l_dim:
        raise ValueError("sthp_range_spectrum: row count does not match W*L")
    corr = abs(np.vdot(a_t, np.ones(w_dim))) / (np.linalg.norm(a_t) * math.sqrt(w_dim))
    if corr > 1.0 - 1e-9:
        vel = "" if velocity_mps is None else f" (velocity {velocity_mps} m/s)"
        raise ValueError("sthp_range_spectrum: temporal steering is collinear with "
                         f"the static-clutter signature{vel}; zero-forcing undefined")
    gamma = np.linalg.pinv(np.stack([a_t, np.ones(w_dim, dtype=complex)], axis=1))
    w_t = gamma[0]
    y_s = np.tensordot(w_t, y_st.reshape(w_dim, l_dim, -1), axes=1)

    if eps_mode == "inf":
        w_s = a_s.conj() / math.sqrt(float(np.vdot(a_s, a_s).real))
    else:
        q = _loaded_inverse(y_s @ y_s.conj().T / y_s.shape[1], eps_mode, epsilon)
        qa = q @ a_s
        den = float(np.vdot(a_s, qa).real)
        if abs(den) < np.finfo(float).tiny:
            warnings.warn("sthp_range_spectrum: steering annihilated by the "
                          "whitener; spectrum unnormalized", RuntimeWarning)
            den = 1.0
        w_s = qa.conj() / math.sqrt(abs(den))
    d = np.fft.fft(w_s @ y_s)
    bin_ = int(np.argmax(np.abs(d)))
    return d, bin_ * range_res_m, bin_


@dataclass(frozen=True)
class FaMap:
    """FA nonuniform matched-filter output on the shared bin grid."""

    values: np.ndarray  # (N range bins, M velocity bins) magnitudes
    range_res_m: float
    velocity_res_mps: float

    def velocity(self, bin_v: int) -> float:
        return float(signed_bin(bin_v, self.values.shape[1]) * self.velocity_res_mps)


def fa_range_doppler_map(fa_meas: np.ndarray, schedule: MarsSchedule,
                         radio: RadioParams, range_res_m: float) -> FaMap:
    """Correlate per-symbol subcarrier measurements against delay/Doppler
    hypotheses on the main pipeline's (range bin, velocity bin) grid;
    element powers combine noncoherently."""
    sub = schedule.fa_subcarrier_indices
    if sub is None:
        raise ValueError("fa_range_doppler_map: schedule carries no FA subcarriers")
    m = fa_meas.shape[1]
    n = radio.num_subcarriers
    # Hypothesis r: conj(exp(-j 2 pi n_m r / N)); Doppler scan is a plain DFT.
    # One element at a time keeps the working set at (M, N) per pass.
    ramps = np.exp(2j * np.pi * np.outer(sub, np.arange(n)) / n)    # (M, N)
    power = np.zeros((m, n))
    for row in fa_meas:
        z = np.fft.fft(row[:, None] * ramps, axis=0)                # (M_vel, N)
        power += np.abs(z) ** 2
    vel_res = SPEED_OF_LIGHT / (2.0 * m * radio.pri_s * radio.carrier_freq_hz)
    return FaMap(values=np.sqrt(power.T), range_res_m=range_res_m,
                 velocity_res_mps=vel_res)


def fa_angle_snapshot(fa_meas: np.ndarray, schedule: MarsSchedule,
                      radio: RadioParams, range_bin: int, vel_bin: int) -> np.ndarray:
    """Per-element coherent correlation at one (range, velocity) hypothesis,
    ready for a spatial FFT."""
    sub = schedule.fa_subcarrier_indices
    m = fa_meas.shape[1]
    template = (np.exp(-2j * np.pi * sub * range_bin / radio.num_subcarriers)
                * np.exp(2j * np.pi * vel_bin * np.arange(m) / m))
    return fa_meas @ template.conj()


def va_assemble(per_slot: Sequence[np.ndarray], arr: ArrayGeometry) -> tuple:
    """Stack the per-transmit-element chirp matrices (x-fastest slot order)
    into the virtual-array snapshot whose rows follow the URA steering of
    the (tx_cols*rx_cols) x (tx_rows*rx_rows) array.

    Returns (assembled matrix, virtual receive geometry).
    """
    eta_x = arr.tx_cols if arr.va_enabled else 1
    eta_y = arr.tx_rows if arr.va_enabled else 1
    if len(per_slot) != eta_x * eta_y:
        raise ValueError(f"va_assemble: expected {eta_x * eta_y} slot matrices, "
                         f"got {len(per_slot)}")
    lx, ly = arr.rx_cols, arr.rx_rows
    stacked = np.vstack(per_slot)
    if stacked.shape[0] != eta_x * eta_y * lx * ly:
        raise ValueError("va_assemble: slot matrices do not match the receive array size")
    # Row (slot = b*eta_x + a, element = ly*Lx + lx) belongs at URA index
    # (b*Ly + ly) * (eta_x*Lx) + (a*Lx + lx).
    slots = np.arange(eta_x * eta_y)
    rx = np.arange(lx * ly)
    a_idx, b_idx = slots % eta_x, slots // eta_x
    lx_idx, ly_idx = rx % lx, rx // lx
    target = ((b_idx[:, None] * ly + ly_idx[None, :]) * (eta_x * lx)
              + a_idx[:, None] * lx + lx_idx[None, :]).ravel()
    out = np.empty_like(stacked)
    out[target] = stacked
    return out, va_receive_geometry(arr)
