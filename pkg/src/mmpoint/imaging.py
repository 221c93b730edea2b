"""Range-Doppler and range-azimuth maps, plus polar/Cartesian resampling.

Conventions
-----------
The dechirped tone of a scatterer is ``exp(-j*2*pi*f_b*t)``, so the range
transform uses the positive-exponent kernel (``n * ifft``) to put range
``r`` at bin ``f_b * n / fs`` with ``f_b = 2*kr*r/c``. Slow time uses the
ordinary FFT, which maps a closing target to positive Doppler. Both
transforms are unnormalised, so with a rectangular window
``sum|RDM|^2 == n_samples * n_chirps * sum|cube|^2`` per channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import get_window

from mmpoint.array import VirtualArray, axis_lattice
from mmpoint.echo import C, EchoCube, RadarParams
from mmpoint.errors import DomainError

WINDOWS = ("rect", "hann")


def _window(kind: str, n: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(n)
    if kind == "hann":
        return get_window("hann", n)
    raise DomainError(f"unknown window {kind!r}; expected one of {WINDOWS}")


def range_axis(params: RadarParams) -> np.ndarray:
    return np.arange(params.n_samples) * params.range_bin


def velocity_axis(params: RadarParams) -> np.ndarray:
    m = params.n_chirps
    return (np.arange(m) - m // 2) * params.velocity_bin


def range_spectrum(samples: np.ndarray, window: str = "hann") -> np.ndarray:
    """Fast-time transform along the last axis."""
    n = samples.shape[-1]
    return np.fft.ifft(samples * _window(window, n), axis=-1) * n


@dataclass(frozen=True, eq=False)
class RDMap:
    data: np.ndarray  # complex [channel, range bin, Doppler bin]
    range_axis: np.ndarray
    velocity_axis: np.ndarray
    window: str = "hann"

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)

    @property
    def zero_doppler(self) -> int:
        return len(self.velocity_axis) // 2

    def power(self) -> np.ndarray:
        """Noncoherent sum of squared magnitudes over channels."""
        return np.einsum("crd,crd->rd", self.data, self.data.conj()).real


def compute_rdm(cube: EchoCube, window: str = "hann") -> RDMap:
    p = cube.params
    rs = range_spectrum(cube.samples, window)  # [ch, chirp, range]
    rs = rs * _window(window, p.n_chirps)[None, :, None]
    rd = np.fft.fftshift(np.fft.fft(rs, axis=1), axes=1)
    return RDMap(np.ascontiguousarray(rd.transpose(0, 2, 1)), range_axis(p), velocity_axis(p), window)


# ------------------------------------------------------------------ RAM


@dataclass(frozen=True, eq=False)
class CartesianMap:
    values: np.ndarray  # [y, x]
    x_axis: np.ndarray
    y_axis: np.ndarray
    pixel_pitch: float


@dataclass(frozen=True, eq=False)
class RAMap:
    values: np.ndarray  # [range, azimuth], magnitude
    range_axis: np.ndarray
    azimuth_axis: np.ndarray  # radians, increasing
    cartesian: CartesianMap | None = None


def azimuth_lattice_spectra(spectra: np.ndarray, array: VirtualArray) -> tuple[np.ndarray, float]:
    """Sum channels that share an azimuth position; returns ([range, lattice], pitch).

    Summing over elevation steers the map to zero elevation.
    """
    lat = axis_lattice(array.elements[:, 0], "azimuth")
    grid = np.zeros((spectra.shape[1], lat.size), dtype=complex)
    np.add.at(grid.T, lat.index, spectra)
    return grid, lat.pitch


def compute_ram(
    cube: EchoCube,
    array: VirtualArray | None = None,
    mode: str = "static_scene",
    *,
    chirp_index: int = 0,
    az_bins: int = 256,
    max_angle_deg: float = 60.0,
    window: str = "hann",
    pixel_pitch: float | None = 0.25,
) -> RAMap:
    """Range-azimuth magnitude map via an FFT across the azimuth lattice.

    ``static_scene`` uses the range spectrum of a single chirp;
    ``zero_doppler_slice`` takes the zero-Doppler column of the RDM so that
    moving content is excluded. Azimuth bins are uniform in ``sin(theta)``
    and restricted to ``|theta| <= max_angle_deg``.
    """
    array = array if array is not None else cube.array
    if mode == "static_scene":
        if not 0 <= chirp_index < cube.params.n_chirps:
            raise DomainError(f"chirp_index {chirp_index} out of range")
        spectra = range_spectrum(cube.samples[:, chirp_index, :], window)
        r_axis = range_axis(cube.params)
    elif mode == "zero_doppler_slice":
        rdm = compute_rdm(cube, window)
        spectra = rdm.data[:, :, rdm.zero_doppler]
        r_axis = rdm.range_axis
    else:
        raise DomainError(f"unknown RAM mode {mode!r}")

    grid, pitch = azimuth_lattice_spectra(spectra, array)
    n_fft = max(az_bins, grid.shape[1])
    spec = np.fft.fftshift(np.fft.fft(grid, n=n_fft, axis=1), axes=1)
    u = (np.arange(n_fft) - n_fft // 2) / (n_fft * pitch)
    keep = np.abs(u) <= np.sin(np.radians(max_angle_deg))
    theta = np.arcsin(u[keep])
    values = np.abs(spec[:, keep])
    cart = polar_to_cartesian(values, r_axis, theta, pixel_pitch) if pixel_pitch else None
    return RAMap(values, r_axis, theta, cart)


def polar_to_cartesian(values: np.ndarray, r_axis, theta_axis, pixel_pitch: float) -> CartesianMap:
    """Bilinear resampling of ``values[r, theta]`` onto a square grid.

    ``x = r*sin(theta)``, ``y = r*cos(theta)``; cells whose centre falls
    outside the polar domain are zero.
    """
    if not pixel_pitch > 0:
        raise DomainError("pixel_pitch must be > 0")
    r_axis = np.asarray(r_axis, dtype=float)
    theta_axis = np.asarray(theta_axis, dtype=float)
    r_max = r_axis[-1]
    x_half = r_max * np.sin(np.max(np.abs(theta_axis)))
    n_x = int(np.ceil(x_half / pixel_pitch))
    x_axis = np.arange(-n_x, n_x + 1) * pixel_pitch
    y_axis = np.arange(int(np.ceil(r_max / pixel_pitch)) + 1) * pixel_pitch
    xx, yy = np.meshgrid(x_axis, y_axis)
    interp = RegularGridInterpolator((r_axis, theta_axis), values, bounds_error=False, fill_value=0.0)
    out = interp(np.stack([np.hypot(xx, yy), np.arctan2(xx, yy)], axis=-1))
    return CartesianMap(out, x_axis, y_axis, float(pixel_pitch))


def cartesian_to_polar(values: np.ndarray, x_axis, y_axis, r_bins, theta_bins) -> np.ndarray:
    """Bilinear resampling of ``values[y, x]`` onto ``(r_bins, theta_bins)``."""
    interp = RegularGridInterpolator(
        (np.asarray(y_axis, dtype=float), np.asarray(x_axis, dtype=float)), values, bounds_error=False, fill_value=0.0
    )
    rr, tt = np.meshgrid(np.asarray(r_bins, dtype=float), np.asarray(theta_bins, dtype=float), indexing="ij")
    return interp(np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1))


def beat_frequency(r: float, params: RadarParams) -> float:
    """Beat frequency of a monostatic scatterer at one-way range ``r``."""
    return 2.0 * params.kr * r / C
