"""TDM-MIMO virtual arrays, ambiguity function maps and the radar range equation.

Positions are 2-vectors ``(azimuth offset, elevation offset)`` in units of
half a wavelength. A virtual element sits at the phase centre
``(tx + rx) / 2`` of its transmitter/receiver pair, which makes its two-way
phase for direction sines ``(u, w)`` equal to ``2*pi*(e_az*u + e_el*w)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from mmpoint.errors import AnalysisError, DomainError, SchemaError, UnsupportedLayoutError

log = logging.getLogger(__name__)

BOLTZMANN = 1.380649e-23
LATTICE_TOL = 1e-6


def _points(values, key: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise SchemaError(f"expected a list of 2-vectors, got shape {arr.shape}", key)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{key} positions must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class ArrayLayout:
    tx: np.ndarray
    rx: np.ndarray

    def __post_init__(self):
        if len(self.tx) == 0 or len(self.rx) == 0:
            raise DomainError("layout needs at least one TX and one RX")
        object.__setattr__(self, "tx", _points(self.tx, "tx"))
        object.__setattr__(self, "rx", _points(self.rx, "rx"))


@dataclass(frozen=True, eq=False)
class VirtualArray:
    """Phase centres in TX-major order: element ``i*n_rx + j`` pairs TX i with RX j."""

    elements: np.ndarray
    n_tx: int
    n_rx: int
    duplicates: tuple[tuple[int, int], ...] = field(default=())
    layout: ArrayLayout | None = None

    def __len__(self) -> int:
        return len(self.elements)

    def tx_index(self, channel: int) -> int:
        return channel // self.n_rx

    @classmethod
    def from_elements(cls, elements) -> "VirtualArray":
        """Treat ``elements`` as a single-TX array (one RX per element)."""
        elements = _points(elements, "elements")
        return cls(elements, 1, len(elements))


def build_virtual_array(layout: ArrayLayout) -> VirtualArray:
    elements = ((layout.tx[:, None, :] + layout.rx[None, :, :]) / 2.0).reshape(-1, 2)
    seen: dict[tuple[float, float], int] = {}
    duplicates = []
    for i, (a, e) in enumerate(np.round(elements, 9)):
        key = (float(a), float(e))
        if key in seen:
            duplicates.append((seen[key], i))
        else:
            seen[key] = i
    if duplicates:
        log.warning("virtual array has %d duplicated phase centres", len(duplicates))
    return VirtualArray(elements, len(layout.tx), len(layout.rx), tuple(duplicates), layout)


def load_layout(text: str) -> ArrayLayout:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"unparseable layout: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("layout document must be a mapping")
    for key in ("tx", "rx"):
        if key not in doc:
            raise SchemaError("missing required key", key)
    return ArrayLayout(_points(doc["tx"], "tx"), _points(doc["rx"], "rx"))


def layout_to_text(layout: ArrayLayout) -> str:
    return yaml.safe_dump({"tx": layout.tx.tolist(), "rx": layout.rx.tolist()}, sort_keys=False)


def default_layout() -> ArrayLayout:
    """The shipped 12 TX x 16 RX layout (192 virtual elements)."""
    text = resources.files("mmpoint.data").joinpath("default_layout.yaml").read_text()
    return load_layout(text)


# ------------------------------------------------------------------ lattice


def _float_gcd(a: float, b: float, tol: float) -> float:
    while b > tol:
        r = math.fmod(a, b)
        if r < tol or b - r < tol:
            return b
        a, b = b, r
    return a


@dataclass(frozen=True)
class AxisLattice:
    origin: float
    pitch: float
    size: int
    index: np.ndarray  # lattice index of each element


def axis_lattice(coords: np.ndarray, name: str = "azimuth", max_size: int = 4096) -> AxisLattice:
    """Map coordinates onto ``origin + pitch * k``; raise if they are not uniform."""
    coords = np.asarray(coords, dtype=float)
    values = np.unique(np.round(coords, 9))
    origin = float(values[0])
    if len(values) == 1:
        return AxisLattice(origin, 1.0, 1, np.zeros(len(coords), dtype=int))
    pitch = float(values[1] - values[0])
    for d in np.diff(values)[1:]:
        pitch = _float_gcd(float(d), pitch, LATTICE_TOL)
    k = (coords - origin) / pitch
    index = np.rint(k).astype(int)
    size = int(index.max()) + 1
    if np.max(np.abs(k - index)) * pitch > LATTICE_TOL or size > max_size:
        raise UnsupportedLayoutError(f"{name} element spacing is not uniform within {LATTICE_TOL} half-wavelengths")
    return AxisLattice(origin, pitch, size, index)


# -------------------------------------------------------------- ambiguity map


def direction_sines(az, el):
    """Direction sines ``(u, w)`` for azimuth ``az`` off boresight and elevation ``el``."""
    az, el = np.asarray(az, dtype=float), np.asarray(el, dtype=float)
    return np.cos(el) * np.sin(az), np.sin(el)


def array_phase(elements: np.ndarray, az, el) -> np.ndarray:
    """Two-way phase of every element for each direction; shape ``(..., n_elements)``."""
    u, w = direction_sines(az, el)
    return 2.0 * np.pi * (np.multiply.outer(u, elements[:, 0]) + np.multiply.outer(w, elements[:, 1]))


@dataclass(frozen=True, eq=False)
class AFM:
    values: np.ndarray  # [el, az]
    az_grid: np.ndarray
    el_grid: np.ndarray
    steer_az: float
    steer_el: float


def _check_grid(grid, name: str) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.ndim != 1 or grid.size == 0:
        raise DomainError(f"{name} must be a nonempty 1-D grid")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise DomainError(f"{name} must be strictly increasing")
    return grid


def compute_afm(array: VirtualArray, steer_az: float, steer_el: float, az_grid, el_grid) -> AFM:
    """Normalised correlation ``|a(steer)^H a(az, el)| / N`` over the grid."""
    az_grid = _check_grid(az_grid, "az_grid")
    el_grid = _check_grid(el_grid, "el_grid")
    ref = array_phase(array.elements, steer_az, steer_el)
    azs, els = np.meshgrid(az_grid, el_grid)
    # Differencing phases (rather than multiplying unit phasors) keeps the
    # steering direction at exactly 1 and the map exactly reciprocal.
    diff = array_phase(array.elements, azs, els) - ref
    values = np.abs(np.exp(1j * diff).sum(axis=-1)) / len(array)
    return AFM(np.clip(values, 0.0, 1.0), az_grid, el_grid, float(steer_az), float(steer_el))


def _half_power_width(cut: np.ndarray, grid: np.ndarray, peak: int) -> float:
    level = 1.0 / math.sqrt(2.0)

    def crossing(step: int) -> float:
        i = peak
        while cut[i] >= level:
            i += step
            if i < 0 or i >= len(cut):
                raise AnalysisError("mainlobe is clipped by the grid edge")
        j = i - step
        return grid[j] + (level - cut[j]) * (grid[i] - grid[j]) / (cut[i] - cut[j])

    return crossing(+1) - crossing(-1)


def angular_resolution(afm: AFM) -> tuple[float, float]:
    """Full -3 dB mainlobe widths (degrees) along azimuth and elevation through the peak."""
    ie, ia = np.unravel_index(np.argmax(afm.values), afm.values.shape)
    az_res = _half_power_width(afm.values[ie, :], afm.az_grid, ia)
    el_res = _half_power_width(afm.values[:, ia], afm.el_grid, ie)
    return math.degrees(az_res), math.degrees(el_res)


def resolution_cuts(
    array: VirtualArray,
    steer_az: float = 0.0,
    steer_el: float = 0.0,
    az_span: float = math.radians(10.0),
    el_span: float = math.radians(30.0),
    n: int = 4001,
) -> tuple[float, float]:
    """-3 dB widths (degrees) from two fine 1-D cuts through the steering direction.

    Equivalent to :func:`angular_resolution` on a full grid whose peak sits
    at the steering direction, at a fraction of the cost.
    """
    az = steer_az + np.linspace(-az_span, az_span, n)
    el = steer_el + np.linspace(-el_span, el_span, n)
    cut_az = compute_afm(array, steer_az, steer_el, az, [steer_el]).values[0]
    cut_el = compute_afm(array, steer_az, steer_el, [steer_az], el).values[:, 0]
    mid = n // 2
    return math.degrees(_half_power_width(cut_az, az, mid)), math.degrees(_half_power_width(cut_el, el, mid))


# ------------------------------------------------------------ range equation


@dataclass(frozen=True)
class LinkBudget:
    pt: float
    g: float
    wavelength: float
    sigma: float
    b0: float
    t0: float
    f0: float
    snr_min: float
    l: float = 1.0
    k_boltzmann: float = BOLTZMANN

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise DomainError(f"{name} must be > 0, got {value}")
        if self.l < 1:
            raise DomainError(f"system loss l must be >= 1, got {self.l}")


def max_range(budget: LinkBudget) -> float:
    """Maximum detection range in metres from the monostatic radar equation."""
    b = budget
    num = b.pt * b.g**2 * b.wavelength**2 * b.sigma
    den = (4.0 * math.pi) ** 3 * b.k_boltzmann * b.b0 * b.t0 * b.f0 * b.snr_min * b.l
    return (num / den) ** 0.25
