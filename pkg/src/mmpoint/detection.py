"""CA-CFAR detection on range-Doppler maps, angle estimation and point clouds."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from mmpoint.array import VirtualArray, array_phase, axis_lattice
from mmpoint.echo import EchoCube, RadarParams
from mmpoint.errors import DomainError, SchemaError
from mmpoint.imaging import RDMap, compute_rdm

# Range edges are zero padded, Doppler wraps around.
_MODES = ("constant", "wrap")


@dataclass(frozen=True)
class RadarPoint:
    range: float
    azimuth: float
    elevation: float
    v_radial: float
    intensity: float
    x: float
    y: float
    z: float
    frame_index: int = 0

    @classmethod
    def from_polar(cls, r, azimuth, elevation, v_radial, intensity, frame_index=0) -> "RadarPoint":
        r, az, el = float(r), float(azimuth), float(elevation)
        if not r > 0:
            raise DomainError(f"range must be > 0, got {r}")
        ce = math.cos(el)
        return cls(r, az, el, float(v_radial), float(intensity),
                   r * ce * math.sin(az), r * ce * math.cos(az), r * math.sin(el), int(frame_index))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: tuple[RadarPoint, ...]
    frame_index: int = 0
    params: RadarParams | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if any(p.frame_index != self.frame_index for p in self.points):
            raise DomainError("all points must share the cloud's frame_index")

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[RadarPoint]:
        return iter(self.points)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    def xyz(self) -> np.ndarray:
        return np.array([(p.x, p.y, p.z) for p in self.points], dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class Detection:
    range_bin: int
    doppler_bin: int
    power: float

    @property
    def intensity(self) -> float:
        return math.sqrt(self.power)


def cfar_alpha(n_train, pfa: float):
    """CA-CFAR multiplier for exponentially distributed power."""
    n_train = np.asarray(n_train, dtype=float)
    return n_train * (pfa ** (-1.0 / n_train) - 1.0)


def _box_sum(a: np.ndarray, half: tuple[int, int]) -> np.ndarray:
    size = (2 * half[0] + 1, 2 * half[1] + 1)
    return ndimage.uniform_filter(a, size=size, mode=_MODES, cval=0.0) * (size[0] * size[1])


def cfar_detect(
    power: np.ndarray,
    guard: tuple[int, int] = (2, 2),
    train: tuple[int, int] = (8, 4),
    pfa: float = 1e-4,
    min_abs_power: float = 0.0,
) -> list[Detection]:
    """2-D cell-averaging CFAR with a 3x3 peak condition.

    ``power`` is indexed ``[range, Doppler]``. The training band is the
    rectangle of half-size ``guard + train`` minus the guard rectangle
    (cell under test included in the guard). Near the range edges fewer
    training cells exist and the multiplier is recomputed for the actual
    count, which keeps the false-alarm rate at ``pfa`` everywhere.
    """
    power = np.asarray(power, dtype=float)
    if power.ndim != 2:
        raise DomainError("power map must be 2-D")
    if not 0 < pfa < 1:
        raise DomainError(f"pfa must lie in (0, 1), got {pfa}")
    gr, gd = guard
    tr, td = train
    if min(gr, gd, tr, td) < 0:
        raise DomainError("guard and train sizes must be >= 0")
    outer = (gr + tr, gd + td)
    if 2 * outer[0] + 1 > power.shape[0] or 2 * outer[1] + 1 > power.shape[1]:
        raise DomainError(f"CFAR window {2 * outer[0] + 1}x{2 * outer[1] + 1} exceeds map {power.shape}")
    if (2 * outer[0] + 1) * (2 * outer[1] + 1) == (2 * gr + 1) * (2 * gd + 1):
        raise DomainError("training band is empty")

    # Normalising first keeps the decision independent of the map's scale.
    peak = power.max(initial=0.0)
    if peak <= 0:
        return []
    p = power / peak
    ones = np.ones_like(p)
    count = np.rint(_box_sum(ones, outer) - _box_sum(ones, (gr, gd)))
    total = _box_sum(p, outer) - _box_sum(p, (gr, gd))
    threshold = cfar_alpha(count, pfa) * np.maximum(total, 0.0) / count
    local_max = p >= ndimage.maximum_filter(p, size=3, mode=_MODES, cval=-np.inf)
    hits = (p > threshold) & local_max & (power > min_abs_power)
    return [Detection(int(r), int(d), float(power[r, d])) for r, d in zip(*np.nonzero(hits))]


# ---------------------------------------------------------------- angles


def _angle_grid(snapshot: np.ndarray, array: VirtualArray):
    az = axis_lattice(array.elements[:, 0], "azimuth")
    el = axis_lattice(array.elements[:, 1], "elevation")
    grid = np.zeros((el.size, az.size), dtype=complex)
    np.add.at(grid, (el.index, az.index), snapshot)
    return grid, az, el


def _sines_to_angles(u: float, w: float) -> tuple[float, float]:
    el = math.asin(max(-1.0, min(1.0, w)))
    ce = math.cos(el)
    az = math.asin(max(-1.0, min(1.0, u / ce))) if ce > 0 else 0.0
    return az, el


def _wrap(f: float) -> float:
    return (f + 0.5) % 1.0 - 0.5


def angle_spectrum(snapshot: np.ndarray, array: VirtualArray, zoom: int = 8):
    """Zero-padded 2-D FFT over the (elevation, azimuth) lattice.

    Returns ``(|spectrum|, az_lattice, el_lattice)``; bin ``(ke, ka)``
    corresponds to spatial frequencies ``ke/Me`` and ``ka/Ma`` cycles per
    lattice step.
    """
    snapshot = np.asarray(snapshot)
    if snapshot.shape != (len(array),):
        raise DomainError(f"snapshot length {snapshot.shape} != {len(array)} virtual elements")
    if zoom < 1:
        raise DomainError("zoom must be >= 1")
    grid, az, el = _angle_grid(snapshot, array)
    spec = np.fft.fft2(grid, s=(el.size * zoom, az.size * zoom))
    return np.abs(spec), az, el


def _peak_angles(spec: np.ndarray, az, el) -> tuple[float, float]:
    ke, ka = np.unravel_index(np.argmax(spec), spec.shape)
    u = _wrap(ka / spec.shape[1]) / az.pitch
    w = _wrap(ke / spec.shape[0]) / el.pitch if el.size > 1 else 0.0
    return _sines_to_angles(u, w)


def estimate_angles(snapshot: Sequence[complex], array: VirtualArray, zoom: int = 8) -> tuple[float, float]:
    """Azimuth and elevation (radians) of the strongest spectral peak.

    Angles are principal values: spatial frequencies are wrapped into
    ``[-1/2, 1/2)`` cycles per lattice step before inversion.
    """
    spec, az, el = angle_spectrum(snapshot, array, zoom)
    return _peak_angles(spec, az, el)


def extract_angle_peaks(
    snapshot: Sequence[complex],
    array: VirtualArray,
    zoom: int = 8,
    max_peaks: int = 1,
    peak_ratio: float = 0.8,
) -> list[tuple[float, float, float]]:
    """Up to ``max_peaks`` directions by successive peak subtraction.

    After each pick the least-squares fit of that direction's steering
    vector is removed from the snapshot; a further pick is accepted only
    if its fitted amplitude is at least ``peak_ratio`` times the first.
    Returns ``(azimuth, elevation, amplitude)`` tuples.
    """
    residual = np.array(snapshot, dtype=complex)
    out: list[tuple[float, float, float]] = []
    first = None
    for _ in range(max_peaks):
        az, el = estimate_angles(residual, array, zoom)
        steer = np.exp(1j * array_phase(array.elements, az, el))
        coef = np.vdot(steer, residual) / len(steer)
        amp = abs(coef)
        if first is None:
            first = amp
        elif amp < peak_ratio * first or amp == 0:
            break
        out.append((az, el, amp))
        residual = residual - coef * steer
    return out


# ------------------------------------------------------------ point cloud


@dataclass(frozen=True)
class DetectionConfig:
    guard: tuple[int, int] = (2, 2)
    train: tuple[int, int] = (8, 4)
    pfa: float = 1e-4
    min_abs_power: float = 0.0
    window: str = "hann"
    zoom: int = 8
    max_angle_peaks: int = 2
    angle_peak_ratio: float = 0.8
    tdm_compensation: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectionConfig":
        known = set(cls.__dataclass_fields__)
        for key in doc:
            if key not in known:
                raise SchemaError("unknown key", f"cfar.{key}")
        doc = dict(doc)
        for key in ("guard", "train"):
            if key in doc:
                doc[key] = tuple(int(v) for v in doc[key])
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["guard"], d["train"] = list(self.guard), list(self.train)
        return d


def compensate_tdm(snapshot: np.ndarray, array: VirtualArray, params: RadarParams, v_radial: float) -> np.ndarray:
    """Remove the Doppler phase each channel accrues from its TX firing slot."""
    slot = params.chirp_slot(array.n_tx)
    f_d = 2.0 * v_radial / params.wavelength
    tx = np.arange(len(array)) // array.n_rx
    return snapshot * np.exp(-2j * np.pi * f_d * tx * slot)


def generate_point_cloud(cube: EchoCube, config: DetectionConfig = DetectionConfig(), rdm: RDMap | None = None) -> PointCloud:
    """RDM -> channel power sum -> CA-CFAR -> per-detection angles -> points."""
    rdm = rdm if rdm is not None else compute_rdm(cube, config.window)
    power = rdm.power()
    detections = cfar_detect(power, config.guard, config.train, config.pfa, config.min_abs_power)
    points = []
    for det in detections:
        if det.range_bin == 0:
            continue  # DC bin has no defined range
        r = rdm.range_axis[det.range_bin]
        v = rdm.velocity_axis[det.doppler_bin]
        snap = rdm.data[:, det.range_bin, det.doppler_bin]
        if config.tdm_compensation:
            snap = compensate_tdm(snap, cube.array, cube.params, v)
        for az, el, _amp in extract_angle_peaks(snap, cube.array, config.zoom, config.max_angle_peaks, config.angle_peak_ratio):
            points.append(RadarPoint.from_polar(r, az, el, v, det.intensity, cube.frame_index))
    meta = {"detections": len(detections), "config": config.to_dict()}
    return PointCloud(tuple(points), cube.frame_index, cube.params, meta)
