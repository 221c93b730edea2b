"""FMCW baseband echo synthesis under TDM-MIMO scheduling.

Each scatterer contributes, per virtual channel ``(m, n)``, chirp ``a`` and
fast-time sample ``i``::

    amp * exp(-j*2*pi*R/lam) * exp(-j*2*pi*kr*(R/c)*t_i)

where ``R`` is the TX->scatterer->RX path length at the start of that chirp
and ``amp = sqrt(rcs) / (R/2)**2``. Transmitter ``m`` fires global chirp
``a*n_tx + m``, so channels of later transmitters see the scene slightly
later; that offset is simulated, not compensated.

Radial velocity is positive for a closing target (range decreasing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from mmpoint.array import VirtualArray
from mmpoint.errors import DomainError, SchemaError
from mmpoint.scene import Scatterer

C = 299_792_458.0


@dataclass(frozen=True)
class RadarParams:
    fc: float = 77e9
    kr: float = 40e12
    tp: float = 6.4e-6
    fs: float = 40e6
    n_samples: int = 256
    n_chirps: int = 64
    ta: float = 64 * 12 * 6.4e-6  # n_chirps * per-TX repetition interval
    residual_video_phase: bool = False

    def __post_init__(self):
        for name in ("fc", "kr", "tp", "fs", "n_samples", "n_chirps", "ta"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be > 0, got {value}")
        if self.n_samples != round(self.fs * self.tp):
            raise DomainError(f"n_samples={self.n_samples} but round(fs*tp)={round(self.fs * self.tp)}")

    @property
    def wavelength(self) -> float:
        return C / self.fc

    @property
    def repetition_interval(self) -> float:
        """Time between consecutive chirps of the same transmitter."""
        return self.ta / self.n_chirps

    def chirp_slot(self, n_tx: int) -> float:
        return self.repetition_interval / n_tx

    @property
    def range_bin(self) -> float:
        return C * self.fs / (2.0 * self.kr * self.n_samples)

    @property
    def velocity_bin(self) -> float:
        return self.wavelength / (2.0 * self.ta)

    @property
    def max_beat(self) -> float:
        # Complex sampling: beat tones are unambiguous up to fs.
        return self.fs

    @property
    def unambiguous_range(self) -> float:
        return self.max_beat * C / (2.0 * self.kr)

    @property
    def unambiguous_velocity(self) -> float:
        return self.wavelength / (4.0 * self.repetition_interval)

    @classmethod
    def from_dict(cls, doc: dict) -> "RadarParams":
        known = set(cls.__dataclass_fields__)
        values = {}
        for key, value in doc.items():
            if key not in known:
                raise SchemaError("unknown key", f"radar.{key}")
            kind = {"n_samples": int, "n_chirps": int, "residual_video_phase": bool}.get(key, float)
            try:
                # YAML 1.1 reads exponents without a sign (77e9) as strings.
                values[key] = value if kind is bool else kind(float(value))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"expected a number, got {value!r}", f"radar.{key}") from exc
        return cls(**values)


@dataclass(frozen=True, eq=False)
class EchoCube:
    samples: np.ndarray  # [virtual channel, chirp, fast-time sample]
    params: RadarParams
    array: VirtualArray
    frame_index: int = 0
    noise_seed: int | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.samples.shape


def doppler_frequency(v_radial: float, wavelength: float) -> float:
    """Doppler shift ``2 v / lambda`` in Hz (positive for a closing target)."""
    if not wavelength > 0:
        raise DomainError("wavelength must be > 0")
    return 2.0 * v_radial / wavelength


def _channel_paths(array: VirtualArray, wavelength: float):
    """TX and RX positions in metres plus the TX/RX index of every channel.

    Without a physical layout each virtual element acts as a co-located
    TX/RX pair, i.e. the phase-centre approximation.
    """
    half = wavelength / 2.0

    def to3(p: np.ndarray) -> np.ndarray:
        return np.column_stack([p[:, 0] * half, np.zeros(len(p)), p[:, 1] * half])

    n = len(array)
    if array.layout is not None:
        return to3(array.layout.tx), to3(array.layout.rx), np.arange(n) // array.n_rx, np.arange(n) % array.n_rx
    pos = to3(array.elements)
    return pos, pos, np.arange(n), np.arange(n)


def _tones(carrier: np.ndarray, step: np.ndarray, n: int) -> np.ndarray:
    """``carrier * exp(step * i)`` for ``i = 0..n-1`` along a new last axis.

    Splitting ``i = b*k + r`` turns the exponential into an outer product
    of two short tables, which is much cheaper than ``n`` complex exps.
    """
    b = max(1, math.isqrt(n))
    k = -(-n // b)
    coarse = carrier[..., None] * np.exp(np.multiply.outer(step, b * np.arange(k)))
    fine = np.exp(np.multiply.outer(step, np.arange(b)))
    out = coarse[..., :, None] * fine[..., None, :]
    return out.reshape(*carrier.shape, k * b)[..., :n]


def synthesize_echo(
    scene_states: Sequence[Scatterer],
    params: RadarParams,
    array: VirtualArray,
    noise_power: float = 0.0,
    seed: int = 0,
    frame_index: int = 0,
) -> EchoCube:
    if noise_power < 0:
        raise DomainError("noise_power must be >= 0")
    n_ch, n_chirps, n_samples = len(array), params.n_chirps, params.n_samples
    n_tx = array.n_tx
    slot = params.chirp_slot(n_tx)
    if slot < params.tp:
        raise DomainError(f"{n_tx} TDM slots of {params.tp} s do not fit the repetition interval")
    lam = params.wavelength
    tx, rx, ch_tx, ch_rx = _channel_paths(array, lam)
    tdm_tx = np.arange(n_ch) // array.n_rx  # firing slot of each channel's transmitter

    # chirp start time for [channel, chirp]
    t_chirp = (np.arange(n_chirps)[None, :] * n_tx + tdm_tx[:, None]) * slot

    samples = np.zeros((n_ch, n_chirps, n_samples), dtype=np.complex128)
    for q, s in enumerate(scene_states):
        p0 = np.asarray(s.position)
        if not np.linalg.norm(p0) > 0:
            raise DomainError(f"scatterer {q} is at range 0")
        p = p0 + np.multiply.outer(t_chirp, np.asarray(s.velocity))  # [ch, chirp, 3]
        path = np.linalg.norm(p - tx[ch_tx][:, None, :], axis=-1) + np.linalg.norm(p - rx[ch_rx][:, None, :], axis=-1)
        beat = params.kr * path / C
        if beat.max() >= params.max_beat:
            raise DomainError(
                f"scatterer {q} beat frequency {beat.max():.4g} Hz exceeds the {params.max_beat:.4g} Hz sampling limit"
            )
        amp = math.sqrt(s.rcs) / (path / 2.0) ** 2
        phase = -2.0 * np.pi * path / lam
        if params.residual_video_phase:
            phase = phase + np.pi * params.kr * (path / C) ** 2
        samples += _tones(amp * np.exp(1j * phase), -2j * np.pi * beat / params.fs, n_samples)

    if noise_power > 0:
        scale = math.sqrt(noise_power / 2.0)
        for ch in range(n_ch):
            rng = np.random.default_rng([seed, frame_index, ch])
            samples[ch] += scale * (
                rng.standard_normal((n_chirps, n_samples)) + 1j * rng.standard_normal((n_chirps, n_samples))
            )
    return EchoCube(samples, params, array, frame_index, seed if noise_power > 0 else None)


# ------------------------------------------------------------------ debug dump

_MAGIC = "MMPOINT-ECHO"


def write_cube(path: str | Path, samples: np.ndarray) -> None:
    """Little-endian float32 re/im interleaved after a one-line text header."""
    samples = np.asarray(samples)
    header = f"{_MAGIC} {' '.join(str(d) for d in samples.shape)}\n".encode("ascii")
    body = np.empty(samples.shape + (2,), dtype="<f4")
    body[..., 0] = samples.real
    body[..., 1] = samples.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_cube(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != _MAGIC:
            raise SchemaError("not an echo cube dump", str(path))
        shape = tuple(int(d) for d in header[1:])
        body = np.frombuffer(fh.read(), dtype="<f4").reshape(shape + (2,))
    return body[..., 0] + 1j * body[..., 1]
