"""Complex radar cubes, coordinate grids, spectrogram projections and the
``.mmwc`` binary format.

A cube is indexed ``(frame, range, doppler, antenna)`` and stored as
complex64. Files are little-endian::

    "MMWC" | u32 version=1 | u32 T | u32 R | u32 D | u32 A | T*R*D*A x (f32 re, f32 im)
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field

import numpy as np

CUBE_MAGIC = b"MMWC"
CUBE_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
# element-count ceiling: 2**31 complex values (16 GiB payload)
MAX_ELEMENTS = 2**31

DEFAULT_ANGLE_BINS = 32


class FormatError(ValueError):
    """Base class for unreadable binary artifacts (cubes, params, weights)."""


CubeFormatError = FormatError


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class DimOverflowError(FormatError):
    pass


class LengthMismatchError(FormatError):
    pass


def _check_dims(dims) -> tuple[int, int, int, int]:
    if len(dims) != 4:
        raise ValueError(f"cube needs 4 dims (T, R, D, A), got {dims!r}")
    t, r, d, a = (int(x) for x in dims)
    if t < 1 or r < 2 or d < 2 or a < 1:
        raise ValueError(f"invalid cube dims {(t, r, d, a)}: need T>=1, R>=2, D>=2, A>=1")
    return t, r, d, a


@dataclass(frozen=True, eq=False)
class ComplexCube:
    """Immutable 4-D complex radar tensor ``(T, R, D, A)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.complex64, copy=True)
        if arr.ndim != 4:
            raise ValueError(f"cube data must be 4-D, got shape {arr.shape}")
        _check_dims(arr.shape)
        if not np.all(np.isfinite(arr.view(np.float32))):
            raise ValueError("cube contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(int(x) for x in self.data.shape)

    @property
    def n_elements(self) -> int:
        return int(self.data.size)

    def __eq__(self, other):
        if not isinstance(other, ComplexCube):
            return NotImplemented
        # bitwise comparison of the stored float32 pairs
        return self.dims == other.dims and self.data.tobytes() == other.data.tobytes()

    def __repr__(self):
        return f"ComplexCube(dims={self.dims})"

    @classmethod
    def zeros(cls, dims) -> "ComplexCube":
        return cls(np.zeros(_check_dims(dims), dtype=np.complex64))


def cube_write(cube: ComplexCube, path) -> None:
    t, r, d, a = cube.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CUBE_MAGIC, CUBE_VERSION, t, r, d, a))
        fh.write(np.ascontiguousarray(cube.data, dtype="<c8").tobytes())


def cube_read(path) -> ComplexCube:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != CUBE_MAGIC:
        raise BadMagicError(f"{os.fspath(path)}: bad magic {raw[:4]!r}, expected {CUBE_MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{os.fspath(path)}: header truncated")
    _, version, t, r, d, a = _HEADER.unpack_from(raw)
    if version != CUBE_VERSION:
        raise VersionMismatchError(f"{os.fspath(path)}: version {version}, expected {CUBE_VERSION}")
    n = t * r * d * a
    if n > MAX_ELEMENTS:
        raise DimOverflowError(f"{os.fspath(path)}: dims {(t, r, d, a)} exceed {MAX_ELEMENTS} elements")
    try:
        _check_dims((t, r, d, a))
    except ValueError as exc:
        raise CubeFormatError(f"{os.fspath(path)}: {exc}") from None
    payload = raw[_HEADER.size:]
    if len(payload) < 8 * n:
        raise TruncatedPayloadError(
            f"{os.fspath(path)}: payload has {len(payload)} bytes, header declares {8 * n}"
        )
    if len(payload) > 8 * n:
        raise CubeFormatError(f"{os.fspath(path)}: {len(payload) - 8 * n} trailing bytes")
    data = np.frombuffer(payload, dtype="<c8").reshape(t, r, d, a)
    return ComplexCube(data)


def axis_coords(n: int) -> np.ndarray:
    """Normalized coordinates ``i / (n - 1)`` of an ``n``-bin axis (``[0.]`` if n == 1)."""
    if n < 1:
        raise ValueError("axis needs at least one bin")
    if n == 1:
        return np.zeros(1)
    return np.arange(n, dtype=np.float64) / (n - 1)


@dataclass(frozen=True)
class GridSpec:
    """Per-axis normalized coordinates for (r, d, a) plus the frame list."""

    t: np.ndarray
    r: np.ndarray
    d: np.ndarray
    a: np.ndarray
    # bin-unit denominators used to map coordinates back to bins
    spans: tuple[int, int, int] = field(default=(1, 1, 1))

    def __post_init__(self):
        for name in ("r", "d", "a"):
            c = np.asarray(getattr(self, name), dtype=np.float64)
            if c.ndim != 1 or c.size == 0:
                raise ValueError(f"axis {name} must be a non-empty 1-D list")
            if c.size > 1 and not np.all(np.diff(c) > 0):
                raise ValueError(f"axis {name} must be strictly increasing")
            object.__setattr__(self, name, c)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.int64))

    @classmethod
    def from_dims(cls, dims) -> "GridSpec":
        t, r, d, a = _check_dims(dims)
        return cls(
            t=np.arange(t),
            r=axis_coords(r),
            d=axis_coords(d),
            a=axis_coords(a),
            spans=(max(r - 1, 1), max(d - 1, 1), max(a - 1, 1)),
        )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.t.size, self.r.size, self.d.size, self.a.size)

    def bins(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Map the spatial coordinates back to (possibly fractional) bin units."""
        return tuple(c * s for c, s in zip((self.r, self.d, self.a), self.spans))

    def points(self) -> np.ndarray:
        """All (r, d, a) coordinate triples, r-major then d, a; shape ``(R*D*A, 3)``."""
        rr, dd, aa = np.meshgrid(self.r, self.d, self.a, indexing="ij")
        return np.stack([rr.ravel(), dd.ravel(), aa.ravel()], axis=1)


class PlaneKind(str, enum.Enum):
    RANGE_DOPPLER = "rd"
    RANGE_AZIMUTH = "ra"
    RANGE_ELEVATION = "re"


@dataclass(frozen=True)
class SpectrogramPlane:
    kind: PlaneKind
    magnitude: np.ndarray
    axis_labels: tuple[str, str]

    def __post_init__(self):
        if np.any(self.magnitude < 0):
            raise ValueError("spectrogram magnitudes must be >= 0")


def antenna_split(n_antennas: int, config=None) -> tuple[int, int]:
    """(azimuth, elevation) sub-array sizes; without a config every channel is azimuth."""
    if config is None:
        return n_antennas, 0
    n_az, n_el = int(config.n_azimuth), int(config.n_elevation)
    if n_az + n_el != n_antennas:
        raise ValueError(
            f"antenna layout {n_az} az + {n_el} el does not match cube antenna axis {n_antennas}"
        )
    return n_az, n_el


def angle_spectrum(x: np.ndarray, n_bins: int = DEFAULT_ANGLE_BINS) -> np.ndarray:
    """Zero-padded, fftshifted DFT across the last axis (array elements).

    Bin ``k`` corresponds to ``sin(angle) = 2k/n_bins - 1``.
    """
    if x.shape[-1] > n_bins:
        raise ValueError(f"{x.shape[-1]} elements exceed {n_bins} angle bins")
    return np.fft.fftshift(np.fft.fft(x, n=n_bins, axis=-1), axes=-1)


def project_spectrogram(
    cube: ComplexCube,
    plane: PlaneKind | str,
    frame: int,
    config=None,
    angle_bins: int = DEFAULT_ANGLE_BINS,
) -> SpectrogramPlane:
    plane = PlaneKind(plane)
    t_count, _, _, n_ant = cube.dims
    if not 0 <= frame < t_count:
        raise IndexError(f"frame {frame} out of range for {t_count} frames")
    x = cube.data[frame].astype(np.complex128)
    if plane is PlaneKind.RANGE_DOPPLER:
        return SpectrogramPlane(plane, np.abs(x).mean(axis=-1), ("range", "doppler"))

    n_az, n_el = antenna_split(n_ant, config)
    if plane is PlaneKind.RANGE_AZIMUTH:
        if n_az < 1:
            raise ValueError("range-azimuth plane needs an azimuth sub-array")
        sub, label = x[..., :n_az], "azimuth"
    else:
        if n_el < 1:
            raise ValueError("range-elevation plane needs an elevation sub-array")
        sub, label = x[..., n_az:n_az + n_el], "elevation"
    mag = np.abs(angle_spectrum(sub, angle_bins)).max(axis=1)
    return SpectrogramPlane(plane, mag, ("range", label))


def write_pgm(plane: SpectrogramPlane, path) -> None:
    """8-bit binary PGM, magnitudes min-max normalized per image."""
    m = plane.magnitude
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        img = np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.zeros(m.shape, dtype=np.uint8)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_csv(plane: SpectrogramPlane, path) -> None:
    np.savetxt(path, plane.magnitude, fmt="%.9g", delimiter=",")
