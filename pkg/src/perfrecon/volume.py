"""Core data model: dynamic series, masks, parameter maps, container IO."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"PVOL0001"

DTYPE_COMPLEX64 = 1
DTYPE_FLOAT32 = 2
DTYPE_MASK_U8 = 3

_CODE_TO_NUMPY = {
    DTYPE_COMPLEX64: np.dtype("<c8"),
    DTYPE_FLOAT32: np.dtype("<f4"),
    DTYPE_MASK_U8: np.dtype("u1"),
}


@dataclass(frozen=True)
class ImageSeries:
    """Dynamic image series, frame-major complex64 array of shape (t, nx, ny).

    Treated as immutable once constructed; derive new objects instead of
    mutating ``data`` in place.
    """

    data: np.ndarray
    dt: float

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data), dtype=np.complex64)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "dt", float(self.dt))
        if d.ndim != 3 or min(d.shape) < 1:
            raise ValueError("series data must be a non-empty (t, nx, ny) array")
        if not self.dt > 0:
            raise ValueError("series dt must be positive")

    @property
    def t(self) -> int:
        return self.data.shape[0]

    @property
    def nx(self) -> int:
        return self.data.shape[1]

    @property
    def ny(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class KSpaceSeries:
    """Frequency-domain counterpart of ImageSeries; unsampled entries are zero."""

    data: np.ndarray
    dt: float

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data), dtype=np.complex64)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "dt", float(self.dt))
        if d.ndim != 3 or min(d.shape) < 1:
            raise ValueError("k-space data must be a non-empty (t, nx, ny) array")
        if not self.dt > 0:
            raise ValueError("k-space dt must be positive")

    @property
    def t(self) -> int:
        return self.data.shape[0]

    @property
    def nx(self) -> int:
        return self.data.shape[1]

    @property
    def ny(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SamplingMask:
    """Per-frame binary k-space sampling pattern, uint8 of shape (t, nx, ny).

    ``scheme``, ``requested_r`` and ``seed`` are provenance metadata; they are
    not part of the serialized container payload.
    """

    bits: np.ndarray
    scheme: str = "unknown"
    requested_r: float = 0.0
    seed: int = 0

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.bits), dtype=np.uint8)
        object.__setattr__(self, "bits", b)
        if b.ndim != 3 or min(b.shape) < 1:
            raise ValueError("mask bits must be a non-empty (t, nx, ny) array")
        if b.max(initial=0) > 1:
            raise ValueError("mask bits must be 0/1")

    @property
    def t(self) -> int:
        return self.bits.shape[0]

    @property
    def nx(self) -> int:
        return self.bits.shape[1]

    @property
    def ny(self) -> int:
        return self.bits.shape[2]

    def achieved_acceleration(self) -> float:
        ones = int(self.bits.sum())
        if ones == 0:
            raise ValueError("mask has no sampled entries")
        return self.bits.size / ones


@dataclass(frozen=True)
class ParameterMap:
    """Single 2D quantitative map (float32), non-negative by convention."""

    data: np.ndarray
    name: str = ""
    units: str = ""

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data), dtype=np.float32)
        object.__setattr__(self, "data", d)
        if d.ndim != 2 or min(d.shape) < 1:
            raise ValueError("parameter map must be a non-empty 2D array")
        if np.any(d < 0):
            raise ValueError("parameter map values must be non-negative")


@dataclass(frozen=True)
class FloatVolume:
    """Rank-3 float32 payload (e.g. a stack of calibration images)."""

    data: np.ndarray
    dt: float = 0.0

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data), dtype=np.float32)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "dt", float(self.dt))
        if d.ndim != 3 or min(d.shape) < 1:
            raise ValueError("float volume must be a non-empty rank-3 array")


@dataclass(frozen=True)
class RegionMask:
    """2D binary voxel selection, e.g. the arterial sampling region."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.bits), dtype=np.uint8)
        object.__setattr__(self, "bits", b)
        if b.ndim != 2 or min(b.shape) < 1:
            raise ValueError("region mask must be a non-empty 2D array")
        if b.max(initial=0) > 1:
            raise ValueError("region mask must be 0/1")

    def indices(self) -> np.ndarray:
        return np.argwhere(self.bits > 0)


@dataclass(frozen=True)
class TimeCurve:
    """Uniformly sampled scalar time curve."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values), dtype=np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dt", float(self.dt))
        if v.ndim != 1 or v.size < 2:
            raise ValueError("time curve needs at least two samples")
        if not self.dt > 0:
            raise ValueError("time curve dt must be positive")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.dt


def magnitude(series: ImageSeries) -> ImageSeries:
    """Magnitude series (real part carries |z|, imaginary part zero)."""
    return ImageSeries(np.abs(series.data).astype(np.complex64), series.dt)


def minmax_normalize(series: ImageSeries) -> tuple[ImageSeries, tuple[float, float]]:
    """Map magnitudes to [0, 1] with one global (min, max) pair.

    Phase is preserved. Returns the normalized series and the (min, max)
    pair needed to undo the mapping.
    """
    mag = np.abs(series.data).astype(np.float64)
    mn = float(mag.min())
    mx = float(mag.max())
    if not mx > mn:
        raise ValueError("degenerate dynamic range")
    scale = (mag - mn) / (mx - mn)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(mag > 0, series.data * (scale / np.maximum(mag, 1e-300)), 0)
    return ImageSeries(out.astype(np.complex64), series.dt), (mn, mx)


def denormalize_magnitudes(series: ImageSeries, pair: tuple[float, float]) -> ImageSeries:
    """Undo min-max normalization on magnitudes; phase is dropped."""
    mn, mx = float(pair[0]), float(pair[1])
    mag = np.abs(series.data).astype(np.float64) * (mx - mn) + mn
    return ImageSeries(mag.astype(np.complex64), series.dt)


def _payload_spec(obj):
    if isinstance(obj, (ImageSeries, KSpaceSeries)):
        return DTYPE_COMPLEX64, obj.data, obj.dt
    if isinstance(obj, SamplingMask):
        return DTYPE_MASK_U8, obj.bits, 0.0
    if isinstance(obj, RegionMask):
        return DTYPE_MASK_U8, obj.bits, 0.0
    if isinstance(obj, ParameterMap):
        return DTYPE_FLOAT32, obj.data, 0.0
    if isinstance(obj, FloatVolume):
        return DTYPE_FLOAT32, obj.data, obj.dt
    raise TypeError(f"cannot serialize object of type {type(obj).__name__}")


def save_container(path, obj) -> None:
    """Write a series / mask / map to the binary container format.

    Layout: 8-byte magic, u8 dtype code, u8 rank, rank x u32 little-endian
    dims, f64 little-endian dt (0 when not applicable), then the raw
    little-endian C-order payload.
    """
    code, arr, dt = _payload_spec(obj)
    arr = np.ascontiguousarray(arr, dtype=_CODE_TO_NUMPY[code])
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<d", float(dt))
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.tobytes(order="C"))


def load_container(path):
    """Read a container file back into the matching value object.

    Returns ImageSeries (complex64 rank 3), ParameterMap (float32 rank 2),
    FloatVolume (float32 rank 3) or SamplingMask (u8 rank 3). K-space data
    loads as ImageSeries; wrap it at the call site when the file is known
    to hold frequency-domain samples.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 2:
        raise ValueError(f"container too short: {path}")
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"container magic mismatch: expected {MAGIC!r}")
    code, rank = struct.unpack_from("<BB", blob, len(MAGIC))
    if code not in _CODE_TO_NUMPY:
        raise ValueError(f"unknown container dtype code {code}")
    if not 1 <= rank <= 4:
        raise ValueError(f"unsupported container rank {rank}")
    off = len(MAGIC) + 2
    dims = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    (dt,) = struct.unpack_from("<d", blob, off)
    off += 8
    dtype = _CODE_TO_NUMPY[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(blob) - off != expected:
        raise ValueError(
            f"container payload size mismatch: dims {dims} need {expected} bytes, "
            f"got {len(blob) - off}"
        )
    arr = np.frombuffer(blob[off:], dtype=dtype).reshape(dims).copy()
    if code == DTYPE_COMPLEX64 and rank == 3:
        return ImageSeries(arr, dt)
    if code == DTYPE_FLOAT32 and rank == 2:
        return ParameterMap(np.maximum(arr, 0.0))
    if code == DTYPE_FLOAT32 and rank == 3:
        return FloatVolume(arr, dt)
    if code == DTYPE_MASK_U8 and rank == 3:
        return SamplingMask(arr)
    if code == DTYPE_MASK_U8 and rank == 2:
        return RegionMask(arr)
    raise ValueError(f"unsupported container combination: code {code}, rank {rank}")


def write_timecurve_csv(path, curve: TimeCurve) -> None:
    with open(path, "w") as f:
        f.write("t_seconds,value\n")
        for t, v in zip(curve.times, curve.values):
            f.write(f"{t:.9g},{v:.17g}\n")


def read_timecurve_csv(path) -> TimeCurve:
    times = []
    values = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "t_seconds,value":
            raise ValueError(f"unexpected time-curve header: {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            a, b = line.split(",")
            times.append(float(a))
            values.append(float(b))
    if len(times) < 2:
        raise ValueError("time-curve file needs at least two samples")
    dt = times[1] - times[0]
    return TimeCurve(np.asarray(values), dt)


def write_region_csv(path, indices: np.ndarray) -> None:
    """Voxel index list as two-column CSV (row, col)."""
    indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    with open(path, "w") as f:
        f.write("row,col\n")
        for r, c in indices:
            f.write(f"{r},{c}\n")


def read_region_csv(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "row,col":
            raise ValueError(f"unexpected region header: {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            a, b = line.split(",")
            rows.append((int(a), int(b)))
    if not rows:
        raise ValueError("region file lists no voxels")
    return np.asarray(rows, dtype=np.int64)


def write_pgm(path, pmap: ParameterMap) -> None:
    """8-bit binary PGM preview, linear window [0, 99th percentile]."""
    data = pmap.data.astype(np.float64)
    hi = float(np.percentile(data, 99))
    if hi <= 0:
        hi = 1.0
    scaled = np.clip(data / hi, 0.0, 1.0)
    img = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes(order="C"))
