"""Retrospective k-space undersampling: masks, encoding, adjoint, noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volume import ImageSeries, KSpaceSeries, SamplingMask

GOLDEN_ANGLE_DEG = 111.246


@dataclass(frozen=True)
class NoiseSpec:
    """Complex AWGN with total variance ``variance`` (half per component)."""

    variance: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("noise variance must be >= 0")


def fft2c(x: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT over the last two axes, DC at the grid center."""
    return np.fft.fftshift(np.fft.fft2(x, axes=(-2, -1), norm="ortho"), axes=(-2, -1))


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    return np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), axes=(-2, -1), norm="ortho")


def _check_mask_dims(nx: int, ny: int, t: int, r: float) -> None:
    if nx < 8 or ny < 8:
        raise ValueError("mask dims must be at least 8x8")
    if t < 1:
        raise ValueError("mask needs at least one frame")
    if r < 1:
        raise ValueError("acceleration must be >= 1")


def _center_lines(ny: int) -> np.ndarray:
    count = max(1, round(0.04 * ny))
    start = ny // 2 - count // 2
    return np.arange(start, start + count)


def make_cartesian_vd_mask(nx: int, ny: int, t: int, r: float, seed: int) -> SamplingMask:
    """Variable-density Cartesian mask: full kx readouts on selected ky lines.

    Per frame, ceil(ny/r) distinct lines: a fully sampled center block of
    max(1, round(0.04*ny)) lines, the rest drawn without replacement from a
    Gaussian density (std ny/6) centered on DC. Each frame re-seeds with
    seed XOR frame index.
    """
    _check_mask_dims(nx, ny, t, r)
    lines_per_frame = math.ceil(ny / r)
    center = _center_lines(ny)
    if lines_per_frame < center.size:
        raise ValueError("R too high for dims")
    bits = np.zeros((t, nx, ny), dtype=np.uint8)
    for f in range(t):
        rng = np.random.default_rng(int(seed) ^ f)
        chosen = set(int(c) for c in center)
        attempts = 0
        max_attempts = 1000 * ny
        while len(chosen) < lines_per_frame and attempts < max_attempts:
            g = int(round(ny / 2 + rng.normal(0.0, ny / 6.0)))
            attempts += 1
            if 0 <= g < ny:
                chosen.add(g)
        if len(chosen) < lines_per_frame:
            # deterministic fill, nearest to DC first
            order = sorted(range(ny), key=lambda c: (abs(c - ny // 2), c))
            for c in order:
                chosen.add(c)
                if len(chosen) == lines_per_frame:
                    break
        bits[f, :, sorted(chosen)] = 1
    return SamplingMask(bits, scheme="cartesian_vd", requested_r=float(r), seed=int(seed))


def _rasterize_spokes(n: int, angles: np.ndarray) -> np.ndarray:
    """Nearest-neighbor rasterization of center-crossing spokes onto n x n."""
    frame = np.zeros((n, n), dtype=np.uint8)
    c = n // 2
    r_max = math.ceil(n * math.sqrt(2.0) / 2.0)
    radii = np.arange(-r_max, r_max + 0.5, 0.5)
    for theta in angles:
        xs = np.round(c + radii * math.cos(theta)).astype(int)
        ys = np.round(c + radii * math.sin(theta)).astype(int)
        ok = (xs >= 0) & (xs < n) & (ys >= 0) & (ys < n)
        frame[xs[ok], ys[ok]] = 1
    return frame


def _radial_spoke_count(n: int, r: float, theta0: float, golden: float) -> int:
    """Smallest-deviation spoke count for a unique-sample fraction near 1/r."""
    target = 1.0 / r
    m_max = max(2, 6 * n)

    def frac(m: int) -> float:
        angles = theta0 + np.arange(m) * golden
        return _rasterize_spokes(n, angles).sum() / (n * n)

    # fraction is nondecreasing in m, so bisect for the first m with frac >= target
    lo, hi = 1, m_max
    if frac(m_max) < target:
        return m_max
    while lo < hi:
        mid = (lo + hi) // 2
        if frac(mid) >= target:
            hi = mid
        else:
            lo = mid + 1
    if lo > 1 and abs(frac(lo - 1) - target) < abs(frac(lo) - target):
        return lo - 1
    return lo


def make_radial_mask(nx: int, ny: int, t: int, r: float, seed: int) -> SamplingMask:
    """Pseudo-radial mask: golden-angle spokes rasterized onto the grid.

    The per-frame spoke count is searched so the unique-sample fraction is
    close to 1/r; frames continue the golden-angle sequence, so patterns
    differ from frame to frame while always sampling DC.
    """
    _check_mask_dims(nx, ny, t, r)
    if nx != ny:
        raise ValueError("radial requires square grid")
    rng = np.random.default_rng(int(seed))
    theta0 = float(rng.uniform(0.0, math.pi))
    golden = math.radians(GOLDEN_ANGLE_DEG)
    m = _radial_spoke_count(nx, r, theta0, golden)
    bits = np.zeros((t, nx, ny), dtype=np.uint8)
    for f in range(t):
        angles = theta0 + (f * m + np.arange(m)) * golden
        bits[f] = _rasterize_spokes(nx, angles)
    return SamplingMask(bits, scheme="radial", requested_r=float(r), seed=int(seed))


def densify_first_frame(mask: SamplingMask, seed: int | None = None) -> SamplingMask:
    """Union frame 0 with a ~2x pattern of the same scheme (reference bootstrap).

    No-op when the mask was requested at R <= 2 or the scheme is unknown.
    """
    if mask.requested_r <= 2.0:
        return mask
    seed = mask.seed if seed is None else seed
    if mask.scheme == "cartesian_vd":
        dense = make_cartesian_vd_mask(mask.nx, mask.ny, 1, 2.0, seed)
    elif mask.scheme == "radial":
        dense = make_radial_mask(mask.nx, mask.ny, 1, 2.0, seed)
    else:
        return mask
    bits = mask.bits.copy()
    bits[0] |= dense.bits[0]
    return SamplingMask(bits, scheme=mask.scheme, requested_r=mask.requested_r, seed=mask.seed)


def forward_encode(series: ImageSeries, mask: SamplingMask, noise: NoiseSpec | None = None) -> KSpaceSeries:
    """Measure the series: unitary DFT per frame, additive noise, then mask.

    Noise is generated over the full grid from a per-frame stream keyed by
    (seed, frame index), so measurements are reproducible regardless of how
    frames are scheduled.
    """
    if mask.bits.shape != series.data.shape:
        raise ValueError(
            f"mask shape {mask.bits.shape} does not match series shape {series.data.shape}"
        )
    k = fft2c(series.data.astype(np.complex128))
    if noise is not None and noise.variance > 0:
        std = math.sqrt(noise.variance / 2.0)
        for f in range(series.t):
            rng = np.random.default_rng([int(noise.seed), f])
            k[f] += rng.normal(0.0, std, size=k[f].shape) + 1j * rng.normal(
                0.0, std, size=k[f].shape
            )
    k *= mask.bits
    return KSpaceSeries(k.astype(np.complex64), series.dt)


def adjoint(kspace: KSpaceSeries) -> ImageSeries:
    """Zero-filled adjoint reconstruction (inverse unitary DFT per frame)."""
    x = ifft2c(kspace.data.astype(np.complex128))
    return ImageSeries(x.astype(np.complex64), kspace.dt)
