"""Blockwise 3D nonlocal-means filtering and its measurement-constrained prox.

Patch similarity uses the plain squared Euclidean distance over cubic
patches; patches and search windows shrink at volume boundaries (no
padding, in time or space). Filtering with block_step = 1 updates each
voxel from its own window and is exactly the direct weighted-average
definition; larger steps visit block centers on a stride lattice, update
whole patches, and average overlapping estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.ndimage import median_filter, uniform_filter

from .sampler import fft2c, ifft2c
from .volume import ImageSeries, KSpaceSeries, SamplingMask


@dataclass(frozen=True)
class NlmConfig:
    search_window: int = 7
    patch_size: int = 5
    h: float | None = None
    block_step: int = 2
    pocs_iters: int = 3
    lambda2: float = 0.25

    def __post_init__(self):
        if self.search_window % 2 == 0 or self.patch_size % 2 == 0:
            raise ValueError("window and patch edges must be odd")
        if self.patch_size >= self.search_window:
            raise ValueError("patch must be smaller than the search window")
        if self.h is not None and self.h <= 0:
            raise ValueError("h must be positive")
        if self.block_step < 1:
            raise ValueError("block_step must be >= 1")
        if self.pocs_iters < 1:
            raise ValueError("pocs_iters must be >= 1")
        if self.lambda2 <= 0:
            raise ValueError("lambda2 must be positive")


def estimate_sigma(x) -> float:
    """Noise level from median-of-absolute pseudo-residuals, magnitude domain.

    The 3x3x3 median residual keeps the estimate within ~13% of the true
    level on pure noise; a flat volume returns the 1e-6 floor.
    """
    arr = x.data if isinstance(x, ImageSeries) else np.asarray(x)
    mag = np.abs(arr).astype(np.float64)
    resid = mag - median_filter(mag, size=3, mode="nearest")
    sigma = 1.4826 * float(np.median(np.abs(resid))) * np.sqrt(6.0 / 7.0)
    return max(sigma, 1e-6)


def _resolve_h(arr: np.ndarray, cfg: NlmConfig) -> float:
    return cfg.h if cfg.h is not None else 0.2 * estimate_sigma(arr)


def _check_dims(shape, patch):
    if min(shape) < patch:
        raise ValueError(f"volume dims {shape} smaller than patch edge {patch}")


def _axis_slices(n: int, d: int):
    lo = max(0, -d)
    hi = n - max(0, d)
    return slice(lo, hi), slice(lo + d, hi + d)


def _pointwise_filter(x: np.ndarray, cfg: NlmConfig, h: float) -> np.ndarray:
    """Per-voxel weighted average over the search window (block_step = 1).

    One pass per window offset: squared differences, box-filtered to patch
    sums (constant mode, so boundary patches clip), exponential weights,
    accumulate. Out-of-volume candidates contribute zero weight.
    """
    t, nx, ny = x.shape
    wr = cfg.search_window // 2
    p = cfg.patch_size
    inv_h2 = 1.0 / (h * h)
    num = np.zeros(x.shape, dtype=np.complex128 if np.iscomplexobj(x) else np.float64)
    den = np.zeros(x.shape, dtype=np.float64)
    vol = float(p**3)
    for dt_ in range(-wr, wr + 1):
        st, std_ = _axis_slices(t, dt_)
        for dx_ in range(-wr, wr + 1):
            sx, sxd = _axis_slices(nx, dx_)
            for dy_ in range(-wr, wr + 1):
                sy, syd = _axis_slices(ny, dy_)
                diff2 = np.zeros(x.shape, dtype=np.float64)
                d = x[st, sx, sy] - x[std_, sxd, syd]
                diff2[st, sx, sy] = d.real**2 + d.imag**2 if np.iscomplexobj(d) else d**2
                dist = uniform_filter(diff2, size=p, mode="constant") * vol
                w = np.exp(-dist[st, sx, sy] * inv_h2)
                num[st, sx, sy] += w * x[std_, sxd, syd]
                den[st, sx, sy] += w
    return num / den


@njit(cache=True, nogil=True)
def _blockwise_kernel(x, h2, wr, pr, ct_list, cx_list, cy_list, acc, cnt):
    t, nx, ny = x.shape
    max_q = (2 * wr + 1) ** 3
    qt = np.empty(max_q, dtype=np.int64)
    qx = np.empty(max_q, dtype=np.int64)
    qy = np.empty(max_q, dtype=np.int64)
    qw = np.empty(max_q, dtype=np.float64)
    for ci in range(ct_list.shape[0]):
        pt = ct_list[ci]
        for cj in range(cx_list.shape[0]):
            px = cx_list[cj]
            for ck in range(cy_list.shape[0]):
                py = cy_list[ck]
                nq = 0
                for zt in range(max(0, pt - wr), min(t, pt + wr + 1)):
                    for zx in range(max(0, px - wr), min(nx, px + wr + 1)):
                        for zy in range(max(0, py - wr), min(ny, py + wr + 1)):
                            d = 0.0
                            for ot in range(-pr, pr + 1):
                                at = pt + ot
                                bt = zt + ot
                                if at < 0 or at >= t or bt < 0 or bt >= t:
                                    continue
                                for ox in range(-pr, pr + 1):
                                    ax = px + ox
                                    bx = zx + ox
                                    if ax < 0 or ax >= nx or bx < 0 or bx >= nx:
                                        continue
                                    for oy in range(-pr, pr + 1):
                                        ay = py + oy
                                        by = zy + oy
                                        if ay < 0 or ay >= ny or by < 0 or by >= ny:
                                            continue
                                        dv = x[at, ax, ay] - x[bt, bx, by]
                                        d += dv.real * dv.real + dv.imag * dv.imag
                            qt[nq] = zt
                            qx[nq] = zx
                            qy[nq] = zy
                            qw[nq] = np.exp(-d / h2)
                            nq += 1
                for ot in range(-pr, pr + 1):
                    at = pt + ot
                    if at < 0 or at >= t:
                        continue
                    for ox in range(-pr, pr + 1):
                        ax = px + ox
                        if ax < 0 or ax >= nx:
                            continue
                        for oy in range(-pr, pr + 1):
                            ay = py + oy
                            if ay < 0 or ay >= ny:
                                continue
                            num = 0.0 + 0.0j
                            den = 0.0
                            for qi in range(nq):
                                bt = qt[qi] + ot
                                bx = qx[qi] + ox
                                by = qy[qi] + oy
                                if bt < 0 or bt >= t or bx < 0 or bx >= nx or by < 0 or by >= ny:
                                    continue
                                num += qw[qi] * x[bt, bx, by]
                                den += qw[qi]
                            if den > 0.0:
                                acc[at, ax, ay] += num / den
                                cnt[at, ax, ay] += 1.0


def _block_centers(n: int, step: int) -> np.ndarray:
    c = np.arange(0, n, step, dtype=np.int64)
    if c[-1] != n - 1:
        c = np.append(c, n - 1)
    return c


def filter_volume(x: np.ndarray, cfg: NlmConfig, h: float | None = None) -> np.ndarray:
    """Array-level filter; dtype preserved."""
    x = np.asarray(x)
    _check_dims(x.shape, cfg.patch_size)
    if h is None:
        h = _resolve_h(x, cfg)
    if cfg.block_step == 1:
        out = _pointwise_filter(x.astype(np.complex128), cfg, h)
    else:
        xc = np.ascontiguousarray(x.astype(np.complex128))
        acc = np.zeros(x.shape, dtype=np.complex128)
        cnt = np.zeros(x.shape, dtype=np.float64)
        _blockwise_kernel(
            xc,
            h * h,
            cfg.search_window // 2,
            cfg.patch_size // 2,
            _block_centers(x.shape[0], cfg.block_step),
            _block_centers(x.shape[1], cfg.block_step),
            _block_centers(x.shape[2], cfg.block_step),
            acc,
            cnt,
        )
        out = np.where(cnt > 0, acc / np.maximum(cnt, 1.0), xc)
    if np.iscomplexobj(x):
        return out.astype(x.dtype)
    return out.real.astype(x.dtype)


def nlm_filter_3d(x: ImageSeries, cfg: NlmConfig) -> ImageSeries:
    return ImageSeries(filter_volume(x.data, cfg).astype(np.complex64), x.dt)


def window_weights(x: np.ndarray, center: tuple, cfg: NlmConfig, h: float | None = None):
    """Similarity weights of one voxel against its whole search window.

    Returns (coords, weights) with coords an (n, 3) int array. Inspection
    helper; the filters recompute these internally.
    """
    x = np.asarray(x).astype(np.complex128)
    _check_dims(x.shape, cfg.patch_size)
    if h is None:
        h = _resolve_h(x, cfg)
    t, nx, ny = x.shape
    wr = cfg.search_window // 2
    pr = cfg.patch_size // 2
    pt, px, py = center
    coords = []
    weights = []
    for zt in range(max(0, pt - wr), min(t, pt + wr + 1)):
        for zx in range(max(0, px - wr), min(nx, px + wr + 1)):
            for zy in range(max(0, py - wr), min(ny, py + wr + 1)):
                d = 0.0
                for ot in range(-pr, pr + 1):
                    if not (0 <= pt + ot < t and 0 <= zt + ot < t):
                        continue
                    for ox in range(-pr, pr + 1):
                        if not (0 <= px + ox < nx and 0 <= zx + ox < nx):
                            continue
                        for oy in range(-pr, pr + 1):
                            if not (0 <= py + oy < ny and 0 <= zy + oy < ny):
                                continue
                            dv = x[pt + ot, px + ox, py + oy] - x[zt + ot, zx + ox, zy + oy]
                            d += abs(dv) ** 2
                coords.append((zt, zx, zy))
                weights.append(float(np.exp(-d / (h * h))))
    return np.array(coords), np.array(weights)


def nonlocal_penalty(x: np.ndarray, cfg: NlmConfig, h: float | None = None) -> float:
    """Sum over voxel pairs in each search window of w(p,q)*|x[p]-x[q]|^2."""
    x = np.asarray(x).astype(np.complex128)
    _check_dims(x.shape, cfg.patch_size)
    if h is None:
        h = _resolve_h(x, cfg)
    t, nx, ny = x.shape
    wr = cfg.search_window // 2
    p = cfg.patch_size
    inv_h2 = 1.0 / (h * h)
    vol = float(p**3)
    total = 0.0
    for dt_ in range(-wr, wr + 1):
        st, std_ = _axis_slices(t, dt_)
        for dx_ in range(-wr, wr + 1):
            sx, sxd = _axis_slices(nx, dx_)
            for dy_ in range(-wr, wr + 1):
                sy, syd = _axis_slices(ny, dy_)
                diff2 = np.zeros(x.shape, dtype=np.float64)
                d = x[st, sx, sy] - x[std_, sxd, syd]
                diff2[st, sx, sy] = d.real**2 + d.imag**2
                dist = uniform_filter(diff2, size=p, mode="constant") * vol
                w = np.exp(-dist[st, sx, sy] * inv_h2)
                total += float(np.sum(w * diff2[st, sx, sy]))
    return total


def project_data_consistency(x: np.ndarray, y: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Replace sampled k-space entries of x by the measured values."""
    k = fft2c(x.astype(np.complex128))
    k = np.where(bits > 0, y.astype(np.complex128), k)
    return ifft2c(k)


def prox_nlm_pocs(
    y: KSpaceSeries,
    mask: SamplingMask,
    x0: ImageSeries,
    cfg: NlmConfig,
    h: float | None = None,
) -> ImageSeries:
    """Alternate data-consistency projection with relaxed filtering.

    The decay parameter is fixed from the starting estimate; similarity
    weights are recomputed from the current iterate on every pass. The
    relaxation step length is 2*lambda2.
    """
    if mask.bits.shape != y.data.shape:
        raise ValueError("mask shape does not match k-space shape")
    if x0.data.shape != y.data.shape:
        raise ValueError("starting estimate shape does not match k-space shape")
    x = x0.data.astype(np.complex128)
    if h is None:
        h = _resolve_h(x, cfg)
    alpha = 2.0 * cfg.lambda2
    for _ in range(cfg.pocs_iters):
        x_proj = project_data_consistency(x, y.data, mask.bits)
        x_f = filter_volume(x_proj, cfg, h=h)
        x = x_proj + alpha * (x_f - x_proj)
    return ImageSeries(x.astype(np.complex64), x0.dt)
