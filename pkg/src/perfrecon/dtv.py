"""Reference-offset total-variation prox via reweighted least squares.

Each frame solves  min_d 0.5 ||F d - b||^2 + lam * TV(d)  where d is the
frame minus a shared reference image, F is either the identity (denoising
mode) or the masked unitary DFT (k-space mode), and TV is isotropic with
forward differences and replicate boundaries. The normal equations are
re-weighted a few times; each inner system is solved by preconditioned CG
with a zero-fill ILU(0) factorization of the penta-diagonal preconditioner
P = s*I + lam*(Q1' W Q1 + Q2' W Q2).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .sampler import fft2c, ifft2c
from .volume import ImageSeries, KSpaceSeries, SamplingMask


@dataclass(frozen=True)
class DtvConfig:
    lambda1: float = 0.001
    eps_w: float = 1e-8
    firls_outer: int = 5
    pcg_max: int = 10
    pcg_tol: float = 1e-6

    def __post_init__(self):
        if self.lambda1 <= 0:
            raise ValueError("lambda1 must be positive")
        if self.eps_w <= 0:
            raise ValueError("eps_w must be positive")
        if self.firls_outer < 1 or self.pcg_max < 1:
            raise ValueError("iteration budgets must be >= 1")


def grad_rows(d: np.ndarray) -> np.ndarray:
    """Forward difference along rows, replicate boundary (last row zero)."""
    g = np.zeros_like(d)
    g[:-1, :] = d[1:, :] - d[:-1, :]
    return g


def grad_cols(d: np.ndarray) -> np.ndarray:
    g = np.zeros_like(d)
    g[:, :-1] = d[:, 1:] - d[:, :-1]
    return g


def grad_rows_adj(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    out[0, :] = -v[0, :]
    out[1:-1, :] = v[:-2, :] - v[1:-1, :]
    out[-1, :] = v[-2, :]
    return out


def grad_cols_adj(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    out[:, 0] = -v[:, 0]
    out[:, 1:-1] = v[:, :-2] - v[:, 1:-1]
    out[:, -1] = v[:, -2]
    return out


def compute_weights(d: np.ndarray, eps_w: float) -> np.ndarray:
    """IRLS weights 1/sqrt(|grad|^2 + eps_w^2), float64."""
    gx = grad_rows(d)
    gy = grad_cols(d)
    mag2 = np.abs(gx) ** 2 + np.abs(gy) ** 2
    return 1.0 / np.sqrt(mag2.astype(np.float64) + eps_w * eps_w)


def tv_norm(d: np.ndarray) -> float:
    gx = grad_rows(d)
    gy = grad_cols(d)
    return float(np.sum(np.sqrt(np.abs(gx) ** 2 + np.abs(gy) ** 2)))


def _reg_apply(d: np.ndarray, w: np.ndarray, lam: float) -> np.ndarray:
    return lam * (grad_rows_adj(w * grad_rows(d)) + grad_cols_adj(w * grad_cols(d)))


def _fidelity_apply(d: np.ndarray, mask_frame: np.ndarray | None) -> np.ndarray:
    if mask_frame is None:
        return d
    return ifft2c(mask_frame * fft2c(d))


def precond_diagonals(w: np.ndarray, lam: float, s: float):
    """Assemble the penta-diagonal P = s*I + lam*(Q1' W Q1 + Q2' W Q2).

    Returns (diag, off_h, off_v) flattened in row-major voxel order; off_h
    couples i with i+1 (within-row), off_v couples i with i+ny.
    """
    nx, ny = w.shape
    wl = lam * w
    diag = np.full((nx, ny), float(s))
    off_h = np.zeros((nx, ny))
    off_v = np.zeros((nx, ny))
    wv = wl[:-1, :]
    diag[:-1, :] += wv
    diag[1:, :] += wv
    off_v[:-1, :] = -wv
    wh = wl[:, :-1]
    diag[:, :-1] += wh
    diag[:, 1:] += wh
    off_h[:, :-1] = -wh
    return diag.ravel(), off_h.ravel(), off_v.ravel()


@njit(cache=True, nogil=True)
def _ilu0_factor(diag, off_h, off_v, ny):
    n = diag.shape[0]
    d = np.empty(n)
    for i in range(n):
        v = diag[i]
        if i % ny > 0:
            m = off_h[i - 1]
            v -= m * m / d[i - 1]
        if i >= ny:
            m = off_v[i - ny]
            v -= m * m / d[i - ny]
        if not v > 1e-300:
            v = diag[i]
        d[i] = v
    return d


@njit(cache=True, nogil=True)
def _ilu0_solve(ud, off_h, off_v, ny, rhs, out):
    n = ud.shape[0]
    for i in range(n):
        acc = rhs[i]
        if i % ny > 0:
            acc -= (off_h[i - 1] / ud[i - 1]) * out[i - 1]
        if i >= ny:
            acc -= (off_v[i - ny] / ud[i - ny]) * out[i - ny]
        out[i] = acc
    for i in range(n - 1, -1, -1):
        acc = out[i]
        if i % ny < ny - 1:
            acc -= off_h[i] * out[i + 1]
        if i + ny < n:
            acc -= off_v[i] * out[i + ny]
        out[i] = acc / ud[i]


def make_ilu_preconditioner(w: np.ndarray, lam: float, s: float):
    """Callable applying the ILU(0) preconditioner solve for P."""
    ny = w.shape[1]
    diag, off_h, off_v = precond_diagonals(w, lam, s)
    ud = _ilu0_factor(diag, off_h, off_v, ny)

    def apply(r: np.ndarray) -> np.ndarray:
        out = np.empty(r.size, dtype=np.complex128)
        _ilu0_solve(ud, off_h, off_v, ny, r.ravel().astype(np.complex128), out)
        return out.reshape(r.shape)

    return apply


def pcg_solve(apply_s, rhs, precond, x0, tol, maxiter):
    """Preconditioned CG for a Hermitian positive system; complex data.

    Returns (solution, iterations, relative residual). Raises RuntimeError
    with the failing iteration index on breakdown.
    """
    x = x0.astype(np.complex128).copy()
    rhs = rhs.astype(np.complex128)
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    r = rhs - apply_s(x)
    relres = float(np.linalg.norm(r)) / rhs_norm
    if relres <= tol:
        return x, 0, relres
    z = precond(r)
    p = z.copy()
    rz = float(np.vdot(r, z).real)
    it = 0
    for it in range(1, maxiter + 1):
        q = apply_s(p)
        pq = float(np.vdot(p, q).real)
        if not np.isfinite(pq) or pq <= 0.0:
            raise RuntimeError(f"PCG breakdown at iteration {it}: curvature {pq}")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        relres = float(np.linalg.norm(r)) / rhs_norm
        if not np.isfinite(relres):
            raise RuntimeError(f"PCG breakdown at iteration {it}: non-finite residual")
        if relres <= tol:
            return x, it, relres
        z = precond(r)
        rz_new = float(np.vdot(r, z).real)
        if not np.isfinite(rz_new):
            raise RuntimeError(f"PCG breakdown at iteration {it}: non-finite step")
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, float(np.linalg.norm(r)) / rhs_norm


def firls_solve_frame(
    frame_data: np.ndarray,
    mask_frame: np.ndarray | None,
    reference: np.ndarray,
    cfg: DtvConfig,
    lam_tv: float | None = None,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Solve one frame and return x_hat = d_hat + reference.

    frame_data is the image-domain frame in denoising mode (mask_frame None)
    or the masked k-space frame otherwise. lam_tv defaults to 2*lambda1,
    the solver-side weight of the TV term.
    """
    if lam_tv is None:
        lam_tv = 2.0 * cfg.lambda1
    ref = reference.astype(np.complex128)
    if mask_frame is None:
        b = frame_data.astype(np.complex128) - ref
        rhs = b
        s = 1.0
        d = b.copy() if x0 is None else x0.astype(np.complex128) - ref
    else:
        mask_frame = mask_frame.astype(np.float64)
        b = frame_data.astype(np.complex128) - mask_frame * fft2c(ref)
        rhs = ifft2c(b)
        s = float(mask_frame.mean())
        d = ifft2c(frame_data.astype(np.complex128)) - ref if x0 is None else x0.astype(np.complex128) - ref

    def apply_s_op(v, w):
        return _fidelity_apply(v, mask_frame) + _reg_apply(v, w, lam_tv)

    for outer in range(cfg.firls_outer):
        w = compute_weights(d, cfg.eps_w)
        precond = make_ilu_preconditioner(w, lam_tv, s)
        d, _, _ = pcg_solve(
            lambda v: apply_s_op(v, w), rhs, precond, d, cfg.pcg_tol, cfg.pcg_max
        )
        if not np.all(np.isfinite(d)):
            raise RuntimeError(f"FIRLS produced a non-finite frame at outer pass {outer + 1}")
    return d + ref


def frame_objective(
    x_frame: np.ndarray,
    frame_data: np.ndarray,
    mask_frame: np.ndarray | None,
    reference: np.ndarray,
    lam_tv: float,
) -> float:
    """0.5 * fidelity + lam_tv * TV(x - reference), the quantity FIRLS descends."""
    d = x_frame.astype(np.complex128) - reference.astype(np.complex128)
    if mask_frame is None:
        resid = x_frame.astype(np.complex128) - frame_data.astype(np.complex128)
    else:
        resid = mask_frame * fft2c(x_frame.astype(np.complex128)) - frame_data.astype(np.complex128)
    return float(0.5 * np.vdot(resid, resid).real + lam_tv * tv_norm(d))


def prox_dtv_volume(
    data: np.ndarray,
    mask_bits: np.ndarray | None,
    reference: np.ndarray,
    cfg: DtvConfig,
    lam1_eff: float | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Array-level per-frame solve; complex128 in and out.

    data is image-domain (denoising) when mask_bits is None, otherwise
    masked k-space. The effective TV weight is 2*lam1_eff (2*lambda1 when
    lam1_eff is not given).
    """
    lam_tv = 2.0 * (cfg.lambda1 if lam1_eff is None else lam1_eff)
    t = data.shape[0]

    def solve(f):
        mf = None if mask_bits is None else mask_bits[f]
        return firls_solve_frame(data[f], mf, reference, cfg, lam_tv=lam_tv)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            frames = list(pool.map(solve, range(t)))
    else:
        frames = [solve(f) for f in range(t)]
    return np.stack(frames)


def prox_dtv_series(
    data: ImageSeries | KSpaceSeries,
    mask: SamplingMask | None,
    reference: np.ndarray,
    cfg: DtvConfig,
    lam1_eff: float | None = None,
    workers: int = 1,
) -> ImageSeries:
    """Series-level prox. ImageSeries input runs the denoising form; a
    KSpaceSeries with a mask runs the standalone k-space form."""
    if isinstance(data, KSpaceSeries):
        if mask is None:
            raise ValueError("k-space mode needs a sampling mask")
        if mask.bits.shape != data.data.shape:
            raise ValueError("mask shape does not match k-space shape")
        out = prox_dtv_volume(
            data.data.astype(np.complex128), mask.bits, reference, cfg, lam1_eff, workers
        )
    else:
        out = prox_dtv_volume(
            data.data.astype(np.complex128), None, reference, cfg, lam1_eff, workers
        )
    return ImageSeries(out.astype(np.complex64), data.dt)
