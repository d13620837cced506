"""Permeability quantification: variable-flip-angle T1 calibration, dynamic
signal inversion to contrast concentration, and linear two-parameter
leakage fitting with a plasma term and a cumulative-inflow term."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .volume import ImageSeries, ParameterMap, TimeCurve


@dataclass(frozen=True)
class VfaSeries:
    """Calibration stack: one 2D magnitude image per flip angle."""

    images: np.ndarray
    angles_deg: np.ndarray
    tr: float = 0.006

    def __post_init__(self):
        img = np.ascontiguousarray(np.asarray(self.images), dtype=np.float32)
        ang = np.ascontiguousarray(np.asarray(self.angles_deg), dtype=np.float64)
        object.__setattr__(self, "images", img)
        object.__setattr__(self, "angles_deg", ang)
        object.__setattr__(self, "tr", float(self.tr))
        if img.ndim != 3:
            raise ValueError("calibration stack must be (n_angles, nx, ny)")
        if ang.ndim != 1 or ang.size != img.shape[0]:
            raise ValueError("one flip angle per calibration image required")
        if np.unique(ang).size < 3:
            raise ValueError("at least 3 distinct flip angles required")
        if np.any(ang <= 0) or np.any(ang > 90):
            raise ValueError("flip angles must lie in (0, 90] degrees")
        if not self.tr > 0:
            raise ValueError("tr must be positive")


@dataclass(frozen=True)
class DceConfig:
    r1: float = 4.5
    dynamic_angle: float = 10.0
    baseline_frames: int = 5
    tr: float = 0.006

    def __post_init__(self):
        if self.r1 <= 0:
            raise ValueError("r1 must be positive")
        if not 0 < self.dynamic_angle <= 90:
            raise ValueError("dynamic_angle must lie in (0, 90] degrees")
        if self.baseline_frames < 1:
            raise ValueError("baseline_frames must be >= 1")
        if self.tr <= 0:
            raise ValueError("tr must be positive")


@dataclass(frozen=True)
class PatlakFit:
    ktrans: float
    vp: float
    residual: float

    def __post_init__(self):
        if not 0.0 <= self.vp <= 1.0:
            raise ValueError("vp must lie in [0, 1]")
        if self.ktrans < 0 or self.residual < 0:
            raise ValueError("ktrans and residual must be non-negative")


def spgr_signal(m, t1, angle_deg, tr):
    """Spoiled gradient-echo steady-state signal for magnetization m."""
    rad = np.deg2rad(angle_deg)
    e = np.exp(-tr / np.asarray(t1, dtype=np.float64))
    return m * np.sin(rad) * (1.0 - e) / (1.0 - e * np.cos(rad))


def fit_t1_vfa(vfa: VfaSeries) -> tuple[ParameterMap, ParameterMap]:
    """Per-voxel (T1, M) from the multi-angle stack.

    Linear-regression initialization of the signal ratio line, refined by
    damped Gauss-Newton on the signal model. Voxels whose fit diverges are
    zeroed and reported once as a warning count.
    """
    na = vfa.images.shape[0]
    nx, ny = vfa.images.shape[1:]
    s = vfa.images.reshape(na, nx * ny).astype(np.float64)
    rad = np.deg2rad(vfa.angles_deg)[:, None]
    sa, ca = np.sin(rad), np.cos(rad)

    with np.errstate(all="ignore"):
        yv = s / sa
        xv = s * ca / sa
        xm = xv.mean(axis=0)
        ym = yv.mean(axis=0)
        xc = xv - xm
        var = (xc**2).sum(axis=0)
        slope = (xc * (yv - ym)).sum(axis=0) / var
    bad = ~np.isfinite(slope) | (var <= 1e-30) | (s.max(axis=0) <= 0)
    e = np.clip(np.where(bad, 0.5, slope), 1e-8, 1.0 - 1e-8)
    m = np.where(bad, 0.0, (ym - e * xm) / (1.0 - e))
    m = np.where(np.isfinite(m), m, 0.0)

    active = ~bad
    for _ in range(50):
        if not active.any():
            break
        denom = 1.0 - e * ca
        model = m * sa * (1.0 - e) / denom
        r = model - s
        jm = sa * (1.0 - e) / denom
        je = m * sa * (ca - 1.0) / denom**2
        a11 = (jm * jm).sum(axis=0)
        a12 = (jm * je).sum(axis=0)
        a22 = (je * je).sum(axis=0)
        b1 = -(jm * r).sum(axis=0)
        b2 = -(je * r).sum(axis=0)
        det = a11 * a22 - a12 * a12
        ok = active & np.isfinite(det) & (det > 1e-300)
        dm = np.where(ok, (a22 * b1 - a12 * b2) / np.where(ok, det, 1.0), 0.0)
        de = np.where(ok, (a11 * b2 - a12 * b1) / np.where(ok, det, 1.0), 0.0)
        m = m + dm
        e = np.clip(e + de, 1e-8, 1.0 - 1e-8)
        step = np.maximum(np.abs(dm) / np.maximum(np.abs(m), 1e-12), np.abs(de))
        active = ok & (step > 1e-10)

    bad |= ~np.isfinite(m) | ~np.isfinite(e) | (m <= 0) | (e <= 1e-8) | (e >= 1.0 - 1e-8)
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        warnings.warn(f"{n_bad} flip-angle fits diverged; voxels zeroed", RuntimeWarning)
    t1 = np.where(bad, 0.0, -vfa.tr / np.log(np.where(bad, 0.5, e)))
    m = np.where(bad, 0.0, m)
    return (
        ParameterMap(t1.reshape(nx, ny).astype(np.float32), "t1", "s"),
        ParameterMap(np.maximum(m, 0).reshape(nx, ny).astype(np.float32), "m0", "a.u."),
    )


def _invert_signal(s, m, t1_0, cfg: DceConfig):
    """Exponential-decay factor and concentration from dynamic signals.

    Returns (concentration, clamp count). s may be (t,) with scalar m/t1_0
    or (t, N) with per-voxel arrays.
    """
    rad = np.deg2rad(cfg.dynamic_angle)
    sa, ca = np.sin(rad), np.cos(rad)
    with np.errstate(all="ignore"):
        num = s - m * sa
        den = s * ca - m * sa
        e = num / den
    invalid = ~np.isfinite(e) | (e <= 0.0) | (e >= 1.0)
    n_clamped = int(np.count_nonzero(invalid))
    e = np.clip(np.where(np.isfinite(e), e, 1.0 - 1e-12), 1e-12, 1.0 - 1e-12)
    t1_t = -cfg.tr / np.log(e)
    conc = (1.0 / t1_t - 1.0 / t1_0) / cfg.r1
    return conc, n_clamped


def dynamic_signal_to_concentration(
    s: TimeCurve, m: float, t1_0: float, cfg: DceConfig
) -> TimeCurve:
    """Concentration over time for one voxel with known calibration (m, t1_0)."""
    if not m > 0 or not t1_0 > 0:
        raise ValueError("calibration values m and t1_0 must be positive")
    base = float(np.mean(s.values[: min(cfg.baseline_frames, len(s.values))]))
    expected = float(spgr_signal(m, t1_0, cfg.dynamic_angle, cfg.tr))
    if expected > 0 and abs(base / expected - 1.0) > 0.2:
        warnings.warn("baseline signal inconsistent with calibration fit", RuntimeWarning)
    conc, n_clamped = _invert_signal(s.values.astype(np.float64), m, t1_0, cfg)
    if n_clamped:
        warnings.warn(f"{n_clamped} samples clamped to the valid signal range", RuntimeWarning)
    return TimeCurve(conc, s.dt)


def patlak_fit(ct: TimeCurve, cp: TimeCurve) -> PatlakFit:
    """Two-regressor linear fit: plasma fraction and inflow slope.

    The slope regressor is the running trapezoid integral of the plasma
    curve; the returned rate constant is per minute.
    """
    if len(ct.values) != len(cp.values) or ct.dt != cp.dt:
        raise ValueError("tissue and plasma curves must share the time grid")
    g1 = cp.values.astype(np.float64)
    g2 = cumulative_trapezoid(g1, dx=cp.dt, initial=0.0)
    a11 = float(g1 @ g1)
    a12 = float(g1 @ g2)
    a22 = float(g2 @ g2)
    det = a11 * a22 - a12 * a12
    scale = max(a11, a22, 1e-300)
    if det <= 1e-12 * scale * scale:
        raise ValueError("degenerate AIF")
    y = ct.values.astype(np.float64)
    b1 = float(g1 @ y)
    b2 = float(g2 @ y)
    vp_raw = (a22 * b1 - a12 * b2) / det
    slope = (a11 * b2 - a12 * b1) / det
    ktrans = max(slope * 60.0, 0.0)
    vp = min(max(vp_raw, 0.0), 1.0)
    fitted = vp * g1 + (ktrans / 60.0) * g2
    residual = float(np.sqrt(np.mean((y - fitted) ** 2)))
    return PatlakFit(ktrans=ktrans, vp=vp, residual=residual)


def concentration_volume_dce(
    series: ImageSeries, t1_map: ParameterMap, m_map: ParameterMap, cfg: DceConfig
) -> np.ndarray:
    """Whole-volume conversion; voxels without a valid calibration give 0."""
    t, nx, ny = series.data.shape
    s = np.abs(series.data).reshape(t, nx * ny).astype(np.float64)
    m = m_map.data.reshape(-1).astype(np.float64)
    t1 = t1_map.data.reshape(-1).astype(np.float64)
    valid = (m > 0) & (t1 > 0)
    conc = np.zeros((t, nx * ny))
    if valid.any():
        c, _ = _invert_signal(s[:, valid], m[valid][None, :], t1[valid][None, :], cfg)
        conc[:, valid] = c
    return conc.reshape(t, nx, ny)


def compute_dce_maps(
    series: ImageSeries,
    vfa: VfaSeries,
    aif_region: np.ndarray,
    cfg: DceConfig,
) -> tuple[ParameterMap, ParameterMap]:
    """Leakage-rate and plasma-fraction maps for a dynamic magnitude series.

    The plasma curve is the mean concentration over aif_region. Fits are
    closed-form per voxel; rate clamped at 0, fraction clamped to [0, 1].
    """
    if vfa.images.shape[1:] != (series.nx, series.ny):
        raise ValueError("calibration and dynamic series geometry differ")
    aif_region = np.atleast_2d(np.asarray(aif_region, dtype=np.int64))
    if aif_region.size == 0:
        raise ValueError("aif region is empty")
    t1_map, m_map = fit_t1_vfa(vfa)
    conc = concentration_volume_dce(series, t1_map, m_map, cfg)
    t, nx, ny = conc.shape

    cp = conc[:, aif_region[:, 0], aif_region[:, 1]].mean(axis=1)
    g1 = cp
    g2 = cumulative_trapezoid(g1, dx=series.dt, initial=0.0)
    a11 = float(g1 @ g1)
    a12 = float(g1 @ g2)
    a22 = float(g2 @ g2)
    det = a11 * a22 - a12 * a12
    scale = max(a11, a22, 1e-300)
    if det <= 1e-12 * scale * scale:
        raise ValueError("degenerate AIF")

    flat = conc.reshape(t, nx * ny)
    b1 = g1 @ flat
    b2 = g2 @ flat
    vp = (a22 * b1 - a12 * b2) / det
    slope = (a11 * b2 - a12 * b1) / det
    ktrans = np.maximum(slope * 60.0, 0.0)
    vp = np.clip(vp, 0.0, 1.0)
    return (
        ParameterMap(ktrans.reshape(nx, ny).astype(np.float32), "ktrans", "1/min"),
        ParameterMap(vp.reshape(nx, ny).astype(np.float32), "vp", "fraction"),
    )
