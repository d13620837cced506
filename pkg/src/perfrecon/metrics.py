"""Fidelity and agreement metrics: RMSE, PSNR, concordance, Bland-Altman."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AgreementStats:
    ccc: float
    ba_bias: float
    ba_lo: float
    ba_hi: float
    n: int


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    """Root-mean-square error between magnitudes, double precision."""
    am = np.abs(np.asarray(a, dtype=np.complex128) if np.iscomplexobj(a) else np.asarray(a, dtype=np.float64))
    bm = np.abs(np.asarray(b, dtype=np.complex128) if np.iscomplexobj(b) else np.asarray(b, dtype=np.float64))
    if am.shape != bm.shape:
        raise ValueError("rmse inputs must share a shape")
    d = am.astype(np.float64) - bm.astype(np.float64)
    return float(np.sqrt(np.mean(d * d)))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak SNR in dB against a unit peak; +inf when inputs agree exactly."""
    r = rmse(a, b)
    if r == 0.0:
        return math.inf
    return float(20.0 * math.log10(1.0 / r))


def ccc(a: np.ndarray, b: np.ndarray) -> float:
    """Lin's concordance correlation, population (1/n) moments."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("ccc inputs must share a shape")
    if x.size == 0:
        raise ValueError("ccc needs at least one sample")
    mx = x.mean()
    my = y.mean()
    vx = np.mean((x - mx) ** 2)
    vy = np.mean((y - my) ** 2)
    cov = np.mean((x - mx) * (y - my))
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        if np.array_equal(x, y):
            return 1.0
        raise ValueError("ccc undefined: zero variance and unequal sequences")
    return float(2.0 * cov / denom)


def ccc_masked(est: np.ndarray, ref: np.ndarray, threshold: float = 1e-6) -> float:
    """CCC restricted to voxels whose reference value exceeds ``threshold``."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    sel = ref > threshold
    if not np.any(sel):
        raise ValueError("ccc mask selects no voxels")
    return ccc(est[sel], ref[sel])


def bland_altman(a: np.ndarray, b: np.ndarray) -> AgreementStats:
    """Bias and 1.96-sd limits of agreement (sample sd, n-1)."""
    stats, _, _ = bland_altman_rows(a, b)
    return stats


def bland_altman_rows(a: np.ndarray, b: np.ndarray):
    """AgreementStats plus the (mean, diff) rows used for plotting."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("bland_altman inputs must share a shape")
    if x.size < 2:
        raise ValueError("bland_altman needs at least two samples")
    means = 0.5 * (x + y)
    diffs = x - y
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    try:
        c = ccc(x, y)
    except ValueError:
        c = float("nan")
    stats = AgreementStats(
        ccc=c,
        ba_bias=bias,
        ba_lo=bias - 1.96 * sd,
        ba_hi=bias + 1.96 * sd,
        n=x.size,
    )
    return stats, means, diffs


def write_bland_altman_csv(path, means: np.ndarray, diffs: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("mean,diff\n")
        for m, d in zip(np.ravel(means), np.ravel(diffs)):
            f.write(f"{m:.17g},{d:.17g}\n")


def _json_num(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return v


def metrics_report(recon: np.ndarray, reference: np.ndarray) -> dict:
    """Assemble the standard report dict for a recon/reference pair."""
    stats = bland_altman(np.abs(recon).ravel(), np.abs(reference).ravel())
    return {
        "rmse": _json_num(rmse(recon, reference)),
        "psnr_db": _json_num(psnr(recon, reference)),
        "ccc": _json_num(stats.ccc),
        "bland_altman": {
            "bias": _json_num(stats.ba_bias),
            "lo": _json_num(stats.ba_lo),
            "hi": _json_num(stats.ba_hi),
            "n": stats.n,
        },
    }


def write_metrics_json(path, report: dict) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
