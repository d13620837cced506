"""Synthetic perfusion phantom with analytic kinetic ground truth.

Tissue geometry is a handful of labeled ellipses; each label carries
kinetic parameters that drive the forward signal models. The vessel label
holds the arterial input curve itself and marks the region quantification
should sample it from.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dce import VfaSeries, spgr_signal
from .dsc import gamma_variate
from .volume import ImageSeries, ParameterMap, TimeCurve

LABELS = ("background", "wm", "gm", "vessel", "tumor")


@dataclass(frozen=True)
class PhantomSpec:
    mode: str
    nx: int = 32
    ny: int = 32
    t: int = 24
    dt: float = 1.5
    ellipses: tuple = ()
    dsc_params: dict = field(default_factory=dict)
    dce_params: dict = field(default_factory=dict)
    aif: dict = field(default_factory=dict)
    noise_sigma: float = 0.0
    seed: int = 0
    te: float = 0.030
    tr: float = 0.006
    dynamic_angle: float = 10.0
    r1: float = 4.5
    vfa_angles: tuple = (2.0, 5.0, 10.0, 15.0, 20.0, 30.0)

    def __post_init__(self):
        if self.mode not in ("dsc", "dce"):
            raise ValueError("mode must be 'dsc' or 'dce'")
        if min(self.nx, self.ny) < 8 or self.t < 2:
            raise ValueError("phantom dims too small")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "ellipses", tuple(dict(e) for e in self.ellipses))
        for e in self.ellipses:
            if e["label"] not in LABELS:
                raise ValueError(f"unknown tissue label {e['label']!r}")
        params = self.dsc_params if self.mode == "dsc" else self.dce_params
        for label, p in params.items():
            if label not in LABELS:
                raise ValueError(f"unknown tissue label {label!r}")
            if any(v < 0 for v in p.values()):
                raise ValueError(f"negative kinetic parameter for {label!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)

    @staticmethod
    def from_json(path) -> "PhantomSpec":
        with open(path) as f:
            raw = json.load(f)
        raw["ellipses"] = tuple(raw.get("ellipses", ()))
        raw["vfa_angles"] = tuple(raw.get("vfa_angles", (2.0, 5.0, 10.0, 15.0, 20.0, 30.0)))
        return PhantomSpec(**raw)


@dataclass(frozen=True)
class PhantomResult:
    series: ImageSeries
    truth_maps: dict
    aif_region: np.ndarray
    aif_curve: TimeCurve
    label_map: np.ndarray
    vfa: VfaSeries | None = None


def default_dsc_spec(nx=32, ny=32, t=24, dt=1.5, seed=0, noise_sigma=0.0) -> PhantomSpec:
    return PhantomSpec(
        mode="dsc",
        nx=nx, ny=ny, t=t, dt=dt, seed=seed, noise_sigma=noise_sigma,
        ellipses=(
            {"label": "wm", "cx": (nx - 1) / 2, "cy": (ny - 1) / 2,
             "rx": 0.42 * nx, "ry": 0.42 * ny, "angle_deg": 0.0},
            {"label": "gm", "cx": 0.34 * nx, "cy": 0.36 * ny,
             "rx": 0.17 * nx, "ry": 0.14 * ny, "angle_deg": 30.0},
            {"label": "tumor", "cx": 0.66 * nx, "cy": 0.62 * ny,
             "rx": 0.12 * nx, "ry": 0.10 * ny, "angle_deg": -20.0},
            {"label": "vessel", "cx": 0.50 * nx, "cy": 0.83 * ny,
             "rx": 0.055 * nx, "ry": 0.055 * ny, "angle_deg": 0.0},
        ),
        dsc_params={
            "background": {"cbf": 0.0, "mtt": 0.0, "s0": 5.0},
            "wm": {"cbf": 0.25, "mtt": 5.0, "s0": 80.0},
            "gm": {"cbf": 0.60, "mtt": 4.0, "s0": 100.0},
            "tumor": {"cbf": 0.90, "mtt": 6.0, "s0": 90.0},
            "vessel": {"cbf": 0.0, "mtt": 0.0, "s0": 120.0},
        },
        aif={"t0": 12.0, "a": 3.0, "b": 1.5, "scale": 3.0},
    )


def default_dce_spec(nx=32, ny=32, t=20, dt=1.5, seed=0, noise_sigma=0.0) -> PhantomSpec:
    base = default_dsc_spec(nx=nx, ny=ny, t=t, dt=dt, seed=seed)
    return PhantomSpec(
        mode="dce",
        nx=nx, ny=ny, t=t, dt=dt, seed=seed, noise_sigma=noise_sigma,
        ellipses=base.ellipses,
        dce_params={
            "background": {"vp": 0.0, "ktrans": 0.0, "t1_0": 2.0, "m0": 0.05},
            "wm": {"vp": 0.02, "ktrans": 0.05, "t1_0": 1.1, "m0": 0.8},
            "gm": {"vp": 0.05, "ktrans": 0.12, "t1_0": 1.6, "m0": 1.0},
            "tumor": {"vp": 0.10, "ktrans": 0.35, "t1_0": 1.4, "m0": 0.9},
            "vessel": {"vp": 1.0, "ktrans": 0.0, "t1_0": 1.7, "m0": 1.2},
        },
        aif={"t0": 9.0, "a": 3.0, "b": 1.5, "scale": 1.1},
    )


def render_label_map(spec: PhantomSpec) -> np.ndarray:
    """Integer label image; ellipses paint over earlier ones in list order."""
    rows, cols = np.meshgrid(
        np.arange(spec.nx, dtype=np.float64),
        np.arange(spec.ny, dtype=np.float64),
        indexing="ij",
    )
    labels = np.zeros((spec.nx, spec.ny), dtype=np.int8)
    for e in spec.ellipses:
        th = np.deg2rad(e.get("angle_deg", 0.0))
        dr = rows - e["cx"]
        dc = cols - e["cy"]
        u = dr * np.cos(th) + dc * np.sin(th)
        v = -dr * np.sin(th) + dc * np.cos(th)
        inside = (u / e["rx"]) ** 2 + (v / e["ry"]) ** 2 <= 1.0
        labels[inside] = LABELS.index(e["label"])
    return labels


def trapezoid_convolve(ca: np.ndarray, residue: np.ndarray, dt: float) -> np.ndarray:
    """Causal convolution with trapezoid end weights, truncated to len(ca)."""
    n = len(ca)
    full = np.convolve(ca, residue)[:n]
    corr = 0.5 * (ca[0] * residue[:n] + ca * residue[0])
    return dt * (full - corr)


def _dsc_label_curves(spec: PhantomSpec, times: np.ndarray, ca: np.ndarray) -> dict:
    curves = {}
    for label in LABELS:
        p = spec.dsc_params.get(label, {"cbf": 0.0, "mtt": 0.0, "s0": 1.0})
        if label == "vessel":
            curves[label] = ca.copy()
        elif p["cbf"] > 0 and p["mtt"] > 0:
            residue = np.exp(-times / p["mtt"])
            curves[label] = p["cbf"] * trapezoid_convolve(ca, residue, spec.dt)
        else:
            curves[label] = np.zeros_like(times)
    return curves


def generate(spec: PhantomSpec) -> PhantomResult:
    """Forward-model a dynamic series plus analytic truth maps.

    Deterministic under the spec seed. Vessel and background rows carry
    zero flow/volume/transit truth: the vessel is the input, not tissue.
    """
    labels = render_label_map(spec)
    vessel_idx = LABELS.index("vessel")
    aif_region = np.argwhere(labels == vessel_idx)
    if aif_region.size == 0:
        raise ValueError("phantom spec has no vessel region")
    times = np.arange(spec.t) * spec.dt
    a = spec.aif
    ca = gamma_variate(times, a["t0"], a["a"], a["b"], a["scale"])
    rng = np.random.default_rng(spec.seed)

    if spec.mode == "dsc":
        curves = _dsc_label_curves(spec, times, ca)
        sig = np.zeros((spec.t, spec.nx, spec.ny))
        truth = {
            "cbf": np.zeros((spec.nx, spec.ny), dtype=np.float64),
            "cbv": np.zeros((spec.nx, spec.ny), dtype=np.float64),
            "mtt": np.zeros((spec.nx, spec.ny), dtype=np.float64),
        }
        for li, label in enumerate(LABELS):
            sel = labels == li
            if not sel.any():
                continue
            p = spec.dsc_params.get(label, {"cbf": 0.0, "mtt": 0.0, "s0": 1.0})
            sig[:, sel] = (p["s0"] * np.exp(-spec.te * curves[label]))[:, None]
            if label not in ("vessel", "background"):
                truth["cbf"][sel] = p["cbf"]
                truth["mtt"][sel] = p["mtt"]
                truth["cbv"][sel] = p["cbf"] * p["mtt"]
        if spec.noise_sigma > 0:
            sig = sig + rng.normal(0.0, spec.noise_sigma, sig.shape)
        sig = np.maximum(sig, 1e-6)
        truth_maps = {
            k: ParameterMap(v.astype(np.float32), k, "s" if k == "mtt" else "relative")
            for k, v in truth.items()
        }
        return PhantomResult(
            series=ImageSeries(sig.astype(np.complex64), spec.dt),
            truth_maps=truth_maps,
            aif_region=aif_region,
            aif_curve=TimeCurve(ca, spec.dt),
            label_map=labels,
        )

    integral = cumulative_trapezoid(ca, dx=spec.dt, initial=0.0)
    sig = np.zeros((spec.t, spec.nx, spec.ny))
    vfa_imgs = np.zeros((len(spec.vfa_angles), spec.nx, spec.ny))
    truth = {
        "ktrans": np.zeros((spec.nx, spec.ny), dtype=np.float64),
        "vp": np.zeros((spec.nx, spec.ny), dtype=np.float64),
    }
    for li, label in enumerate(LABELS):
        sel = labels == li
        if not sel.any():
            continue
        p = spec.dce_params.get(
            label, {"vp": 0.0, "ktrans": 0.0, "t1_0": 1.0, "m0": 0.0}
        )
        ct = p["vp"] * ca + (p["ktrans"] / 60.0) * integral
        t1_t = 1.0 / (1.0 / p["t1_0"] + spec.r1 * ct)
        s_label = spgr_signal(p["m0"], t1_t, spec.dynamic_angle, spec.tr)
        sig[:, sel] = s_label[:, None]
        for ai, ang in enumerate(spec.vfa_angles):
            vfa_imgs[ai, sel] = spgr_signal(p["m0"], p["t1_0"], ang, spec.tr)
        truth["ktrans"][sel] = p["ktrans"]
        truth["vp"][sel] = p["vp"]
    if spec.noise_sigma > 0:
        sig = sig + rng.normal(0.0, spec.noise_sigma, sig.shape)
        vfa_imgs = vfa_imgs + rng.normal(0.0, spec.noise_sigma, vfa_imgs.shape)
    sig = np.maximum(sig, 1e-9)
    vfa_imgs = np.maximum(vfa_imgs, 0.0)
    truth_maps = {
        "ktrans": ParameterMap(truth["ktrans"].astype(np.float32), "ktrans", "1/min"),
        "vp": ParameterMap(truth["vp"].astype(np.float32), "vp", "fraction"),
    }
    return PhantomResult(
        series=ImageSeries(sig.astype(np.complex64), spec.dt),
        truth_maps=truth_maps,
        aif_region=aif_region,
        aif_curve=TimeCurve(ca, spec.dt),
        label_map=labels,
        vfa=VfaSeries(vfa_imgs.astype(np.float32), np.asarray(spec.vfa_angles), spec.tr),
    )
