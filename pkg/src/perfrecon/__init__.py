"""Dynamic perfusion MRI toolbox: undersampled k-space simulation, joint
TV + nonlocal-means reconstruction, and kinetic parameter quantification."""

from .dce import (
    DceConfig,
    PatlakFit,
    VfaSeries,
    compute_dce_maps,
    dynamic_signal_to_concentration,
    fit_t1_vfa,
    patlak_fit,
    spgr_signal,
)
from .dsc import (
    DscConfig,
    DscMaps,
    GammaVariateFit,
    compute_dsc_maps,
    csvd_deconvolve,
    fit_gamma_variate,
    signal_to_concentration,
)
from .dtv import DtvConfig, firls_solve_frame, prox_dtv_series, prox_dtv_volume, tv_norm
from .gfbs import (
    GfbsConfig,
    ReconHistory,
    adaptive_alpha,
    data_gradient,
    joint_objective,
    reconstruct,
    update_reference,
    zero_filled,
)
from .metrics import (
    AgreementStats,
    bland_altman,
    ccc,
    ccc_masked,
    metrics_report,
    psnr,
    rmse,
)
from .nlm import NlmConfig, estimate_sigma, filter_volume, nlm_filter_3d, prox_nlm_pocs
from .phantom import (
    PhantomResult,
    PhantomSpec,
    default_dce_spec,
    default_dsc_spec,
    generate,
)
from .sampler import (
    GOLDEN_ANGLE_DEG,
    NoiseSpec,
    adjoint,
    densify_first_frame,
    fft2c,
    forward_encode,
    ifft2c,
    make_cartesian_vd_mask,
    make_radial_mask,
)
from .volume import (
    FloatVolume,
    ImageSeries,
    KSpaceSeries,
    ParameterMap,
    RegionMask,
    SamplingMask,
    TimeCurve,
    denormalize_magnitudes,
    load_container,
    magnitude,
    minmax_normalize,
    save_container,
)

__version__ = "0.1.0"

__all__ = [
    "AgreementStats",
    "DceConfig",
    "DscConfig",
    "DscMaps",
    "DtvConfig",
    "FloatVolume",
    "GOLDEN_ANGLE_DEG",
    "GammaVariateFit",
    "GfbsConfig",
    "ImageSeries",
    "KSpaceSeries",
    "NlmConfig",
    "NoiseSpec",
    "ParameterMap",
    "PatlakFit",
    "PhantomResult",
    "PhantomSpec",
    "ReconHistory",
    "RegionMask",
    "SamplingMask",
    "TimeCurve",
    "VfaSeries",
    "adaptive_alpha",
    "adjoint",
    "bland_altman",
    "ccc",
    "ccc_masked",
    "compute_dce_maps",
    "compute_dsc_maps",
    "csvd_deconvolve",
    "data_gradient",
    "default_dce_spec",
    "default_dsc_spec",
    "denormalize_magnitudes",
    "densify_first_frame",
    "dynamic_signal_to_concentration",
    "estimate_sigma",
    "fft2c",
    "filter_volume",
    "firls_solve_frame",
    "fit_gamma_variate",
    "fit_t1_vfa",
    "forward_encode",
    "generate",
    "ifft2c",
    "joint_objective",
    "load_container",
    "magnitude",
    "make_cartesian_vd_mask",
    "make_radial_mask",
    "metrics_report",
    "minmax_normalize",
    "nlm_filter_3d",
    "patlak_fit",
    "prox_dtv_series",
    "prox_dtv_volume",
    "prox_nlm_pocs",
    "psnr",
    "reconstruct",
    "rmse",
    "save_container",
    "signal_to_concentration",
    "spgr_signal",
    "tv_norm",
    "update_reference",
    "zero_filled",
]
