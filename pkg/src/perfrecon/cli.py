"""Command-line pipeline: phantom -> sample -> recon -> quantify -> report.

Each subcommand validates its inputs, writes only into its output
directory, and records every effective parameter in resolved_config.json.
Runs are deterministic given the seeds in that file.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dce import DceConfig, VfaSeries, compute_dce_maps
from .dsc import DscConfig, compute_dsc_maps
from .dtv import DtvConfig
from .gfbs import GfbsConfig, reconstruct, zero_filled
from .metrics import (
    bland_altman_rows,
    ccc_masked,
    metrics_report,
    psnr,
    rmse,
    write_bland_altman_csv,
    write_metrics_json,
)
from .nlm import NlmConfig
from .phantom import PhantomSpec, default_dce_spec, default_dsc_spec, generate
from .sampler import (
    NoiseSpec,
    densify_first_frame,
    forward_encode,
    make_cartesian_vd_mask,
    make_radial_mask,
)
from .volume import (
    ImageSeries,
    KSpaceSeries,
    ParameterMap,
    RegionMask,
    SamplingMask,
    denormalize_magnitudes,
    load_container,
    minmax_normalize,
    read_region_csv,
    save_container,
    write_pgm,
    write_region_csv,
    write_timecurve_csv,
)


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def _read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _load_series(path) -> ImageSeries:
    obj = load_container(path)
    if not isinstance(obj, ImageSeries):
        raise ValueError(f"{path} does not hold a dynamic series")
    return obj


def _load_kspace(path) -> KSpaceSeries:
    series = _load_series(path)
    return KSpaceSeries(series.data, series.dt)


def _load_mask(path) -> SamplingMask:
    obj = load_container(path)
    if not isinstance(obj, SamplingMask):
        raise ValueError(f"{path} does not hold a sampling mask")
    return obj


def _dataclass_from_dict(cls, raw: dict, section: str):
    allowed = set(cls.__dataclass_fields__)
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"unknown {section} config keys: {sorted(unknown)}")
    return cls(**raw)


def _recon_configs(config_path):
    raw = _read_json(config_path) if config_path else {}
    unknown = set(raw) - {"gfbs", "dtv", "nlm"}
    if unknown:
        raise ValueError(f"unknown recon config sections: {sorted(unknown)}")
    gfbs = _dataclass_from_dict(GfbsConfig, raw.get("gfbs", {}), "gfbs")
    dtv = _dataclass_from_dict(
        DtvConfig, {"lambda1": gfbs.lambda1, **raw.get("dtv", {})}, "dtv"
    )
    nlm = _dataclass_from_dict(
        NlmConfig, {"lambda2": gfbs.lambda2, **raw.get("nlm", {})}, "nlm"
    )
    return gfbs, dtv, nlm


def cmd_phantom(args) -> int:
    if args.spec:
        spec = PhantomSpec.from_json(args.spec)
    elif args.mode == "dce":
        spec = default_dce_spec(seed=args.seed)
    else:
        spec = default_dsc_spec(seed=args.seed)
    out = _outdir(args.out)
    result = generate(spec)

    save_container(out / "series.pvol", result.series)
    for name, pmap in result.truth_maps.items():
        save_container(out / f"truth_{name}.pvol", pmap)
    write_region_csv(out / "aif_region.csv", result.aif_region)
    write_timecurve_csv(out / "aif_curve.csv", result.aif_curve)
    save_container(
        out / "labels.pvol",
        ParameterMap(result.label_map.astype(np.float32), "labels", "index"),
    )
    if result.vfa is not None:
        save_container(
            out / "vfa.pvol",
            ImageSeries(result.vfa.images.astype(np.complex64), max(spec.dt, 1e-6)),
        )
        _write_json(
            out / "vfa.json",
            {"angles_deg": list(map(float, result.vfa.angles_deg)), "tr": result.vfa.tr},
        )
    _write_json(out / "resolved_config.json", {"phantom": asdict(spec)})
    return 0


def cmd_sample(args) -> int:
    series = _load_series(getattr(args, "in"))
    out = _outdir(args.out)
    normalized, (mn, mx) = minmax_normalize(series)

    if args.scheme == "cartesian":
        mask = make_cartesian_vd_mask(series.nx, series.ny, series.t, args.R, args.seed)
    else:
        mask = make_radial_mask(series.nx, series.ny, series.t, args.R, args.seed)
    densified = args.R > 2 and not args.no_densify_first_frame
    if densified:
        mask = densify_first_frame(mask)
    noise = NoiseSpec(variance=args.sigma2, seed=args.seed)
    kspace = forward_encode(normalized, mask, noise)

    save_container(out / "kspace.pvol", ImageSeries(kspace.data, kspace.dt))
    save_container(out / "mask.pvol", mask)
    _write_json(out / "norm.json", {"min": mn, "max": mx})
    frame0 = mask.bits[0]
    _write_json(
        out / "resolved_config.json",
        {
            "sample": {
                "scheme": args.scheme,
                "requested_r": args.R,
                "achieved_r": mask.achieved_acceleration(),
                "frame0_r": frame0.size / max(int(frame0.sum()), 1),
                "first_frame_densified": densified,
                "sigma2": args.sigma2,
                "seed": args.seed,
                "normalization": {"min": mn, "max": mx},
            }
        },
    )
    return 0


def _single_recon(args, out: Path) -> int:
    kspace = _load_kspace(getattr(args, "in"))
    mask = _load_mask(args.mask)
    gfbs_cfg, dtv_cfg, nlm_cfg = _recon_configs(args.config)
    if args.workers != 1 or args.parallel_prox:
        gfbs_cfg = GfbsConfig(
            **{
                **asdict(gfbs_cfg),
                "workers": args.workers,
                "parallel_prox": args.parallel_prox,
            }
        )

    truth = None
    if args.truth:
        truth_series = _load_series(args.truth)
        truth, _ = minmax_normalize(truth_series)

    resolved = {
        "method": args.method,
        "inputs": {"kspace": str(getattr(args, "in")), "mask": str(args.mask)},
        "gfbs": asdict(gfbs_cfg),
        "dtv": asdict(dtv_cfg),
        "nlm": asdict(nlm_cfg),
        "mask_achieved_r": mask.achieved_acceleration(),
        "frame0_r": mask.bits[0].size / max(int(mask.bits[0].sum()), 1),
    }

    if args.method == "zerofill":
        recon = zero_filled(kspace)
    else:
        recon, history = reconstruct(
            kspace, mask, gfbs_cfg, truth=truth, dtv_cfg=dtv_cfg, nlm_cfg=nlm_cfg
        )
        history.write_csv(out / "history.csv")
        resolved["iterations"] = history.iterations
        resolved["stop_reason"] = history.stop_reason

    save_container(out / "recon.pvol", recon)
    # Forward the normalization sidecar so quantify can undo the scaling.
    norm_src = Path(getattr(args, "in")).parent / "norm.json"
    if norm_src.exists():
        shutil.copyfile(norm_src, out / "norm.json")
    if truth is not None:
        write_metrics_json(out / "metrics.json", metrics_report(recon.data, truth.data))
    _write_json(out / "resolved_config.json", {"recon": resolved})
    return 0


def _sweep_recon(args, out: Path) -> int:
    if not args.truth:
        raise ValueError("--R-sweep needs --truth (the clean series to resample)")
    r_values = [float(v) for v in args.R_sweep.split(",") if v.strip()]
    if not r_values:
        raise ValueError("--R-sweep lists no acceleration factors")
    series = _load_series(args.truth)
    normalized, _ = minmax_normalize(series)
    gfbs_cfg, dtv_cfg, nlm_cfg = _recon_configs(args.config)

    rows = []
    for r in r_values:
        if args.sweep_scheme == "cartesian":
            mask = make_cartesian_vd_mask(series.nx, series.ny, series.t, r, args.seed)
        else:
            mask = make_radial_mask(series.nx, series.ny, series.t, r, args.seed)
        if r > 2:
            mask = densify_first_frame(mask)
        kspace = forward_encode(normalized, mask, NoiseSpec(args.sigma2, args.seed))
        recon, _ = reconstruct(
            kspace, mask, gfbs_cfg, truth=normalized, dtv_cfg=dtv_cfg, nlm_cfg=nlm_cfg
        )
        zf = zero_filled(kspace)
        rows.append(
            (
                r,
                psnr(recon.data, normalized.data),
                psnr(zf.data, normalized.data),
                rmse(recon.data, normalized.data),
                rmse(zf.data, normalized.data),
            )
        )

    with open(out / "sweep.csv", "w") as f:
        f.write("R,psnr_proposed,psnr_zerofill,rmse_proposed,rmse_zerofill\n")
        for row in rows:
            f.write(",".join(f"{v:.10g}" for v in row) + "\n")
    _write_json(
        out / "resolved_config.json",
        {
            "recon_sweep": {
                "R": r_values,
                "scheme": args.sweep_scheme,
                "sigma2": args.sigma2,
                "seed": args.seed,
                "gfbs": asdict(gfbs_cfg),
                "dtv": asdict(dtv_cfg),
                "nlm": asdict(nlm_cfg),
            }
        },
    )
    return 0


def cmd_recon(args) -> int:
    out = _outdir(args.out)
    if args.R_sweep:
        return _sweep_recon(args, out)
    return _single_recon(args, out)


def _load_aif_region(path) -> np.ndarray:
    if str(path).endswith(".csv"):
        return read_region_csv(path)
    obj = load_container(path)
    if isinstance(obj, RegionMask):
        return obj.indices()
    raise ValueError(f"{path} holds neither a region CSV nor a region mask")


def cmd_quantify(args) -> int:
    series = _load_series(getattr(args, "in"))
    out = _outdir(args.out)
    norm_path = Path(args.norm) if args.norm else Path(getattr(args, "in")).parent / "norm.json"
    denormalized = False
    if norm_path.exists():
        pair = _read_json(norm_path)
        series = denormalize_magnitudes(series, (pair["min"], pair["max"]))
        denormalized = True
    region = _load_aif_region(args.aif)

    raw = _read_json(args.config) if args.config else {}
    resolved: dict = {
        "mode": args.mode,
        "inputs": {"series": str(getattr(args, "in")), "aif": str(args.aif)},
        "denormalized": denormalized,
    }

    if args.mode == "dsc":
        unknown = set(raw) - {"dsc"}
        if unknown:
            raise ValueError(f"unknown quantify config sections: {sorted(unknown)}")
        cfg = _dataclass_from_dict(DscConfig, raw.get("dsc", {}), "dsc")
        maps = compute_dsc_maps(series, region, cfg)
        named = {"cbf": maps.cbf, "cbv": maps.cbv, "mtt": maps.mtt}
        resolved["dsc"] = asdict(cfg)
    else:
        unknown = set(raw) - {"dce"}
        if unknown:
            raise ValueError(f"unknown quantify config sections: {sorted(unknown)}")
        if not args.vfa:
            raise ValueError("dce mode needs --vfa (calibration stack file)")
        cfg = _dataclass_from_dict(DceConfig, raw.get("dce", {}), "dce")
        vfa_series = _load_series(args.vfa)
        meta = _read_json(Path(args.vfa).with_suffix(".json"))
        vfa = VfaSeries(
            np.abs(vfa_series.data).astype(np.float32),
            np.asarray(meta["angles_deg"], dtype=np.float64),
            float(meta.get("tr", cfg.tr)),
        )
        ktrans, vp = compute_dce_maps(series, vfa, region, cfg)
        named = {"ktrans": ktrans, "vp": vp}
        resolved["dce"] = asdict(cfg)
        resolved["vfa"] = {"path": str(args.vfa), "angles_deg": meta["angles_deg"]}

    for name, pmap in named.items():
        save_container(out / f"{name}.pvol", pmap)
        write_pgm(out / f"{name}.pgm", pmap)
    _write_json(out / "resolved_config.json", {"quantify": resolved})
    return 0


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise ValueError(f"run directory {run} does not exist")
    summary: dict = {"run": str(run)}

    metrics_path = run / "recon" / "metrics.json"
    if metrics_path.exists():
        summary["recon_metrics"] = _read_json(metrics_path)
        summary["psnr"] = summary["recon_metrics"]["psnr_db"]
        summary["rmse"] = summary["recon_metrics"]["rmse"]
    recon_cfg = run / "recon" / "resolved_config.json"
    if recon_cfg.exists():
        rc = _read_json(recon_cfg).get("recon", {})
        for key in ("iterations", "stop_reason", "method"):
            if key in rc:
                summary[key] = rc[key]
    history_path = run / "recon" / "history.csv"
    if history_path.exists():
        summary["history_csv"] = str(history_path)

    quant_dir = run / "quantify"
    truth_dir = run / "phantom"
    if quant_dir.is_dir() and truth_dir.is_dir():
        for est_path in sorted(quant_dir.glob("*.pvol")):
            name = est_path.stem
            truth_path = truth_dir / f"truth_{name}.pvol"
            if not truth_path.exists():
                continue
            est = load_container(est_path)
            ref = load_container(truth_path)
            stats, means, diffs = bland_altman_rows(
                est.data.astype(np.float64).ravel(), ref.data.astype(np.float64).ravel()
            )
            ba_path = run / f"bland_altman_{name}.csv"
            write_bland_altman_csv(ba_path, means, diffs)
            summary[f"ccc_{name}"] = ccc_masked(
                est.data.astype(np.float64), ref.data.astype(np.float64)
            )
            summary[f"bland_altman_{name}"] = {
                "bias": stats.ba_bias,
                "lo": stats.ba_lo,
                "hi": stats.ba_hi,
                "csv": str(ba_path),
            }

    previews = sorted(str(p) for p in run.rglob("*.pgm"))
    if previews:
        summary["previews"] = previews
    _write_json(run / "summary.json", summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perfrecon",
        description="Dynamic perfusion MRI toolbox: phantom generation, "
        "k-space sampling, joint reconstruction, kinetic quantification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic dynamic series")
    p.add_argument("--spec", help="phantom spec JSON (defaults per --mode)")
    p.add_argument("--mode", choices=["dsc", "dce"], default="dsc")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("sample", help="undersample a series into noisy k-space")
    p.add_argument("--in", required=True, help="series container file")
    p.add_argument("--scheme", choices=["cartesian", "radial"], required=True)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--sigma2", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--no-densify-first-frame",
        action="store_true",
        help="skip the 2-fold first-frame densification applied when R > 2",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("recon", help="reconstruct masked k-space measurements")
    p.add_argument("--in", help="k-space container file")
    p.add_argument("--mask", help="sampling mask container file")
    p.add_argument("--method", choices=["proposed", "zerofill"], default="proposed")
    p.add_argument("--config", help="JSON with gfbs/dtv/nlm sections")
    p.add_argument("--truth", help="clean series for error reporting")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--parallel-prox", action="store_true")
    p.add_argument(
        "--R-sweep",
        dest="R_sweep",
        help="comma list of accelerations; resamples --truth per R and "
        "tabulates proposed versus zero-filled quality",
    )
    p.add_argument("--sweep-scheme", choices=["cartesian", "radial"], default="radial")
    p.add_argument("--sigma2", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("quantify", help="kinetic maps from a dynamic series")
    p.add_argument("--in", required=True)
    p.add_argument("--mode", choices=["dsc", "dce"], required=True)
    p.add_argument("--aif", required=True, help="region CSV or region mask file")
    p.add_argument("--vfa", help="calibration stack (dce mode)")
    p.add_argument("--config", help="JSON with dsc or dce section")
    p.add_argument("--norm", help="normalization sidecar (default: next to --in)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantify)

    p = sub.add_parser("report", help="aggregate run outputs into summary.json")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "recon" and not args.R_sweep:
        if not getattr(args, "in") or not args.mask:
            parser.error("recon needs --in and --mask (or --R-sweep with --truth)")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single-line diagnostic contract
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
