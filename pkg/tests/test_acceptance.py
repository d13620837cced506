"""Acceptance gate: thirteen committed criteria, one summary line each.

Each test records a pass/fail row (printed after the run) and then asserts,
so a red criterion is visible both in the summary block and in pytest output.
"""

import dataclasses
import filecmp
import json

import numba
import numpy as np
import pytest

from perfrecon.dce import DceConfig, VfaSeries, fit_t1_vfa, patlak_fit, spgr_signal
from perfrecon.dsc import DscConfig, compute_dsc_maps
from perfrecon.dtv import (
    DtvConfig,
    _fidelity_apply,
    _reg_apply,
    firls_solve_frame,
    frame_objective,
    make_ilu_preconditioner,
    pcg_solve,
)
from perfrecon.gfbs import GfbsConfig, adaptive_alpha, reconstruct, zero_filled
from perfrecon.metrics import bland_altman, ccc, ccc_masked, psnr, rmse
from perfrecon.nlm import NlmConfig, filter_volume
from perfrecon.phantom import LABELS, PhantomSpec, default_dsc_spec, generate
from perfrecon.sampler import (
    NoiseSpec,
    densify_first_frame,
    fft2c,
    forward_encode,
    ifft2c,
    make_cartesian_vd_mask,
    make_radial_mask,
)
from perfrecon.volume import TimeCurve, minmax_normalize, denormalize_magnitudes


def test_criterion_01_encoding_adjoint(record_criterion):
    rng = np.random.default_rng(11)
    makers = (("cartesian_vd", make_cartesian_vd_mask), ("radial", make_radial_mask))
    worst = 0.0
    count = 0
    for rep in range(17):
        for _, make in makers:
            for r in (2.0, 4.0, 8.0):
                mask = make(24, 24, 3, r, seed=int(rng.integers(1 << 30)))
                bits = mask.bits.astype(np.float64)
                shape = (3, 24, 24)
                x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
                yk = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
                lhs = np.vdot(bits * fft2c(x), yk)
                rhs = np.vdot(x, ifft2c(bits * yk))
                err = abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(yk))
                worst = max(worst, err)
                count += 1
    ok = count >= 100 and worst <= 1e-10
    record_criterion(1, "encoding adjoint identity", ok,
                     f"{count} triples, worst {worst:.3e}, bound 1e-10")
    assert ok


def test_criterion_02_pcg_matches_dense(record_criterion):
    rng = np.random.default_rng(7)
    n = 16
    lam = 0.02
    w = rng.uniform(0.2, 5.0, size=(n, n))
    worst = 0.0
    for scheme, make in (("cartesian_vd", make_cartesian_vd_mask),
                         ("radial", make_radial_mask)):
        bits = make(n, n, 1, 3.0, seed=5).bits[0].astype(np.float64)
        s = float(bits.mean())

        def apply_s(v):
            return _fidelity_apply(v, bits) + _reg_apply(v, w, lam)

        dense = np.zeros((n * n, n * n), dtype=np.complex128)
        for j in range(n * n):
            e = np.zeros(n * n, dtype=np.complex128)
            e[j] = 1.0
            dense[:, j] = apply_s(e.reshape(n, n)).ravel()
        rhs = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        x_dense = np.linalg.solve(dense, rhs.ravel()).reshape(n, n)
        precond = make_ilu_preconditioner(w, lam, s)
        x_pcg, _, _ = pcg_solve(apply_s, rhs, precond,
                                np.zeros_like(rhs), 1e-13, 2000)
        rel = np.linalg.norm(x_pcg - x_dense) / np.linalg.norm(x_dense)
        worst = max(worst, rel)
    ok = worst <= 1e-8
    record_criterion(2, "PCG equals dense solve", ok,
                     f"worst relative {worst:.3e}, bound 1e-8")
    assert ok


@numba.njit(cache=True)
def _direct_nlm(x, h2, wr, pr):
    t, nx, ny = x.shape
    out = np.zeros_like(x)
    for ct in range(t):
        for cx in range(nx):
            for cy in range(ny):
                num = 0.0 + 0.0j
                den = 0.0
                for qt in range(max(0, ct - wr), min(t, ct + wr + 1)):
                    for qx in range(max(0, cx - wr), min(nx, cx + wr + 1)):
                        for qy in range(max(0, cy - wr), min(ny, cy + wr + 1)):
                            d = 0.0
                            for ot in range(-pr, pr + 1):
                                for ox in range(-pr, pr + 1):
                                    for oy in range(-pr, pr + 1):
                                        pt, px, py = ct + ot, cx + ox, cy + oy
                                        st, sx, sy = qt + ot, qx + ox, qy + oy
                                        if (0 <= pt < t and 0 <= px < nx and 0 <= py < ny
                                                and 0 <= st < t and 0 <= sx < nx and 0 <= sy < ny):
                                            diff = x[pt, px, py] - x[st, sx, sy]
                                            d += diff.real * diff.real + diff.imag * diff.imag
                            wgt = np.exp(-d / h2)
                            num += wgt * x[qt, qx, qy]
                            den += wgt
                out[ct, cx, cy] = num / den
    return out


def test_criterion_03_nlm_matches_direct(record_criterion):
    rng = np.random.default_rng(3)
    x = (rng.standard_normal((6, 12, 12)) + 1j * rng.standard_normal((6, 12, 12))).astype(np.complex128)
    h = 0.8
    got = filter_volume(x, NlmConfig(block_step=1, h=h))
    want = _direct_nlm(x, h * h, 3, 2)
    err_direct = float(np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-12)))

    # h -> inf limit: every voxel becomes the mean over its clipped window.
    flat = filter_volume(x, NlmConfig(block_step=1, h=1e9))
    ones = np.ones_like(x, dtype=np.float64)
    want_mean = np.zeros_like(x)
    from scipy.ndimage import uniform_filter
    size = (7, 7, 7)
    cnt = uniform_filter(ones, size=size, mode="constant") * 343.0
    sr = uniform_filter(x.real, size=size, mode="constant") * 343.0
    si = uniform_filter(x.imag, size=size, mode="constant") * 343.0
    want_mean = (sr + 1j * si) / cnt
    err_mean = float(np.max(np.abs(flat - want_mean) / np.maximum(np.abs(want_mean), 1e-12)))

    ok = err_direct <= 1e-6 and err_mean <= 1e-6
    record_criterion(3, "nonlocal filter equals direct evaluation", ok,
                     f"direct {err_direct:.3e}, window-mean {err_mean:.3e}, bound 1e-6")
    assert ok


def test_criterion_04_tv_prox_optimality(record_criterion):
    rng = np.random.default_rng(4)
    cfg = DtvConfig(firls_outer=40, pcg_max=300, pcg_tol=1e-13)
    worst_gap = -np.inf
    for inst in range(20):
        data = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        ref = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        lam = 10.0 ** rng.uniform(-3.0, -1.0)
        xs = firls_solve_frame(data, None, ref, cfg, lam_tv=lam)
        base = frame_objective(xs, data, None, ref, lam)
        scale = 0.01 * np.linalg.norm(xs)
        for _ in range(100):
            delta = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
            delta *= scale / np.linalg.norm(delta)
            pert = frame_objective(xs + delta, data, None, ref, lam)
            worst_gap = max(worst_gap, base - pert)
    ok = worst_gap <= 1e-9
    record_criterion(4, "TV prox optimality under perturbation", ok,
                     f"worst objective excess {worst_gap:.3e}, bound 1e-9")
    assert ok


def test_criterion_05_reconstruction_gain(record_criterion, recon_r4, radial_r4, normalized):
    series, _ = normalized
    _, y = radial_r4
    recon, _ = recon_r4
    gain = psnr(recon.data, series.data) - psnr(zero_filled(y).data, series.data)
    ok = gain >= 3.0
    record_criterion(5, "reconstruction gain at R=4 radial", ok,
                     f"gain {gain:.2f} dB, bound 3.00 dB")
    assert ok


def test_criterion_06_psnr_decreases_with_acceleration(record_criterion, recon_r4, normalized):
    series, _ = normalized
    prop = {}
    zf = {}
    for r in (2.0, 8.0):
        mask = densify_first_frame(make_radial_mask(32, 32, 24, r, seed=0))
        y = forward_encode(series, mask, NoiseSpec(variance=1e-10, seed=0))
        recon, _ = reconstruct(y, mask, GfbsConfig())
        prop[r] = psnr(recon.data, series.data)
        zf[r] = psnr(zero_filled(y).data, series.data)
    mask4 = densify_first_frame(make_radial_mask(32, 32, 24, 4.0, seed=0))
    y4 = forward_encode(series, mask4, NoiseSpec(variance=1e-10, seed=0))
    prop[4.0] = psnr(recon_r4[0].data, series.data)
    zf[4.0] = psnr(zero_filled(y4).data, series.data)

    mono_prop = prop[2.0] >= prop[4.0] >= prop[8.0]
    mono_zf = zf[2.0] >= zf[4.0] >= zf[8.0]
    above = all(prop[r] >= zf[r] for r in (2.0, 4.0, 8.0))
    ok = mono_prop and mono_zf and above
    record_criterion(6, "PSNR monotone in acceleration, both methods", ok,
                     "proposed " + "/".join(f"{prop[r]:.2f}" for r in (2.0, 4.0, 8.0))
                     + " dB, zero-filled " + "/".join(f"{zf[r]:.2f}" for r in (2.0, 4.0, 8.0)) + " dB")
    assert ok


def _iters_to_band(rmse_rows, band=0.05):
    final = rmse_rows[-1]
    for i, v in enumerate(rmse_rows, start=1):
        if abs(v - final) <= band * final:
            return i
    return len(rmse_rows)


def test_criterion_07_weight_robustness(record_criterion, recon_r4, radial_r4, normalized):
    series, _ = normalized
    mask, y = radial_r4
    _, hist73 = recon_r4
    _, hist55 = reconstruct(y, mask, GfbsConfig(w1=0.5, w2=0.5), truth=series)
    r73 = [row[2] for row in hist73.rows]
    r55 = [row[2] for row in hist55.rows]
    rel = abs(r73[-1] - r55[-1]) / r55[-1]
    it73, it55 = _iters_to_band(r73), _iters_to_band(r55)
    ok = rel <= 0.01 and it73 <= it55
    record_criterion(7, "final error robust to prox weights", ok,
                     f"relative gap {100 * rel:.4f}% (bound 1%), band iters {it73} vs {it55}")
    assert ok


def test_criterion_08_relaxation_schedule(record_criterion, recon_r4, radial_r4, normalized):
    series, _ = normalized
    mask, y = radial_r4
    alphas = [adaptive_alpha(k, 0.9) for k in range(1, 51)]
    law_ok = (alphas[0] == 0.9
              and all(b >= a for a, b in zip(alphas, alphas[1:]))
              and alphas[49] >= 0.99)
    _, hist_fix = reconstruct(y, mask, GfbsConfig(adaptive=False, max_iters=10), truth=series)
    p_ad = recon_r4[1].rows[9][3]
    p_fx = hist_fix.rows[9][3]
    ok = law_ok and p_ad >= p_fx - 0.1
    record_criterion(8, "adaptive relaxation schedule", ok,
                     f"alpha1 {alphas[0]:.2f}, alpha50 {alphas[49]:.4f}, "
                     f"psnr@10 adaptive {p_ad:.3f} vs fixed {p_fx:.3f} dB")
    assert ok


def test_criterion_09_dsc_closure(record_criterion):
    base = dataclasses.asdict(default_dsc_spec())
    spec = PhantomSpec(**{**base, "dt": 0.5, "t": 120,
                          "aif": {"t0": 5.0, "a": 2.0, "b": 0.5, "scale": 1.0}})
    res = generate(spec)
    bounds = {0.10: {"cbf": 0.10, "cbv": 0.05, "mtt": 0.10},
              0.0: {"cbf": 0.01, "cbv": 0.01, "mtt": 0.01}}
    details = []
    ok = True
    for thresh, bound in bounds.items():
        cfg = DscConfig(svd_threshold=thresh)
        maps = compute_dsc_maps(res.series, res.aif_region, cfg)
        worst = {"cbf": 0.0, "cbv": 0.0, "mtt": 0.0}
        for li, lname in enumerate(LABELS):
            if lname in ("background", "vessel"):
                continue
            sel = res.label_map == li
            for key, m in (("cbf", maps.cbf), ("cbv", maps.cbv), ("mtt", maps.mtt)):
                ref = float(res.truth_maps[key].data[sel].mean())
                err = abs(float(m.data[sel].mean()) - ref) / ref
                worst[key] = max(worst[key], err)
        for key in worst:
            ok = ok and worst[key] <= bound[key]
        details.append(f"thr {thresh:g}: " + " ".join(
            f"{k} {100 * worst[k]:.2f}%" for k in ("cbf", "cbv", "mtt")))
    record_criterion(9, "DSC map closure on noiseless data", ok,
                     "; ".join(details) + " (bounds 10/5/10% and 1%)")
    assert ok


def test_criterion_10_dce_closure(record_criterion):
    # Patlak: exact linear model data must come back exactly.
    t = np.arange(40, dtype=np.float64) * 2.0
    cp = np.where(t >= 10.0, (t - 10.0) ** 2.0 * np.exp(-(t - 10.0) / 8.0) * 0.01, 0.0)
    from scipy.integrate import cumulative_trapezoid
    integ = cumulative_trapezoid(cp, t, initial=0.0)
    ktrans_true, vp_true = 0.23, 0.04
    ct = vp_true * cp + (ktrans_true / 60.0) * integ
    fit = patlak_fit(TimeCurve(ct, 2.0), TimeCurve(cp, 2.0))
    err_k = abs(fit.ktrans - ktrans_true)
    err_v = abs(fit.vp - vp_true)

    rng = np.random.default_rng(10)
    t1 = rng.uniform(0.3, 3.0, size=(12, 12))
    m = rng.uniform(0.5, 1.5, size=(12, 12))
    angles = (2.0, 5.0, 10.0, 15.0, 20.0, 30.0)
    images = np.stack([spgr_signal(m, t1, a, 0.006) for a in angles]).astype(np.float32)
    t1_map, m_map = fit_t1_vfa(VfaSeries(images, angles, tr=0.006))
    rel_t1 = float(np.max(np.abs(t1_map.data - t1) / t1))

    ok = err_k <= 1e-8 and err_v <= 1e-8 and rel_t1 <= 1e-6
    record_criterion(10, "DCE model closure", ok,
                     f"patlak errors {err_k:.2e}/{err_v:.2e} (bound 1e-8), "
                     f"T1 relative {rel_t1:.2e} (bound 1e-6)")
    assert ok


def test_criterion_11_ccc_decreases_with_acceleration(record_criterion):
    res = generate(default_dsc_spec(nx=64, ny=64))
    truth_cbf = res.truth_maps["cbf"].data
    norm, pair = minmax_normalize(res.series)
    scores = {}
    for r in (4.0, 8.0, 16.0):
        mask = densify_first_frame(make_radial_mask(64, 64, 24, r, seed=0))
        y = forward_encode(norm, mask, NoiseSpec(variance=1e-10, seed=0))
        recon, _ = reconstruct(y, mask, GfbsConfig(), nlm_cfg=NlmConfig(block_step=3))
        den = denormalize_magnitudes(recon, pair)
        maps = compute_dsc_maps(den, res.aif_region, DscConfig())
        scores[r] = ccc_masked(maps.cbf.data, truth_cbf)
    ok = scores[4.0] >= scores[8.0] >= scores[16.0] and scores[4.0] >= 0.9
    record_criterion(11, "CBF concordance falls with acceleration", ok,
                     "CCC " + "/".join(f"{scores[r]:.3f}" for r in (4.0, 8.0, 16.0))
                     + ", bound at R=4: 0.900")
    assert ok


def test_criterion_12_metric_oracles(record_criterion):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(5):
        a = rng.standard_normal(257)
        b = rng.standard_normal(257)
        n = a.size
        # rmse/psnr are defined on magnitudes
        se = sum((abs(float(x)) - abs(float(y))) ** 2 for x, y in zip(a, b))
        r_ref = (se / n) ** 0.5
        worst = max(worst, abs(rmse(a, b) - r_ref))
        worst = max(worst, abs(psnr(a, b) - 20.0 * np.log10(1.0 / r_ref)))
        ma = sum(map(float, a)) / n
        mb = sum(map(float, b)) / n
        va = sum((float(x) - ma) ** 2 for x in a) / n
        vb = sum((float(x) - mb) ** 2 for x in b) / n
        cov = sum((float(x) - ma) * (float(y) - mb) for x, y in zip(a, b)) / n
        c_ref = 2.0 * cov / (va + vb + (ma - mb) ** 2)
        worst = max(worst, abs(ccc(a, b) - c_ref))
        stats = bland_altman(a, b)
        diffs = [float(x) - float(y) for x, y in zip(a, b)]
        bias_ref = sum(diffs) / n
        sd_ref = (sum((d - bias_ref) ** 2 for d in diffs) / (n - 1)) ** 0.5
        worst = max(worst, abs(stats.ba_bias - bias_ref))
        worst = max(worst, abs(stats.ba_lo - (bias_ref - 1.96 * sd_ref)))
        worst = max(worst, abs(stats.ba_hi - (bias_ref + 1.96 * sd_ref)))
    x = rng.standard_normal(100)
    ident = abs(ccc(x, x) - 1.0)
    # exact RMSE of 0.01 by construction
    forty = abs(psnr(np.full(64, 0.01), np.zeros(64)) - 40.0)
    ok = worst <= 1e-12 and ident <= 1e-12 and forty <= 1e-12
    record_criterion(12, "metrics match scalar oracles", ok,
                     f"worst {worst:.2e} (bound 1e-12), ccc(x,x) gap {ident:.1e}, "
                     f"psnr@rmse=0.01 gap {forty:.1e}")
    assert ok


def _pipeline(tmp, workers):
    from perfrecon.cli import main

    run = tmp / f"run_w{workers}"
    cfg = tmp / "recon_cfg.json"
    cfg.write_text(json.dumps({"gfbs": {"max_iters": 25}}))
    assert main(["phantom", "--mode", "dsc", "--out", str(run / "phantom")]) == 0
    assert main(["sample", "--in", str(run / "phantom" / "series.pvol"),
                 "--scheme", "radial", "--R", "4", "--sigma2", "1e-10",
                 "--seed", "0", "--out", str(run / "sample")]) == 0
    assert main(["recon", "--in", str(run / "sample" / "kspace.pvol"),
                 "--mask", str(run / "sample" / "mask.pvol"),
                 "--config", str(cfg), "--workers", str(workers)]
                + (["--parallel-prox"] if workers > 1 else [])
                + ["--truth", str(run / "phantom" / "series.pvol"),
                   "--out", str(run / "recon")]) == 0
    assert main(["quantify", "--in", str(run / "recon" / "recon.pvol"),
                 "--mode", "dsc", "--aif", str(run / "phantom" / "aif_region.csv"),
                 "--out", str(run / "quantify")]) == 0
    return run


def test_criterion_13_deterministic_pipeline(record_criterion, tmp_path):
    run1 = _pipeline(tmp_path, workers=1)
    run2 = _pipeline(tmp_path, workers=2)
    names = ["recon/recon.pvol", "recon/history.csv", "recon/metrics.json",
             "quantify/cbf.pvol", "quantify/cbv.pvol", "quantify/mtt.pvol",
             "quantify/cbf.pgm", "sample/kspace.pvol", "sample/mask.pvol"]
    same = {n: filecmp.cmp(run1 / n, run2 / n, shallow=False) for n in names}
    ok = all(same.values())
    bad = [n for n, v in same.items() if not v]
    record_criterion(13, "pipeline outputs byte-identical across worker counts", ok,
                     f"{len(names)} files compared" + ("" if ok else f", mismatch: {bad}"))
    assert ok
