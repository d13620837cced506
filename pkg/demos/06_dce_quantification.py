"""Permeability quantification: T1 calibration and two-parameter fits.

The variable-flip-angle stack calibrates T1 and equilibrium signal per
voxel. Dynamic signals then invert to contrast concentration, and a
linear fit against the plasma curve and its running integral separates
plasma fraction from the leakage rate.
"""

import warnings

import numpy as np

from perfrecon.dce import DceConfig, compute_dce_maps, fit_t1_vfa
from perfrecon.phantom import LABELS, default_dce_spec, generate

spec = default_dce_spec()
result = generate(spec)
cfg = DceConfig(r1=spec.r1, dynamic_angle=spec.dynamic_angle, tr=spec.tr)

t1_map, m_map = fit_t1_vfa(result.vfa)
print(f"{'label':10s} {'t1 est':>7s} {'t1 true':>8s}")
for li, name in enumerate(LABELS):
    sel = result.label_map == li
    if not sel.any():
        continue
    t1_true = spec.dce_params[name]["t1_0"]
    print(f"{name:10s} {t1_map.data[sel].mean():7.3f} {t1_true:8.3f}")

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    ktrans, vp = compute_dce_maps(result.series, result.vfa, result.aif_region, cfg)

print(f"\n{'label':10s} {'ktrans est':>10s} {'true':>6s} {'vp est':>8s} {'true':>6s}")
for li, name in enumerate(LABELS):
    sel = result.label_map == li
    if not sel.any():
        continue
    p = spec.dce_params[name]
    print(f"{name:10s} {ktrans.data[sel].mean():10.4f} {p['ktrans']:6.2f} "
          f"{vp.data[sel].mean():8.4f} {p['vp']:6.2f}")

err = np.abs(ktrans.data - result.truth_maps["ktrans"].data).max()
print(f"\nworst ktrans error anywhere: {err:.2e} per minute")
