"""Prior draws and their level-set images.

Samples a few Matérn fields on the reference mesh, pushes them through the
two-level map and writes both as SVG, so the typical inclusion size under
each smoothness setting can be inspected.

    python3 demos/prior_draws.py [output_dir]
"""
import sys
from pathlib import Path

import numpy as np

from bayes_levelset import LevelSpec, MaternParams, build_covariance, generate_disk_mesh, level_set_map
from bayes_levelset.report import svg_heatmap

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output/prior")
out.mkdir(parents=True, exist_ok=True)

mesh = generate_disk_mesh(1.0, 549, 16, 0.25)
spec = LevelSpec.bilevel(1.0, 5.0)
rng = np.random.default_rng(7)

for nu, ell in [(0.5, 0.3), (4.0, 0.3), (5.0, 0.15)]:
    f = build_covariance(mesh, MaternParams(nu, ell))
    for k in range(3):
        u = f.sample(rng)
        tag = f"nu{nu:g}_ell{ell:g}_{k}"
        (out / f"u_{tag}.svg").write_text(svg_heatmap(mesh, u, -2.5, 2.5, f"u {tag}"))
        img = level_set_map(u, spec)
        (out / f"a_{tag}.svg").write_text(svg_heatmap(mesh, img, 1.0, 5.0, f"H(u) {tag}"))
        frac = mesh.areas[u > 0].sum() / mesh.areas.sum()
        print(f"nu={nu:<3g} ell={ell:<4g} draw {k}: foreground area {frac:.2f}")

print(f"figures in {out}")
