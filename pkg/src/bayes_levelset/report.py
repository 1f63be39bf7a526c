"""On-disk outputs: per-triangle CSV fields, traces, metrics and SVG heatmaps."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .mesh import Mesh

__all__ = ["write_field", "read_field", "write_trace", "svg_heatmap", "emit_report", "write_study"]

STUDY_COLUMNS = ("noise", "param", "metric", "mean", "sd", "n")


def write_field(path, values) -> None:
    """``triangle_id,value`` rows, one per triangle."""
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle_id", "value"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])


def read_field(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = np.array([int(r["triangle_id"]) for r in rows])
    if not np.array_equal(ids, np.arange(ids.size)):
        raise ValueError(f"{path}: triangle ids must be 0..n-1 in order")
    return np.array([float(r["value"]) for r in rows])


def write_trace(path, triangle_id: int, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["draw", f"tri{triangle_id}"])
        for k, v in enumerate(np.asarray(values, dtype=float)):
            w.writerow([k, repr(float(v))])


def _color(t: float) -> str:
    # linear blue -> red
    t = min(max(t, 0.0), 1.0)
    return "#{:02x}{:02x}{:02x}".format(round(255 * t), 0, round(255 * (1 - t)))


def svg_heatmap(mesh: Mesh, values, vmin: float, vmax: float, title: str = "", size: int = 320) -> str:
    """One filled polygon per triangle, colour pinned to ``[vmin, vmax]``."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.num_triangles,):
        raise ValueError("one value per triangle required")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    scale = (size - 20) / float(max(hi - lo))
    span = vmax - vmin if vmax > vmin else 1.0

    def xy(p):
        return f"{10 + (p[0] - lo[0]) * scale:.2f},{10 + (hi[1] - p[1]) * scale:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
        f'viewBox="0 0 {size} {size + 20}">',
        f"<title>{title}</title>",
    ]
    for tri, v in zip(mesh.triangles, values):
        pts = " ".join(xy(mesh.vertices[k]) for k in tri)
        c = _color((v - vmin) / span)
        parts.append(f'<polygon points="{pts}" fill="{c}" stroke="{c}" stroke-width="0.3"/>')
    parts.append(
        f'<text x="10" y="{size + 14}" font-size="11" font-family="sans-serif">'
        f"{title} [{vmin:g}, {vmax:g}]</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _json_safe(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, float)):
            v = float(v)
            out[k] = None if math.isnan(v) else v
        elif isinstance(v, np.integer):
            out[k] = int(v)
        else:
            out[k] = v
    return out


def emit_report(bundle, output_dir) -> Path:
    """Write fields, traces, metrics and figures for one experiment."""
    out = Path(output_dir)
    for sub in ("fields", "traces", "figures"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    mesh = bundle.coarse_mesh
    ph = bundle.config.phantom
    ranges = {"a": (ph.a_back, ph.a_fore), "b": (ph.b_back, ph.b_fore)}

    fields = {f"truth_{p}": getattr(bundle, f"truth_{p}") for p in "ab"}
    fields.update(bundle.reconstruction.fields())
    for name, vals in fields.items():
        write_field(out / "fields" / f"{name}.csv", vals)
        param = name[-1]
        if name.startswith("stderr"):
            vmin, vmax = 0.0, (ranges[param][1] - ranges[param][0]) / 2
        else:
            vmin, vmax = ranges[param]
        (out / "figures" / f"{name}.svg").write_text(svg_heatmap(mesh, vals, vmin, vmax, name))

    for which, (tri, vals) in bundle.traces.items():
        write_trace(out / "traces" / f"{which}.csv", tri, vals)

    payload = {
        "metrics": _json_safe(bundle.metrics),
        "timing": _json_safe(bundle.timing),
        "config": bundle.config.to_dict(),
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return out


def write_study(output_dir, table, runs) -> Path:
    """``study.csv`` summary plus a per-run ``runs.csv``."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "study.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STUDY_COLUMNS)
        for r in table:
            w.writerow([f"{r['noise']:g}", r["param"], r["metric"],
                        repr(float(r["mean"])), repr(float(r["sd"])), r["n"]])
    keys = []
    for r in runs:
        keys += [k for k in r if k not in keys]
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in runs:
            w.writerow({k: r.get(k, "") for k in keys})
    return out / "study.csv"
