"""Trajectory export: JSON documents, CSV tables and 2D SVG plots."""

import csv
import json

import numpy as np

from .errors import ConfigError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")


def trajectories_doc(xs, **meta):
    """JSON-ready dict; SE(3) points are stored as ``[t, omega]`` per step."""
    if not xs:
        space, T = meta.pop("space", None), meta.pop("T", None)
    else:
        space, T = xs[0].space.to_json(), xs[0].T
        meta.pop("space", None)
        meta.pop("T", None)
    return {**meta, "space": space, "T": T, "trajectories": [x.local().tolist() for x in xs]}


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def write_csv(path, xs):
    """One row per (sample, step) with the local coordinates as columns."""
    d = xs[0].space.local_dim if xs else 0
    names = ["tx", "ty", "tz", "wx", "wy", "wz"] if xs and xs[0].space.kind == "se3" else [f"q{i}" for i in range(d)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "step", *names])
        for k, x in enumerate(xs):
            for t, row in enumerate(x.local()):
                w.writerow([k, t, *(repr(float(v)) for v in row)])


def svg_plot(groups, width=480, height=360, pad=20):
    """SVG polylines for ``[(trajectories, colour, opacity), ...]`` of 2D trajectories."""
    pts = [x.points for xs, _, _ in groups for x in xs]
    if not pts:
        raise ConfigError("nothing to plot")
    if any(p.ndim != 2 or p.shape[1] != 2 for p in pts):
        raise ConfigError("SVG export needs 2D Euclidean trajectories; use CSV for other spaces")
    allp = np.concatenate(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    s = min((width - 2 * pad) / span[0], (height - 2 * pad) / span[1])
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">', f'<rect width="{width}" height="{height}" fill="white"/>']
    for xs, colour, opacity in groups:
        for x in xs:
            u = pad + (x.points[:, 0] - lo[0]) * s
            v = height - pad - (x.points[:, 1] - lo[1]) * s
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(u, v))
            lines.append(f'<polyline points="{coords}" fill="none" stroke="{colour}" '
                         f'stroke-width="1.2" stroke-opacity="{opacity}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(path, xs, demos=()):
    groups = []
    if demos:
        groups.append((list(demos), "#999999", 0.6))
    groups.append((list(xs), PALETTE[0], 0.8))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg_plot(groups))
