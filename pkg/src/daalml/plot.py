"""Dependency-free SVG scatter of 2-D embeddings with segment overlays."""
from __future__ import annotations

import numpy as np

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
SIZE = 600
PAD = 30


def embedding_svg(E, labels, segments=None) -> str:
    """Points coloured by class; each class segment ``A_k -> B_k`` is one
    ``<line>`` element.  Output depends only on the inputs."""
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels)
    if E.ndim != 2 or E.shape[1] != 2:
        raise ValueError("embedding_svg needs 2-D embeddings")
    pts = [E]
    if segments is not None:
        pts += [segments.A, segments.B]
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = float(np.max(hi - lo)) or 1.0
    scale = (SIZE - 2 * PAD) / span

    def xy(p):
        return PAD + (p[0] - lo[0]) * scale, SIZE - PAD - (p[1] - lo[1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white" stroke="#cccccc"/>',
        '<g id="points">',
    ]
    for p, k in zip(E, labels.tolist()):
        x, y = xy(p)
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{PALETTE[k % len(PALETTE)]}" '
                   f'fill-opacity="0.7" class="c{k}"/>')
    out.append("</g>")
    if segments is not None:
        out.append('<g id="segments">')
        for k in range(segments.num_classes):
            (x1, y1), (x2, y2) = xy(segments.A[k]), xy(segments.B[k])
            out.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                       f'stroke="{PALETTE[k % len(PALETTE)]}" stroke-width="4" '
                       f'stroke-linecap="round" class="segment c{k}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
