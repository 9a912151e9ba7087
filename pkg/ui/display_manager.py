from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import click
import numpy as np
import pandas as pd

from utils.errors import DomainError, ShapeError

CANVAS = 640
MARGIN = 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")
MARKERS = ("circle", "square", "triangle", "diamond", "cross")


def _marker(shape: str, x: float, y: float, color: str, size: float = 5.0, css: str = "point") -> str:
    if shape == "circle":
        return f'<circle class="{css}" cx="{x:.2f}" cy="{y:.2f}" r="{size:.1f}" fill="{color}"/>'
    if shape == "square":
        return f'<rect class="{css}" x="{x - size:.2f}" y="{y - size:.2f}" width="{2 * size:.1f}" height="{2 * size:.1f}" fill="{color}"/>'
    if shape == "triangle":
        pts = f"{x:.2f},{y - size:.2f} {x - size:.2f},{y + size:.2f} {x + size:.2f},{y + size:.2f}"
        return f'<polygon class="{css}" points="{pts}" fill="{color}"/>'
    if shape == "diamond":
        pts = f"{x:.2f},{y - size:.2f} {x + size:.2f},{y:.2f} {x:.2f},{y + size:.2f} {x - size:.2f},{y:.2f}"
        return f'<polygon class="{css}" points="{pts}" fill="{color}"/>'
    d = f"M{x - size:.2f},{y - size:.2f} L{x + size:.2f},{y + size:.2f} M{x - size:.2f},{y + size:.2f} L{x + size:.2f},{y - size:.2f}"
    return f'<path class="{css}" d="{d}" stroke="{color}" stroke-width="2" fill="none"/>'


class DisplayManager:
    """Rendering of experiment output: SVG scatter plots and console tables."""

    @staticmethod
    def emit_scatter(
        projected,
        predicted: Sequence[int],
        true_labels: Sequence[int],
        centroids,
        centroid_distances,
        path,
        title: str = "",
    ) -> Path:
        """Write a 2-D scatter: color = predicted cluster, marker = true label.

        Centroids are joined pairwise by segments labelled with their
        latent-space (pre-projection) distance.
        """
        points = np.asarray(projected, dtype=np.float64)
        if points.size == 0:
            raise DomainError("nothing to plot: the projection is empty")
        if points.ndim != 2 or points.shape[1] != 2:
            raise ShapeError(f"projected points must be n x 2, got shape {points.shape}")
        predicted = np.asarray(predicted, dtype=np.int64)
        true_labels = np.asarray(true_labels, dtype=np.int64)
        if predicted.shape != (len(points),) or true_labels.shape != (len(points),):
            raise ShapeError(f"{len(points)} points need {len(points)} predicted and true labels")
        centres = np.asarray(centroids, dtype=np.float64).reshape(-1, 2)
        distances = np.asarray(centroid_distances, dtype=np.float64)
        if distances.shape != (len(centres), len(centres)):
            raise ShapeError(f"centroid distances of shape {distances.shape} for {len(centres)} centroids")

        everything = np.vstack([points, centres])
        lo, hi = everything.min(axis=0), everything.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        scale = (CANVAS - 2 * MARGIN) / span

        def place(p):
            # svg y grows downwards
            return MARGIN + (p[0] - lo[0]) * scale[0], CANVAS - MARGIN - (p[1] - lo[1]) * scale[1]

        body = []
        for a in range(len(centres)):
            for b in range(a + 1, len(centres)):
                (x1, y1), (x2, y2) = place(centres[a]), place(centres[b])
                body.append(
                    f'<line class="centroid-link" x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                    f'stroke="#444" stroke-dasharray="4 3"/>'
                )
                body.append(
                    f'<text class="centroid-distance" x="{(x1 + x2) / 2:.2f}" y="{(y1 + y2) / 2 - 4:.2f}" '
                    f'font-size="11" text-anchor="middle">{distances[a, b]:.3f}</text>'
                )
        for p, cluster, label in zip(points, predicted, true_labels):
            x, y = place(p)
            body.append(_marker(MARKERS[label % len(MARKERS)], x, y, PALETTE[cluster % len(PALETTE)]))
        for c, centre in enumerate(centres):
            x, y = place(centre)
            body.append(
                f'<circle class="centroid" cx="{x:.2f}" cy="{y:.2f}" r="9" fill="none" '
                f'stroke="{PALETTE[c % len(PALETTE)]}" stroke-width="3"/>'
            )

        newline = "\n  "
        title = escape(title)
        svg = f"""<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">
  <title>{title}</title>
  <rect width="100%" height="100%" fill="white"/>
  <text x="{MARGIN}" y="{MARGIN / 2:.0f}" font-size="14">{title}</text>
  {newline.join(body)}
</svg>
"""
        path = Path(path)
        path.write_text(svg, encoding="utf-8")
        return path

    @staticmethod
    def show_results(results: pd.DataFrame) -> None:
        if results.empty:
            click.echo("No completed variants.")
            return
        table = results.pivot_table(
            index=["dataset", "variant"], columns="split", values="misclassification", sort=False
        )
        click.echo(table.to_string(float_format=lambda v: f"{v:.4f}"))
