"""CSV and SVG output.

Every CSV starts with ``#`` comment lines (provenance) followed by a
header row.  Floats use fixed formats so identical runs give identical
bytes.
"""

from __future__ import annotations

import csv
import io
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import scipy
import sklearn

from . import __version__


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    value = float(value)
    if not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return f"{value:.12e}"


def provenance(config_hash: str, model_key: str | None = None) -> list[str]:
    line = f"koopman-lambert {__version__} config={config_hash}"
    if model_key:
        line += f" model={model_key}"
    return [line, f"numpy {np.__version__} scipy {scipy.__version__} sklearn {sklearn.__version__}"]


def write_csv(path, header, rows, comments=()) -> Path:
    """RFC-4180 CSV with ``#`` comment lines before the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    path.write_text(buf.getvalue(), newline="")
    return path


def read_csv(path):
    """``(comments, header, rows)`` of a CSV written by ``write_csv``."""
    lines = Path(path).read_text().splitlines()
    comments = [line[2:] for line in lines if line.startswith("#")]
    body = [line for line in lines if not line.startswith("#")]
    rows = list(csv.reader(body))
    return comments, rows[0], rows[1:]


def line_plot_svg(path, series, title="", xlabel="", ylabel="", marker=None,
                  width=640, height=400) -> Path:
    """Self-contained SVG line plot.

    ``series`` maps a label to ``(x, y)`` arrays; each becomes one polyline.
    ``marker`` is an optional ``(x, y, label)`` drawn as a circle.
    """
    pad_l, pad_r, pad_t, pad_b = 70, 20, 40, 50
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    keep = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[keep], ys[keep]
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * (width - pad_l - pad_r)

    def py(y):
        return height - pad_b - (y - y0) / (y1 - y0) * (height - pad_t - pad_b)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", version="1.1",
                     width=str(width), height=str(height), viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    ET.SubElement(svg, "text", x=str(width / 2), y="24", **{"text-anchor": "middle",
                  "font-family": "sans-serif", "font-size": "15"}).text = title
    axes = ET.SubElement(svg, "g", stroke="black", **{"stroke-width": "1"})
    ET.SubElement(axes, "line", x1=str(pad_l), y1=str(height - pad_b),
                  x2=str(width - pad_r), y2=str(height - pad_b))
    ET.SubElement(axes, "line", x1=str(pad_l), y1=str(pad_t), x2=str(pad_l),
                  y2=str(height - pad_b))
    labels = ET.SubElement(svg, "g", **{"font-family": "sans-serif", "font-size": "11"})
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        ET.SubElement(labels, "text", x=f"{px(xv):.2f}", y=str(height - pad_b + 16),
                      **{"text-anchor": "middle"}).text = f"{xv:.6g}"
        ET.SubElement(labels, "text", x=str(pad_l - 6), y=f"{py(yv) + 4:.2f}",
                      **{"text-anchor": "end"}).text = f"{yv:.6g}"
    ET.SubElement(labels, "text", x=str((width + pad_l) / 2), y=str(height - 10),
                  **{"text-anchor": "middle"}).text = xlabel
    ET.SubElement(labels, "text", x="14", y=str(height / 2),
                  transform=f"rotate(-90 14 {height / 2})",
                  **{"text-anchor": "middle"}).text = ylabel
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    for k, (name, (x, y)) in enumerate(series.items()):
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        line = ET.SubElement(svg, "polyline", points=points, fill="none",
                             stroke=colors[k % len(colors)], **{"stroke-width": "1.5"})
        ET.SubElement(line, "title").text = name
    if marker is not None:
        mx, my, label = marker
        ET.SubElement(svg, "circle", cx=f"{px(mx):.2f}", cy=f"{py(my):.2f}", r="4",
                      fill="#d62728")
        ET.SubElement(svg, "text", x=f"{px(mx) + 6:.2f}", y=f"{py(my) - 6:.2f}",
                      **{"font-family": "sans-serif", "font-size": "11"}).text = label
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    return path
