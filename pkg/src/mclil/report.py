"""Deterministic artifact writers: CSV tables, JSON reports, SVG plots.

CSV bodies contain no timestamps and use shortest round-trip float
formatting, so identical configurations produce byte-identical files; the
run timestamp lives only in the report.json metadata block.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chain import SamplePath
from .strassen import LILReport


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path | str, header: Sequence[str],
              rows: Iterable[Sequence]) -> None:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def vector_header(base: str, d: int) -> list[str]:
    return [f"{base}_{i + 1}" for i in range(d)]


def write_path_csv(path: Path | str, sample: SamplePath,
                   state_labels: Sequence[str]) -> None:
    """Path export: k, state, S_1..S_d."""
    d = sample.partial_sums.shape[1]
    header = ["k", "state"] + vector_header("S", d)
    rows = (
        [k, state_labels[sample.states[k]]] + list(sample.partial_sums[k])
        for k in range(sample.n + 1)
    )
    write_csv(path, header, rows)


def write_json_report(path: Path | str, payload: dict) -> None:
    payload = dict(payload)
    payload.setdefault("metadata", {})
    payload["metadata"] = dict(payload["metadata"])
    payload["metadata"]["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    Path(path).write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


# ---------------------------------------------------------------------------
# SVG snapshot plot
# ---------------------------------------------------------------------------

_SVG_W = 720
_SVG_H = 440
_MARGIN = 40


def _to_px(t: np.ndarray, y: np.ndarray, ylo: float, yhi: float):
    xs = _MARGIN + t * (_SVG_W - 2 * _MARGIN)
    span = max(yhi - ylo, 1e-12)
    ys = _SVG_H - _MARGIN - (y - ylo) / span * (_SVG_H - 2 * _MARGIN)
    return xs, ys


def _polyline(t, y, ylo, yhi, color, width=1.0, dash=""):
    xs, ys = _to_px(t, y, ylo, yhi)
    pts = " ".join(f"{x:.2f},{yy:.2f}" for x, yy in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline fill="none" stroke="{color}" '
            f'stroke-width="{width}"{extra} points="{pts}"/>')


def write_lil_svg(path: Path | str, report: LILReport,
                  n_snapshots: int = 6) -> None:
    """Plot the last few xi snapshots against the parabolic envelope.

    d = 1 paths are drawn signed; higher dimensions by Euclidean norm.
    """
    if report.snapshots is None:
        raise ValueError("report carries no snapshots")
    t = report.grid
    envelope = np.sqrt(report.trD * t)
    snaps = report.snapshots[-n_snapshots:]
    d = snaps.shape[2]
    if d == 1:
        curves = [s[:, 0] for s in snaps]
        ylo = min(float(min(c.min() for c in curves)), float(-envelope.max()))
        yhi = max(float(max(c.max() for c in curves)), float(envelope.max()))
    else:
        curves = [np.sqrt(np.sum(s * s, axis=1)) for s in snaps]
        ylo = 0.0
        yhi = max(float(max(c.max() for c in curves)), float(envelope.max()))
    pad = 0.05 * max(yhi - ylo, 1e-12)
    ylo, yhi = ylo - pad, yhi + pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" '
        f'height="{_SVG_H}" viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        _polyline(t, envelope, ylo, yhi, "#444444", 1.5, dash="6,4"),
    ]
    if d == 1:
        parts.append(_polyline(t, -envelope, ylo, yhi, "#444444", 1.5, dash="6,4"))
    shades = ["#bbccee", "#99aadd", "#7788cc", "#5566bb", "#3344aa", "#112299"]
    for curve, color in zip(curves, shades[-len(curves):]):
        parts.append(_polyline(t, curve, ylo, yhi, color))
    zero_x, zero_y = _to_px(np.array([0.0, 1.0]), np.array([0.0, 0.0]), ylo, yhi)
    parts.append(f'<line x1="{zero_x[0]:.2f}" y1="{zero_y[0]:.2f}" '
                 f'x2="{zero_x[1]:.2f}" y2="{zero_y[1]:.2f}" '
                 f'stroke="#dddddd" stroke-width="1"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
