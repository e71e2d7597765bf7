"""Binary PPM heatmaps of temperature maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import FieldMap

# low-to-high ramp: dark blue, cyan, green, yellow, red
PALETTE = np.array(
    [[0, 0, 128], [0, 160, 255], [0, 200, 80], [255, 220, 0], [220, 0, 0]], dtype=float
)


@dataclass(frozen=True)
class HeatmapImage:
    width: int
    height: int
    vmin: float  # K
    vmax: float  # K
    path: Path


def colorize(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Map values onto the palette; returns ``(rgb uint8, vmin, vmax)``."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("heatmap input must be finite")
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    u = (v - lo) / span if span > 0 else np.zeros_like(v)
    x = u * (len(PALETTE) - 1)
    i = np.minimum(np.floor(x).astype(int), len(PALETTE) - 2)
    w = (x - i)[..., None]
    rgb = PALETTE[i] * (1.0 - w) + PALETTE[i + 1] * w
    return np.rint(rgb).astype(np.uint8), lo, hi


def render_heatmap(f: FieldMap, path, scale: int = 4) -> HeatmapImage:
    """Write ``f`` as a binary PPM, ``scale`` pixels per cell; the legend is a header comment."""
    rgb, lo, hi = colorize(f.values)
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    h, w = rgb.shape[:2]
    header = f"P6\n# vmin={lo:.6g} K vmax={hi:.6g} K\n{w} {h}\n255\n".encode()
    p = Path(path)
    try:
        p.write_bytes(header + rgb.tobytes())
    except OSError as e:
        raise OSError(f"cannot write heatmap {p}: {e.strerror}") from None
    return HeatmapImage(w, h, lo, hi, p)


def read_ppm(path) -> tuple[np.ndarray, str]:
    """Pixels and legend comment of a PPM written by :func:`render_heatmap`."""
    data = Path(path).read_bytes()
    lines, pos = [], 0
    while len(lines) < 4:
        end = data.index(b"\n", pos)
        lines.append(data[pos:end].decode())
        pos = end + 1
    w, h = (int(x) for x in lines[2].split())
    px = np.frombuffer(data[pos:], dtype=np.uint8).reshape(h, w, 3)
    return px, lines[1]
