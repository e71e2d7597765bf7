"""Grid containers and the spectral / real-space operators used by the solvers.

All spectral work uses the unnormalized forward DFT and the ``1/m**2``
normalized inverse (numpy's default pair).  With that pair the forward
transform of a unit-impulse response is directly the modal gain of the
system, and the convolution theorem holds without extra factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

UNITS = ("W", "K", "K/W", "1", "W/(m*K)")

FORWARD_SIGN = -1
FORWARD_NORM = "none"
INVERSE_NORM = "1/m^2"


class ShapeError(ValueError):
    """Raised when two grids that must agree in shape or pitch do not."""


@dataclass(frozen=True)
class FieldMap:
    """Square scalar grid over the die (or over its mirrored extension).

    ``values[i, j]`` is row ``i`` (y), column ``j`` (x); row 0 is the die
    edge nearest the origin.  ``pitch`` is the cell edge in meters.
    """

    values: np.ndarray
    pitch: float
    unit: str = "1"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"FieldMap needs a square 2D grid, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ShapeError("FieldMap needs n >= 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("FieldMap values must be finite")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def edge(self) -> float:
        return self.n * self.pitch

    def with_values(self, values, unit: str | None = None) -> FieldMap:
        return FieldMap(values, self.pitch, self.unit if unit is None else unit)

    def __add__(self, other):
        if isinstance(other, FieldMap):
            _check_same(self, other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, FieldMap):
            _check_same(self, other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def total(self) -> float:
        return float(self.values.sum())

    def max(self) -> float:
        return float(self.values.max())

    def argmax(self) -> tuple[int, int]:
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return int(i), int(j)


@dataclass(frozen=True)
class SpectralMap:
    """Complex DFT coefficients of an ``m x m`` grid plus the convention used."""

    coeffs: np.ndarray
    pitch: float
    unit: str = "1"
    convention: dict = field(
        default_factory=lambda: {
            "sign": FORWARD_SIGN,
            "forward": FORWARD_NORM,
            "inverse": INVERSE_NORM,
        }
    )

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]


@dataclass(frozen=True)
class RadialProfile:
    """Samples of a radial function; ``r`` strictly increasing from 0."""

    r: np.ndarray
    values: np.ndarray
    deviation: np.ndarray | None = None

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape:
            raise ShapeError("RadialProfile r and values must be 1D of equal length")
        if r.size and (np.any(np.diff(r) <= 0) or r[0] < 0):
            raise ValueError("RadialProfile radii must be non-negative and strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("RadialProfile values must be finite")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "values", v)


def _check_same(f: FieldMap, g: FieldMap) -> None:
    if f.values.shape != g.values.shape:
        raise ShapeError(f"grid shapes differ: {f.values.shape} vs {g.values.shape}")
    if not np.isclose(f.pitch, g.pitch, rtol=1e-12, atol=0.0):
        raise ShapeError(f"grid pitches differ: {f.pitch} vs {g.pitch}")


def forward_transform(f: FieldMap) -> SpectralMap:
    return SpectralMap(np.fft.fft2(f.values), f.pitch, f.unit)


def inverse_transform(s: SpectralMap) -> FieldMap:
    conv = s.convention
    if conv.get("sign") != FORWARD_SIGN or conv.get("forward") != FORWARD_NORM:
        raise ValueError(f"spectrum was produced under a foreign convention: {conv}")
    return FieldMap(np.fft.ifft2(s.coeffs).real, s.pitch, s.unit)


def convolve(f: FieldMap, g: FieldMap) -> FieldMap:
    """Circular convolution ``(f * g)[x] = sum_y f[y] g[x - y]`` via the DFT."""
    _check_same(f, g)
    out = np.fft.ifft2(np.fft.fft2(f.values) * np.fft.fft2(g.values)).real
    return FieldMap(out, f.pitch, f.unit)


def convolve_centered(p: np.ndarray, kernel_spec: np.ndarray) -> np.ndarray:
    """Convolve ``p`` with a kernel whose origin sits at the grid center.

    ``kernel_spec`` is the forward transform of the *ifftshifted* kernel,
    so the result is aligned with ``p`` (no half-grid shift).
    """
    return np.fft.ifft2(np.fft.fft2(p) * kernel_spec).real


def hadamard(f: FieldMap, g: FieldMap) -> FieldMap:
    _check_same(f, g)
    return FieldMap(f.values * g.values, f.pitch, f.unit)


def mirror_pad_array(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    h = n // 2
    return np.pad(a, ((h, n - h), (h, n - h)), mode="symmetric")


def crop_center_array(a: np.ndarray, n: int) -> np.ndarray:
    if a.shape != (2 * n, 2 * n):
        raise ShapeError(f"expected a {2 * n}x{2 * n} grid, got {a.shape}")
    h = n // 2
    return a[h : h + n, h : h + n]


def mirror_pad(f: FieldMap) -> FieldMap:
    """Extend an ``n x n`` map to ``2n x 2n`` with mirror-image sources.

    The die occupies the central block; the added border on each side is the
    reflection of the die about that edge, so the periodic extension of the
    result is the even reflection of ``f`` (zero normal flux at every edge).
    """
    return FieldMap(mirror_pad_array(f.values), f.pitch, f.unit)


def crop_center(f: FieldMap, n: int) -> FieldMap:
    return FieldMap(crop_center_array(f.values, n), f.pitch, f.unit)


def bessel_j0(x):
    return special.j0(x)


def hankel_transform(p: RadialProfile, s_grid) -> RadialProfile:
    """Zero-order Hankel transform ``H(s) = int f(r) J0(s r) r dr``.

    Trapezoid quadrature over the sampled profile, truncated at its last
    radius.  Only used to check the radial / 2D transform equivalence.
    """
    if p.r.size == 0:
        raise ValueError("cannot transform an empty profile")
    s = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if np.any(~np.isfinite(s)) or np.any(s < 0):
        raise ValueError("spatial frequencies must be finite and non-negative")
    integrand = p.values[None, :] * bessel_j0(s[:, None] * p.r[None, :]) * p.r[None, :]
    h = np.trapezoid(integrand, p.r, axis=1)
    return RadialProfile(s, h)


def radial_profile_of(f: FieldMap, center: tuple[int, int] | None = None) -> RadialProfile:
    """Annulus-averaged profile about ``center`` (default: cell ``(n//2, n//2)``).

    Bins are one pitch wide and centered on integer multiples of the pitch.
    ``deviation`` holds the largest absolute departure from the bin mean.
    """
    n = f.n
    ci, cj = center if center is not None else (n // 2, n // 2)
    ii, jj = np.indices(f.values.shape)
    rad = np.hypot(ii - ci, jj - cj)
    bins = np.rint(rad).astype(int).ravel()
    vals = f.values.ravel()
    counts = np.bincount(bins)
    sums = np.bincount(bins, weights=vals)
    used = np.nonzero(counts)[0]
    mean = sums[used] / counts[used]
    lookup = np.zeros(counts.size)
    lookup[used] = mean
    dev_all = np.abs(vals - lookup[bins])
    dev = np.zeros(counts.size)
    np.maximum.at(dev, bins, dev_all)
    return RadialProfile(used * f.pitch, mean, dev[used])


def spectral_frequencies(m: int, pitch: float) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic frequencies (cycles/m) matching ``np.fft.fft2`` index order."""
    q = np.fft.fftfreq(m, d=pitch)
    return np.meshgrid(q, q, indexing="ij")


def save_fieldmap(f: FieldMap, path) -> None:
    lines = [f"{f.n} {f.pitch!r} {f.unit}"]
    for row in f.values:
        lines.append(" ".join(f"{v:.15g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_fieldmap(path) -> FieldMap:
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 3:
        raise ValueError(f"{path}: header must be 'n pitch unit'")
    n, pitch, unit = int(head[0]), float(head[1]), head[2]
    rows = [r.split() for r in text[1:] if r.strip()]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ShapeError(f"{path}: expected {n} rows of {n} values")
    return FieldMap(np.array(rows, dtype=float), pitch, unit)


@dataclass(frozen=True)
class PowerTrace:
    """Dynamic power frames sampled every ``dt`` seconds."""

    dt: float
    frames: list

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("trace dt must be positive")
        if self.frames:
            shape = self.frames[0].values.shape
            for f in self.frames:
                if f.values.shape != shape:
                    raise ShapeError("all trace frames must share a shape")
                if np.any(f.values < 0):
                    raise ValueError("trace powers must be non-negative")
        object.__setattr__(self, "frames", list(self.frames))

    def __len__(self):
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self.frames) + 1)
