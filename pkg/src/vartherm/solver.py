"""Full-chip temperature from a calibrated :class:`GreensSet`.

Results separate the leakage-only baseline (``baseline``, the rise the chip
sits at with no dynamic power) from the response to dynamic power
(``rise``).  ``total`` is their sum and is what is compared against the
oracle's absolute rise.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldMap, PowerTrace, ShapeError, mirror_pad_array
from .greens import GreensSet, ThermalRunawayError, leakage_rise
from .variation import LeakageBaseline, VariationParams, variation_leakage

NEG_CLAMP = 1e-9
WINDOW_SPAN = 5e-3  # s


class ValidationError(ValueError):
    """A result violated a physical sanity bound."""


@dataclass
class ThermalResult:
    rise: FieldMap | list
    baseline: FieldMap | None = None
    ambient: float = 318.15
    times: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for m in self.frames:
            if not np.all(np.isfinite(m.values)):
                raise ValidationError("temperature rise is not finite")

    @property
    def frames(self) -> list:
        return self.rise if isinstance(self.rise, list) else [self.rise]

    def _plus_base(self, m: FieldMap) -> FieldMap:
        return m if self.baseline is None else m + self.baseline

    @property
    def total(self):
        """Rise above ambient including the leakage baseline."""
        out = [self._plus_base(m) for m in self.frames]
        return out if isinstance(self.rise, list) else out[0]

    @property
    def absolute(self):
        out = [m.with_values(m.values + self.ambient) for m in
               (self.total if isinstance(self.rise, list) else [self.total])]
        return out if isinstance(self.rise, list) else out[0]


@dataclass(frozen=True)
class ErrorReport:
    mae: float
    max_err: float
    pct_of_max_rise: float
    hotspot_hit: bool
    ref_max: float = 0.0

    def __post_init__(self):
        if self.mae > self.max_err + 1e-12:
            raise ValueError("mae cannot exceed max_err")

    @property
    def max_pct(self) -> float:
        return 100.0 * self.max_err / self.ref_max if self.ref_max else 0.0

    def as_dict(self) -> dict:
        return {"mae": self.mae, "max_err": self.max_err, "pct_of_max_rise": self.pct_of_max_rise,
                "max_pct": self.max_pct, "hotspot_hit": self.hotspot_hit}


# --------------------------------------------------------------------------
# internals


def _spec_mirror(p: np.ndarray) -> np.ndarray:
    return np.fft.rfft2(mirror_pad_array(p))


def _half(spec: np.ndarray) -> np.ndarray:
    """Non-redundant half of a real kernel's full spectrum, matching ``rfft2``."""
    return spec[:, : spec.shape[1] // 2 + 1]


def _back(spec: np.ndarray, n: int) -> np.ndarray:
    h = n // 2
    return np.fft.irfft2(spec, s=(2 * n, 2 * n))[h : h + n, h : h + n]


def _check(gs: GreensSet, m: FieldMap, what: str) -> None:
    if m.values.shape != (gs.n, gs.n):
        raise ShapeError(f"{what} is {m.values.shape}, calibrated grid is {(gs.n, gs.n)}")


def _clamp_negative(v: np.ndarray, meta: dict) -> np.ndarray:
    peak = float(np.max(np.abs(v))) if v.size else 0.0
    lo = float(v.min()) if v.size else 0.0
    if lo < 0:
        if lo < -NEG_CLAMP * peak - 1e-12:
            meta["min_rise"] = min(meta.get("min_rise", 0.0), lo)
        v = np.where(v < 0, np.maximum(v, -NEG_CLAMP * peak), v)
    return v


RANDOM_MODES = ("interaction", "hadamard", "none")
INTERACTION_ITERS = 2


def _check_mode(mode: str) -> None:
    if mode not in RANDOM_MODES:
        raise ValueError(f"random mode must be one of {RANDOM_MODES}")


def _random_term(gs: GreensSet, p_var: FieldMap | None, total_power: float) -> np.ndarray:
    if p_var is None:
        return 0.0
    return gs.f_rand.values * p_var.values * total_power


def _interaction(gs: GreensSet, p_var: FieldMap, det: np.ndarray, iters: int) -> np.ndarray:
    """Shift-variant leakage correction ``T = det + beta f_det * (P_var o T)``, truncated.

    The variation map is taken relative to the mean built into ``f_det``.
    """
    spec = _half(gs.spectrum("f_det"))
    dp = gs.beta * (p_var.values + gs.leak_offset)
    t = det
    for _ in range(iters):
        t = det + _back(_spec_mirror(dp * t) * spec, gs.n)
    return t - det


def _result(gs, maps, meta, times=None):
    return ThermalResult(maps, gs.baseline, gs.ambient, times, meta)


# --------------------------------------------------------------------------
# solves


def steady_profile(
    gs: GreensSet, p_dyn: FieldMap, p_var: FieldMap | None = None, random: str = "interaction",
    iters: int = INTERACTION_ITERS,
) -> ThermalResult:
    """Deterministic convolution ``f_det * P_dyn`` plus a random component.

    ``random`` selects the random component: ``"interaction"`` resolves the
    coupling of the leakage variation map with the dynamic rise
    (``beta f_det * (P_var o T)``, ``iters`` fixed-point sweeps);
    ``"hadamard"`` uses ``f_rand o P_var * sum(P_dyn)``; ``"none"`` omits it.
    ``p_var`` defaults to the chip's map.
    """
    if gs is None:
        raise ValueError("GreensSet is not calibrated")
    _check_mode(random)
    _check(gs, p_dyn, "power map")
    p_var = gs.p_var if p_var is None else p_var
    _check(gs, p_var, "variation map")
    t0 = time.perf_counter()
    p = p_dyn.values
    rise = _back(_spec_mirror(p) * _half(gs.spectrum("f_det")), gs.n)
    if random == "hadamard":
        rise = rise + _random_term(gs, p_var, float(p.sum()))
    elif random == "interaction":
        rise = rise + _interaction(gs, p_var, rise, iters)
    meta = {"online_s": time.perf_counter() - t0, "random": random}
    rise = _clamp_negative(rise, meta)
    return _result(gs, p_dyn.with_values(rise, unit="K"), meta)


def step_response(
    gs: GreensSet,
    p_dyn: FieldMap,
    p_var: FieldMap | None = None,
    times=(),
    random: str = "interaction",
    iters: int = INTERACTION_ITERS,
) -> ThermalResult:
    """Rise at each of ``times`` after ``p_dyn`` is switched on at ``t = 0``.

    The ``"hadamard"`` random term is scaled by the center-cell saturation
    fraction of the deterministic kernel; the ``"interaction"`` term is
    evaluated on the deterministic transient map at each time.
    """
    _check_mode(random)
    _check(gs, p_dyn, "power map")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    p_var = gs.p_var if p_var is None else p_var
    t0 = time.perf_counter()
    src = _spec_mirror(p_dyn.values)
    rnd = _random_term(gs, p_var, float(p_dyn.values.sum())) if random == "hadamard" else 0.0
    meta = {"random": random}
    out = []
    for t in times:
        rise = _back(src * _half(gs.transient_spec(t)), gs.n)
        if random == "hadamard":
            rise = rise + gs.saturation(t) * rnd
        elif random == "interaction":
            rise = rise + _interaction(gs, p_var, rise, iters)
        out.append(p_dyn.with_values(_clamp_negative(rise, meta), unit="K"))
    meta["online_s"] = time.perf_counter() - t0
    return _result(gs, out, meta, times)


def default_window(dt: float) -> int:
    return max(1, math.ceil(WINDOW_SPAN / dt - 1e-9))


def _kernel_index(gs: GreensSet, dt: float) -> int:
    """Tensor stride for one trace step; dt must be a multiple of the sample spacing."""
    spacing = float(gs.t_samples[0])
    ratio = dt / spacing
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-6 * ratio:
        raise ValueError(f"trace dt {dt:g} s is not a multiple of the transient sample spacing {spacing:g} s")
    if np.any(np.abs(np.diff(gs.t_samples) - spacing) > 1e-9 * spacing):
        raise ValueError("transient samples are not evenly spaced")
    return stride


def time_varying_profile(
    gs: GreensSet,
    trace: PowerTrace,
    k_window: int | None = None,
    p_var: FieldMap | None = None,
    initial: FieldMap | None = None,
    random: str = "interaction",
    iters: int = INTERACTION_ITERS,
) -> ThermalResult:
    """Windowed superposition of transient kernels over a power trace.

    ``T(t_n) = sum_{i=1..k} f_tran(t_i) * (P_{n-i+1} - P_{n-i}) + f_tran(inf) * P_{n-k}``.
    Frames before the trace are ``initial`` (held long enough to be at steady
    state), or zero power.  Kernels past the sampled tensor are saturated.
    Random components follow :func:`step_response`.
    """
    _check_mode(random)
    if len(trace) == 0:
        raise ValueError("empty power trace")
    for f in trace.frames:
        _check(gs, f, "trace frame")
    k = default_window(trace.dt) if k_window is None else int(k_window)
    if k < 1:
        raise ValueError("k_window must be at least 1")
    stride = _kernel_index(gs, trace.dt)
    p_var = gs.p_var if p_var is None else p_var
    t0 = time.perf_counter()

    n = gs.n
    steady = _half(gs.spectrum("f_det"))
    kernels, fracs = [], []
    for i in range(1, k + 1):
        j = i * stride - 1
        if j < len(gs.t_samples):
            kernels.append(_half(gs.transient_spec(gs.t_samples[j])))
            fracs.append(gs.saturation(gs.t_samples[j]))
        else:
            kernels.append(steady)
            fracs.append(1.0)

    p0 = np.zeros((n, n)) if initial is None else initial.values
    frames = [p0] + [f.values for f in trace.frames]  # frames[j] = P(t_j), j = 0..N
    specs = [_spec_mirror(p) for p in frames]
    sums = [float(p.sum()) for p in frames]
    rnd = gs.f_rand.values * p_var.values if random == "hadamard" else 0.0

    def at(j):
        return max(j, 0)

    out = []
    meta = {"k_window": k, "random": random}
    for m in range(1, len(frames)):
        acc = steady * specs[at(m - k)]
        scale = sums[at(m - k)]
        for i in range(1, k + 1):
            a, b = at(m - i + 1), at(m - i)
            if a == b:
                continue
            acc = acc + kernels[i - 1] * (specs[a] - specs[b])
            scale += fracs[i - 1] * (sums[a] - sums[b])
        rise = _back(acc, n)
        if random == "hadamard":
            rise = rise + rnd * scale
        elif random == "interaction":
            rise = rise + _interaction(gs, p_var, rise, iters)
        out.append(trace.frames[0].with_values(_clamp_negative(rise, meta), unit="K"))
    meta["online_s"] = time.perf_counter() - t0
    return _result(gs, out, meta, trace.times)


# --------------------------------------------------------------------------
# metrics


def _stack(x) -> np.ndarray:
    if isinstance(x, ThermalResult):
        x = x.total
    if isinstance(x, FieldMap):
        return x.values[None]
    return np.stack([m.values for m in x])


def error_metrics(calc, ref) -> ErrorReport:
    """Compare total rises (or raw maps / map lists); percent is of the reference peak."""
    a, b = _stack(calc), _stack(ref)
    if a.shape != b.shape:
        raise ShapeError(f"result shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    mae = float(diff.mean())
    mx = float(diff.max())
    ref_max = float(b.max())
    pct = 100.0 * mae / ref_max if ref_max > 0 else 0.0
    frame = int(np.argmax(b.reshape(len(b), -1).max(axis=1)))
    ia = np.unravel_index(np.argmax(a[frame]), a[frame].shape)
    ib = np.unravel_index(np.argmax(b[frame]), b[frame].shape)
    hit = max(abs(ia[0] - ib[0]), abs(ia[1] - ib[1])) <= 1
    return ErrorReport(mae, mx, pct, bool(hit), ref_max)


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class MonteCarloRun:
    seed: int
    max_rise: float
    mean_rise: float
    runtime_ms: float
    error: str = ""


@dataclass(frozen=True)
class MonteCarloSummary:
    runs: tuple
    mean: float
    std: float
    percentiles: dict

    def csv_rows(self, timing: bool = True) -> list[str]:
        head = "seed,max_rise,mean_rise" + (",runtime_ms" if timing else "") + ",error"
        rows = [head]
        for r in self.runs:
            cells = [str(r.seed), f"{r.max_rise:.12g}", f"{r.mean_rise:.12g}"]
            if timing:
                cells.append(f"{r.runtime_ms:.3f}")
            cells.append(r.error)
            rows.append(",".join(cells))
        return rows


def monte_carlo(
    gs: GreensSet,
    nominal_leak: FieldMap,
    params: VariationParams,
    p_dyn: FieldMap,
    n_runs: int | None = None,
    seeds=None,
    random: str = "interaction",
    jobs: int = 1,
) -> MonteCarloSummary:
    """Steady solves over leakage-variation seeds, reusing the chip's ``f_sp0`` and ``f_det``."""
    if seeds is None:
        if n_runs is None or n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        seeds = range(params.seed, params.seed + n_runs)
    seeds = list(seeds)
    if not seeds:
        raise ValueError("n_runs must be at least 1")
    def one(s):
        t0 = time.perf_counter()
        try:
            base = variation_leakage(nominal_leak, params.reseeded(int(s)), gs.beta)
            tot = steady_profile(gs.with_variation(base), p_dyn, random=random).total.values
            return MonteCarloRun(int(s), float(tot.max()), float(tot.mean()),
                                 1e3 * (time.perf_counter() - t0))
        except (ArithmeticError, ValueError) as e:
            msg = f"{type(e).__name__}: {e}".replace(",", ";").replace("\n", " ")
            return MonteCarloRun(int(s), math.nan, math.nan, 1e3 * (time.perf_counter() - t0), msg)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        runs = list(pool.map(one, seeds))
    ok = np.array([r.max_rise for r in runs if not r.error])
    if ok.size:
        pct = {q: float(np.percentile(ok, q)) for q in (5, 50, 95)}
        mean, std = float(ok.mean()), float(ok.std())
    else:
        pct, mean, std = {q: math.nan for q in (5, 50, 95)}, math.nan, math.nan
    return MonteCarloSummary(tuple(runs), mean, std, pct)


__all__ = [
    "RANDOM_MODES", "ThermalResult", "ErrorReport", "ValidationError", "ThermalRunawayError",
    "steady_profile", "step_response", "time_varying_profile", "error_metrics",
    "MonteCarloRun", "MonteCarloSummary", "monte_carlo", "default_window",
    "leakage_rise", "LeakageBaseline",
]
