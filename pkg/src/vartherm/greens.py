"""Baseline and modified Green's functions.

Kernels live on the ``2n x 2n`` mirrored grid in centered layout: the source
cell is ``(n, n)`` and the far corner is ``[0, 0]``.  Their spectra are taken
after ``ifftshift`` so the source sits at the DFT origin, which makes
``kernel_spectrum(f)`` the modal gain of the mirrored periodic network.

The closed forms below multiply spectra by spatial maps (``g_sp0`` and
``Q``).  Such a map is applied in the same shifted layout, so the DC bin
pairs with the value at the source cell.  Power quantities that sit beside
the unit-impulse spectrum (``F(mu)``, ``F(P_var)``) use the per-cell
normalization ``fft2(x) / m**2``; see :func:`power_spectrum`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import optimize

from .fields import (
    FieldMap,
    ShapeError,
    SpectralMap,
    crop_center_array,
    load_fieldmap,
    mirror_pad_array,
    save_fieldmap,
)
from .oracle import (
    ChipStack,
    SolveOptions,
    impulse_response,
    mirrored_stack,
    unit_impulse,
)
from .variation import ConductivityMap, LeakageBaseline

log = logging.getLogger(__name__)

RUNAWAY_FLOOR = 1e-6
TRANSIENT_SPAN = 10e-3  # s
TRANSIENT_SAMPLES = 100


class ThermalRunawayError(ArithmeticError):
    """A closed-form denominator vanished: leakage feedback gain reached one."""


class CalibrationError(RuntimeError):
    """A calibration fit was degenerate or too poor to use."""


# --------------------------------------------------------------------------
# spectral plumbing


def kernel_spectrum(f: FieldMap) -> np.ndarray:
    """Modal gains of a centered ``2n x 2n`` kernel."""
    return np.fft.fft2(np.fft.ifftshift(f.values))


def kernel_from_spectrum(spec: np.ndarray, pitch: float, unit: str = "K/W") -> FieldMap:
    return FieldMap(np.fft.fftshift(np.fft.ifft2(spec).real), pitch, unit)


def as_multiplier(g: FieldMap) -> np.ndarray:
    """Spatial map laid out so its source-cell value pairs with the DC bin."""
    return np.fft.ifftshift(g.values)


def power_spectrum(p: np.ndarray) -> np.ndarray:
    """Per-cell normalized spectrum of a power map (a constant ``mu`` maps to ``mu`` at DC).

    The closed forms add this to the flat spectrum of a 1 W impulse, so it is
    expressed in watts per cell rather than summed over the grid.
    """
    m = p.shape[0]
    return np.fft.fft2(np.fft.ifftshift(p)) / (m * m)


def mirrored_convolve(p: np.ndarray, spec: np.ndarray) -> np.ndarray:
    """Convolve an ``n x n`` die map with a mirrored-grid kernel spectrum, cropped back."""
    n = p.shape[0]
    if spec.shape != (2 * n, 2 * n):
        raise ShapeError(f"kernel grid {spec.shape} does not match a {n}x{n} die")
    return crop_center_array(np.fft.ifft2(np.fft.fft2(mirror_pad_array(p)) * spec).real, n)


def _guard(den: np.ndarray, what: str) -> None:
    mag = np.abs(den)
    if np.min(mag) < RUNAWAY_FLOOR or den.flat[0].real <= 0:
        k = np.unravel_index(np.argmin(mag), den.shape)
        raise ThermalRunawayError(
            f"{what}: denominator {den[k]:.3g} at frequency bin {k} "
            f"(DC value {den.flat[0].real:.3g}); feedback gain has reached one"
        )


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationReport:
    c_prime: float  # 1/(W/(m K))
    fit_r2: float
    sweep: tuple  # ((conductivity, response), ...)
    probe: str
    alpha: float

    def __post_init__(self):
        if len(self.sweep) < 4:
            raise ValueError("calibration sweep needs at least 4 points")
        if not 0.0 <= self.fit_r2 <= 1.0:
            raise ValueError("fit_r2 must lie in [0, 1]")


def _mirrored_k(stack: ChipStack, k_die: ConductivityMap | None) -> ConductivityMap | None:
    if k_die is None:
        return None
    if k_die.k_map.n != stack.n:
        raise ShapeError("conductivity map does not match the stack grid")
    return ConductivityMap(
        FieldMap(mirror_pad_array(k_die.k_map.values), stack.pitch, "W/(m*K)"), k_die.k_nominal
    )


def extract_baseline(stack: ChipStack, k_die: ConductivityMap | None = None):
    """Impulse response on the mirrored grid, its outer-ring mean and far-corner value."""
    if stack.n % 2:
        raise ValueError("the die grid must have an even side")
    f = impulse_response(mirrored_stack(stack), _mirrored_k(stack, k_die), "steady")
    v = f.values
    ring = np.concatenate([v[0, :], v[-1, :], v[1:-1, 0], v[1:-1, -1]])
    return f, float(ring.mean()), float(v[0, 0])


def make_g_shift(f_sp0: FieldMap, kappa_inf: float, center_value: float) -> FieldMap:
    return f_sp0.with_values(f_sp0.values - kappa_inf + center_value)


def default_sweep(k_nominal: float, c: float, dT=(-5.0, 10.0, 25.0, 40.0, 55.0)):
    """Conductivities spanning 40-100 C for a 45 C ambient (dT relative to ambient)."""
    return [k_nominal * (1.0 - c * t) for t in dT]


def _probe(f: FieldMap, probe: str) -> float:
    if probe == "spectral":
        return float(f.values.sum())  # DC modal gain
    if probe == "center":
        return float(f.values[f.n // 2, f.n // 2])
    raise ValueError("probe must be 'spectral' or 'center'")


def fit_alpha(
    stack: ChipStack,
    sweep,
    c: float,
    probe: str = "spectral",
    responses=None,
    jobs: int = 1,
):
    """Fit ``f(k) = f0 (1 - c' (k - k0'))`` over a conductivity sweep; ``alpha = c' c k0'``.

    ``probe`` selects where the response is read: ``"spectral"`` uses the
    peak of the transfer function (its DC gain), ``"center"`` the peak cell of
    the impulse response.  ``responses`` may supply precomputed values.
    """
    ks = np.asarray(sweep, dtype=float)
    if ks.size < 4:
        raise CalibrationError("conductivity sweep needs at least 4 points")
    if np.ptp(ks) <= 1e-12 * np.max(np.abs(ks)):
        raise CalibrationError("conductivity sweep is degenerate (all values equal)")
    k0 = stack.layers[0].conductivity
    if responses is None:
        ms = mirrored_stack(stack)

        def run(k):
            return _probe(impulse_response(ms.with_die_layer(conductivity=float(k))), probe)

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            responses = list(pool.map(run, ks))
    y = np.asarray(responses, dtype=float)
    slope, icpt = np.polyfit(ks, y, 1)
    pred = icpt + slope * ks
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    r2 = min(max(r2, 0.0), 1.0)
    f0 = float(icpt + slope * k0)
    c_prime = float(-slope / f0)
    alpha = float(c_prime * c * k0)
    report = CalibrationReport(c_prime, r2, tuple(zip(ks.tolist(), y.tolist())), probe, alpha)
    if ss_tot == 0 or r2 < 0.95:
        raise CalibrationError(f"conductivity fit r^2 = {r2:.3f} < 0.95; linearization invalid")
    return alpha, report


# --------------------------------------------------------------------------
# closed forms


def deterministic_greens(
    f_sp0: FieldMap, g_sp0: FieldMap, alpha: float, beta: float, mu: float
) -> FieldMap:
    """``F(f_det) = F(f) / (1 - alpha g (1 + F(mu)) - mu beta F(f))`` on the mirrored grid."""
    _check_pair(f_sp0, g_sp0)
    F = kernel_spectrum(f_sp0)
    m = f_sp0.n
    f_mu = np.zeros((m, m))
    f_mu[0, 0] = mu
    den = 1.0 - alpha * as_multiplier(g_sp0) * (1.0 + f_mu) - mu * beta * F
    _guard(den, "deterministic Green's function")
    return kernel_from_spectrum(F / den, f_sp0.pitch)


def q_rand(p_var: FieldMap) -> FieldMap:
    """``Q = P_var - P_var(far corner) + P_var(center)``."""
    v = p_var.values
    c = v.shape[0] // 2
    return p_var.with_values(v - v[0, 0] + v[c, c])


def random_greens(
    f_det_spec: SpectralMap,
    f_sp0: FieldMap,
    g_sp0: FieldMap,
    p_var: FieldMap,
    alpha: float,
    beta: float,
    mu: float,
) -> FieldMap:
    """Shift-variant correction for a leakage variation map, cropped to the die grid."""
    _check_pair(f_sp0, g_sp0)
    m = f_sp0.n
    n = p_var.n
    if m != 2 * n:
        raise ShapeError(f"variation map {n}x{n} does not match kernel grid {m}x{m}")
    pv = mirror_pad_array(p_var.values)
    F = kernel_spectrum(f_sp0)
    g = as_multiplier(g_sp0)
    q = np.fft.ifftshift(q_rand(FieldMap(pv, p_var.pitch, "W")).values)
    f_pv = power_spectrum(pv)
    f_mu = np.zeros((m, m))
    f_mu[0, 0] = mu
    num = beta * F * q + alpha * f_pv * g
    den = 1.0 - alpha * (1.0 + f_mu + f_pv) * g - mu * beta * F - beta * F * q
    _guard(den, "random Green's function")
    full = np.fft.fftshift(np.fft.ifft2(f_det_spec.coeffs * num / den).real)
    return FieldMap(crop_center_array(full, n), p_var.pitch, "K/W^2")


def transient_spectrum(
    steady_spec: np.ndarray, f_spec: np.ndarray, g_mult: np.ndarray, alpha: float, C: float, t: float
) -> np.ndarray:
    if t < 0:
        raise ValueError("time must be non-negative")
    tau = C * f_spec.real + alpha * C * g_mult * steady_spec.real
    if np.any(tau <= 0):
        raise CalibrationError("non-positive transient time constant")
    return steady_spec * -np.expm1(-t / tau)


def transient_greens(
    steady: FieldMap, f_sp0: FieldMap, g_sp0: FieldMap, alpha: float, C: float, t: float
) -> FieldMap:
    """``F(T) = F(T_ss) (1 - exp(-t / (C F(f) + alpha C g F(T_ss))))``."""
    _check_pair(f_sp0, g_sp0)
    _check_pair(f_sp0, steady)
    spec = transient_spectrum(
        kernel_spectrum(steady), kernel_spectrum(f_sp0), as_multiplier(g_sp0), alpha, C, t
    )
    out = kernel_from_spectrum(spec, steady.pitch)
    return _clamp(out)


def _clamp(f: FieldMap) -> FieldMap:
    v = f.values
    peak = float(np.max(np.abs(v)))
    small = (v < 0) & (v > -1e-9 * peak)
    if not np.any(small):
        return f
    return f.with_values(np.where(small, 0.0, v))


def _check_pair(a: FieldMap, b: FieldMap) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"kernel grids differ: {a.values.shape} vs {b.values.shape}")


# --------------------------------------------------------------------------
# capacitance


def center_step_model(f_spec: np.ndarray, steady_spec: np.ndarray, n: int, pitch: float):
    """Return ``model(times, C)``: center-cell die response to a held 1 W source.

    The die source is mirror-padded (four images), matching what the oracle
    sees on the bounded die.
    """
    src = np.fft.fft2(mirror_pad_array(unit_impulse(n, pitch).values))

    def model(times, C):
        out = np.empty(len(times))
        for i, t in enumerate(times):
            s = steady_spec * -np.expm1(-t / (C * f_spec.real))
            out[i] = np.fft.ifft2(src * s).real[n, n]
        return out

    return model


def fit_capacitance_to(times, observed, model, c_guess: float) -> tuple[float, float]:
    """Least-squares ``C`` for a one-parameter step model; returns ``(C, rel_residual)``."""
    times = np.asarray(times, dtype=float)
    observed = np.asarray(observed, dtype=float)
    scale = float(np.max(np.abs(observed)))
    if scale == 0:
        raise CalibrationError("observed transient response is identically zero")

    def cost(logc):
        return float(np.sum((model(times, np.exp(logc)) - observed) ** 2))

    lg = np.log(c_guess)
    res = optimize.minimize_scalar(cost, bounds=(lg - 6.0, lg + 6.0), method="bounded",
                                   options={"xatol": 1e-10})
    C = float(np.exp(res.x))
    resid = float(np.max(np.abs(model(times, C) - observed))) / scale
    if resid > 0.10:
        raise CalibrationError(f"capacitance fit residual {resid:.1%} exceeds 10%")
    return C, resid


def fit_capacitance(
    stack: ChipStack,
    k_die: ConductivityMap | None = None,
    f_sp0: FieldMap | None = None,
    times=None,
    dt: float = 2e-5,
) -> float:
    """Fit the per-cell thermal capacitance from the oracle's center step response."""
    times = np.arange(1, 21) * 0.5e-3 if times is None else np.asarray(times, dtype=float)
    if f_sp0 is None:
        f_sp0 = extract_baseline(stack, k_die)[0]
    maps = impulse_response(stack, k_die, "transient", SolveOptions(dt=dt), times=times)
    n = stack.n
    observed = [m.values[n // 2, n // 2] for m in maps[:-1]]
    F = kernel_spectrum(f_sp0)
    model = center_step_model(F, F, n, stack.pitch)
    guess = sum(ly.heat_capacity * ly.thickness for ly in stack.layers) * stack.cell_area
    C, resid = fit_capacitance_to(times, observed, model, guess if guess > 0 else 1e-6)
    log.info("fitted capacitance %.4g J/K (max residual %.2f%%)", C, 100 * resid)
    return C


# --------------------------------------------------------------------------
# leakage baseline


def leakage_rise(
    f_spec: np.ndarray, base: LeakageBaseline, tol: float = 1e-9, max_iters: int = 200
) -> FieldMap:
    """Self-consistent rise from leakage alone, ``T0 = f * (P0 (1 + beta T0))``.

    Solved by fixed-point iteration of mirrored convolutions; diverges only
    when the leakage feedback gain reaches one.
    """
    p0 = base.p_leak0.values
    t = mirrored_convolve(p0, f_spec)
    for _ in range(max_iters):
        nxt = mirrored_convolve(p0 * (1.0 + base.beta * t), f_spec)
        step = float(np.max(np.abs(nxt - t)))
        t = nxt
        if not np.isfinite(step):
            break
        if step <= tol * max(1.0, float(np.max(np.abs(t)))):
            return base.p_leak0.with_values(t, unit="K")
    raise ThermalRunawayError("leakage-only baseline did not converge; feedback gain >= 1")


# --------------------------------------------------------------------------
# the calibrated set


def default_t_samples() -> np.ndarray:
    return np.linspace(TRANSIENT_SPAN / TRANSIENT_SAMPLES, TRANSIENT_SPAN, TRANSIENT_SAMPLES)


@dataclass
class GreensSet:
    """Everything the online solver needs for one chip.

    Kernels (``f_sp0``, ``g_sp0``, ``f_det``, ``tran_tensor``) are on the
    mirrored grid; ``f_rand``, ``p_var`` and ``baseline`` are die-sized.
    ``baseline`` is the leakage-only rise the dynamic response adds to.
    ``leak_offset`` is the per-cell mean leakage of the current variation
    map minus ``mu``; it is nonzero after :meth:`with_variation` when
    ``f_det`` is reused for a chip with a different mean.
    """

    f_sp0: FieldMap
    phi: float
    kappa_inf: float
    g_sp0: FieldMap
    alpha: float
    beta: float
    mu: float
    f_det: FieldMap
    f_rand: FieldMap
    p_var: FieldMap
    baseline: FieldMap
    C: float
    t_samples: np.ndarray = field(default_factory=default_t_samples)
    ambient: float = 318.15
    leak_offset: float = 0.0
    tran_tensor: list = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.t_samples = np.asarray(self.t_samples, dtype=float)
        if self.t_samples.size == 0 or np.any(np.diff(self.t_samples) <= 0) or self.t_samples[0] <= 0:
            raise ValueError("t_samples must be positive and strictly increasing")
        if self.f_sp0.n != 2 * self.n:
            raise ShapeError("kernel grid must be twice the die grid")
        if not self.C > 0:
            raise ValueError("capacitance must be positive")
        if self.tran_tensor is None:
            self.tran_tensor = [self.transient(t) for t in self.t_samples]

    @property
    def n(self) -> int:
        return self.p_var.n

    @property
    def pitch(self) -> float:
        return self.p_var.pitch

    def spectrum(self, name: str) -> np.ndarray:
        if name not in self._cache:
            self._cache[name] = kernel_spectrum(getattr(self, name))
        return self._cache[name]

    def transient_spec(self, t: float) -> np.ndarray:
        # Modal time constants use the leakage-amplified gain F(f_det): with
        # linear leakage feedback each mode relaxes as C F(f_det), not C F(f_sp0).
        return transient_spectrum(
            self.spectrum("f_det"), self.spectrum("f_det"), as_multiplier(self.g_sp0),
            self.alpha, self.C, t,
        )

    def transient(self, t: float) -> FieldMap:
        return _clamp(kernel_from_spectrum(self.transient_spec(t), self.pitch))

    def saturation(self, t: float) -> float:
        """Fraction of the steady center response reached at time ``t``."""
        c = self.f_det.n // 2
        return float(kernel_from_spectrum(self.transient_spec(t), self.pitch).values[c, c]
                     / self.f_det.values[c, c])

    def with_variation(self, base: LeakageBaseline) -> GreensSet:
        """Same chip, new leakage variation map: reuse ``f_sp0`` / ``f_det``."""
        f_rand = random_greens(
            SpectralMap(self.spectrum("f_det"), self.pitch), self.f_sp0, self.g_sp0,
            base.p_var, self.alpha, self.beta, self.mu,
        )
        baseline = leakage_rise(self.spectrum("f_sp0"), base)
        return replace(self, f_rand=f_rand, p_var=base.p_var, baseline=baseline,
                       leak_offset=base.mu - self.mu, tran_tensor=self.tran_tensor,
                       _cache=dict(self._cache))

    # ---- persistence -------------------------------------------------------

    _MAPS = ("f_sp0", "g_sp0", "f_det", "f_rand", "p_var", "baseline")

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in self._MAPS:
            save_fieldmap(getattr(self, name), d / f"{name}.map")
        lines = [
            f"alpha = {float(self.alpha)!r}",
            f"beta = {float(self.beta)!r}",
            f"mu = {float(self.mu)!r}",
            f"C = {float(self.C)!r}",
            f"phi = {float(self.phi)!r}",
            f"kappa_inf = {float(self.kappa_inf)!r}",
            f"ambient = {float(self.ambient)!r}",
            f"leak_offset = {float(self.leak_offset)!r}",
            "t_samples = " + " ".join(repr(float(t)) for t in self.t_samples),
        ]
        (d / "manifest.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory) -> GreensSet:
        from .config import read_keyvalue

        d = Path(directory)
        kv = read_keyvalue(d / "manifest.txt")
        try:
            maps = {name: load_fieldmap(d / f"{name}.map") for name in cls._MAPS}
            return cls(
                phi=float(kv["phi"]),
                kappa_inf=float(kv["kappa_inf"]),
                alpha=float(kv["alpha"]),
                beta=float(kv["beta"]),
                mu=float(kv["mu"]),
                C=float(kv["C"]),
                ambient=float(kv["ambient"]),
                leak_offset=float(kv.get("leak_offset", 0.0)),
                t_samples=np.array(kv["t_samples"].split(), dtype=float),
                **maps,
            )
        except KeyError as e:
            raise ValueError(f"{d}: manifest is missing key {e}") from None


def calibrate(
    stack: ChipStack,
    base: LeakageBaseline,
    k_die: ConductivityMap | None = None,
    conductivity_coeff: float = 0.0,
    probe: str = "spectral",
    t_samples=None,
    jobs: int = 1,
) -> tuple[GreensSet, CalibrationReport | None]:
    """Build a :class:`GreensSet` for one chip from oracle impulse responses."""
    f_sp0, phi, kappa = extract_baseline(stack, k_die)
    c = f_sp0.n // 2
    g_sp0 = make_g_shift(f_sp0, kappa, f_sp0.values[c, c])
    report = None
    alpha = 0.0
    if conductivity_coeff != 0.0:
        sweep = default_sweep(stack.layers[0].conductivity, conductivity_coeff)
        alpha, report = fit_alpha(stack, sweep, conductivity_coeff, probe, jobs=jobs)
    f_det = deterministic_greens(f_sp0, g_sp0, alpha, base.beta, base.mu)
    f_rand = random_greens(
        SpectralMap(kernel_spectrum(f_det), f_det.pitch), f_sp0, g_sp0, base.p_var,
        alpha, base.beta, base.mu,
    )
    C = fit_capacitance(stack, k_die, f_sp0)
    baseline = leakage_rise(kernel_spectrum(f_sp0), base)
    gs = GreensSet(
        f_sp0=f_sp0, phi=phi, kappa_inf=kappa, g_sp0=g_sp0, alpha=alpha, beta=base.beta,
        mu=base.mu, f_det=f_det, f_rand=f_rand, p_var=base.p_var, baseline=baseline, C=C,
        t_samples=default_t_samples() if t_samples is None else t_samples,
        ambient=stack.ambient,
    )
    return gs, report
