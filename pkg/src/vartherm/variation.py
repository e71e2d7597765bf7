"""Within-die process variation: correlated / uncorrelated parameter maps,
variation-affected leakage at ambient, and silicon conductivity maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import FieldMap, ShapeError

DEFAULT_BETA = 0.0275  # 1/K, leakage temperature coefficient
DEFAULT_ETA = 1.3  # silicon power-law exponent for k(T)
K_SILICON = 130.0  # W/(m K) at ambient
EXPONENT_CAP = 5.0
CONDUCTIVITY_CAP = 0.3

# Relative sensitivities of leakage to gate length / oxide thickness, expressed
# per unit *fractional* deviation.  Together with the default sigmas they give
# a leakage coefficient of variation near 0.3.
GATE_LENGTH = 22e-9
OXIDE_THICKNESS = 1.2e-9
BETA_L = -3.5 / GATE_LENGTH
BETA_TOX = -2.5 / OXIDE_THICKNESS

# Stream tags so every generator draws from its own reproducible stream.
_TAG_SYS, _TAG_RAND, _TAG_COND = 1, 2, 3


@dataclass(frozen=True)
class VariationParams:
    sigma_sys: float = 0.06
    sigma_rand: float = 0.03
    corr_range: float = 0.5
    seed: int = 0
    die_edge: float = 0.01

    def __post_init__(self):
        if self.sigma_sys < 0 or self.sigma_rand < 0:
            raise ValueError("variation sigmas must be non-negative")
        if not 0 < self.corr_range <= 1:
            raise ValueError("corr_range must lie in (0, 1]")
        if not self.die_edge > 0:
            raise ValueError("die_edge must be positive")

    def scaled(self, factor: float) -> VariationParams:
        return VariationParams(
            self.sigma_sys * factor,
            self.sigma_rand * factor,
            self.corr_range,
            self.seed,
            self.die_edge,
        )

    def reseeded(self, seed: int) -> VariationParams:
        return VariationParams(
            self.sigma_sys, self.sigma_rand, self.corr_range, seed, self.die_edge
        )


@dataclass(frozen=True)
class LeakageBaseline:
    p_leak0: FieldMap
    mu: float
    p_var: FieldMap
    beta: float = DEFAULT_BETA

    @classmethod
    def from_map(cls, p_leak0: FieldMap, beta: float = DEFAULT_BETA) -> LeakageBaseline:
        if np.any(p_leak0.values < 0):
            raise ValueError("leakage power must be non-negative")
        mu = float(p_leak0.values.mean())
        p_var = p_leak0.values - mu
        # store the reconstructed sum so mu + p_var reproduces p_leak0 bit for bit
        p0 = np.maximum(mu + p_var, 0.0)
        return cls(p_leak0.with_values(p0), mu, p_leak0.with_values(p_var), beta)

    @classmethod
    def uniform(cls, n: int, pitch: float, total: float, beta: float = DEFAULT_BETA):
        return cls.from_map(FieldMap(np.full((n, n), total / n**2), pitch, "W"), beta)


@dataclass(frozen=True)
class ConductivityMap:
    k_map: FieldMap
    k_nominal: float

    @classmethod
    def uniform(cls, n: int, pitch: float, k_nominal: float = K_SILICON):
        return cls(FieldMap(np.full((n, n), k_nominal), pitch, "W/(m*K)"), k_nominal)


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, tag])


def spherical_correlation(d, phi):
    """Spherical correlogram: 1 - 1.5 h + 0.5 h^3 for h = d/phi <= 1, else 0."""
    h = np.minimum(np.asarray(d, dtype=float) / phi, 1.0)
    return 1.0 - 1.5 * h + 0.5 * h**3


def _spherical_field(sigma: float, phi_cells: float, n: int, rng, size=None):
    # Circulant embedding on a torus large enough that no pair of die cells
    # sees a wrapped correlation.
    m = int(2 ** np.ceil(np.log2(n + int(np.ceil(phi_cells)) + 1)))
    k = np.fft.fftfreq(m) * m
    d = np.hypot(k[:, None], k[None, :])
    lam = np.fft.fft2(sigma**2 * spherical_correlation(d, phi_cells)).real
    lam = np.clip(lam, 0.0, None)
    shape = (m, m) if size is None else (size, m, m)
    white = rng.standard_normal(shape)
    z = np.fft.ifft2(np.sqrt(lam) * np.fft.fft2(white)).real
    return z[..., :n, :n]


def gen_systematic_map(params: VariationParams, n: int) -> FieldMap:
    """Zero-mean Gaussian field with spherical correlation, std ``sigma_sys``."""
    if n < 2:
        raise ShapeError("n must be >= 2")
    pitch = params.die_edge / n
    if params.sigma_sys == 0:
        return FieldMap(np.zeros((n, n)), pitch)
    phi_cells = params.corr_range * n
    z = _spherical_field(params.sigma_sys, phi_cells, n, _rng(params.seed, _TAG_SYS))
    return FieldMap(z, pitch)


def gen_random_map(params: VariationParams, n: int) -> FieldMap:
    if n < 2:
        raise ShapeError("n must be >= 2")
    pitch = params.die_edge / n
    z = params.sigma_rand * _rng(params.seed, _TAG_RAND).standard_normal((n, n))
    return FieldMap(z, pitch)


def parameter_maps(params: VariationParams, n: int) -> tuple[FieldMap, FieldMap]:
    """Fractional gate-length and oxide-thickness deviation maps.

    Each parameter gets its own systematic and random component.  Oxide
    thickness reuses the generators with an offset seed.
    """
    dl = gen_systematic_map(params, n) + gen_random_map(params, n)
    tox_params = params.reseeded(params.seed + 0x9E3779B1)
    dtox = gen_systematic_map(tox_params, n) + gen_random_map(tox_params, n)
    return dl, dtox


def leakage_baseline(
    nominal_leak: FieldMap,
    dL: FieldMap,
    dTox: FieldMap,
    beta_L: float = BETA_L,
    beta_tox: float = BETA_TOX,
    beta: float = DEFAULT_BETA,
    exponent_cap: float = EXPONENT_CAP,
) -> LeakageBaseline:
    """Ambient-temperature leakage ``P0 = Pnom * exp(beta_L dL + beta_tox dTox)``.

    ``dL`` and ``dTox`` are absolute deviations (meters).
    """
    if nominal_leak.values.shape != dL.values.shape or dL.values.shape != dTox.values.shape:
        raise ShapeError("leakage and variation maps must share a shape")
    if np.any(nominal_leak.values < 0):
        raise ValueError("nominal leakage must be non-negative")
    expo = beta_L * dL.values + beta_tox * dTox.values
    worst = float(np.max(np.abs(expo)))
    if worst > exponent_cap:
        raise OverflowError(
            f"variation exponent {worst:.3g} exceeds cap {exponent_cap}; inputs are unphysical"
        )
    p0 = nominal_leak.with_values(nominal_leak.values * np.exp(expo), unit="W")
    return LeakageBaseline.from_map(p0, beta)


def variation_leakage(
    nominal_leak: FieldMap,
    params: VariationParams,
    beta: float = DEFAULT_BETA,
    beta_L: float = BETA_L,
    beta_tox: float = BETA_TOX,
) -> LeakageBaseline:
    """Leakage baseline for a seeded variation scenario (fractional maps scaled to meters)."""
    dl, dtox = parameter_maps(params, nominal_leak.n)
    return leakage_baseline(
        nominal_leak,
        dl * GATE_LENGTH,
        dtox * OXIDE_THICKNESS,
        beta_L,
        beta_tox,
        beta,
    )


def leakage_at_temperature(base: LeakageBaseline, dT: FieldMap) -> FieldMap:
    return base.p_leak0.with_values((1.0 + base.beta * dT.values) * base.p_leak0.values)


def conductivity_map(
    k_nominal: float,
    params: VariationParams,
    dopant_spread: float,
    n: int,
    cap: float = CONDUCTIVITY_CAP,
) -> ConductivityMap:
    """Silicon conductivity with uncorrelated dopant-driven scatter."""
    if not k_nominal > 0:
        raise ValueError("k_nominal must be positive")
    pitch = params.die_edge / n
    r = dopant_spread * _rng(params.seed, _TAG_COND).standard_normal((n, n))
    r = np.clip(r, -cap, cap)
    return ConductivityMap(FieldMap(k_nominal * (1.0 + r), pitch, "W/(m*K)"), k_nominal)


def conductivity_at_temperature(k0p, c: float, dT):
    """Linearized ``k(T) = k0' (1 - c dT)``; scalars or arrays."""
    k = np.asarray(k0p, dtype=float) * (1.0 - c * np.asarray(dT, dtype=float))
    if np.any(k <= 0):
        raise ValueError("conductivity non-positive: temperature outside the linearized range")
    return float(k) if k.ndim == 0 else k


def power_law_conductivity(k0: float, T, eta: float = DEFAULT_ETA):
    """``k0 (T/300)^-eta`` with ``k0`` the 300 K conductivity."""
    return k0 * (np.asarray(T, dtype=float) / 300.0) ** (-eta)


def fit_conductivity_coeff(
    k_ambient: float = K_SILICON,
    t_ambient: float = 318.15,
    eta: float = DEFAULT_ETA,
    t_range: tuple[float, float] = (313.15, 373.15),
    samples: int = 61,
) -> float:
    """Least-squares ``c`` so that ``k_ambient (1 - c dT)`` tracks the power law.

    The power law is anchored so that it equals ``k_ambient`` at ``t_ambient``.
    """
    T = np.linspace(*t_range, samples)
    k0 = k_ambient * (t_ambient / 300.0) ** eta
    ratio = power_law_conductivity(k0, T, eta) / k_ambient
    dT = T - t_ambient
    # minimize sum((1 - c dT - ratio)^2) over c
    return float(np.sum(dT * (1.0 - ratio)) / np.sum(dT * dT))
