import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vartherm.fields import FieldMap
from vartherm.variation import (
    BETA_L,
    BETA_TOX,
    DEFAULT_BETA,
    K_SILICON,
    LeakageBaseline,
    VariationParams,
    conductivity_at_temperature,
    conductivity_map,
    fit_conductivity_coeff,
    gen_random_map,
    gen_systematic_map,
    leakage_at_temperature,
    leakage_baseline,
    power_law_conductivity,
    spherical_correlation,
    variation_leakage,
)

N = 16
PITCH = 0.01 / N


def fm(v, unit="W"):
    return FieldMap(np.asarray(v, dtype=float), PITCH, unit)


def test_params_validation():
    with pytest.raises(ValueError):
        VariationParams(sigma_sys=-0.1)
    with pytest.raises(ValueError):
        VariationParams(corr_range=0.0)
    with pytest.raises(ValueError):
        VariationParams(corr_range=1.5)


# ---- systematic ------------------------------------------------------------


def test_systematic_zero_sigma_and_determinism():
    p = VariationParams(sigma_sys=0.0)
    assert np.all(gen_systematic_map(p, N).values == 0)
    q = VariationParams(seed=42)
    np.testing.assert_array_equal(gen_systematic_map(q, N).values, gen_systematic_map(q, N).values)
    assert not np.array_equal(
        gen_systematic_map(q, N).values, gen_systematic_map(q.reseeded(43), N).values
    )


def test_systematic_ensemble_statistics():
    params = VariationParams(sigma_sys=0.06, corr_range=0.5)
    stack = np.array([gen_systematic_map(params.reseeded(s), N).values for s in range(10_000)])
    a = stack[:, 4, 4]
    b = stack[:, 4, 8]  # phi = 8 cells, so phi/2 = 4 cells away
    assert abs(a.std() / 0.06 - 1) < 0.03
    assert abs(np.corrcoef(a, b)[0, 1] - spherical_correlation(0.5, 1.0)) < 0.05


def test_systematic_maps_cluster():
    params = VariationParams(corr_range=0.5)
    phi = int(0.5 * N)
    near, far = [], []
    for s in range(100):
        z = gen_systematic_map(params.reseeded(s), N).values
        near.append(np.mean(np.abs(np.diff(z, axis=1))))
        far.append(np.mean(np.abs(z[:, phi:] - z[:, :-phi])))
    assert np.mean(near) < np.mean(far)


def test_spherical_correlogram_shape():
    np.testing.assert_allclose(spherical_correlation([0.0, 1.0, 2.0], 1.0), [1.0, 0.0, 0.0])
    assert spherical_correlation(0.5, 1.0) == pytest.approx(0.3125)


# ---- random ----------------------------------------------------------------


def test_random_map_examples():
    assert np.all(gen_random_map(VariationParams(sigma_rand=0.0), N).values == 0)
    z = gen_random_map(VariationParams(sigma_rand=0.03, seed=9), 64).values
    lag = np.corrcoef(z[:, :-1].ravel(), z[:, 1:].ravel())[0, 1]
    assert abs(lag) < 0.05
    ens = np.array(
        [gen_random_map(VariationParams(sigma_rand=0.03, seed=s), N).values[3, 3] for s in range(10_000)]
    )
    assert abs(ens.std() / 0.03 - 1) < 0.03


# ---- leakage ---------------------------------------------------------------


def test_leakage_baseline_examples():
    rng = np.random.default_rng(0)
    nom = fm(rng.uniform(0.0, 0.01, (N, N)))
    zero = fm(np.zeros((N, N)), "m")
    b = leakage_baseline(nom, zero, zero)
    # stored as mu + p_var, so equal to the nominal map up to rounding
    np.testing.assert_allclose(b.p_leak0.values, nom.values, rtol=0, atol=1e-14 * b.mu)
    assert abs(b.p_var.values.mean()) <= 1e-12 * b.mu

    c = 0.5e-9
    u = leakage_baseline(nom, fm(np.full((N, N), c), "m"), zero)
    np.testing.assert_allclose(u.p_leak0.values, nom.values * np.exp(BETA_L * c), rtol=0, atol=1e-14 * u.mu)

    dl = fm(rng.normal(0, 1e-9, (N, N)), "m")
    dt = fm(rng.normal(0, 5e-11, (N, N)), "m")
    r = leakage_baseline(nom, dl, dt)
    for i, j in [(0, 0), (5, 11), (15, 2)]:
        expect = nom.values[i, j] * np.exp(BETA_L * dl.values[i, j] + BETA_TOX * dt.values[i, j])
        assert r.p_leak0.values[i, j] == pytest.approx(expect, rel=0, abs=1e-14 * r.mu)


def test_leakage_baseline_rejects_overflow_and_shape():
    nom = fm(np.ones((N, N)))
    with pytest.raises(OverflowError):
        leakage_baseline(nom, fm(np.full((N, N), -5e-8), "m"), fm(np.zeros((N, N)), "m"))
    with pytest.raises(Exception):
        leakage_baseline(nom, FieldMap(np.zeros((8, 8)), 2 * PITCH), fm(np.zeros((N, N))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_baseline_invariants(seed):
    nom = fm(np.full((N, N), 15.0 / N**2))
    b = variation_leakage(nom, VariationParams(seed=seed))
    assert np.all(b.p_leak0.values >= 0)
    assert abs(b.p_var.values.mean()) <= 1e-12 * b.mu
    np.testing.assert_array_equal(b.mu + b.p_var.values, b.p_leak0.values)


def test_default_variation_gives_target_spread():
    nom = fm(np.full((64, 64), 1.0), "W")
    nom = FieldMap(nom.values, 0.01 / 64, "W")
    cov = [
        (lambda v: v.std() / v.mean())(variation_leakage(nom, VariationParams(seed=s)).p_leak0.values)
        for s in range(20)
    ]
    assert 0.2 < np.mean(cov) < 0.4


def test_leakage_at_temperature_examples():
    base = LeakageBaseline.from_map(fm(np.random.default_rng(1).uniform(0, 0.01, (N, N))))
    np.testing.assert_array_equal(leakage_at_temperature(base, fm(np.zeros((N, N)), "K")).values,
                                  base.p_leak0.values)
    ten = leakage_at_temperature(base, fm(np.full((N, N), 10.0), "K")).values
    np.testing.assert_allclose(ten, 1.275 * base.p_leak0.values, rtol=1e-14)
    dT = np.random.default_rng(2).uniform(0, 40, (N, N))
    got = leakage_at_temperature(base, fm(dT, "K")).values
    assert got[3, 7] == pytest.approx((1 + DEFAULT_BETA * dT[3, 7]) * base.p_leak0.values[3, 7])


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 60), st.floats(0, 60))
def test_leakage_monotone_in_temperature(a, b):
    base = LeakageBaseline.uniform(N, PITCH, 15.0)
    lo, hi = sorted((a, b))
    pl = leakage_at_temperature(base, fm(np.full((N, N), lo), "K")).values
    ph = leakage_at_temperature(base, fm(np.full((N, N), hi), "K")).values
    assert np.all(ph >= pl)


# ---- conductivity -----------------------------------------------------------


def test_conductivity_map_examples():
    flat = conductivity_map(K_SILICON, VariationParams(), 0.0, N)
    assert np.all(flat.k_map.values == K_SILICON)
    ens = np.array(
        [conductivity_map(K_SILICON, VariationParams(seed=s), 0.05, N).k_map.values[2, 2]
         for s in range(10_000)]
    )
    assert abs((ens / K_SILICON - 1).std() / 0.05 - 1) < 0.03
    for s in range(1000):
        k = conductivity_map(K_SILICON, VariationParams(seed=s), 0.1, N)
        assert np.all(k.k_map.values > 0)
        assert np.max(np.abs(k.k_map.values / K_SILICON - 1)) <= 0.3 + 1e-12
    with pytest.raises(ValueError):
        conductivity_map(0.0, VariationParams(), 0.1, N)


def test_conductivity_at_temperature_examples():
    assert conductivity_at_temperature(130.0, 0.004, 0.0) == 130.0
    c = fit_conductivity_coeff()
    T = np.linspace(313.15, 373.15, 61)
    k0 = K_SILICON * (318.15 / 300.0) ** 1.3
    lin = conductivity_at_temperature(K_SILICON, c, T - 318.15)
    law = power_law_conductivity(k0, T)
    assert np.max(np.abs(lin / law - 1)) < 0.02
    k1, k2 = conductivity_at_temperature(130.0, c, 10.0), conductivity_at_temperature(130.0, c, 30.0)
    assert k1 + k2 == pytest.approx(2 * conductivity_at_temperature(130.0, c, 20.0))
    with pytest.raises(ValueError):
        conductivity_at_temperature(130.0, 0.01, 200.0)
