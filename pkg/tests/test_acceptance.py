"""One test per acceptance criterion; each records a PASS/FAIL line for the summary."""

import time

import numpy as np
import pytest
from conftest import record

from vartherm import cli
from vartherm.fields import (
    FieldMap,
    PowerTrace,
    SpectralMap,
    convolve,
    forward_transform,
    inverse_transform,
    save_fieldmap,
)
from vartherm.greens import deterministic_greens, random_greens, transient_greens
from vartherm.oracle import (
    ChipStack,
    SolveOptions,
    assemble,
    impulse_response,
    steady_solve,
    steady_state,
    transient_solve,
    unit_impulse,
)
from vartherm.scenarios import (
    Scenario,
    check_set,
    floorplan_power,
    oracle_options,
    oracle_step,
    oracle_steady,
    oracle_trace,
    random_trace,
)
from vartherm.solver import error_metrics, steady_profile, step_response, time_varying_profile
from vartherm.variation import DEFAULT_BETA, LeakageBaseline, VariationParams

from test_fields import radial_spectrum_error

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def steady_runs(stack, coeff, greens, scenarios):
    """Green's results (with and without the random term) and oracle references per scenario."""
    out = {}
    for sc in scenarios:
        g = check_set(greens, sc)
        ref, _ = oracle_steady(stack, sc.p_dyn, oracle_options(sc.leakage(greens.beta), coeff))
        out[sc.name] = (
            error_metrics(steady_profile(g, sc.p_dyn), ref),
            error_metrics(steady_profile(g, sc.p_dyn, random="none"), ref),
        )
    return out


@pytest.fixture(scope="module")
def floorplan(scenarios, greens, coeff):
    sc = scenarios[0]
    return sc, check_set(greens, sc), oracle_options(sc.leakage(greens.beta), coeff)


def test_c01_steady_state_accuracy(steady_runs):
    parts, ok = [], True
    for name, (full, _) in steady_runs.items():
        good = full.pct_of_max_rise <= 2.5 and full.max_pct <= 4.0
        ok &= good
        parts.append(f"{name} mae={full.pct_of_max_rise:.2f}% max={full.max_pct:.2f}%")
    record(1, ok, "; ".join(parts) + " (limits 2.5% / 4%)")
    assert ok


def test_c02_random_component_value(steady_runs):
    full, bare = steady_runs["high_variance"]
    ratio = bare.pct_of_max_rise / full.pct_of_max_rise
    ok = ratio >= 2.0 and full.hotspot_hit and not bare.hotspot_hit
    record(2, ok, f"mae with={full.pct_of_max_rise:.3f}% without={bare.pct_of_max_rise:.3f}% "
                  f"(x{ratio:.1f}); hotspot with={full.hotspot_hit} without={bare.hotspot_hit}")
    assert ok


def test_c03_transient_greens_function(stack, floorplan):
    sc, g, opts = floorplan
    power = 0.01  # small signal keeps the oracle in its linear range
    times = g.t_samples
    ref = impulse_response(stack, None, "transient", SolveOptions(**{**opts.__dict__, "dt": 1e-5}),
                           times=times, power=power)
    got = step_response(g, unit_impulse(stack.n, stack.pitch, power), times=times)
    peak = ref[-1].values.max()
    errs = [np.abs(a.values / power - b.values).max() / peak for a, b in zip(got.rise, ref[:-1])]
    worst = 100 * max(errs)
    ok = worst < 3.0 and len(times) == 100
    record(3, ok, f"max deviation {worst:.2f}% of steady peak over {len(times)} samples (limit 3%)")
    assert ok


def test_c04_step_response(stack, floorplan):
    sc, g, opts = floorplan
    times = [0.5e-3, 1e-3, 2e-3, 5e-3]
    ref = oracle_step(stack, sc.p_dyn, times, opts)
    got = step_response(g, sc.p_dyn, times=times)
    errs = [error_metrics(a, b).max_pct for a, b in zip(got.total, ref)]
    ok = max(errs) < 5.0
    record(4, ok, "max error " + ", ".join(f"{1e3 * t:g}ms:{e:.2f}%" for t, e in zip(times, errs))
           + " (limit 5%)")
    assert ok


def test_c05_time_varying_trace(stack, floorplan):
    sc, g, opts = floorplan
    trace = random_trace(sc.p_dyn, 150, 1e-4, 10, seed=11)
    ref = oracle_trace(stack, trace, opts, initial=trace.frames[0])
    got = time_varying_profile(g, trace, initial=trace.frames[0])
    e = error_metrics(got, ref)
    ok = e.pct_of_max_rise <= 5.0
    record(5, ok, f"150 steps at 0.1 ms, window {got.metadata['k_window']}: "
                  f"average error {e.pct_of_max_rise:.2f}% (limit 5%), max {e.max_pct:.2f}%")
    assert ok


def test_c06_window_equivalence(floorplan):
    sc, g, _ = floorplan
    trace = random_trace(sc.p_dyn, 150, 1e-3, 1, seed=12)
    short = time_varying_profile(g, trace, k_window=5, initial=trace.frames[0])
    full = time_varying_profile(g, trace, k_window=150, initial=trace.frames[0])
    e = error_metrics(short, full)
    ok = e.max_pct <= 1.0
    record(6, ok, f"window 5 vs full history: max {e.max_pct:.2f}% mean {e.pct_of_max_rise:.2f}% "
                  "of max rise (limit 1%)")
    assert ok


def test_c07_ablation_ordering(stack, coeff, greens):
    sc = Scenario("leaky", floorplan_power(stack.n, stack.pitch), VariationParams(seed=3), 15.0)
    base = sc.leakage(DEFAULT_BETA)
    nominal = LeakageBaseline.from_map(sc.nominal_leak())
    net = assemble(stack)
    ref = steady_state(net, sc.p_dyn, SolveOptions(True, True, base, coeff)).rise
    variants = {
        "none": SolveOptions(False, False, nominal, coeff),
        "var": SolveOptions(False, False, base, coeff),
        "var+leakT": SolveOptions(False, True, base, coeff),
        "all": SolveOptions(True, True, base, coeff),
    }
    err = {k: error_metrics(steady_state(net, sc.p_dyn, o).rise, ref).max_pct
           for k, o in variants.items()}
    order = list(variants)
    ok = all(err[a] > err[b] for a, b in zip(order, order[1:])) and err["all"] == 0.0
    green = error_metrics(steady_profile(check_set(greens, sc), sc.p_dyn), ref).max_pct
    record(7, ok, "max error " + " > ".join(f"{k}:{err[k]:.2f}%" for k in order)
           + f"; Green's solver {green:.2f}%")
    assert ok


def test_c08_transform_suite():
    rng = np.random.default_rng(0)
    timings, ok = {}, True
    t0 = time.perf_counter()
    x = rng.standard_normal((64, 64))
    back = inverse_transform(forward_transform(FieldMap(x, 1e-4))).values
    rt = np.max(np.abs(back - x)) / np.max(np.abs(x))
    timings["round trip"] = time.perf_counter() - t0
    ok &= rt <= 1e-10
    t0 = time.perf_counter()
    f, h = rng.standard_normal((64, 64)), rng.standard_normal((64, 64))
    lhs = forward_transform(convolve(FieldMap(f, 1e-4), FieldMap(h, 1e-4))).coeffs
    rhs = forward_transform(FieldMap(f, 1e-4)).coeffs * forward_transform(FieldMap(h, 1e-4)).coeffs
    ct = np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))
    timings["convolution"] = time.perf_counter() - t0
    ok &= ct <= 1e-9
    t0 = time.perf_counter()
    th = radial_spectrum_error(lambda r: np.exp(-(r**2) / (2 * 4.0**2)))
    timings["radial"] = time.perf_counter() - t0
    ok &= th <= 1e-4
    ok &= all(v < 10.0 for v in timings.values())
    record(8, ok, f"round trip {rt:.1e}, convolution {ct:.1e}, radial {th:.1e}; "
                  f"slowest {max(timings.values()):.2f}s")
    assert ok


def test_c09_reduction_identities(greens):
    f, g = greens.f_sp0, greens.g_sp0
    d = np.max(np.abs(deterministic_greens(f, g, 0.0, 0.0, greens.mu).values - f.values))
    d /= f.values.max()
    zero = greens.p_var.with_values(np.zeros_like(greens.p_var.values))
    spec = np.fft.fft2(np.fft.ifftshift(greens.f_det.values))
    r = np.max(np.abs(random_greens(SpectralMap(spec, f.pitch), f, g, zero, greens.alpha,
                                    greens.beta, greens.mu).values))
    t0 = np.max(np.abs(transient_greens(greens.f_det, f, g, greens.alpha, greens.C, 0.0).values))
    late = transient_greens(greens.f_det, f, g, greens.alpha, greens.C, 1.0).values
    ti = np.max(np.abs(late - greens.f_det.values)) / greens.f_det.values.max()
    ok = d <= 1e-9 and r == 0.0 and t0 == 0.0 and ti <= 1e-3
    record(9, ok, f"f_det-f_sp0 {d:.1e}; f_rand {r:.1e}; t=0 {t0:.1e}; t=inf {ti:.1e}")
    assert ok


def test_c10_oracle_self_validation(stack):
    rng = np.random.default_rng(0)
    net = assemble(stack)
    p = FieldMap(rng.uniform(0, 0.02, (stack.n, stack.n)), stack.pitch, "W")
    x = steady_state(net, p).nodes
    balance = abs(np.sum(net.sink * x) - p.values.sum()) / p.values.sum()

    s8 = ChipStack(n=8)
    P = 20.0
    rise = steady_solve(assemble(s8, lateral=False), FieldMap(np.full((8, 8), P / 64), s8.pitch)).values
    a = s8.cell_area
    d, t, s = s8.layers
    r = (d.thickness / (2 * d.conductivity * a) + t.thickness / (t.conductivity * a)
         + s.thickness / (s.conductivity * a) + 64 * s8.sink_resistance)
    series = np.max(np.abs(rise / (P / 64 * r) - 1))

    step = FieldMap(np.full((8, 8), 0.5), s8.pitch, "W")
    peaks = [m.values.max() for m in transient_solve(assemble(s8), PowerTrace(1e-3, [step] * 30))]
    mono = bool(np.all(np.diff(peaks) >= 0))

    base = LeakageBaseline.uniform(stack.n, stack.pitch, 15.0, DEFAULT_BETA)
    iters = steady_state(net, floorplan_power(stack.n, stack.pitch),
                         SolveOptions(temp_dep_leakage=True, leakage_base=base)).iterations
    ok = balance <= 1e-6 and series <= 5e-3 and mono and iters < 50
    record(10, ok, f"energy balance {balance:.1e}; series case {100 * series:.2e}%; "
                   f"BE monotone {mono}; leakage loop {iters} iterations")
    assert ok


def test_c11_relative_speed(stack, floorplan):
    sc, g, opts = floorplan
    steady_profile(g, sc.p_dyn)  # warm caches
    fast, slow = [], []
    net = assemble(stack)
    for _ in range(10):
        t0 = time.perf_counter()
        steady_profile(g, sc.p_dyn)
        fast.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        steady_state(net, sc.p_dyn, opts)
        slow.append(time.perf_counter() - t0)
    ratio = np.median(slow) / np.median(fast)
    ok = ratio >= 100
    record(11, ok, f"median online {1e3 * np.median(fast):.2f} ms vs oracle "
                   f"{1e3 * np.median(slow):.0f} ms: {ratio:.0f}x (floor 100x)")
    assert ok


def test_c12_monte_carlo_determinism(tmp_path, greens, scenarios):
    greens.save(tmp_path / "gs")
    save_fieldmap(scenarios[0].p_dyn, tmp_path / "p.map")
    (tmp_path / "seeds.txt").write_text(" ".join(str(s) for s in range(1000, 1100)) + "\n")
    t0 = time.perf_counter()
    for tag, jobs in (("a", "1"), ("b", "4")):
        rc = cli.run(["montecarlo", "--greens", str(tmp_path / "gs"), "--power",
                      str(tmp_path / "p.map"), "--seeds", str(tmp_path / "seeds.txt"),
                      "--jobs", jobs, "--out", str(tmp_path / tag)])
        assert rc == 0
    elapsed = (time.perf_counter() - t0) / 2
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("runs.csv", "summary.txt"))
    rows = (tmp_path / "a" / "runs.csv").read_text().splitlines()
    ok = same and len(rows) == 101 and elapsed < 600
    record(12, ok, f"100 runs byte-identical={same}; {elapsed:.1f}s per sweep (limit 600s)")
    assert ok
