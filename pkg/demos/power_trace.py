"""Drive the transient solver with a randomized trace and track the peak against the oracle."""

from vartherm.greens import calibrate
from vartherm.oracle import ChipStack
from vartherm.scenarios import check_set, oracle_options, oracle_trace, random_trace, standard_scenarios
from vartherm.solver import error_metrics, time_varying_profile
from vartherm.variation import DEFAULT_BETA, fit_conductivity_coeff


def main() -> None:
    stack = ChipStack()
    coeff = fit_conductivity_coeff()
    sc = standard_scenarios(stack)[0]
    gs, _ = calibrate(stack, sc.leakage(DEFAULT_BETA), conductivity_coeff=coeff)
    trace = random_trace(sc.p_dyn, 50, 1e-4, 10, seed=1)
    got = time_varying_profile(check_set(gs, sc), trace, initial=trace.frames[0])
    ref = oracle_trace(stack, trace, oracle_options(sc.leakage(gs.beta), coeff),
                       initial=trace.frames[0])
    for t, a, b in zip(trace.times[::5], got.total[::5], ref[::5]):
        print(f"t={1e3 * t:5.1f} ms  peak solver={a.values.max():7.3f} K  oracle={b.values.max():7.3f} K")
    print(f"max error {error_metrics(got, ref).max_pct:.2f}% of peak rise")


if __name__ == "__main__":
    main()
