"""Calibrate a Green's set, solve every built-in scenario and compare with the oracle."""

from pathlib import Path

from vartherm.greens import calibrate
from vartherm.heatmap import render_heatmap
from vartherm.oracle import ChipStack
from vartherm.scenarios import check_set, oracle_options, oracle_steady, standard_scenarios
from vartherm.solver import error_metrics, steady_profile
from vartherm.variation import DEFAULT_BETA, fit_conductivity_coeff


def main(out: Path = Path("demo_out")) -> None:
    out.mkdir(exist_ok=True)
    stack = ChipStack()
    coeff = fit_conductivity_coeff()
    scenarios = standard_scenarios(stack)
    gs, report = calibrate(stack, scenarios[0].leakage(DEFAULT_BETA), conductivity_coeff=coeff)
    print(f"alpha={gs.alpha:.3e} C={gs.C:.3e} J/K fit r2={report.fit_r2:.4f}")
    for sc in scenarios:
        res = steady_profile(check_set(gs, sc), sc.p_dyn)
        ref, _ = oracle_steady(stack, sc.p_dyn, oracle_options(sc.leakage(gs.beta), coeff))
        e = error_metrics(res, ref)
        print(f"{sc.name:14s} peak={res.rise.values.max():7.2f} K  "
              f"mae={e.pct_of_max_rise:.2f}%  max={e.max_pct:.2f}%  "
              f"online={1e3 * res.metadata['online_s']:.2f} ms")
        render_heatmap(res.rise, out / f"{sc.name}.ppm")


if __name__ == "__main__":
    main()
