"""Benchmark power maps, traces and oracle references at the default stack."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fields import FieldMap, PowerTrace
from .greens import GreensSet
from .oracle import (
    ChipStack,
    SolveOptions,
    assemble,
    steady_state,
    transient_state,
)
from .variation import LeakageBaseline, VariationParams, fit_conductivity_coeff, variation_leakage

NOMINAL_LEAK_TOTAL = 15.0  # W


@dataclass(frozen=True)
class Scenario:
    name: str
    p_dyn: FieldMap
    params: VariationParams = field(default_factory=lambda: VariationParams(seed=3))
    leak_total: float = NOMINAL_LEAK_TOTAL

    def nominal_leak(self) -> FieldMap:
        n = self.p_dyn.n
        return self.p_dyn.with_values(np.full((n, n), self.leak_total / n**2), unit="W")

    def leakage(self, beta: float) -> LeakageBaseline:
        return variation_leakage(self.nominal_leak(), self.params, beta)


def _blocks(n: int, blocks) -> np.ndarray:
    """Place ``(row, col, height, width, watts)`` blocks given in 64-grid units."""
    s = n / 64
    p = np.zeros((n, n))
    for i, j, h, w, watts in blocks:
        r0, c0 = int(round(i * s)), int(round(j * s))
        r1, c1 = max(r0 + 1, int(round((i + h) * s))), max(c0 + 1, int(round((j + w) * s)))
        p[r0:r1, c0:c1] += watts / ((r1 - r0) * (c1 - c0))
    return p


FLOORPLAN = [(0, 0, 20, 30, 8.0), (0, 30, 20, 34, 6.0), (20, 0, 24, 24, 10.0),
             (20, 24, 24, 40, 12.9), (44, 0, 20, 64, 12.0)]
STRESS = [(10, 12, 3, 3, 2.0), (14, 46, 3, 3, 2.0), (40, 20, 3, 3, 2.0), (48, 50, 3, 3, 2.0)]


def floorplan_power(n: int, pitch: float) -> FieldMap:
    return FieldMap(_blocks(n, FLOORPLAN), pitch, "W")


def standard_scenarios(stack: ChipStack | None = None) -> list[Scenario]:
    """Five steady test cases: floorplan, stress, high variance, uniform, checkerboard."""
    stack = stack or ChipStack()
    n, pitch = stack.n, stack.pitch
    base = VariationParams(seed=3, die_edge=stack.die_edge)
    fp = floorplan_power(n, pitch)
    uni = np.full((n, n), 204.8 / n**2)
    ii, jj = np.indices((n, n))
    chk = np.where((ii + jj) % 2 == 0, 51.2 / (n * n / 2), 0.0)
    return [
        Scenario("floorplan", fp, base),
        Scenario("stress", FieldMap(_blocks(n, STRESS), pitch, "W"), base),
        Scenario("high_variance", fp, base.scaled(2.0)),
        Scenario("uniform", FieldMap(uni, pitch, "W"), base),
        Scenario("checkerboard", FieldMap(chk, pitch, "W"), base),
    ]


def random_trace(
    base: FieldMap, steps: int, dt: float, hold: int, seed: int, swing: float = 0.6
) -> PowerTrace:
    """Blocks of ``base`` rescaled at random every ``hold`` steps, total power fixed."""
    rng = np.random.default_rng(seed)
    v = base.values
    n = base.n
    bands = np.array_split(np.arange(n), 4)
    frames = []
    cur = None
    for s in range(steps):
        if s % hold == 0:
            w = np.ones((n, n))
            for r in bands:
                for c in bands:
                    w[np.ix_(r, c)] = 1.0 + swing * rng.uniform(-1.0, 1.0)
            p = v * w
            cur = p * (v.sum() / p.sum()) if p.sum() > 0 else p
        frames.append(base.with_values(cur.copy()))
    return PowerTrace(dt, frames)


# --------------------------------------------------------------------------
# oracle references


def oracle_options(base: LeakageBaseline, c: float | None = None, **changes) -> SolveOptions:
    c = fit_conductivity_coeff() if c is None else c
    return replace(SolveOptions(True, True, base, c), **changes)


def oracle_steady(stack: ChipStack, p_dyn: FieldMap, opts: SolveOptions, k_die=None):
    """Oracle rise above ambient (all enabled effects), and the node state."""
    res = steady_state(assemble(stack, k_die), p_dyn, opts)
    return res.rise, res.nodes


def oracle_trace(
    stack: ChipStack, trace: PowerTrace, opts: SolveOptions, initial: FieldMap | None = None,
    k_die=None, step: float = 2e-5,
) -> list[FieldMap]:
    """Oracle rise over a trace, starting from the steady state of ``initial`` (or no dynamic power)."""
    net = assemble(stack, k_die)
    n = stack.n
    start = initial if initial is not None else FieldMap(np.zeros((n, n)), stack.pitch, "W")
    x0 = steady_state(net, start, opts).nodes
    sub = max(1, int(round(trace.dt / step)))
    return transient_state(net, trace, replace(opts, dt=trace.dt / sub), x0)[0]


def oracle_step(stack, p_dyn, times, opts, k_die=None, step: float = 2e-5) -> list[FieldMap]:
    """Oracle rise at ``times`` after ``p_dyn`` switches on from the leakage-only state."""
    from .oracle import _integrate

    net = assemble(stack, k_die)
    n = stack.n
    x = steady_state(net, FieldMap(np.zeros((n, n)), stack.pitch, "W"), opts).nodes
    out, t_prev = [], 0.0
    for t in times:
        nsub = max(1, int(np.ceil((t - t_prev) / step - 1e-9)))
        frames, x = _integrate(net, [p_dyn], nsub, (t - t_prev) / nsub, opts, x)
        out.append(frames[-1])
        t_prev = t
    return out


def check_set(gs: GreensSet, scenario: Scenario) -> GreensSet:
    """The chip's set rebased onto a scenario's leakage variation."""
    return gs.with_variation(scenario.leakage(gs.beta))
