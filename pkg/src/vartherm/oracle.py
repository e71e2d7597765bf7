"""Finite-difference reference solver for the die / TIM / spreader stack.

Each layer is discretized into ``n x n`` nodes (one per lateral cell).
Nodes are coupled to their four lateral neighbours and to the nodes directly
above and below; the top layer couples to ambient through the heat-sink
resistance, split evenly over the cells.  Power (dynamic and leakage) is
injected into the die layer only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import FieldMap, PowerTrace, ShapeError
from .variation import ConductivityMap, LeakageBaseline, conductivity_at_temperature

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """The outer leakage / conductivity loop or the inner solve did not converge."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Layer:
    name: str
    thickness: float  # m
    conductivity: float  # W/(m K)
    heat_capacity: float  # J/(m^3 K)

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError(f"layer {self.name}: thickness must be positive")
        if not self.conductivity > 0:
            raise ValueError(f"layer {self.name}: conductivity must be positive")
        if self.heat_capacity < 0:
            raise ValueError(f"layer {self.name}: heat capacity must be non-negative")


def table2_layers() -> tuple[Layer, ...]:
    # Heat capacities are not part of the published stack.  Silicon uses its
    # bulk value; the TIM and spreader are treated as thermally thin so the
    # die dominates the short-time response.
    return (
        Layer("die", 0.15e-3, 130.0, 1.75e6),
        Layer("tim", 0.02e-3, 4.0, 0.0),
        Layer("spreader", 3.5e-3, 400.0, 0.0),
    )


@dataclass(frozen=True)
class ChipStack:
    die_edge: float = 0.01  # m (100 mm^2 die)
    layers: tuple[Layer, ...] = field(default_factory=table2_layers)
    ambient: float = 318.15  # K
    sink_resistance: float = 0.3  # K/W, spreader top to ambient
    n: int = 64
    periodic: bool = False

    def __post_init__(self):
        if not self.die_edge > 0 or not self.ambient > 0:
            raise ValueError("die_edge and ambient must be positive")
        if self.sink_resistance < 0:
            raise ValueError("sink_resistance must be non-negative")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not self.layers:
            raise ValueError("stack needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def pitch(self) -> float:
        return self.die_edge / self.n

    @property
    def cell_area(self) -> float:
        return self.pitch**2

    def with_die_layer(self, **changes) -> ChipStack:
        die = replace(self.layers[0], **changes)
        return replace(self, layers=(die,) + self.layers[1:])


def mirrored_stack(stack: ChipStack) -> ChipStack:
    """The ``2n x 2n`` periodic image domain of ``stack`` at the same pitch.

    Per-cell sink conductance is preserved, so the lumped sink resistance
    of the four-times-larger domain is a quarter of the original.
    """
    return replace(
        stack,
        die_edge=2 * stack.die_edge,
        n=2 * stack.n,
        sink_resistance=stack.sink_resistance / 4,
        periodic=True,
    )


@dataclass
class ThermalNetwork:
    stack: ChipStack
    k_die: np.ndarray
    G: sp.csr_matrix
    capacitance: np.ndarray  # J/K per node
    sink: np.ndarray  # W/K per node to ambient
    lateral: bool = True

    @property
    def n(self) -> int:
        return self.stack.n

    @property
    def n_nodes(self) -> int:
        return self.G.shape[0]

    def with_die_conductivity(self, k_die: np.ndarray) -> ThermalNetwork:
        return _build(self.stack, k_die, self.lateral)


@dataclass(frozen=True)
class SolveOptions:
    temp_dep_conductivity: bool = False
    temp_dep_leakage: bool = False
    leakage_base: LeakageBaseline | None = None
    conductivity_coeff: float = 0.0  # c in k(T) = k0 (1 - c dT), 1/K
    max_iters: int = 50
    tol: float = 0.01  # K
    dt: float | None = None  # s
    method: str = "cg"
    inner_rtol: float = 1e-9

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.method not in ("cg", "direct"):
            raise ValueError("method must be 'cg' or 'direct'")

    @property
    def leakage_on(self) -> bool:
        return self.leakage_base is not None

    @property
    def nonlinear(self) -> bool:
        return (self.leakage_on and self.temp_dep_leakage) or self.temp_dep_conductivity


def assemble(
    stack: ChipStack, k_die: ConductivityMap | None = None, lateral: bool = True
) -> ThermalNetwork:
    """Build the conductance network; ``k_die`` defaults to the die layer's value."""
    n = stack.n
    if k_die is None:
        k = np.full((n, n), stack.layers[0].conductivity)
    else:
        k = np.asarray(k_die.k_map.values, dtype=float)
        if k.shape != (n, n):
            raise ShapeError(f"conductivity map is {k.shape}, stack grid is {(n, n)}")
    return _build(stack, k, lateral)


def _lateral_pairs(n: int, periodic: bool):
    idx = np.arange(n * n).reshape(n, n)
    if periodic:
        right = np.roll(idx, -1, axis=1)
        down = np.roll(idx, -1, axis=0)
        a = np.concatenate([idx.ravel(), idx.ravel()])
        b = np.concatenate([right.ravel(), down.ravel()])
    else:
        a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return a, b


def _build(stack: ChipStack, k_die: np.ndarray, lateral: bool) -> ThermalNetwork:
    n = stack.n
    nc = n * n
    layers = stack.layers
    nl = len(layers)
    area = stack.cell_area
    if np.any(k_die <= 0) or not np.all(np.isfinite(k_die)):
        raise ValueError("die conductivity must be positive and finite")

    kcell = [k_die.ravel()] + [np.full(nc, ly.conductivity) for ly in layers[1:]]
    rows, cols, vals = [], [], []

    if lateral:
        a, b = _lateral_pairs(n, stack.periodic)
        for li, ly in enumerate(layers):
            ka, kb = kcell[li][a], kcell[li][b]
            # harmonic-mean face conductivity; square cells so pitch cancels
            g = 2 * ka * kb / (ka + kb) * ly.thickness
            off = li * nc
            rows.append(a + off)
            cols.append(b + off)
            vals.append(g)

    half_r = [ly.thickness / (2 * kcell[li] * area) for li, ly in enumerate(layers)]
    cell = np.arange(nc)
    for li in range(nl - 1):
        g = 1.0 / (half_r[li] + half_r[li + 1])
        rows.append(cell + li * nc)
        cols.append(cell + (li + 1) * nc)
        vals.append(g)

    r = np.concatenate(rows) if rows else np.zeros(0, int)
    c = np.concatenate(cols) if cols else np.zeros(0, int)
    v = np.concatenate(vals) if vals else np.zeros(0)
    N = nl * nc
    off = sp.coo_matrix((v, (r, c)), shape=(N, N))
    off = off + off.T

    sink = np.zeros(N)
    sink_cell_r = stack.sink_resistance * nc  # each cell carries 1/nc of the sink
    sink[(nl - 1) * nc :] = 1.0 / (half_r[-1] + sink_cell_r)

    diag = np.asarray(off.sum(axis=1)).ravel() + sink
    G = (sp.diags(diag) - off).tocsr()
    cap = np.concatenate([np.full(nc, ly.heat_capacity * ly.thickness * area) for ly in layers])
    return ThermalNetwork(stack, np.array(k_die, dtype=float), G, cap, sink, lateral)


def vertical_resistance(stack: ChipStack) -> float:
    """Per-cell series resistance from a die node to the spreader top (K/W)."""
    area = stack.cell_area
    ls = stack.layers
    r = ls[0].thickness / (2 * ls[0].conductivity * area)
    for ly in ls[1:]:
        r += ly.thickness / (ly.conductivity * area)
    return r


# --------------------------------------------------------------------------
# linear algebra


def pcg(A, b, x0=None, rtol=1e-9, maxiter=None):
    """Jacobi-preconditioned conjugate gradients.  Returns (x, iters, rel_residual)."""
    n = b.shape[0]
    maxiter = maxiter or 20 * n
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0, 0.0
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > rtol and it < maxiter:
        Ap = A @ p
        a = rz / (p @ Ap)
        x += a * p
        r -= a * Ap
        res = np.linalg.norm(r) / bnorm
        it += 1
        if res <= rtol:
            break
        z = dinv * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    if res > rtol:
        raise ConvergenceError(f"PCG stalled at relative residual {res:.3e}", res)
    return x, it, res


class _Linear:
    """Solves ``A x = b`` for a matrix that may be swapped between calls."""

    def __init__(self, method: str, rtol: float):
        self.method = method
        self.rtol = rtol
        self._A = None
        self._lu = None
        self.iterations = 0

    def set(self, A):
        self._A = A
        self._lu = None

    def solve(self, b, x0=None):
        if self.method == "direct":
            if self._lu is None:
                self._lu = spla.splu(self._A.tocsc())
            return self._lu.solve(b)
        x, it, _ = pcg(self._A, b, x0, self.rtol)
        self.iterations += it
        return x


# --------------------------------------------------------------------------
# solves


@dataclass
class SteadyResult:
    rise: FieldMap
    nodes: np.ndarray
    iterations: int


def _die_power(net: ThermalNetwork, p_die: np.ndarray) -> np.ndarray:
    b = np.zeros(net.n_nodes)
    b[: net.n * net.n] = p_die.ravel()
    return b


def _k_at(net: ThermalNetwork, k0: np.ndarray, theta_die: np.ndarray, opts: SolveOptions):
    return conductivity_at_temperature(k0, opts.conductivity_coeff, theta_die)


def _leak(opts: SolveOptions, theta_die: np.ndarray | None) -> np.ndarray:
    base = opts.leakage_base
    p0 = base.p_leak0.values
    if theta_die is None or not opts.temp_dep_leakage:
        return p0
    return p0 * (1.0 + base.beta * theta_die)


def steady_state(net: ThermalNetwork, p_dyn: FieldMap, opts: SolveOptions = SolveOptions(),
                 x0: np.ndarray | None = None) -> SteadyResult:
    n = net.n
    if p_dyn.values.shape != (n, n):
        raise ShapeError(f"power map is {p_dyn.values.shape}, network grid is {(n, n)}")
    if np.any(p_dyn.values < 0):
        raise ValueError("dynamic power must be non-negative")
    if opts.leakage_on and opts.leakage_base.p_leak0.values.shape != (n, n):
        raise ShapeError("leakage map does not match the network grid")

    lin = _Linear(opts.method, opts.inner_rtol)
    k0 = net.k_die
    cur = net
    lin.set(cur.G)
    p = p_dyn.values
    q = p + _leak(opts, None) if opts.leakage_on else p
    x = lin.solve(_die_power(cur, q), x0)
    iters = 1
    if opts.nonlinear:
        delta = np.inf
        while delta >= opts.tol:
            if iters >= opts.max_iters:
                raise ConvergenceError(
                    f"outer loop did not converge in {opts.max_iters} iterations "
                    f"(last max |dT| = {delta:.3g} K)",
                    delta,
                )
            theta = x[: n * n].reshape(n, n)
            if opts.temp_dep_conductivity:
                cur = net.with_die_conductivity(_k_at(net, k0, theta, opts))
                lin.set(cur.G)
            q = p + _leak(opts, theta) if opts.leakage_on else p
            x_new = lin.solve(_die_power(cur, q), x)
            delta = float(np.max(np.abs(x_new - x)))
            x = x_new
            iters += 1
        log.info("steady solve converged in %d outer iterations", iters)
    rise = FieldMap(x[: n * n].reshape(n, n), net.stack.pitch, "K")
    return SteadyResult(rise, x, iters)


def steady_solve(net: ThermalNetwork, p_dyn: FieldMap, opts: SolveOptions = SolveOptions()) -> FieldMap:
    """Die-layer temperature rise above ambient (K)."""
    return steady_state(net, p_dyn, opts).rise


def _integrate(net, frames, nsub, step, opts, x):
    n = net.n
    c_dt = net.capacitance / step
    lin = _Linear(opts.method, opts.inner_rtol)
    cur = net
    lin.set(cur.G + sp.diags(c_dt))
    k0 = net.k_die
    out = []
    for frame in frames:
        p = frame.values
        if p.shape != (n, n):
            raise ShapeError("trace frame does not match the network grid")
        for _ in range(nsub):
            theta = x[: n * n].reshape(n, n)
            if opts.temp_dep_conductivity:
                cur = net.with_die_conductivity(_k_at(net, k0, theta, opts))
                lin.set(cur.G + sp.diags(c_dt))
            q = p + _leak(opts, theta) if opts.leakage_on else p
            x = lin.solve(_die_power(cur, q) + c_dt * x, x)
        out.append(FieldMap(x[: n * n].reshape(n, n).copy(), net.stack.pitch, "K"))
    return out, x


def transient_solve(
    net: ThermalNetwork,
    trace: PowerTrace,
    opts: SolveOptions = SolveOptions(),
    initial: np.ndarray | None = None,
) -> list[FieldMap]:
    """Backward-Euler integration; returns the die rise at each trace timestamp.

    Frame ``i`` is applied over ``((i-1) dt, i dt]``.  ``initial`` is a full
    node state (e.g. ``steady_state(...).nodes``); default is ambient.
    Leakage and conductivity are refreshed from the temperature at the start
    of each step.
    """
    return transient_state(net, trace, opts, initial)[0]


def transient_state(net, trace, opts=SolveOptions(), initial=None):
    """Like :func:`transient_solve` but also returns the final node state."""
    if not trace.frames:
        raise ValueError("empty power trace")
    step = opts.dt or trace.dt
    sub = trace.dt / step
    nsub = int(round(sub))
    if nsub < 1 or abs(sub - nsub) > 1e-6 * sub:
        raise ValueError("solver dt must evenly subdivide the trace sampling interval")
    x = np.zeros(net.n_nodes) if initial is None else np.array(initial, dtype=float)
    return _integrate(net, trace.frames, nsub, trace.dt / nsub, opts, x)


def unit_impulse(n: int, pitch: float, power: float = 1.0) -> FieldMap:
    p = np.zeros((n, n))
    p[n // 2, n // 2] = power
    return FieldMap(p, pitch, "W")


def impulse_response(
    stack: ChipStack,
    k_die: ConductivityMap | None = None,
    mode: str = "steady",
    opts: SolveOptions | None = None,
    times=None,
    power: float = 1.0,
    width: float | None = None,
):
    """Response to a point source at cell ``(n/2, n/2)``, per watt.

    ``steady``: the steady rise map (K/W).  ``transient``: the response at
    each of ``times`` (default 1..10 ms) to a source switched on at ``t = 0``,
    followed by the steady limit of a held source.  The source stays on unless
    ``width`` is given, in which case it is a pulse of that duration.  With
    temperature-dependent options the response is the increment over the
    leakage-only state.
    """
    if stack.n % 2:
        raise ValueError("impulse response needs an even grid")
    opts = opts or SolveOptions()
    net = assemble(stack, k_die)
    src = unit_impulse(stack.n, stack.pitch, power)
    zero = FieldMap(np.zeros((stack.n, stack.n)), stack.pitch, "W")
    base = steady_state(net, zero, opts) if opts.nonlinear or opts.leakage_on else None
    base_rise = 0.0 if base is None else base.rise.values
    if mode == "steady":
        full = steady_state(net, src, opts, None if base is None else base.nodes)
        return FieldMap((full.rise.values - base_rise) / power, stack.pitch, "K/W")
    if mode != "transient":
        raise ValueError("mode must be 'steady' or 'transient'")
    times = np.arange(1, 11) * 1e-3 if times is None else np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be positive and increasing")
    if width is not None and not width > 0:
        raise ValueError("pulse width must be positive")
    marks = set(times.tolist())
    if width is not None and width < times[-1]:
        marks.add(float(width))
    wanted = set(times.tolist())
    maps = []
    x = np.zeros(net.n_nodes) if base is None else base.nodes
    t_prev = 0.0
    step = opts.dt or 1e-5
    for t in sorted(marks):
        span = t - t_prev
        on = width is None or t <= width + 1e-15
        nsub = max(1, int(np.ceil(span / step - 1e-9)))
        frames, x = _integrate(net, [src if on else zero], nsub, span / nsub, opts, x)
        if t in wanted:
            maps.append(FieldMap((frames[-1].values - base_rise) / power, stack.pitch, "K/W"))
        t_prev = t
    full = steady_state(net, src, opts, None if base is None else base.nodes)
    maps.append(FieldMap((full.rise.values - base_rise) / power, stack.pitch, "K/W"))
    return maps
