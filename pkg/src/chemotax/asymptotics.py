"""Large-chi experiments: boundary-spike metrics, chi sweeps and the chi/D1 -> a limit system."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .grid import Grid, StateField
from .kinetics import ModelParams
from .steady import (
    Branch,
    ContinuationOptions,
    NewtonFailure,
    NewtonOptions,
    continue_branch,
    continue_from,
    discrete_bifurcation_value,
    newton_solve,
)

__all__ = [
    "SpikeMetrics",
    "spike_metrics",
    "StepExclusionReport",
    "step_exclusion_check",
    "SweepRow",
    "SweepResult",
    "sweep_chi",
    "state_at_chi",
    "limit_residual",
    "LimitSolution",
    "LimitSolveError",
    "solve_limit_linear",
    "step_profile",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpikeMetrics:
    """Shape summary of a (decreasing) profile.

    half_width is the first x where u drops to (u(0)+u(L))/2, by linear
    interpolation between nodes; flat profiles report L.  tail_sup is max u on
    [L/2, L].  ``flagged`` marks non-monotone input; ``reflected`` marks an
    increasing input that was mirrored before measuring.
    """

    peak_ratio: float
    half_width: float
    mass: float
    tail_sup: float
    flagged: bool = False
    reflected: bool = False


def spike_metrics(state: StateField, params: ModelParams, grid: Grid) -> SpikeMetrics:
    u = state.u
    reflected = False
    if u[-1] > u[0]:
        u = u[::-1]
        reflected = True
    scale = max(float(np.max(np.abs(u))), 1e-300)
    flagged = reflected or bool(np.any(np.diff(u) > 1e-12 * scale))
    x = grid.nodes
    mid = 0.5 * (u[0] + u[-1])
    if u[0] - u[-1] <= 1e-12 * scale:
        half = grid.length
    else:
        i = int(np.argmax(u <= mid))
        if i == 0:
            half = 0.0
        else:
            half = float(x[i - 1] + (u[i - 1] - mid) / (u[i - 1] - u[i]) * grid.spacing)
    tail = float(np.max(u[x >= 0.5 * grid.length - 1e-12 * grid.length]))
    return SpikeMetrics(
        peak_ratio=float(u[0] / params.ubar),
        half_width=half,
        mass=grid.integrate(u),
        tail_sup=tail,
        flagged=flagged,
        reflected=reflected,
    )


def step_profile(grid: Grid, ubar: float, x0: float, level: float | None = None) -> np.ndarray:
    """Nodal samples of ``level`` on [0, x0), 0 on (x0, L] and the mean at a node sitting on x0."""
    level = ubar if level is None else level
    x = grid.nodes
    u = np.where(x < x0, level, 0.0)
    on = np.isclose(x, x0, rtol=0.0, atol=1e-12 * grid.length)
    u[on] = 0.5 * level
    return u


@dataclass(frozen=True)
class StepExclusionReport:
    flagged: bool
    u_star: float
    breakpoint: float
    l1_distance: float
    message: str


def step_exclusion_check(
    state: StateField, params: ModelParams, grid: Grid, rel_tol: float = 0.1
) -> StepExclusionReport:
    """Flag profiles that look like the intermediate-mass step ruled out for spike limits.

    The candidate step takes the value ubar on [0, x0] and 0 beyond, with
    x0 = (u*/ubar) L fixed by the mean u* = int(u)/L.  The profile is flagged
    when u* lies in (0.1 ubar, 0.9 ubar) and the L1 distance to the step is
    within ``rel_tol`` of the step's own L1 norm.
    """
    u = state.u if state.u[0] >= state.u[-1] else state.u[::-1]
    ub = params.ubar
    mass = grid.integrate(u)
    u_star = mass / grid.length
    x0 = u_star / ub * grid.length
    # integrate |u - step| exactly per cell is overkill; trapezoid on a refined copy suffices
    fine = np.linspace(0.0, grid.length, 16 * grid.n_cells + 1)
    uf = np.interp(fine, grid.nodes, u)
    sf = np.where(fine <= x0, ub, 0.0)
    dist = float(np.trapezoid(np.abs(uf - sf), fine)) / max(ub * x0, 1e-300)
    intermediate = 0.1 * ub < u_star < 0.9 * ub
    flagged = bool(intermediate and dist <= rel_tol)
    if flagged:
        msg = (
            f"profile is within {dist:.1%} (L1) of a step with intermediate mean u*={u_star:.4g}; "
            "this contradicts the spike/constant dichotomy"
        )
        log.warning("step exclusion check: %s", msg)
    else:
        msg = f"no step-like limit (u*={u_star:.4g}, L1 distance {dist:.3g})"
    return StepExclusionReport(flagged, u_star, x0, dist, msg)


# --------------------------------------------------------------------------
# chi sweeps


@dataclass
class SweepRow:
    chi: float
    metrics: SpikeMetrics
    state: StateField = field(repr=False)
    step_flag: bool = False
    constant: bool = False


@dataclass
class SweepResult:
    rows: list[SweepRow]
    completed: bool
    reason: str = ""
    branch: Branch | None = field(default=None, repr=False)

    def __iter__(self):
        return iter((r.chi, r.metrics) for r in self.rows)

    def __len__(self):
        return len(self.rows)


def state_at_chi(branch: Branch, chi: float, params: ModelParams, grid: Grid, opts: NewtonOptions):
    """Newton-refined state at ``chi`` from the last branch segment straddling it."""
    chis = branch.chis
    idx = [i for i in range(len(chis) - 1) if (chis[i] - chi) * (chis[i + 1] - chi) <= 0]
    if not idx:
        return None
    i = idx[-1]
    a, b = branch.points[i], branch.points[i + 1]
    t = 0.0 if b.chi == a.chi else (chi - a.chi) / (b.chi - a.chi)
    guess = StateField.from_vector((1 - t) * a.state.to_vector() + t * b.state.to_vector())
    return newton_solve(guess, params.with_chi(chi), grid, opts).state


def sweep_chi(
    params: ModelParams,
    grid: Grid,
    k: int,
    schedule,
    start: StateField | None = None,
    opts: ContinuationOptions | None = None,
) -> SweepResult:
    """Spike metrics along the k-th branch at each scheduled chi.

    Without ``start`` the branch is traced from its bifurcation point and each
    scheduled chi is taken from the last branch segment that crosses it;
    values below chi_k^h give the constant state.  With ``start`` (a state at
    schedule[0]) the sweep continues from that state instead.  A chi that
    cannot be reached ends the sweep with partial results.
    """
    schedule = [float(c) for c in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    opts = opts or ContinuationOptions(chi_max=schedule[-1])
    nopts = opts.newton
    chi_h = discrete_bifurcation_value(params, grid, k)
    rows: list[SweepRow] = []

    def add(chi, st, constant=False):
        p = params.with_chi(chi)
        rows.append(
            SweepRow(chi, spike_metrics(st, p, grid), st, step_exclusion_check(st, p, grid).flagged, constant)
        )

    if start is not None:
        try:
            cur = newton_solve(start, params.with_chi(schedule[0]), grid, nopts).state
        except NewtonFailure as exc:
            return SweepResult(rows, False, f"start state did not converge at chi={schedule[0]}: {exc}")
        add(schedule[0], cur)
        branch = None
        for prev, chi in zip(schedule, schedule[1:]):
            seg = continue_from(cur, params.with_chi(prev), grid, _with_chi_max(opts, chi), direction=1, k=k)
            try:
                st = state_at_chi(seg, chi, params, grid, nopts)
            except NewtonFailure:
                st = None
            if st is None:
                return SweepResult(rows, False, f"continuation did not reach chi={chi:.6g}", seg)
            add(chi, st)
            cur = st
        return SweepResult(rows, True)

    branch = None
    for chi in schedule:
        if chi < chi_h:
            ub, vb = params.ubar, params.vbar
            add(chi, StateField.constant(grid, ub, vb), constant=True)
            continue
        if branch is None:
            branch = continue_branch(params, grid, k, _with_chi_max(opts, schedule[-1]))
            if branch.closed_loop:
                log.warning("branch %d closes on itself below chi=%.6g", k, branch.chis.max())
        try:
            st = state_at_chi(branch, chi, params, grid, nopts)
        except NewtonFailure:
            st = None
        if st is None:
            reason = (
                f"branch {k} does not reach chi={chi:.6g} "
                f"(terminated by {branch.terminated_by.value}, max chi {branch.chis.max():.6g})"
            )
            log.warning("sweep aborted: %s", reason)
            return SweepResult(rows, False, reason, branch)
        add(chi, st)
    return SweepResult(rows, True, "", branch)


def _with_chi_max(opts: ContinuationOptions, chi_max: float) -> ContinuationOptions:
    from dataclasses import replace

    return replace(opts, chi_max=chi_max)


# --------------------------------------------------------------------------
# limit system


def limit_residual(state: StateField, ratio_a: float, params: ModelParams, grid: Grid) -> float:
    """Max-norm residual of u' - a Phi v' = 0 (half-nodes) and D2 v'' - v + h(u) = 0 (nodes)."""
    u, v = state.u, state.v
    h = grid.spacing
    phi = params.kinetics.phi(u, v)
    m = 0.5 * (phi[:-1] + phi[1:])
    first = (np.diff(u) - ratio_a * m * np.diff(v)) / h
    flux = params.d2 * np.diff(v) / h
    div = np.zeros_like(v)
    div[:-1] += flux
    div[1:] -= flux
    second = div / grid.weights - v + params.kinetics.h(u)
    return float(max(np.max(np.abs(first)), np.max(np.abs(second))))


class LimitSolveError(RuntimeError):
    def __init__(self, message: str, trace: list[tuple[float, float]]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class LimitSolution:
    ratio_a: float
    state: StateField
    residual_norm: float
    c_const: float
    mass: float


def _laplacian_bands(grid: Grid, coeff: float) -> np.ndarray:
    w = grid.weights
    c = coeff / grid.spacing
    ab = np.zeros((3, grid.n_nodes))
    ab[0, 1:] = c / w[:-1]
    ab[2, :-1] = c / w[1:]
    diag = np.full(grid.n_nodes, 2.0)
    diag[0] = diag[-1] = 1.0
    ab[1] = -c * diag / w
    return ab


def _solve_v(c_const, a, beta, params, grid, v0, tol, max_iter=50):
    """Newton for D2 v'' - v + beta C exp(a v) = 0 with Neumann ends."""
    lap = _laplacian_bands(grid, params.d2)
    v = v0.copy()

    def g(v):
        flux = params.d2 * np.diff(v) / grid.spacing
        div = np.zeros_like(v)
        div[:-1] += flux
        div[1:] -= flux
        return div / grid.weights - v + beta * c_const * np.exp(a * v)

    r = g(v)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            return v
        ab = lap.copy()
        ab[1] += -1.0 + beta * c_const * a * np.exp(a * v)
        dv = solve_banded((1, 1), ab, -r)
        v = v + dv
        r = g(v)
        if not np.all(np.isfinite(r)):
            break
    if np.max(np.abs(r)) <= tol:
        return v
    raise NewtonFailure(f"v-equation did not converge (C={c_const:.6g})", [float(np.max(np.abs(r)))])


def solve_limit_linear(
    ratio_a: float,
    mass_m: float | None,
    params: ModelParams,
    grid: Grid,
    initial_v: np.ndarray | None = None,
    tol: float = 1e-12,
    max_outer: int = 60,
) -> LimitSolution:
    """Solve the a = chi/D1 limit system for Phi = u, h = beta u.

    u = C exp(a v) turns the first-order equation into an identity, leaving a
    scalar Neumann problem for v.  C is found by a secant iteration on log C so
    that int(u) = mass_m (default ubar*L/2).
    """
    kin = params.kinetics
    if not kin.is_linear:
        raise ValueError("solve_limit_linear needs the linear kinetics family")
    if ratio_a < 0:
        raise ValueError("ratio_a must be nonnegative")
    beta = kin.beta
    L = grid.length
    m = 0.5 * params.ubar * L if mass_m is None else float(mass_m)
    if not m > 0:
        raise ValueError("mass_m must be positive")
    a = float(ratio_a)
    if a == 0.0:
        u = np.full(grid.n_nodes, m / L)
        st = StateField(u, beta * u)
        return LimitSolution(a, st, limit_residual(st, a, params, grid), m / L, m)

    vc = beta * m / L
    v = np.full(grid.n_nodes, vc) if initial_v is None else np.asarray(initial_v, float).copy()
    trace: list[tuple[float, float]] = []

    def mass_gap(logc, v_start):
        c = math.exp(logc)
        vv = _solve_v(c, a, beta, params, grid, v_start, tol)
        return grid.integrate(c * np.exp(a * vv)) - m, vv

    # the constant solution fixes the natural first guess for C
    x0 = math.log(m / L) - a * float(np.mean(v))
    try:
        f0, v = mass_gap(x0, v)
    except NewtonFailure as exc:
        raise LimitSolveError(f"inner solve failed at the initial C: {exc}", trace) from exc
    trace.append((x0, f0))
    if abs(f0) <= tol * m:
        return _limit_solution(a, x0, v, m, params, grid)
    x1 = x0 + 0.01
    for _ in range(max_outer):
        try:
            f1, v1 = mass_gap(x1, v)
        except NewtonFailure as exc:
            raise LimitSolveError(f"inner solve failed: {exc}", trace) from exc
        trace.append((x1, f1))
        if abs(f1) <= tol * m:
            return _limit_solution(a, x1, v1, m, params, grid)
        if f1 == f0:
            break
        x0, f0, (x1, v) = x1, f1, (x1 - f1 * (x1 - x0) / (f1 - f0), v1)
    raise LimitSolveError("outer secant iteration on C did not converge", trace)


def _limit_solution(a, logc, v, m, params, grid) -> LimitSolution:
    c = math.exp(logc)
    st = StateField(c * np.exp(a * v), v)
    return LimitSolution(a, st, limit_residual(st, a, params, grid), c, grid.integrate(st.u))
