"""Finite-difference steady states: residual, Jacobian, Newton, branch tracking.

Unknowns are interleaved per node, z = (u0, v0, u1, v1, ..., uN, vN).  The
chemotaxis flux J = D1 u' - chi Phi v' lives on half-nodes with Phi averaged
arithmetically, and node i divides the flux difference by its trapezoid
weight.  Zero-flux boundaries therefore telescope away under the trapezoid
rule, which makes ubar * int(u) = int(u^2) hold for every discrete root.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .banded import BandedMatrix, SingularSystem, bordered_solve
from .grid import Grid, StateField
from .kinetics import ModelParams
from .linear import (
    REL_TOL,
    bifurcation_value,
    bifurcation_value_for,
    check_simplicity,
    kmax_floor,
    mode_ratio,
    positive_equilibrium,
)

__all__ = [
    "LOWER",
    "UPPER",
    "NewtonOptions",
    "NewtonResult",
    "NewtonFailure",
    "SingularJacobian",
    "BifurcationError",
    "Diagnostics",
    "BranchPoint",
    "Branch",
    "TerminatedBy",
    "ContinuationOptions",
    "residual",
    "jacobian",
    "chi_derivative",
    "newton_solve",
    "discrete_bifurcation_value",
    "discrete_mode_ratio",
    "discrete_eigenmode",
    "linearization_logdet",
    "detect_bifurcation",
    "mode_coefficient",
    "diagnostics",
    "branch_switch",
    "continue_branch",
    "continue_from",
    "fit_pitchfork",
    "PitchforkFit",
]

log = logging.getLogger(__name__)

LOWER, UPPER = 2, 3
EPS = np.finfo(float).eps


class NewtonFailure(RuntimeError):
    """Newton did not converge; ``trace`` holds the residual max-norm per iteration."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = list(trace)


class SingularJacobian(NewtonFailure):
    """The linear solve inside Newton was rank deficient."""


class BifurcationError(ValueError):
    pass


def _check_dims(z: np.ndarray, grid: Grid) -> None:
    if z.size != 2 * grid.n_nodes:
        raise ValueError(f"state has {z.size // 2} nodes, grid has {grid.n_nodes}")


# --------------------------------------------------------------------------
# residual and Jacobian


def _residual_z(z: np.ndarray, chi: float, params: ModelParams, grid: Grid) -> np.ndarray:
    u, v = z[0::2], z[1::2]
    kin = params.kinetics
    h = grid.spacing
    w = grid.weights
    phi = kin.phi(u, v)
    m = 0.5 * (phi[:-1] + phi[1:])
    du, dv = np.diff(u), np.diff(v)
    flux_u = (params.d1 * du - chi * m * dv) / h
    flux_v = params.d2 * dv / h
    div_u = np.zeros_like(u)
    div_v = np.zeros_like(v)
    div_u[:-1] += flux_u
    div_u[1:] -= flux_u
    div_v[:-1] += flux_v
    div_v[1:] -= flux_v
    r = np.empty_like(z)
    r[0::2] = div_u / w + (params.ubar - u) * u
    r[1::2] = div_v / w - v + kin.h(u)
    return r


def _jacobian_z(z: np.ndarray, chi: float, params: ModelParams, grid: Grid) -> BandedMatrix:
    u, v = z[0::2], z[1::2]
    kin = params.kinetics
    n = u.size
    h = grid.spacing
    w = grid.weights
    phi, pu, pv = kin.phi(u, v), kin.phi_u(u, v), kin.phi_v(u, v)
    pu = np.broadcast_to(pu, u.shape)
    pv = np.broadcast_to(pv, u.shape)
    m = 0.5 * (phi[:-1] + phi[1:])
    dv = np.diff(v)
    left = np.arange(n - 1)
    right = left + 1

    # d J_{i+1/2} / d(u_i, u_{i+1}, v_i, v_{i+1})
    dj = {
        ("u", 0): (-params.d1 - 0.5 * chi * pu[:-1] * dv) / h,
        ("u", 1): (params.d1 - 0.5 * chi * pu[1:] * dv) / h,
        ("v", 0): (-0.5 * chi * pv[:-1] * dv + chi * m) / h,
        ("v", 1): (-0.5 * chi * pv[1:] * dv - chi * m) / h,
    }
    rows, cols, vals = [], [], []
    for (var, side), d in dj.items():
        node = left if side == 0 else right
        col = 2 * node + (0 if var == "u" else 1)
        # flux enters node i with + sign, node i+1 with - sign
        rows += [2 * left, 2 * right]
        cols += [col, col]
        vals += [d / w[left], -d / w[right]]
    dvflux = params.d2 / h
    for a, b, sgn in ((left, right, 1.0), (right, left, 1.0)):
        rows += [2 * a + 1, 2 * a + 1]
        cols += [2 * b + 1, 2 * a + 1]
        vals += [sgn * dvflux / w[a], -dvflux / w[a]]
    idx = np.arange(n)
    rows += [2 * idx, 2 * idx + 1, 2 * idx + 1]
    cols += [2 * idx, 2 * idx + 1, 2 * idx]
    vals += [params.ubar - 2.0 * u, np.full(n, -1.0), np.broadcast_to(kin.dh(u), u.shape)]
    return BandedMatrix.from_entries(
        2 * n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), LOWER, UPPER
    )


def _chi_derivative_z(z: np.ndarray, params: ModelParams, grid: Grid) -> np.ndarray:
    u, v = z[0::2], z[1::2]
    phi = params.kinetics.phi(u, v)
    m = 0.5 * (phi[:-1] + phi[1:])
    dflux = -m * np.diff(v) / grid.spacing
    div = np.zeros_like(u)
    div[:-1] += dflux
    div[1:] -= dflux
    out = np.zeros_like(z)
    out[0::2] = div / grid.weights
    return out


def residual(state: StateField, params: ModelParams, grid: Grid) -> np.ndarray:
    """Interleaved discrete residual of the stationary system (length 2(N+1))."""
    z = state.to_vector()
    _check_dims(z, grid)
    return _residual_z(z, params.chi, params, grid)


def jacobian(state: StateField, params: ModelParams, grid: Grid) -> BandedMatrix:
    """Exact derivative of :func:`residual`, band (2 lower, 3 upper)."""
    z = state.to_vector()
    _check_dims(z, grid)
    return _jacobian_z(z, params.chi, params, grid)


def chi_derivative(state: StateField, params: ModelParams, grid: Grid) -> np.ndarray:
    z = state.to_vector()
    _check_dims(z, grid)
    return _chi_derivative_z(z, params, grid)


def _roundoff_floor(z: np.ndarray, jac: BandedMatrix) -> float:
    # size of the rounding error committed when the residual is evaluated
    mag = BandedMatrix(np.abs(jac.ab), jac.lower, jac.upper).matvec(np.abs(z))
    return 64.0 * EPS * float(np.max(mag, initial=0.0))


# --------------------------------------------------------------------------
# Newton


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 25
    damping: bool = True
    max_halvings: int = 8


@dataclass
class NewtonResult:
    state: StateField
    iterations: int
    residual_norm: float
    trace: list[float]
    floor: float = 0.0


def _newton(fun, jac_solve, z0, opts: NewtonOptions, floor_fn=None):
    """Generic damped Newton on a vector ``x``.  Returns (x, iters, trace, floor)."""
    x = z0.copy()
    r = fun(x)
    rn = float(np.max(np.abs(r)))
    trace = [rn]
    floor = 0.0
    for it in range(opts.max_iter + 1):
        if not math.isfinite(rn):
            raise NewtonFailure("residual became non-finite", trace)
        floor = floor_fn(x) if floor_fn is not None else 0.0
        if rn <= max(opts.tol, floor):
            return x, it, trace, floor
        if it == opts.max_iter:
            break
        try:
            dx = jac_solve(x, -r)
        except (SingularSystem, np.linalg.LinAlgError) as exc:
            raise SingularJacobian(f"singular Jacobian at iteration {it}: {exc}", trace) from exc
        step = 1.0
        for _ in range(opts.max_halvings + 1 if opts.damping else 1):
            xn = x + step * dx
            rn_new_vec = fun(xn)
            rn_new = float(np.max(np.abs(rn_new_vec)))
            if math.isfinite(rn_new) and (rn_new < rn or not opts.damping):
                break
            step *= 0.5
        else:
            # no decrease within the halving budget; accept the smallest step
            pass
        x, r, rn = xn, rn_new_vec, rn_new
        trace.append(rn)
    raise NewtonFailure(
        f"no convergence in {opts.max_iter} iterations (residual {rn:.3e}, tol {opts.tol:.1e})", trace
    )


def newton_solve(
    initial: StateField,
    params: ModelParams,
    grid: Grid,
    opts: NewtonOptions | None = None,
) -> NewtonResult:
    """Solve residual = 0 at fixed chi.

    Converged means max|residual| <= max(tol, rounding floor); the floor is the
    size of rounding error in evaluating the residual itself and only matters
    on fine grids or steep profiles.
    """
    opts = opts or NewtonOptions()
    z0 = initial.to_vector()
    _check_dims(z0, grid)
    if not np.all(np.isfinite(z0)):
        raise ValueError("initial state must be finite")
    chi = params.chi

    def fun(z):
        return _residual_z(z, chi, params, grid)

    def solve(z, rhs):
        return _jacobian_z(z, chi, params, grid).solve(rhs)

    def floor_fn(z):
        return _roundoff_floor(z, _jacobian_z(z, chi, params, grid))

    z, iters, trace, floor = _newton(fun, solve, z0, opts, floor_fn)
    return NewtonResult(StateField.from_vector(z), iters, trace[-1], trace, floor)


# --------------------------------------------------------------------------
# trivial branch and bifurcation detection


def discrete_bifurcation_value(params: ModelParams, grid: Grid, k: int) -> float:
    """chi_k with (k pi/L)^2 replaced by the discrete Neumann eigenvalue."""
    if int(k) != k or k < 1:
        raise ValueError(f"mode k must be a positive integer, got {k}")
    return bifurcation_value_for(params, grid.laplacian_eigenvalue(k))


def discrete_mode_ratio(params: ModelParams, grid: Grid, k: int) -> float:
    return mode_ratio(params, grid.laplacian_eigenvalue(k))


def discrete_eigenmode(params: ModelParams, grid: Grid, k: int) -> StateField:
    """Null vector (Q_k^h cos, cos) of the discrete linearisation at chi_k^h."""
    if int(k) != k or k < 1:
        raise ValueError(f"mode k must be a positive integer, got {k}")
    c = grid.cosine(k)
    return StateField(discrete_mode_ratio(params, grid, k) * c, c)


def _equilibrium_vector(params: ModelParams, grid: Grid) -> np.ndarray:
    ub, vb = positive_equilibrium(params)
    return StateField.constant(grid, ub, vb).to_vector()


def linearization_logdet(params: ModelParams, grid: Grid, chi: float) -> tuple[float, float]:
    """(sign, log|det|) of the discrete Jacobian at the positive equilibrium."""
    z = _equilibrium_vector(params, grid)
    return np.linalg.slogdet(_jacobian_z(z, chi, params, grid).to_dense())


def _default_bracket(params: ModelParams, k: int) -> tuple[float, float]:
    chi_k = bifurcation_value(params, k)
    k_hi = max(kmax_floor(params), 2 * k + 2)
    gaps = [abs(bifurcation_value(params, j) - chi_k) for j in range(1, k_hi + 1) if j != k]
    half = min([0.1 * chi_k] + [0.5 * g for g in gaps])
    if half <= REL_TOL * chi_k:
        raise BifurcationError(f"chi_{k} is not isolated from neighbouring bifurcation values")
    return chi_k - half, chi_k + half


def detect_bifurcation(
    params: ModelParams,
    grid: Grid,
    k: int,
    bracket: tuple[float, float] | None = None,
    check: bool = True,
) -> float:
    """Locate the chi where det of the discrete linearisation changes sign.

    Bisection on the determinant sign followed by one secant step on the
    rescaled determinant.  With ``check`` the result must agree with
    :func:`discrete_bifurcation_value` to relative 1e-10.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"mode k must be a positive integer, got {k}")
    lo, hi = bracket if bracket is not None else _default_bracket(params, k)
    s_lo, l_lo = linearization_logdet(params, grid, lo)
    s_hi, l_hi = linearization_logdet(params, grid, hi)
    if s_lo == 0 or s_hi == 0 or s_lo == s_hi:
        raise BifurcationError(f"no determinant sign change in [{lo}, {hi}]")
    for _ in range(200):
        if hi - lo <= 4 * EPS * abs(hi):
            break
        mid = 0.5 * (lo + hi)
        s_mid, l_mid = linearization_logdet(params, grid, mid)
        if s_mid == 0:
            lo = hi = mid
            break
        if s_mid == s_lo:
            lo, s_lo, l_lo = mid, s_mid, l_mid
        else:
            hi, s_hi, l_hi = mid, s_mid, l_mid
    if hi > lo:
        ref = max(l_lo, l_hi)
        f_lo, f_hi = s_lo * math.exp(l_lo - ref), s_hi * math.exp(l_hi - ref)
        root = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        root = min(max(root, lo), hi)
    else:
        root = lo
    if check:
        exact = discrete_bifurcation_value(params, grid, k)
        if abs(root - exact) > 1e-10 * abs(exact):
            raise BifurcationError(
                f"determinant root {root!r} disagrees with discrete closed form {exact!r}"
            )
    return float(root)


# --------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class Diagnostics:
    l1_mass: float
    l2_norm_sq: float
    min_u: float
    max_u: float
    min_v: float
    monotone_u: bool
    monotone_v: bool
    increasing_u: bool
    increasing_v: bool
    newton_residual: float
    amplitude: float
    identity_gap: float
    mass_bound_ok: bool
    bracket_ok: bool

    @property
    def positive(self) -> bool:
        return self.min_u > 0 and self.min_v > 0

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["positive"] = self.positive
        return d


def _nonincreasing(a: np.ndarray) -> bool:
    slack = 1e-12 * max(float(np.max(np.abs(a))), 1e-300)
    return bool(np.all(np.diff(a) < slack))


def diagnostics(state: StateField, params: ModelParams, grid: Grid) -> Diagnostics:
    """Integral identities and shape checks for a (candidate) steady state."""
    u, v = state.u, state.v
    ub = params.ubar
    l1 = grid.integrate(u)
    l2 = grid.integrate(u * u)
    res = float(np.max(np.abs(residual(state, params, grid))))
    spread = float(np.max(u) - np.min(u))
    # nonconstant states must straddle ubar; constants are exempt
    const = spread <= 1e-12 * max(float(np.max(np.abs(u))), 1.0)
    bracket_ok = const or (float(np.min(u)) <= ub <= float(np.max(u)))
    return Diagnostics(
        l1_mass=l1,
        l2_norm_sq=l2,
        min_u=float(np.min(u)),
        max_u=float(np.max(u)),
        min_v=float(np.min(v)),
        monotone_u=_nonincreasing(u),
        monotone_v=_nonincreasing(v),
        increasing_u=_nonincreasing(u[::-1]),
        increasing_v=_nonincreasing(v[::-1]),
        newton_residual=res,
        amplitude=float(np.max(np.abs(u - ub))),
        identity_gap=ub * l1 - l2,
        mass_bound_ok=l1 <= ub * params.length * (1.0 + 1e-8),
        bracket_ok=bracket_ok,
    )


# --------------------------------------------------------------------------
# branches


class TerminatedBy(str, enum.Enum):
    CHI_LIMIT = "ChiLimit"
    STEP_FAILURE = "StepFailure"
    FOLD_DETECTED = "FoldDetected"
    USER_STOP = "UserStop"
    CLOSED_LOOP = "ClosedLoop"


@dataclass
class BranchPoint:
    arclength: float
    chi: float
    state: StateField
    diagnostics: Diagnostics
    s: float = 0.0
    newton_iterations: int = 0


@dataclass
class Branch:
    mode: int
    points: list[BranchPoint]
    terminated_by: TerminatedBy
    chi_k_h: float
    orientation: int = 1
    folds: list[float] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    closed_loop: bool = False

    @property
    def chis(self) -> np.ndarray:
        return np.array([p.chi for p in self.points])

    @property
    def mode_coefficients(self) -> np.ndarray:
        return np.array([p.s for p in self.points])

    @property
    def min_chi(self) -> float:
        """Empirical lower end of the branch's chi-projection."""
        return float(np.min(self.chis)) if self.points else math.nan


def _weights_z(grid: Grid) -> np.ndarray:
    return np.repeat(grid.weights, 2)


def mode_coefficient(state: StateField, params: ModelParams, grid: Grid, k: int) -> float:
    """Projection s of state - equilibrium onto the discrete k-mode (trapezoid inner product)."""
    wz = _weights_z(grid)
    phi = discrete_eigenmode(params, grid, k).to_vector()
    dz = state.to_vector() - _equilibrium_vector(params, grid)
    return float(np.dot(wz * phi, dz) / np.dot(wz * phi, phi))


def _violation(d: Diagnostics, orientation: int) -> str | None:
    if not d.positive:
        return f"non-positive state (min u={d.min_u:.3e}, min v={d.min_v:.3e})"
    mono = (d.monotone_u and d.monotone_v) if orientation > 0 else (d.increasing_u and d.increasing_v)
    if not mono:
        return "non-monotone state"
    return None


def _make_point(z, chi, params, grid, k, arclength, iters) -> BranchPoint:
    st = StateField.from_vector(z)
    p = params.with_chi(chi)
    return BranchPoint(
        arclength=arclength,
        chi=float(chi),
        state=st,
        diagnostics=diagnostics(st, p, grid),
        s=mode_coefficient(st, params, grid, k),
        newton_iterations=iters,
    )


def _bordered_newton(z0, chi0, params, grid, border_c, border_d, target, opts: NewtonOptions):
    """Newton on (R(z, chi), c.z + d*chi - target) = 0."""
    n = z0.size

    def fun(x):
        r = _residual_z(x[:n], x[n], params, grid)
        g = np.dot(border_c, x[:n]) + border_d * x[n] - target
        return np.append(r, g)

    def solve(x, rhs):
        jac = _jacobian_z(x[:n], x[n], params, grid)
        rc = _chi_derivative_z(x[:n], params, grid)
        dz, dchi = bordered_solve(jac, rc, border_c, border_d, rhs[:n], rhs[n:])
        return np.append(dz, dchi)

    def floor_fn(x):
        return _roundoff_floor(x[:n], _jacobian_z(x[:n], x[n], params, grid))

    x, iters, trace, _ = _newton(fun, solve, np.append(z0, chi0), opts, floor_fn)
    return x[:n], float(x[n]), iters


def branch_switch(
    params: ModelParams,
    grid: Grid,
    k: int,
    s0: float | None = None,
    opts: NewtonOptions | None = None,
) -> BranchPoint:
    """First point on the k-th bifurcating branch, at mode coefficient ``s0``.

    The predictor adds s0 times the discrete null mode to the equilibrium; the
    corrector frees chi and pins the mode coefficient with a phase condition.
    Negative ``s0`` gives the mirror branch.
    """
    simple = check_simplicity(params, k)
    if not simple:
        raise BifurcationError(f"mode {k} is not simple (coincides with j={simple.offending_j})")
    opts = opts or NewtonOptions()
    chi_h = discrete_bifurcation_value(params, grid, k)
    q = discrete_mode_ratio(params, grid, k)
    if s0 is None:
        s0 = 1e-2 * params.ubar / q
    z_eq = _equilibrium_vector(params, grid)
    phi = discrete_eigenmode(params, grid, k).to_vector()
    if s0 == 0:
        return _make_point(z_eq, chi_h, params, grid, k, 0.0, 0)
    wz = _weights_z(grid)
    c = wz * phi
    target = np.dot(c, z_eq) + s0 * np.dot(c, phi)
    z, chi, iters = _bordered_newton(z_eq + s0 * phi, chi_h, params, grid, c, 0.0, target, opts)
    return _make_point(z, chi, params, grid, k, 0.0, iters)


@dataclass(frozen=True)
class ContinuationOptions:
    chi_max: float
    chi_min: float = 0.0
    ds_init: float = 0.05
    ds_min: float = 1e-6
    ds_max: float = 1.0
    max_points: int = 5000
    s0: float | None = None
    fast_iters: int = 3
    max_corrector_iter: int = 10
    stop_at_fold: bool = False
    max_correction: float = 0.5
    min_tangent_cos: float = 0.9
    newton: NewtonOptions = NewtonOptions()


def _arc_norm(dz, dchi, wz_scaled) -> float:
    return math.sqrt(float(np.dot(wz_scaled * dz, dz)) + dchi * dchi)


def continue_branch(
    params: ModelParams,
    grid: Grid,
    k: int,
    opts: ContinuationOptions,
    callback: Callable[[BranchPoint], bool] | None = None,
) -> Branch:
    """Pseudo-arclength continuation of the k-th branch in chi.

    Arclength uses (1/L) * trapezoid(du^2 + dv^2) + dchi^2.  Steps double after
    fast corrector convergence and halve on failure.  Positivity/monotonicity
    failures on the k=1 branch are recorded in ``violations``; folds in chi
    are logged in ``folds``.  ``callback`` returning False stops the run.
    """
    start = branch_switch(params, grid, k, opts.s0, opts.newton)
    orientation = 1 if start.s >= 0 else -1
    branch = Branch(mode=k, points=[start], terminated_by=TerminatedBy.STEP_FAILURE,
                    chi_k_h=discrete_bifurcation_value(params, grid, k), orientation=orientation)
    _record_violation(branch, start, k)
    # initial tangent: the null mode direction, chi stationary to first order
    guess = orientation * discrete_eigenmode(params, grid, k).to_vector()
    return _trace(branch, params, grid, guess, 0.0, opts, callback)


def continue_from(
    state: StateField,
    params: ModelParams,
    grid: Grid,
    opts: ContinuationOptions,
    direction: int = 1,
    k: int = 1,
    callback: Callable[[BranchPoint], bool] | None = None,
) -> Branch:
    """Continue the branch through a given steady state at chi = params.chi.

    The state is first refined by Newton; ``direction`` picks increasing (+1)
    or decreasing (-1) chi for the first step.
    """
    res = newton_solve(state, params, grid, opts.newton)
    z = res.state.to_vector()
    start = _make_point(z, params.chi, params, grid, k, 0.0, res.iterations)
    orientation = 1 if start.state.u[0] >= start.state.u[-1] else -1
    branch = Branch(mode=k, points=[start], terminated_by=TerminatedBy.STEP_FAILURE,
                    chi_k_h=discrete_bifurcation_value(params, grid, k), orientation=orientation)
    _record_violation(branch, start, k)
    return _trace(branch, params, grid, np.zeros_like(z), float(np.sign(direction) or 1.0), opts, callback)


def _trace(branch, params, grid, t_z, t_chi, opts, callback):
    k = branch.mode
    wz = _weights_z(grid) / params.length
    corr = NewtonOptions(opts.newton.tol, opts.max_corrector_iter, opts.newton.damping, opts.newton.max_halvings)
    z = branch.points[-1].state.to_vector()
    chi = branch.points[-1].chi
    t_z, t_chi = _tangent(z, chi, params, grid, t_z, t_chi, wz)
    ds = opts.ds_init
    arclength = 0.0
    # the start and its mirror image; coming back to either closes the branch
    anchors = [z.copy(), StateField.from_vector(z).reflected().to_vector()]
    chi0 = chi
    gap = _arc_norm(anchors[0] - anchors[1], 0.0, wz)
    left_start = False

    while True:
        if len(branch.points) >= opts.max_points:
            branch.terminated_by = TerminatedBy.USER_STOP
            break
        if chi >= opts.chi_max or chi <= opts.chi_min:
            branch.terminated_by = TerminatedBy.CHI_LIMIT
            break
        if ds < opts.ds_min:
            branch.terminated_by = TerminatedBy.STEP_FAILURE
            log.info("continuation stopped: step %.3e below ds_min at chi=%.6g", ds, chi)
            break
        zp, chip = z + ds * t_z, chi + ds * t_chi
        c = wz * t_z
        target = float(np.dot(c, zp) + t_chi * chip)
        try:
            zn, chin, iters = _bordered_newton(zp, chip, params, grid, c, t_chi, target, corr)
            if chin < 0:
                raise NewtonFailure("chi became negative", [])
            tz_new, tchi_new = _tangent(zn, chin, params, grid, t_z, t_chi, wz)
        except (NewtonFailure, SingularSystem, np.linalg.LinAlgError):
            ds *= 0.5
            continue
        # reject corrector jumps and sharp turns; both signal a branch switch
        jump = _arc_norm(zn - zp, chin - chip, wz)
        turn = float(np.dot(wz * tz_new, t_z) + tchi_new * t_chi)
        if jump > opts.max_correction * ds or turn < opts.min_tangent_cos:
            ds *= 0.5
            continue
        arclength += _arc_norm(zn - z, chin - chi, wz)
        pt = _make_point(zn, chin, params, grid, k, arclength, iters)
        if tchi_new * t_chi < 0:
            branch.folds.append(pt.chi)
            log.info("fold in chi detected near chi=%.8g", pt.chi)
        branch.points.append(pt)
        _record_violation(branch, pt, k)
        z, chi, t_z, t_chi = zn, chin, tz_new, tchi_new
        near = min(_arc_norm(zn - a, chin - chi0, wz) for a in anchors)
        if near > 4.0 * gap + 4.0 * opts.ds_init:
            left_start = True
        elif left_start and near <= gap + ds:
            branch.closed_loop = True
            branch.terminated_by = TerminatedBy.CLOSED_LOOP
            log.info("branch returned to its starting point (closed loop) at chi=%.8g", chin)
            break
        if callback is not None and callback(pt) is False:
            branch.terminated_by = TerminatedBy.USER_STOP
            break
        if branch.folds and opts.stop_at_fold:
            branch.terminated_by = TerminatedBy.FOLD_DETECTED
            break
        if iters <= opts.fast_iters:
            ds = min(2.0 * ds, opts.ds_max)
    return branch


def _record_violation(branch: Branch, pt: BranchPoint, k: int) -> None:
    if k != 1:
        return
    msg = _violation(pt.diagnostics, branch.orientation)
    if msg is not None:
        first = not branch.violations
        branch.violations.append(f"chi={pt.chi:.10g}: {msg}")
        level = logging.WARNING if first else logging.DEBUG
        log.log(level, "positivity/monotonicity violation on k=1 branch at chi=%.10g: %s", pt.chi, msg)


def _tangent(z, chi, params, grid, t_z_prev, t_chi_prev, wz):
    jac = _jacobian_z(z, chi, params, grid)
    rc = _chi_derivative_z(z, params, grid)
    tz, tchi = bordered_solve(jac, rc, wz * t_z_prev, t_chi_prev, np.zeros(z.size), [1.0])
    tchi = float(tchi[0])
    norm = _arc_norm(tz, tchi, wz)
    return tz / norm, tchi / norm


# --------------------------------------------------------------------------
# pitchfork fit


@dataclass(frozen=True)
class PitchforkFit:
    c0: float
    c1: float
    c2: float
    s_max: float
    n_points: int

    @property
    def linear_ok(self) -> bool:
        return abs(self.c1) <= 1e-3 * abs(self.c2) * self.s_max


def fit_pitchfork(branch: Branch, n_points: int = 10, chi_k: float | None = None) -> PitchforkFit:
    """Least-squares chi(s) ~ c0 + c1 s + c2 s^2 over the first points of a branch.

    With ``chi_k`` given the constant is pinned to it and only c1, c2 are fitted.
    """
    pts = branch.points[:n_points]
    if len(pts) < 3:
        raise ValueError("need at least three branch points")
    s = np.array([p.s for p in pts])
    y = np.array([p.chi for p in pts])
    if chi_k is None:
        a = np.column_stack([np.ones_like(s), s, s * s])
        c0, c1, c2 = np.linalg.lstsq(a, y, rcond=None)[0]
    else:
        a = np.column_stack([s, s * s])
        c1, c2 = np.linalg.lstsq(a, y - chi_k, rcond=None)[0]
        c0 = chi_k
    return PitchforkFit(float(c0), float(c1), float(c2), float(np.max(np.abs(s))), len(pts))
