"""Time integration of the parabolic system on the steady-solver grid.

The right-hand side is exactly the steady residual, so steady states of the
discrete elliptic problem are fixed points of both schemes.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .banded import BandedMatrix, SingularSystem
from .grid import Grid, StateField
from .kinetics import ModelParams
from .linear import growth_rates, positive_equilibrium
from .steady import (
    BranchPoint,
    NewtonFailure,
    NewtonOptions,
    _jacobian_z,
    _newton,
    _residual_z,
)

__all__ = [
    "Scheme",
    "Verdict",
    "EvolutionConfig",
    "TimeStepError",
    "Trajectory",
    "StabilityProbe",
    "advection_dt_bound",
    "step",
    "evolve",
    "probe_stability",
    "random_perturbation",
    "eigenmode_growth_rate",
    "fit_log_slope",
]

log = logging.getLogger(__name__)

DT_SAFETY = 0.4


class Scheme(str, enum.Enum):
    SEMI_IMPLICIT = "SemiImplicit"
    FULLY_IMPLICIT = "FullyImplicit"


class Verdict(str, enum.Enum):
    DECAYED = "Decayed"
    GREW = "Grew"
    INCONCLUSIVE = "Inconclusive"


class TimeStepError(ValueError):
    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    t_final: float
    scheme: Scheme = Scheme.SEMI_IMPLICIT
    perturb_eps: float = 1e-6
    rate_tol: float = 1e-4
    seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= self.dt:
            raise ValueError("t_final must be at least dt")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


def advection_dt_bound(state: StateField, params: ModelParams, grid: Grid) -> float:
    """0.4 h / (chi c1 max|v'|): the explicit chemotaxis CFL limit."""
    speed = params.chi * params.kinetics.bound_c1 * float(np.max(np.abs(np.diff(state.v)))) / grid.spacing
    return math.inf if speed == 0 else DT_SAFETY * grid.spacing / speed


def _diffusion_bands(grid: Grid, coeff: float, dt: float, decay: float) -> np.ndarray:
    """Band storage of I - dt*(coeff*Lap_h - decay) with the flux-form Neumann Laplacian."""
    n = grid.n_nodes
    w = grid.weights
    c = coeff / grid.spacing
    ab = np.zeros((3, n))
    off = dt * c / w
    ab[0, 1:] = -off[:-1]  # super-diagonal, row i col i+1
    ab[2, :-1] = -off[1:]  # sub-diagonal, row i+1 col i
    diag = np.full(n, 2.0)
    diag[0] = diag[-1] = 1.0
    ab[1] = 1.0 + dt * (c * diag / w + decay)
    return ab


def _laplacian(a: np.ndarray, grid: Grid) -> np.ndarray:
    flux = np.diff(a) / grid.spacing
    out = np.zeros_like(a)
    out[:-1] += flux
    out[1:] -= flux
    return out / grid.weights


def _semi_implicit(z, params, grid, dt):
    u, v = z[0::2], z[1::2]
    # explicit part = full right-hand side minus the implicit linear terms
    r = _residual_z(z, params.chi, params, grid)
    ru_explicit = r[0::2] - params.d1 * _laplacian(u, grid)
    u_new = solve_banded((1, 1), _diffusion_bands(grid, params.d1, dt, 0.0), u + dt * ru_explicit)
    v_rhs = v + dt * params.kinetics.h(u_new)
    v_new = solve_banded((1, 1), _diffusion_bands(grid, params.d2, dt, 1.0), v_rhs)
    out = np.empty_like(z)
    out[0::2], out[1::2] = u_new, v_new
    return out


def _fully_implicit(z, params, grid, dt):
    chi = params.chi

    def fun(x):
        return x - z - dt * _residual_z(x, chi, params, grid)

    def solve(x, rhs):
        return _jacobian_z(x, chi, params, grid).scaled(-dt).add_diagonal(1.0).solve(rhs)

    def floor_fn(x):
        jac = _jacobian_z(x, chi, params, grid)
        mag = BandedMatrix(np.abs(jac.ab), jac.lower, jac.upper).matvec(np.abs(x))
        return 64.0 * np.finfo(float).eps * float(np.max(np.abs(x) + np.abs(z) + dt * mag))

    scale = max(float(np.max(np.abs(z))), 1.0)
    opts = NewtonOptions(tol=1e-13 * scale, max_iter=30)
    x, _, _, _ = _newton(fun, solve, z, opts, floor_fn=floor_fn)
    return x


def step(state: StateField, params: ModelParams, grid: Grid, dt: float, scheme=Scheme.SEMI_IMPLICIT) -> StateField:
    """Advance one step of size ``dt``.

    SemiImplicit treats diffusion and the linear v-decay implicitly and the
    chemotaxis flux and logistic term explicitly; it raises
    :class:`TimeStepError` when ``dt`` exceeds the advection bound.
    FullyImplicit is backward Euler solved by Newton.
    """
    scheme = Scheme(scheme)
    if state.u.size != grid.n_nodes:
        raise ValueError("state does not match grid")
    z = state.to_vector()
    if scheme is Scheme.SEMI_IMPLICIT:
        bound = advection_dt_bound(state, params, grid)
        if dt > bound:
            raise TimeStepError(f"dt={dt:.3e} exceeds advection bound {bound:.3e}", bound)
        out = _semi_implicit(z, params, grid, dt)
    else:
        try:
            out = _fully_implicit(z, params, grid, dt)
        except (NewtonFailure, SingularSystem) as exc:
            raise TimeStepError(f"backward Euler solve failed: {exc}", 0.5 * dt) from exc
    return StateField.from_vector(out)


@dataclass
class Trajectory:
    times: np.ndarray
    norm_u: np.ndarray
    norm_v: np.ndarray
    min_u: np.ndarray
    u0: np.ndarray
    final: StateField
    dt_reductions: int = 0


def _advance(state, params, grid, dt, scheme, t_left):
    """One step of at most ``dt``, shrinking to the advection bound if needed."""
    h = min(dt, t_left)
    reductions = 0
    while True:
        try:
            return step(state, params, grid, h, scheme), h, reductions
        except TimeStepError as exc:
            reductions += 1
            h = min(0.9 * exc.suggested_dt, 0.5 * h)
            if h < 1e-14 * max(dt, 1.0):
                raise


def evolve(state: StateField, params: ModelParams, grid: Grid, config: EvolutionConfig, observer=None) -> Trajectory:
    """March to ``t_final`` recording sup-norm distances from the positive equilibrium.

    ``observer(t, state)`` may return True to stop early.
    """
    ub, vb = positive_equilibrium(params)
    times, nu, nv, mu, u0 = [], [], [], [], []

    def record(t, s):
        times.append(t)
        nu.append(float(np.max(np.abs(s.u - ub))))
        nv.append(float(np.max(np.abs(s.v - vb))))
        mu.append(float(np.min(s.u)))
        u0.append(float(s.u[0]))

    t, n, reductions = 0.0, 0, 0
    cur = state
    record(t, cur)
    while t < config.t_final * (1 - 1e-12):
        cur, h, r = _advance(cur, params, grid, config.dt, config.scheme, config.t_final - t)
        reductions += r
        t += h
        n += 1
        if n % config.record_every == 0:
            record(t, cur)
        if observer is not None and observer(t, cur):
            break
    if times[-1] != t:
        record(t, cur)
    return Trajectory(np.array(times), np.array(nu), np.array(nv), np.array(mu), np.array(u0), cur, reductions)


# --------------------------------------------------------------------------
# stability probes


@dataclass
class StabilityProbe:
    base: StateField
    growth_rate: float
    verdict: Verdict
    times: np.ndarray
    norms: np.ndarray


def random_perturbation(grid: Grid, seed: int, exclude_k: int | None = None, n_modes: int = 6) -> StateField:
    """Zero-mean cosine mixture for u and v, max-norm 1, optionally without mode ``exclude_k``."""
    rng = np.random.default_rng(seed)
    modes = [k for k in range(1, n_modes + 2) if k != exclude_k][:n_modes]
    parts = []
    for _ in range(2):
        coef = rng.standard_normal(len(modes))
        parts.append(sum(c * grid.cosine(k) for c, k in zip(coef, modes)))
    scale = max(float(np.max(np.abs(parts[0]))), float(np.max(np.abs(parts[1]))))
    return StateField(parts[0] / scale, parts[1] / scale)


def fit_log_slope(times: np.ndarray, norms: np.ndarray) -> float:
    """Least-squares slope of log(norm) over the tail half of the record."""
    times = np.asarray(times)
    norms = np.asarray(norms)
    ok = norms > 0
    times, norms = times[ok], norms[ok]
    if times.size < 4:
        return 0.0
    half = times.size // 2
    return float(np.polyfit(times[half:], np.log(norms[half:]), 1)[0])


def _perturbation_norm(z, base, wz):
    d = z - base
    return math.sqrt(float(np.dot(wz * d, d)))


def _run_probe(base: StateField, pert: StateField, params, grid, config: EvolutionConfig,
               eps: float, shrink=1e-6, grow=1e3) -> tuple[np.ndarray, np.ndarray]:
    wz = np.repeat(grid.weights, 2)
    zb = base.to_vector()
    start = StateField.from_vector(zb + eps * pert.to_vector())
    n0 = _perturbation_norm(start.to_vector(), zb, wz)
    times, norms = [0.0], [n0]
    if n0 == 0:
        return np.array(times), np.array(norms)

    # below this the perturbation is lost in rounding noise of the base state
    noise = 1e-10 * max(math.sqrt(float(np.dot(wz * zb, zb))), 1.0)
    low = max(shrink * n0, noise)
    # stay in the linear regime: stop well before the perturbation rivals the pattern
    ub, vb = positive_equilibrium(params)
    pattern = _perturbation_norm(zb, StateField.constant(grid, ub, vb).to_vector(), wz)
    high = grow * n0 if pattern == 0 else min(grow * n0, max(0.1 * pattern, 10.0 * n0))

    def observer(t, s):
        nrm = _perturbation_norm(s.to_vector(), zb, wz)
        times.append(t)
        norms.append(nrm)
        return nrm < low or nrm > high

    evolve(start, params, grid, config, observer=observer)
    return np.array(times), np.array(norms)


def _verdict(rate: float, tol: float) -> Verdict:
    if rate < -tol:
        return Verdict.DECAYED
    if rate > tol:
        return Verdict.GREW
    return Verdict.INCONCLUSIVE


def probe_stability(
    steady: BranchPoint | StateField,
    params: ModelParams,
    grid: Grid,
    config: EvolutionConfig,
    k: int | None = 1,
) -> StabilityProbe:
    """Perturb a steady state and fit the exponential rate of the perturbation norm.

    The perturbation is ``perturb_eps`` times a seeded zero-mean cosine mixture
    that omits mode ``k``.  Runs stop early once the norm has shrunk by 1e6 or
    grown by 1e3.
    """
    if isinstance(steady, BranchPoint):
        base = steady.state
        params = params.with_chi(steady.chi)
    else:
        base = steady
    pert = random_perturbation(grid, config.seed, exclude_k=k)
    times, norms = _run_probe(base, pert, params, grid, config, config.perturb_eps)
    rate = fit_log_slope(times, norms) if config.perturb_eps > 0 else 0.0
    return StabilityProbe(base, rate, _verdict(rate, config.rate_tol), times, norms)


def eigenmode_growth_rate(params: ModelParams, grid: Grid, k: int, config: EvolutionConfig) -> tuple[float, float]:
    """(fitted, analytic) growth rate of an eigenvector-k perturbation of the equilibrium.

    The perturbation is the dominant eigenvector of the 2x2 matrix for mode k
    (continuum wavenumber) laid on the discrete cosine mode.
    """
    from .linear import stability_matrix

    ub, vb = positive_equilibrium(params)
    hk = stability_matrix(params, k)
    vals, vecs = np.linalg.eig(hk)
    i = int(np.argmax(vals.real))
    vec = np.real(vecs[:, i])
    vec /= np.max(np.abs(vec))
    c = grid.cosine(k)
    pert = StateField(vec[0] * c, vec[1] * c)
    base = StateField.constant(grid, ub, vb)
    times, norms = _run_probe(base, pert, params, grid, config, config.perturb_eps)
    return fit_log_slope(times, norms), growth_rates(params, k)[0].real
