"""Closed-form linear analysis of the positive equilibrium.

All quantities use the Neumann eigenvalues (k pi / L)^2 of -d^2/dx^2 on (0, L).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import Grid, StateField
from .kinetics import ModelParams

__all__ = [
    "REL_TOL",
    "DegenerateKinetics",
    "Equilibrium",
    "TRIVIAL_EQUILIBRIUM",
    "ModeAnalysis",
    "Simplicity",
    "positive_equilibrium",
    "wavenumber_sq",
    "stability_matrix",
    "trace_det",
    "growth_rates",
    "bifurcation_value",
    "bifurcation_value_for",
    "mode_ratio",
    "instability_threshold",
    "kmax_floor",
    "check_simplicity",
    "eigenmode",
    "analyze_modes",
]

log = logging.getLogger(__name__)

REL_TOL = 1e-9


class DegenerateKinetics(ValueError):
    pass


class Equilibrium(NamedTuple):
    u: float
    v: float
    note: str = ""


# exposed read-only; never used as a bifurcation base point
TRIVIAL_EQUILIBRIUM = Equilibrium(0.0, 0.0, "unstable, no bifurcation")


def positive_equilibrium(params: ModelParams) -> tuple[float, float]:
    return float(params.ubar), params.vbar


def wavenumber_sq(params: ModelParams, k: int) -> float:
    return (k * math.pi / params.length) ** 2


def _check_mode(k: int) -> None:
    if int(k) != k or k < 1:
        raise ValueError(f"mode k must be a positive integer, got {k}")


def _phi_dh(params: ModelParams) -> tuple[float, float]:
    ub, vb = positive_equilibrium(params)
    kin = params.kinetics
    return float(kin.phi(np.asarray(ub), np.asarray(vb))), float(kin.dh(np.asarray(ub)))


def stability_matrix(params: ModelParams, k: int) -> np.ndarray:
    _check_mode(k)
    lam = wavenumber_sq(params, k)
    phi, dh = _phi_dh(params)
    return np.array(
        [
            [-params.d1 * lam - params.ubar, params.chi * phi * lam],
            [dh, -params.d2 * lam - 1.0],
        ]
    )


def trace_det(params: ModelParams, k: int) -> tuple[float, float]:
    """Return (T, D) of p(lambda) = lambda^2 + T lambda + D for mode k."""
    lam = wavenumber_sq(params, k)
    phi, dh = _phi_dh(params)
    t = (params.d1 + params.d2) * lam + params.ubar + 1.0
    d = (params.d1 * lam + params.ubar) * (params.d2 * lam + 1.0) - params.chi * phi * lam * dh
    return t, d


def growth_rates(params: ModelParams, k: int) -> tuple[complex, complex]:
    _check_mode(k)
    t, d = trace_det(params, k)
    disc = complex(t * t - 4.0 * d)
    root = np.sqrt(disc)
    lp, lm = (-t + root) / 2.0, (-t - root) / 2.0
    if lm.real > lp.real:
        lp, lm = lm, lp
    return complex(lp), complex(lm)


def bifurcation_value_for(params: ModelParams, lam: float) -> float:
    """chi at which the 2x2 linearisation with Laplacian eigenvalue ``lam`` is singular."""
    phi, dh = _phi_dh(params)
    if phi * dh == 0.0:
        raise DegenerateKinetics("phi(ubar, vbar) * h'(ubar) = 0: no bifurcation values")
    return (params.d1 * lam + params.ubar) * (params.d2 * lam + 1.0) / (phi * lam * dh)


def bifurcation_value(params: ModelParams, k: int) -> float:
    _check_mode(k)
    return bifurcation_value_for(params, wavenumber_sq(params, k))


def mode_ratio(params: ModelParams, lam: float) -> float:
    """Q = (D2*lam + 1)/h'(ubar), the u/v amplitude ratio of the null mode."""
    _, dh = _phi_dh(params)
    return (params.d2 * lam + 1.0) / dh


def kmax_floor(params: ModelParams) -> int:
    """Smallest k_max that provably brackets the minimiser of chi_k."""
    kstar = params.length / math.pi * (params.ubar / (params.d1 * params.d2)) ** 0.25
    return int(math.ceil(kstar)) + 2


def instability_threshold(params: ModelParams, k_max: int | None = None) -> tuple[float, int]:
    """Return (chi_0, k_star): the smallest chi_k and its (smallest) wavenumber."""
    floor = kmax_floor(params)
    k_max = floor if k_max is None else max(int(k_max), floor)
    best_chi, best_k = math.inf, 0
    for k in range(1, k_max + 1):
        c = bifurcation_value(params, k)
        if c < best_chi * (1.0 - REL_TOL):
            best_chi, best_k = c, k
    return best_chi, best_k


class Simplicity(NamedTuple):
    simple: bool
    offending_j: int | None = None

    def __bool__(self) -> bool:
        return self.simple


def check_simplicity(params: ModelParams, k: int, j_max: int | None = None) -> Simplicity:
    """Simplicity: ubar != j^2 k^2 D1 D2 (pi/L)^4 for every j != k (relative tol 1e-9)."""
    _check_mode(k)
    j_max = 2 * k if j_max is None else int(j_max)
    if j_max < 2 * k:
        raise ValueError(f"j_max must be >= 2k = {2 * k}")
    unit = params.d1 * params.d2 * (math.pi / params.length) ** 4

    def hit(j, base):
        target = j * j * base
        return abs(params.ubar - target) <= REL_TOL * max(abs(params.ubar), abs(target))

    result = Simplicity(True, None)
    for j in range(1, j_max + 1):
        if j != k and hit(j, k * k * unit):
            result = Simplicity(False, j)
            break
    # the alternative reading drops the k^2 factor; identical for k = 1
    alt = next((j for j in range(2, j_max + 1) if hit(j, unit)), None)
    if (alt is None) != result.simple:
        log.info("simplicity for k=%d: the simplicity condition gives %s, reading without k^2 gives %s",
                 k, result, Simplicity(alt is None, alt))
    return result


def eigenmode(params: ModelParams, k: int, grid: Grid) -> StateField:
    """Nodal samples of the continuum null mode (Q_k cos(k pi x/L), cos(k pi x/L))."""
    _check_mode(k)
    c = np.cos(k * math.pi * grid.nodes / params.length)
    q = mode_ratio(params, wavenumber_sq(params, k))
    return StateField(q * c, c)


@dataclass(frozen=True)
class ModeAnalysis:
    k: int
    lambda_k: float
    chi_k: float
    q_k: float
    simple: bool
    trace_k: float
    det_coeffs: tuple[float, float]
    max_growth: float

    def det_at(self, chi: float) -> float:
        """Determinant D(chi) = det0 - chi*slope."""
        det0, slope = self.det_coeffs
        return det0 - chi * slope


def analyze_modes(params: ModelParams, k_max: int) -> list[ModeAnalysis]:
    """One record per wavenumber 1..k_max; ``max_growth`` is max Re lambda at params.chi."""
    phi, dh = _phi_dh(params)
    rows = []
    for k in range(1, k_max + 1):
        lam = wavenumber_sq(params, k)
        t, _ = trace_det(params, k)
        det0 = (params.d1 * lam + params.ubar) * (params.d2 * lam + 1.0)
        rows.append(
            ModeAnalysis(
                k=k,
                lambda_k=lam,
                chi_k=bifurcation_value(params, k),
                q_k=mode_ratio(params, lam),
                simple=check_simplicity(params, k, max(2 * k, k_max)).simple,
                trace_k=-t,
                det_coeffs=(det0, phi * lam * dh),
                max_growth=growth_rates(params, k)[0].real,
            )
        )
    return rows
