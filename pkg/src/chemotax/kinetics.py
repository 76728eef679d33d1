"""Kinetic functions of the chemotaxis model and model parameters.

The sensitivity ``phi(u, v)`` and production ``h(u)`` are stored as vectorised
evaluators together with the derivatives the solvers need.  Two families exist:
``linear`` (phi = u, h = beta*u) and ``custom`` (caller-supplied evaluators).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Family",
    "KineticsError",
    "KineticsSpec",
    "ModelParams",
    "ConditionCheck",
    "ConditionReport",
    "linear_kinetics",
    "custom_kinetics",
    "nondimensionalize",
    "validate_conditions",
]

Field2 = Callable[[np.ndarray, np.ndarray], np.ndarray]
Field1 = Callable[[np.ndarray], np.ndarray]

FD_STEP = 1e-6
FD_RTOL = 1e-4


class KineticsError(ValueError):
    pass


class Family(str, enum.Enum):
    LINEAR = "linear"
    CUSTOM = "custom"


def _zeros2(u, v):
    return np.zeros(np.broadcast(np.asarray(u), np.asarray(v)).shape)


def _ones2(u, v):
    return np.ones(np.broadcast(np.asarray(u), np.asarray(v)).shape)


@dataclass(frozen=True)
class KineticsSpec:
    family: Family
    phi: Field2
    phi_u: Field2
    phi_v: Field2
    phi_uu: Field2
    phi_uv: Field2
    phi_vv: Field2
    h: Field1
    dh: Field1
    d2h: Field1
    d3h: Field1
    bound_c1: float
    bound_c2: float
    beta: float | None = None

    @property
    def is_linear(self) -> bool:
        return self.family is Family.LINEAR

    def scaled_production(self, factor: float) -> "KineticsSpec":
        """Return a copy with ``h`` (and its derivatives) multiplied by ``factor``."""
        if self.is_linear:
            return linear_kinetics(self.beta * factor)
        h, dh, d2h, d3h = self.h, self.dh, self.d2h, self.d3h
        return KineticsSpec(
            family=self.family,
            phi=self.phi,
            phi_u=self.phi_u,
            phi_v=self.phi_v,
            phi_uu=self.phi_uu,
            phi_uv=self.phi_uv,
            phi_vv=self.phi_vv,
            h=lambda u: factor * h(u),
            dh=lambda u: factor * dh(u),
            d2h=lambda u: factor * d2h(u),
            d3h=lambda u: factor * d3h(u),
            bound_c1=self.bound_c1,
            bound_c2=self.bound_c2 * factor,
        )


def linear_kinetics(beta: float) -> KineticsSpec:
    if not beta > 0:
        raise KineticsError(f"beta must be positive, got {beta}")
    beta = float(beta)
    return KineticsSpec(
        family=Family.LINEAR,
        phi=lambda u, v: np.asarray(u, dtype=float) + 0.0 * np.asarray(v),
        phi_u=_ones2,
        phi_v=_zeros2,
        phi_uu=_zeros2,
        phi_uv=_zeros2,
        phi_vv=_zeros2,
        h=lambda u: beta * np.asarray(u, dtype=float),
        dh=lambda u: np.full(np.shape(u), beta),
        d2h=lambda u: np.zeros(np.shape(u)),
        d3h=lambda u: np.zeros(np.shape(u)),
        bound_c1=1.0,
        bound_c2=beta,
        beta=beta,
    )


def _check_derivative(name, f, df, points, step):
    # central differences against a caller-supplied derivative
    for args, axis in points:
        a = list(args)
        hi = a.copy()
        lo = a.copy()
        hi[axis] += step
        lo[axis] -= step
        fd = (float(f(*hi)) - float(f(*lo))) / (2.0 * step)
        exact = float(df(*a))
        scale = max(abs(exact), abs(fd), 1.0)
        if abs(fd - exact) > FD_RTOL * scale:
            raise KineticsError(
                f"{name} inconsistent with finite differences at {tuple(a)}: "
                f"supplied {exact:.6g}, central difference {fd:.6g}"
            )


def custom_kinetics(
    *,
    phi: Field2,
    phi_u: Field2,
    phi_v: Field2,
    phi_uu: Field2,
    phi_uv: Field2,
    phi_vv: Field2,
    h: Field1,
    dh: Field1,
    d2h: Field1,
    d3h: Field1,
    bound_c1: float,
    bound_c2: float,
    check: bool = True,
) -> KineticsSpec:
    """Build a custom kinetics spec.

    Derivatives are supplied by the caller.  Unless ``check`` is false they are
    compared once against central differences (step 1e-6, rtol 1e-4) on a
    small set of interior points; a mismatch raises :class:`KineticsError`.
    """
    if not (bound_c1 > 0 and bound_c2 > 0):
        raise KineticsError("bound_c1 and bound_c2 must be positive")
    spec = KineticsSpec(
        family=Family.CUSTOM,
        phi=phi,
        phi_u=phi_u,
        phi_v=phi_v,
        phi_uu=phi_uu,
        phi_uv=phi_uv,
        phi_vv=phi_vv,
        h=h,
        dh=dh,
        d2h=d2h,
        d3h=d3h,
        bound_c1=float(bound_c1),
        bound_c2=float(bound_c2),
    )
    if check:
        samples = [(0.3, 0.2), (1.0, 1.0), (2.5, 0.7), (0.8, 3.0)]
        pts_u = [((u, v), 0) for u, v in samples]
        pts_v = [((u, v), 1) for u, v in samples]
        _check_derivative("phi_u", phi, phi_u, pts_u, FD_STEP)
        _check_derivative("phi_v", phi, phi_v, pts_v, FD_STEP)
        _check_derivative("phi_uu", phi_u, phi_uu, pts_u, FD_STEP)
        _check_derivative("phi_uv", phi_u, phi_uv, pts_v, FD_STEP)
        _check_derivative("phi_vv", phi_v, phi_vv, pts_v, FD_STEP)
        upts = [((u,), 0) for u in (0.3, 1.0, 2.5)]
        _check_derivative("h'", h, dh, upts, FD_STEP)
        _check_derivative("h''", dh, d2h, upts, FD_STEP)
        _check_derivative("h'''", d2h, d3h, upts, FD_STEP)
    return spec


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the stationary problem on (0, L)."""

    d1: float
    d2: float
    chi: float
    ubar: float
    length: float
    kinetics: KineticsSpec = field(repr=False)

    def __post_init__(self):
        for name in ("d1", "d2", "ubar", "length"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise KineticsError(f"{name} must be positive, got {value}")
        if not (np.isfinite(self.chi) and self.chi >= 0):
            raise KineticsError(f"chi must be nonnegative, got {self.chi}")

    @property
    def vbar(self) -> float:
        return float(self.kinetics.h(np.asarray(self.ubar)))

    def with_chi(self, chi: float) -> "ModelParams":
        return ModelParams(self.d1, self.d2, float(chi), self.ubar, self.length, self.kinetics)

    def with_d1(self, d1: float) -> "ModelParams":
        return ModelParams(float(d1), self.d2, self.chi, self.ubar, self.length, self.kinetics)


def nondimensionalize(
    d1_raw: float,
    chi_raw: float,
    d2_raw: float,
    theta: float,
    mu: float,
    alpha: float,
    kinetics_raw: KineticsSpec,
    length: float = math.pi,
) -> ModelParams:
    """Map the dimensional logistic model onto the scaled system.

    D1 -> D1/mu, chi -> chi/mu, D2 -> D2/alpha, h -> h/alpha, ubar = theta/mu.
    """
    for name, value in (("theta", theta), ("mu", mu), ("alpha", alpha)):
        if not value > 0:
            raise KineticsError(f"{name} must be positive, got {value}")
    kin = kinetics_raw if alpha == 1 else kinetics_raw.scaled_production(1.0 / alpha)
    return ModelParams(
        d1=d1_raw / mu,
        d2=d2_raw / alpha,
        chi=chi_raw / mu,
        ubar=theta / mu,
        length=length,
        kinetics=kin,
    )


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ConditionReport:
    checks: tuple[ConditionCheck, ...]
    bound_c1: float
    bound_c2: float

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_conditions(
    spec: KineticsSpec, u_max: float, v_max: float, samples: int = 101
) -> ConditionReport:
    """Check the structural hypotheses on phi and h over a sample lattice.

    Conditions checked: (5) phi(0,0)=0, phi>=0, phi_v<=0; (6) phi<=c1*u;
    (7) h(0)=0, h'>=0; (8) h<=c2*u.  Failures are report entries, never errors.
    """
    if spec.is_linear:
        ok = tuple(ConditionCheck(n, True, "linear family") for n in ("5", "6", "7", "8"))
        return ConditionReport(ok, 1.0, spec.beta)

    uu, vv = np.meshgrid(np.linspace(0.0, u_max, samples), np.linspace(0.0, v_max, samples))
    ug = np.linspace(0.0, u_max, samples)
    tol = 1e-12

    p = np.asarray(spec.phi(uu, vv), dtype=float)
    pv = np.asarray(spec.phi_v(uu, vv), dtype=float)
    p00 = float(spec.phi(np.array(0.0), np.array(0.0)))
    scale = max(1.0, float(np.max(np.abs(p))))
    bad5 = []
    if abs(p00) > tol:
        bad5.append(f"phi(0,0)={p00:.3g}")
    if np.min(p) < -tol * scale:
        bad5.append(f"min phi={np.min(p):.3g}")
    if np.max(pv) > tol * max(1.0, float(np.max(np.abs(pv)))):
        i = np.unravel_index(np.argmax(pv), pv.shape)
        bad5.append(f"phi_v={pv[i]:.3g}>0 at (u,v)=({uu[i]:.3g},{vv[i]:.3g})")
    c5 = ConditionCheck("5", not bad5, "; ".join(bad5))

    excess6 = p - spec.bound_c1 * uu
    c6 = ConditionCheck(
        "6",
        bool(np.max(excess6) <= tol * scale),
        "" if np.max(excess6) <= tol * scale else f"max(phi - c1*u)={np.max(excess6):.3g}",
    )

    hv = np.asarray(spec.h(ug), dtype=float)
    dhv = np.asarray(spec.dh(ug), dtype=float)
    hscale = max(1.0, float(np.max(np.abs(hv))))
    bad7 = []
    if abs(hv[0]) > tol:
        bad7.append(f"h(0)={hv[0]:.3g}")
    if np.min(dhv) < -tol * max(1.0, float(np.max(np.abs(dhv)))):
        bad7.append(f"min h'={np.min(dhv):.3g}")
    c7 = ConditionCheck("7", not bad7, "; ".join(bad7))

    excess8 = hv - spec.bound_c2 * ug
    c8 = ConditionCheck(
        "8",
        bool(np.max(excess8) <= tol * hscale),
        "" if np.max(excess8) <= tol * hscale else f"max(h - c2*u)={np.max(excess8):.3g}",
    )
    return ConditionReport((c5, c6, c7, c8), spec.bound_c1, spec.bound_c2)
