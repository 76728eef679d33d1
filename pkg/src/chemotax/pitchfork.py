"""Pitchfork coefficient K3 and bifurcation direction for linear kinetics.

Along the branch bifurcating at chi_k the parameter behaves like
chi(s) = chi_k + K2 s + K3 s^2 + ..., with K2 = 0.  K3 is obtained two ways here:

* ``k3_closed_form`` evaluates the reference rational formula in D1 (kept for
  cross-checking only);
* ``k3_fourier`` solves the second-order correction problem exactly with the
  two-mode ansatz p0 + p2 cos(2k pi x/L) and projects the third-order
  equation on cos(k pi x/L).  This value is authoritative.

The third route, a quadratic fit of computed branch points, lives in
:mod:`chemotax.steady`.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .kinetics import ModelParams
from .linear import REL_TOL, bifurcation_value, wavenumber_sq

__all__ = [
    "PitchforkError",
    "UnsupportedKinetics",
    "RegionCase",
    "Stability",
    "PitchforkRecord",
    "CorrectionFields",
    "RegionClassification",
    "quadratic_coefficients",
    "singular_d1",
    "k3_closed_form",
    "correction_fields",
    "k3_fourier",
    "pitchfork_record",
    "classify_region",
    "region_thresholds",
    "eigenvalue_drift",
    "predict_stability",
    "predicted_branch_eigenvalue",
    "K3Comparison",
    "cross_validate",
]

log = logging.getLogger(__name__)

SINGULAR_BAND = 1e-8
DEGENERATE_TOL = 1e-10

# reference thresholds on x = D2 (k pi/L)^2 (closed-form constants)
REFERENCE_THRESHOLDS = {"a_zero": 1 / 14, "f_r3_zero": 1 / 10, "disc_zero": 113 / 1116}


class PitchforkError(ValueError):
    pass


class UnsupportedKinetics(PitchforkError):
    pass


class RegionCase(str, enum.Enum):
    I = "i"
    II = "ii"
    III = "iii"
    IV = "iv"
    V = "v"
    VI = "vi"


class Stability(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class PitchforkRecord:
    k: int
    k2: float = 0.0
    k3_closed: float | None = None
    k3_fourier: float | None = None
    abc: tuple[float, float, float] | None = None
    roots: tuple[float | None, float | None, float] | None = None
    region_case: RegionCase | None = None
    stability: Stability | None = None
    k3_scale: float | None = None

    @property
    def k3(self) -> float | None:
        return self.k3_fourier if self.k3_fourier is not None else self.k3_closed

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "k2": self.k2,
            "k3_closed": self.k3_closed,
            "k3_fourier": self.k3_fourier,
            "abc": list(self.abc) if self.abc else None,
            "roots": list(self.roots) if self.roots else None,
            "region_case": self.region_case.value if self.region_case else None,
            "stability": self.stability.value if self.stability else None,
        }


@dataclass(frozen=True)
class CorrectionFields:
    """Second-order corrections psi1 = p0 + p2 cos(2kx'), phi1 = q0 + q2 cos(2kx'), x' = pi x/L."""

    k: int
    length: float
    p0: float
    p2: float
    q0: float
    q2: float

    @property
    def fourier(self) -> tuple[float, float, float, float]:
        return self.p0, self.p2, self.q0, self.q2

    def psi1(self, x: np.ndarray) -> np.ndarray:
        return self.p0 + self.p2 * np.cos(2 * self.k * np.pi * np.asarray(x) / self.length)

    def phi1(self, x: np.ndarray) -> np.ndarray:
        return self.q0 + self.q2 * np.cos(2 * self.k * np.pi * np.asarray(x) / self.length)

    # integrals entering the K3 projection
    @property
    def mean_integral(self) -> float:
        return self.p0 * self.length

    @property
    def psi_cos2k_integral(self) -> float:
        return 0.5 * self.p2 * self.length

    @property
    def phi_cos2k_integral(self) -> float:
        return 0.5 * self.q2 * self.length


def _require_linear(params: ModelParams) -> float:
    if not params.kinetics.is_linear:
        raise UnsupportedKinetics("K3 is only available for phi = u, h = beta*u")
    return params.kinetics.beta


def quadratic_coefficients(params: ModelParams, k: int) -> tuple[float, float, float]:
    """(a, b, c) of F(D1) = a D1^2 + b D1 + c."""
    lam = wavenumber_sq(params, k)
    ub, d2 = params.ubar, params.d2
    a = (14 * d2 * lam**3 - lam**2) / ub**2
    b = -(2 * d2 * lam**2 + 5 * lam) / (2 * ub)
    c = 5 * d2 * lam + 3.5
    return a, b, c


def singular_d1(params: ModelParams, k: int) -> float:
    """r3 = ubar/(4 D2) (L/k pi)^4, where the j = 2k simplicity condition fails."""
    return params.ubar / (4.0 * params.d2 * wavenumber_sq(params, k) ** 2)


def _quadratic_roots(a: float, b: float, c: float) -> tuple[float | None, float | None]:
    if a == 0.0:
        # degenerate quadratic: the single root plays the role of r2
        return (None, -c / b) if b != 0.0 else (None, None)
    disc = b * b - 4 * a * c
    if disc < 0:
        if -disc > 1e-9 * b * b:
            return None, None
        disc = 0.0
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    r = sorted([q / a, c / q]) if q != 0.0 else [0.0, 0.0]
    return r[0], r[1]


def _check_not_singular(params: ModelParams, k: int) -> float:
    r3 = singular_d1(params, k)
    if abs(params.d1 - r3) <= SINGULAR_BAND * r3:
        raise PitchforkError(
            f"D1 = {params.d1!r} is at the singular value r3 = {r3!r}: "
            f"ubar = (2k)^2 k^2 D1 D2 (pi/L)^4 and no bifurcation occurs"
        )
    return r3


def k3_closed_form(params: ModelParams, k: int) -> PitchforkRecord:
    """K3 from the reference rational formula.

    The formula reads  (ubar k pi^2 / 2L) K3 = Q^3 L F(D1) / (16 D2 lam^2 (D1 - r3)).
    It is evaluated exactly as written; see :func:`cross_validate` for how it
    compares with the Fourier solve.
    """
    beta = _require_linear(params)
    r3 = _check_not_singular(params, k)
    lam = wavenumber_sq(params, k)
    a, b, c = quadratic_coefficients(params, k)
    q = (params.d2 * lam + 1.0) / beta
    fd1 = a * params.d1**2 + b * params.d1 + c
    rhs = q**3 * params.length / (16 * params.d2 * lam**2) * fd1 / (params.d1 - r3)
    lhs_factor = params.ubar * k * math.pi**2 / (2 * params.length)
    r1, r2 = _quadratic_roots(a, b, c)
    return PitchforkRecord(k=k, k3_closed=rhs / lhs_factor, abc=(a, b, c), roots=(r1, r2, r3))


def correction_fields(params: ModelParams, k: int) -> CorrectionFields:
    """Solve the second-order correction system exactly.

    The forcing only contains the constant and cos(2k pi x/L) modes, so the
    solution is a two-mode expansion with no cos(k pi x/L) component.
    """
    beta = _require_linear(params)
    lam = wavenumber_sq(params, k)
    ub, d1, d2 = params.ubar, params.d1, params.d2
    chik = bifurcation_value(params, k)
    q = (d2 * lam + 1.0) / beta

    p0 = -q * q / (2 * ub)
    q0 = beta * p0

    lam2 = 4 * lam
    m = np.array([[-(d1 * lam2 + ub), chik * ub * lam2], [beta, -(d2 * lam2 + 1.0)]])
    rhs = np.array([-(chik * q * lam - 0.5 * q * q), 0.0])
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    scale = abs(m[0, 0] * m[1, 1]) + abs(m[0, 1] * m[1, 0])
    if abs(det) <= 1e-12 * scale:
        raise PitchforkError(
            f"mode-2k system singular: ubar = (2k)^2 k^2 D1 D2 (pi/L)^4 (k={k}); "
            "simplicity condition fails with j = 2k"
        )
    p2 = (rhs[0] * m[1, 1] - m[0, 1] * rhs[1]) / det
    q2 = (m[0, 0] * rhs[1] - rhs[0] * m[1, 0]) / det
    return CorrectionFields(k=k, length=params.length, p0=p0, p2=p2, q0=q0, q2=q2)


def _fourier_terms(params: ModelParams, k: int) -> tuple[float, float, float, float]:
    beta = _require_linear(params)
    lam = wavenumber_sq(params, k)
    chik = bifurcation_value(params, k)
    q = (params.d2 * lam + 1.0) / beta
    cf = correction_fields(params, k)
    t0 = (q - 0.5 * chik * lam) * cf.mean_integral
    t2 = (q + 0.5 * chik * lam) * cf.psi_cos2k_integral
    t3 = -chik * q * lam * cf.phi_cos2k_integral
    denom = 0.5 * params.ubar * lam * params.length
    return t0, t2, t3, denom


def k3_fourier(params: ModelParams, k: int) -> PitchforkRecord:
    """K3 from the exact two-mode correction fields projected on cos(k pi x/L)."""
    t0, t2, t3, denom = _fourier_terms(params, k)
    k3 = (t0 + t2 + t3) / denom
    scale = max(abs(t0), abs(t2), abs(t3)) / denom
    return PitchforkRecord(k=k, k3_fourier=k3, k3_scale=scale)


def eigenvalue_drift(params: ModelParams, k: int) -> float:
    """d mu/d chi at chi_k for the critical eigenvalue of the constant state."""
    beta = _require_linear(params)
    lam = wavenumber_sq(params, k)
    q = (params.d2 * lam + 1.0) / beta
    return beta * params.ubar * lam / (params.d1 * lam + beta * q + params.ubar)


def predict_stability(k3: float, scale: float = 1.0) -> Stability:
    if abs(k3) <= DEGENERATE_TOL * scale:
        return Stability.DEGENERATE
    return Stability.STABLE if k3 > 0 else Stability.UNSTABLE


def predicted_branch_eigenvalue(params: ModelParams, k: int, s: float) -> float:
    """Leading-order critical eigenvalue on the branch: -s chi'(s) mu_dot = -2 K3 mu_dot s^2."""
    k3 = k3_fourier(params, k).k3_fourier
    return -2.0 * k3 * eigenvalue_drift(params, k) * s * s


@dataclass(frozen=True)
class RegionClassification:
    case: RegionCase
    boundary: str | None
    x: float  # D2 (k pi/L)^2
    thresholds: dict[str, float]
    reference_thresholds: dict[str, float]
    chart: tuple[tuple[float, float, int], ...]
    reference_chart: tuple[tuple[str, str, int], ...]
    discrepancies: tuple[str, ...] = field(default=())


def _k3_sign_function(params: ModelParams, k: int, d1: float) -> float:
    a, b, c = quadratic_coefficients(params, k)
    return (a * d1 * d1 + b * d1 + c) / (d1 - singular_d1(params, k))


def region_thresholds(params: ModelParams, k: int) -> dict[str, float]:
    """D2 values where a = 0, F(r3) = 0 and disc(F) = 0, found numerically."""
    lam = wavenumber_sq(params, k)

    def coeffs(d2):
        return quadratic_coefficients(replace(params, d2=d2), k)

    def f_at_r3(d2):
        a, b, c = coeffs(d2)
        r3 = params.ubar / (4 * d2 * lam * lam)
        return a * r3 * r3 + b * r3 + c

    def disc(d2):
        a, b, c = coeffs(d2)
        return b * b - 4 * a * c

    lo, hi = 1e-6 / lam, 1e3 / lam
    xtol = 1e-15 / lam
    return {
        "a_zero": 1.0 / (14.0 * lam),
        "f_r3_zero": brentq(f_at_r3, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps),
        "disc_zero": brentq(disc, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps),
    }


_REFERENCE_CHARTS = {
    RegionCase.I: (("0", "r2", -1), ("r2", "r3", 1), ("r3", "inf", -1)),
    RegionCase.II: (("0", "r1", -1), ("r1", "r3", 1), ("r3", "r2", -1), ("r2", "inf", 1)),
    RegionCase.III: (("0", "r1", -1), ("r1", "r2", -1), ("r2", "inf", 1)),
    RegionCase.IV: (("0", "r3", -1), ("r3", "r1", 1), ("r1", "r2", -1), ("r2", "inf", 1)),
    RegionCase.V: (("0", "r3", -1), ("r3", "r1", 1), ("r1", "inf", 1)),
    RegionCase.VI: (("0", "r3", -1), ("r3", "inf", 1)),
}


def _reference_roots(params: ModelParams, k: int) -> tuple[float | None, float | None]:
    lam = wavenumber_sq(params, k)
    d2, ub = params.d2, params.ubar
    rad = -1116 * d2**2 * lam**2 - 684 * d2 * lam**2 + 81
    den = 14 * d2 * lam**2 - lam
    if rad < 0 or den == 0:
        return None, None
    lo = ub * (2 * d2 * lam + 5 - math.sqrt(rad)) / den
    hi = ub * (2 * d2 * lam + 5 + math.sqrt(rad)) / den
    return lo, hi


def _near(a: float, b: float) -> bool:
    return abs(a - b) <= REL_TOL * max(abs(a), abs(b))


def classify_region(params: ModelParams, k: int) -> RegionClassification:
    """Place D2 among the six intervals and build the K3 sign chart in D1.

    The chart is computed from the numerical roots of F and r3, then compared
    against the reference chart for the same case; disagreements are logged and
    returned in ``discrepancies``.
    """
    _require_linear(params)
    lam = wavenumber_sq(params, k)
    th = region_thresholds(params, k)
    reference = {name: x / lam for name, x in REFERENCE_THRESHOLDS.items()}
    d2 = params.d2
    t_a, t_f, t_d = th["a_zero"], th["f_r3_zero"], th["disc_zero"]

    boundary = None
    for name, t in th.items():
        if _near(d2, t):
            boundary = name
    if boundary == "f_r3_zero":
        case = RegionCase.III
    elif boundary == "disc_zero":
        case = RegionCase.V
    elif d2 < t_a or boundary == "a_zero":
        case = RegionCase.I
    elif d2 < t_f:
        case = RegionCase.II
    elif d2 < t_d:
        case = RegionCase.IV
    else:
        case = RegionCase.VI

    a, b, c = quadratic_coefficients(params, k)
    r1, r2 = _quadratic_roots(a, b, c)
    r3 = singular_d1(params, k)
    breaks = sorted({r for r in (r1, r2, r3) if r is not None and r > 0})
    edges = [0.0] + breaks + [math.inf]
    chart = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if math.isfinite(hi) and hi - lo <= 1e-12 * max(hi, 1.0):
            continue
        mid = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * lo + 1.0
        chart.append((lo, hi, int(np.sign(_k3_sign_function(params, k, mid)))))

    issues = []
    for name, t in th.items():
        p = reference[name]
        if not _near(t, p):
            issues.append(f"threshold {name}: computed D2={t:.12g}, reference {p:.12g}")
    if not (t_a < t_f < t_d):
        issues.append("computed thresholds not ordered as a_zero < f_r3_zero < disc_zero")

    for label, ours, theirs in zip(("r1", "r2"), (r1, r2), _reference_roots(params, k)):
        if ours is not None and theirs is not None and not _near(ours, theirs):
            issues.append(f"{label}: computed {ours:.12g}, reference formula gives {theirs:.12g}")

    sym = {"0": 0.0, "inf": math.inf, "r1": r1, "r2": r2, "r3": r3}
    for lo_s, hi_s, sgn in _REFERENCE_CHARTS[case]:
        lo, hi = sym[lo_s], sym[hi_s]
        if lo is None or hi is None:
            issues.append(f"reference interval ({lo_s},{hi_s}) uses a root that is not real")
            continue
        if hi <= lo:
            if not _near(lo, hi):
                issues.append(f"reference interval ({lo_s},{hi_s}) is empty: {lo:.6g} >= {hi:.6g}")
            continue
        top = hi if math.isfinite(hi) else 2.0 * lo + 10.0
        for frac in (0.1, 0.5, 0.9):
            d1 = lo + frac * (top - lo)
            if abs(d1 - r3) <= 1e-6 * r3:
                continue
            got = int(np.sign(_k3_sign_function(params, k, d1)))
            if got != sgn and got != 0:
                issues.append(
                    f"reference sign {sgn:+d} on ({lo_s},{hi_s}) but K3 sign {got:+d} at D1={d1:.6g}"
                )
                break
    for msg in issues:
        log.info("region chart (k=%d, D2=%g): %s", k, d2, msg)
    return RegionClassification(
        case=case,
        boundary=boundary,
        x=d2 * lam,
        thresholds=th,
        reference_thresholds=reference,
        chart=tuple(chart),
        reference_chart=_REFERENCE_CHARTS[case],
        discrepancies=tuple(issues),
    )


def pitchfork_record(params: ModelParams, k: int) -> PitchforkRecord:
    """Full record: closed form, Fourier oracle, region and predicted stability."""
    closed = k3_closed_form(params, k)
    four = k3_fourier(params, k)
    region = classify_region(params, k)
    return replace(
        closed,
        k3_fourier=four.k3_fourier,
        k3_scale=four.k3_scale,
        region_case=region.case,
        stability=predict_stability(four.k3_fourier, four.k3_scale),
    )


@dataclass(frozen=True)
class K3Comparison:
    d1: float
    d2: float
    k3_closed: float
    k3_fourier: float
    sign_agree: bool
    rel_diff: float
    discrepancy: bool


def cross_validate(
    params: ModelParams,
    k: int,
    d1_values,
    d2_values,
    band: float = 1e-6,
    rtol: float = 1e-6,
) -> list[K3Comparison]:
    """Compare the closed form with the Fourier value over a (D1, D2) grid.

    Points within a relative ``band`` of r1, r2 or r3 are skipped.  A magnitude
    mismatch beyond ``rtol`` is flagged as a discrepancy (Fourier authoritative).
    """
    out = []
    for d2 in d2_values:
        for d1 in d1_values:
            p = replace(params, d1=float(d1), d2=float(d2))
            a, b, c = quadratic_coefficients(p, k)
            roots = [r for r in (*_quadratic_roots(a, b, c), singular_d1(p, k)) if r is not None]
            if any(abs(d1 - r) <= band * max(abs(r), 1e-300) for r in roots):
                continue
            kc = k3_closed_form(p, k).k3_closed
            kf = k3_fourier(p, k).k3_fourier
            rel = abs(kc - kf) / max(abs(kf), 1e-300)
            out.append(
                K3Comparison(
                    d1=float(d1),
                    d2=float(d2),
                    k3_closed=kc,
                    k3_fourier=kf,
                    sign_agree=bool(np.sign(kc) == np.sign(kf)),
                    rel_diff=rel,
                    discrepancy=rel > rtol,
                )
            )
    n_bad = sum(c.discrepancy for c in out)
    if n_bad:
        ratios = [c.k3_closed / c.k3_fourier for c in out if c.discrepancy]
        log.warning(
            "closed-form K3 differs from Fourier K3 at %d/%d points (closed/fourier in [%.6g, %.6g])",
            n_bad,
            len(out),
            min(ratios),
            max(ratios),
        )
    return out
