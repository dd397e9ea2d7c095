"""Geometric diagnostics of a conformal factor in cylindrical variables.

A normalized profile ``u(x)`` is mapped to raw cylindrical variables by
:func:`~bubbletower.profiles.cylindrical_rescaling`,
``U(y) = kappa u(y / s)``, and describes the rotationally symmetric metric

    g = A(y)^2 (dy^2 + g_{S^{n-1}}),    A = U^{2/(n-2)}.

Writing ``l = log A``, the Ricci tensor of this warped product is

    R_yy = -(n-1) l'',    R_jj = -l'' + (n-2)(1 - l'^2)   (per unit-sphere direction),

and ``g^{yy} = A^{-2} = U^{-4/(n-2)}``.  The steady bubble maps to a round
sphere, so both orthonormal components are the same constant there.  With
``raw=True`` the input is taken to be ``U`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .flow import Trajectory
from .numerics import diff1, diff2
from .profiles import Field, Grid, ModelParams, bubble, bubble_deriv, cylindrical_rescaling

__all__ = [
    "geometric_factor",
    "ansatz_derivatives",
    "ricci_radial",
    "ricci_spherical",
    "ricci_radial_orthonormal",
    "ricci_radial_displayed",
    "ricci_spherical_displayed",
    "scalar_curvature",
    "SignChange",
    "sign_change",
    "CurvatureReport",
    "curvature_report",
    "Type2Fit",
    "type2_functional",
    "neck_distance",
    "Closeness",
    "bubble_closeness",
    "GAUGE",
]

GAUGE = "cylindrical: g = U^(4/(n-2)) (dy^2 + g_sphere), g^11 = U^(-4/(n-2)), U = kappa u(y/s)"


def _values(u) -> tuple[np.ndarray, Grid]:
    if not isinstance(u, Field):
        raise TypeError("expected a Field")
    vals = np.asarray(u.values, dtype=float)
    if np.any(vals <= 0):
        bad = int(np.flatnonzero(vals <= 0)[0])
        raise ValueError(f"conformal factor must be positive (u <= 0 at x = {u.grid.nodes[bad]:.4g})")
    return vals, u.grid


def geometric_factor(u: Field, params: ModelParams, raw: bool = False, derivs=None):
    """``(A, l_y, l_yy, y)`` for the metric ``A^2 (dy^2 + g_sphere)``.

    Derivatives of ``l = (2/(n-2)) log U`` come from fourth-order central
    differences of ``log u`` unless ``derivs = (u_x, u_xx)`` is supplied.
    """
    vals, grid = _values(u)
    if raw:
        kappa, s = 1.0, 1.0
    else:
        resc = cylindrical_rescaling(params)
        kappa, s = resc.amplitude, resc.space
    q = 2.0 / (params.n - 2)
    if derivs is None:
        lu = np.log(vals)
        lx = diff1(lu, grid.dx, 4)
        lxx = diff2(lu, grid.dx, 4)
    else:
        ux, uxx = (np.asarray(d, dtype=float) for d in derivs)
        lx = ux / vals
        lxx = uxx / vals - lx**2
    A = (kappa * vals) ** q
    return A, q * lx / s, q * lxx / s**2, grid.nodes * s


def ansatz_derivatives(grid: Grid, xi: float, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``(z_x, z_xx)`` of the two-bubble profile, for use as ``derivs``."""
    x = grid.nodes
    zx = bubble_deriv(x, xi, 1, params) + bubble_deriv(x, -xi, 1, params)
    zxx = bubble_deriv(x, xi, 2, params) + bubble_deriv(x, -xi, 2, params)
    return zx, zxx


def ricci_radial(u: Field, params: ModelParams, raw: bool = False, derivs=None) -> Field:
    """Coordinate component ``R_11 = -(n-1) l''`` in cylindrical gauge."""
    _, _, lyy, _ = geometric_factor(u, params, raw, derivs)
    return Field(u.grid, -(params.n - 1) * lyy)


def ricci_spherical(u: Field, params: ModelParams, raw: bool = False, derivs=None) -> Field:
    """Component ``R_jj = -l'' + (n-2)(1 - l'^2)`` along a unit-sphere direction."""
    _, ly, lyy, _ = geometric_factor(u, params, raw, derivs)
    return Field(u.grid, -lyy + (params.n - 2) * (1.0 - ly**2))


def ricci_radial_orthonormal(u: Field, params: ModelParams, raw: bool = False, derivs=None) -> Field:
    """``R_11 g^{11}``, the radial Ricci curvature in an orthonormal frame."""
    A, _, lyy, _ = geometric_factor(u, params, raw, derivs)
    return Field(u.grid, -(params.n - 1) * lyy / A**2)


def scalar_curvature(u: Field, params: ModelParams, raw: bool = False, derivs=None) -> Field:
    """``g^{11} R_11 + (n-1) g^{jj} R_jj``."""
    A, ly, lyy, _ = geometric_factor(u, params, raw, derivs)
    n = params.n
    R11 = -(n - 1) * lyy
    Rjj = -lyy + (n - 2) * (1.0 - ly**2)
    return Field(u.grid, (R11 + (n - 1) * Rjj) / A**2)


def ricci_radial_displayed(u: Field, params: ModelParams, derivs=None) -> Field:
    """Closed-form radial expression in ``(u, u_x, u_xx)`` as commonly displayed.

    ``-[(n-2)^2 u^2 - (n-3) u_x^2 + u((n-3) u_xx - 2(n-2) u_x)] / (e^{2x} u^2)``.
    Kept for comparison only: it disagrees in sign with the warped-product
    curvature of a round sphere, see :func:`ricci_radial`.
    """
    vals, grid = _values(u)
    n = params.n
    if derivs is None:
        ux, uxx = diff1(vals, grid.dx, 4), diff2(vals, grid.dx, 4)
    else:
        ux, uxx = (np.asarray(d, dtype=float) for d in derivs)
    x = grid.nodes
    num = (n - 2) ** 2 * vals**2 - (n - 3) * ux**2 + vals * ((n - 3) * uxx - 2 * (n - 2) * ux)
    return Field(grid, -num / (np.exp(2 * x) * vals**2))


def ricci_spherical_displayed(u: Field, params: ModelParams) -> Field:
    """``f_rr + (n-1) f_r / r - (n-2) f_r^2`` with ``f = (2/(n-2)) log u - x``, ``r = e^x``."""
    vals, grid = _values(u)
    n = params.n
    f = (2.0 / (n - 2)) * np.log(vals) - grid.nodes
    fx, fxx = diff1(f, grid.dx, 4), diff2(f, grid.dx, 4)
    r = np.exp(grid.nodes)
    f_r = fx / r
    f_rr = (fxx - fx) / r**2
    return Field(grid, f_rr + (n - 1) * f_r / r - (n - 2) * f_r**2)


# ---------------------------------------------------------------------------
# sign scan


class SignChange(NamedTuple):
    changes: bool
    neg_region: tuple[float, float] | None
    pos_region: tuple[float, float] | None


def _witness(mask: np.ndarray, anchor: int, x: np.ndarray) -> tuple[float, float]:
    lo = hi = anchor
    while lo > 0 and mask[lo - 1]:
        lo -= 1
    while hi < mask.size - 1 and mask[hi + 1]:
        hi += 1
    return float(x[lo]), float(x[hi])


def sign_change(R, grid: Grid | None = None) -> SignChange:
    """Whether ``R`` takes both signs beyond ``1e-10 max|R|``.

    The witnesses are the maximal node intervals around the minimum (where
    ``R < -tol``) and the maximum (where ``R > tol``).
    """
    if isinstance(R, Field):
        vals, x = R.values, R.grid.nodes
    else:
        vals = np.asarray(R, dtype=float)
        x = grid.nodes if grid is not None else np.arange(vals.size, dtype=float)
    scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    tol = 1e-10 * scale
    neg = vals < -tol
    pos = vals > tol
    neg_region = _witness(neg, int(np.argmin(vals)), x) if neg.any() else None
    pos_region = _witness(pos, int(np.argmax(vals)), x) if pos.any() else None
    return SignChange(bool(neg.any() and pos.any()), neg_region, pos_region)


# ---------------------------------------------------------------------------
# reports


@dataclass
class CurvatureReport:
    t: float
    R11: Field
    Rjj: Field
    min_R11: float
    argmin_R11: float
    max_R11: float
    argmax_R11: float
    type2_sample: float
    gauge: str = GAUGE

    def summary(self) -> dict:
        return {"t": self.t, "min_R11": self.min_R11, "x_min_R11": self.argmin_R11, "max_R11": self.max_R11,
                "x_max_R11": self.argmax_R11, "type2_sample": self.type2_sample}


def curvature_report(u: Field, t: float, params: ModelParams, raw: bool = False, derivs=None,
                     u_floor: float | None = None, x_window: tuple[float, float] | None = None) -> CurvatureReport:
    """Ricci components, their extrema and ``max |R_11 g^{11}|`` for one snapshot.

    The type-II sample is taken over nodes with ``u >= u_floor * max u``.
    In the far tails (the poles of the spheres) the curvature is bounded but
    ``l''/A^2`` computed by finite differences is dominated by roundoff, so the
    floor defaults to ``1e-4`` for differenced input and to ``0`` when analytic
    derivatives are supplied.  ``x_window`` further restricts the sample to
    an interval, such as the region between the bubble centers.
    """
    A, ly, lyy, _ = geometric_factor(u, params, raw, derivs)
    n = params.n
    R11 = -(n - 1) * lyy
    Rjj = -lyy + (n - 2) * (1.0 - ly**2)
    x = u.grid.nodes
    if u_floor is None:
        u_floor = 0.0 if derivs is not None else 1e-4
    vals = u.values
    keep = vals >= u_floor * np.max(vals)
    if x_window is not None:
        keep &= (x >= x_window[0]) & (x <= x_window[1])
    i, j = int(np.argmin(R11)), int(np.argmax(R11))
    return CurvatureReport(float(t), Field(u.grid, R11), Field(u.grid, Rjj), float(R11[i]), float(x[i]),
                           float(R11[j]), float(x[j]), float(np.max(np.abs(R11[keep] / A[keep] ** 2))))


@dataclass
class Type2Fit:
    slope: float
    intercept: float
    times: np.ndarray
    samples: np.ndarray
    threshold: float
    verdict: str
    gauge: str = GAUGE
    note: str = field(default="|Rm| proxied by Ricci: the metric is conformally flat, so the Weyl part vanishes")


def type2_functional(traj: Trajectory, params: ModelParams, raw: bool = False, derivs=None,
                     u_floor: float | None = None, x_windows=None) -> Type2Fit:
    """Fit ``log max|R_11 g^{11}|`` against ``log|t|`` over the snapshots.

    The verdict is type II when the slope is at least ``2/(n-2) - 0.1``, so
    that ``|t| max|Rm|`` grows without bound, and type I otherwise.
    ``derivs`` and ``x_windows`` are optional per-snapshot sequences passed
    to :func:`curvature_report`.
    """
    times = np.asarray(traj.times, dtype=float)
    if times.size < 2:
        raise ValueError("type-II fit needs at least two snapshots")
    if np.any(times >= 0):
        raise ValueError("snapshot times must be negative")
    at = np.abs(times)
    if at.max() / at.min() < 10.0:
        raise ValueError("snapshots must span at least one decade in |t|")
    samples = np.array([curvature_report(traj.field(i), times[i], params, raw,
                                         None if derivs is None else derivs[i], u_floor,
                                         None if x_windows is None else x_windows[i]).type2_sample
                        for i in range(times.size)])
    slope, intercept = np.polyfit(np.log(at), np.log(samples), 1)
    threshold = 2.0 / (params.n - 2) - 0.1
    return Type2Fit(float(slope), float(intercept), times, samples, threshold,
                    "type II" if slope >= threshold else "type I")


# ---------------------------------------------------------------------------
# neck geometry


def neck_distance(u: Field, x1: float, x2: float, params: ModelParams) -> float:
    """``int_{x1}^{x2} u^{2/(n-2)} dx`` by cubic-spline quadrature."""
    vals, grid = _values(u)
    if x1 > x2:
        raise ValueError("need x1 <= x2")
    if x1 < -grid.L or x2 > grid.L:
        raise ValueError("interval outside the grid")
    if x1 == x2:
        return 0.0
    spline = CubicSpline(grid.nodes, vals ** (2.0 / (params.n - 2)))
    return float(spline.integrate(x1, x2))


class Closeness(NamedTuple):
    sup_left: float
    sup_right: float
    degenerate: bool


def bubble_closeness(u: Field, xi: float, params: ModelParams, delta: float = 0.5) -> Closeness:
    """``sup_{x < xi(1-delta)} |u - w(.+xi)|`` and ``sup_{x > -xi(1-delta)} |u - w(.-xi)|``.

    ``delta >= 1`` leaves no region separating the bubbles; zeros are returned
    with ``degenerate=True``.
    """
    if delta >= 1.0:
        return Closeness(0.0, 0.0, True)
    vals = np.asarray(u.values, dtype=float)
    x = u.grid.nodes
    cut = xi * (1.0 - delta)
    left = x < cut
    right = x > -cut
    sl = float(np.max(np.abs(vals[left] - bubble(x[left], -xi, params)))) if left.any() else 0.0
    sr = float(np.max(np.abs(vals[right] - bubble(x[right], xi, params)))) if right.any() else 0.0
    return Closeness(sl, sr, not (left.any() and right.any()))
