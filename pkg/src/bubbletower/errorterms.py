"""Error terms of the two-bubble decomposition ``u = (1 + eta) z + psi``.

Substituting the decomposition into ``(u^p)_t = u_xx - u + u^p`` gives

    p z^{p-1} psi_t = psi_xx - psi + p z^{p-1} psi + z^{p-1} E(psi)

with ``E = z^{1-p} M + C + z^{1-p} [(1 - d/dt) N - p psi d/dt z^{p-1}]``.
Time derivatives of ansatz quantities go through ``(xidot, etadot)``
analytically; only ``psi_t`` is supplied by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .profiles import Field, Grid, ModelParams, ansatz_z, ansatz_zbar, bubble, bubble_deriv, log_bubble
from .spectral import CorrectionCoeffs, correction_field, orthogonality_functionals

__all__ = [
    "FlowState",
    "term_m",
    "term_n",
    "term_n_dt",
    "term_e",
    "term_q",
    "projections_g",
    "ProjectionExpansion",
    "projection_expansion",
    "projection_sweep",
    "m_projections",
    "fit_log_slope",
]


@dataclass
class FlowState:
    """Ansatz parameters and fields at one time.

    ``w1 = w(x - xi)`` and ``w2 = w(x + xi)``; ``z = w1 + w2``,
    ``zbar = w1' - w2'`` and ``ztilde = (1 + eta) z``.
    """

    grid: Grid
    t: float
    xi: float
    xidot: float
    eta: float
    etadot: float
    w1: np.ndarray
    w2: np.ndarray
    z: np.ndarray
    zbar: np.ndarray
    psi: np.ndarray
    psi_t: np.ndarray

    @classmethod
    def build(cls, grid: Grid, params: ModelParams, xi: float, xidot: float = 0.0, eta: float = 0.0,
              etadot: float = 0.0, psi=None, psi_t=None, t: float = float("nan")) -> "FlowState":
        x = grid.nodes
        w1 = bubble(x, xi, params)
        w2 = bubble(x, -xi, params)
        zbar = bubble_deriv(x, xi, 1, params) - bubble_deriv(x, -xi, 1, params)
        zero = np.zeros(grid.N)
        psi = zero if psi is None else np.asarray(psi, dtype=float)
        psi_t = zero if psi_t is None else np.asarray(psi_t, dtype=float)
        return cls(grid, t, xi, xidot, eta, etadot, w1, w2, w1 + w2, zbar, psi, psi_t)

    @classmethod
    def single_bubble(cls, grid: Grid, params: ModelParams, psi=None, psi_t=None) -> "FlowState":
        """One centered bubble: ``w2`` truncated to zero and ``z = w``."""
        x = grid.nodes
        w = bubble(x, 0.0, params)
        zero = np.zeros(grid.N)
        psi = zero if psi is None else np.asarray(psi, dtype=float)
        psi_t = zero if psi_t is None else np.asarray(psi_t, dtype=float)
        return cls(grid, float("nan"), 0.0, 0.0, 0.0, 0.0, w, zero, w, bubble_deriv(x, 0.0, 1, params), psi, psi_t)

    @property
    def ztilde(self) -> np.ndarray:
        return (1.0 + self.eta) * self.z

    @property
    def z_t(self) -> np.ndarray:
        # d/dt z = -xidot * zbar
        return -self.xidot * self.zbar

    @property
    def ztilde_t(self) -> np.ndarray:
        return self.etadot * self.z + (1.0 + self.eta) * self.z_t


def _m_values(state: FlowState, params: ModelParams) -> np.ndarray:
    p = params.p
    zt = state.ztilde
    dt_ztp = p * zt ** (p - 1) * state.ztilde_t
    return zt**p - (1.0 + state.eta) * (state.w1**p + state.w2**p) - dt_ztp


def term_m(state: FlowState, params: ModelParams) -> Field:
    """``M = ztilde^p - (1+eta)(w1^p + w2^p) - d/dt ztilde^p``."""
    return Field(state.grid, _m_values(state, params))


def _n_values(state: FlowState, params: ModelParams) -> np.ndarray:
    p = params.p
    zt = state.ztilde
    base = zt + state.psi
    if np.any(base <= 0):
        bad = np.argwhere(base <= 0)[0]
        raise ValueError(f"ztilde + psi is nonpositive at x = {state.grid.nodes[bad[-1]]:.4g}")
    psi = state.psi
    return base**p - zt**p - p * zt ** (p - 1) * psi + p * psi * (zt ** (p - 1) - state.z ** (p - 1))


def term_n(state: FlowState, params: ModelParams) -> Field:
    """``N = (ztilde+psi)^p - ztilde^p - p ztilde^{p-1} psi + p psi (ztilde^{p-1} - z^{p-1})``."""
    return Field(state.grid, _n_values(state, params))


def _n_dt_values(state: FlowState, params: ModelParams) -> np.ndarray:
    """Time derivative of ``N`` through ``psi_t`` and the ansatz parameters.

    Since ``N = (ztilde+psi)^p - ztilde^p - p z^{p-1} psi``,
    ``N_t = p (ztilde+psi)^{p-1}(ztilde_t + psi_t) - p ztilde^{p-1} ztilde_t
    - p z^{p-1} psi_t - p(p-1) z^{p-2} z_t psi``.
    """
    p = params.p
    zt, zt_t = state.ztilde, state.ztilde_t
    psi, psi_t, z = state.psi, state.psi_t, state.z
    out = (p * (zt + psi) ** (p - 1) * (zt_t + psi_t) - p * zt ** (p - 1) * zt_t
           - p * z ** (p - 1) * psi_t - p * (p - 1) * z ** (p - 2) * state.z_t * psi)
    return out


def term_n_dt(state: FlowState, params: ModelParams) -> Field:
    """Time derivative of ``N`` through ``psi_t`` and the ansatz parameters."""
    return Field(state.grid, _n_dt_values(state, params))


def _correction_values(correction, state: FlowState, params: ModelParams) -> np.ndarray:
    if correction is None:
        return np.zeros(state.grid.N)
    if isinstance(correction, CorrectionCoeffs):
        return correction_field(correction, state.grid, state.xi, params).values
    d1, d2 = correction
    # same convention as correction_field: C = d1 z + d2 wtilde(x + xi) = d1 z - d2 zbar
    return d1 * state.z - d2 * state.zbar


def _q_values(state: FlowState, correction, params: ModelParams) -> np.ndarray:
    p = params.p
    z = state.z
    N = _n_values(state, params)
    N_t = _n_dt_values(state, params)
    dt_zpm1 = (p - 1) * z ** (p - 2) * state.z_t
    inner = N - N_t - p * state.psi * dt_zpm1
    return _correction_values(correction, state, params) + z ** (1 - p) * inner


def term_q(state: FlowState, correction, params: ModelParams) -> Field:
    """``Q = C + z^{1-p}[(1 - d/dt) N - p psi d/dt z^{p-1}]``, the part of ``E`` beyond ``z^{1-p} M``."""
    return Field(state.grid, _q_values(state, correction, params))


def term_e(state: FlowState, correction, params: ModelParams) -> Field:
    """``E = z^{1-p} M + Q``; ``correction`` is ``None``, ``(d1, d2)`` or :class:`CorrectionCoeffs`."""
    M = term_m(state, params).values
    return Field(state.grid, state.z ** (1 - params.p) * M + term_q(state, correction, params).values, True)


def projections_g(E_field: Field, xi: float, params: ModelParams, m_part: Field | None = None) -> tuple[float, float]:
    """Normalized projections ``(G1, G2)`` of ``Q = E - z^{1-p} M``.

    ``G_i = -c_i^{-1} int Q k_i`` with ``k_1 = w^p(x+xi)``, ``k_2 = w' w^{p-1}(x+xi)``
    and ``c_1 = -p int w^{p+1}``, ``c_2 = -p int w'^2 w^{p-1}``.  The sign makes the
    orthogonality of ``E`` equivalent to
    ``etadot - lambda eta - a e^{-2 xi} = r_1 + G1`` and ``xidot + b e^{-2 xi} = r_2 + G2``
    where ``r_i = -R_i / c_i`` are the normalized expansion residuals.
    Pass ``m_part = z^{1-p} M`` to subtract it; otherwise ``E_field`` is taken as ``Q``.
    """
    Q = E_field.values if m_part is None else E_field.values - m_part.values
    proj = orthogonality_functionals(Q, xi, params, E_field.grid)
    return float(-proj[0] / params.c1), float(-proj[1] / params.c2)


class ProjectionExpansion(NamedTuple):
    xi: float
    exact1: float
    lead1: float
    R1: float
    exact2: float
    lead2: float
    R2: float
    c1: float
    c2: float

    @property
    def ode_residuals(self) -> tuple[float, float]:
        """``(-R1/c1, -R2/c2)``: the residuals as they enter the parameter ODEs."""
        return -self.R1 / self.c1, -self.R2 / self.c2


def _projection_grid(xi: float, dx: float, margin: float) -> Grid:
    L = xi + margin
    N = int(np.ceil(2 * L / dx)) + 1
    N += 1 - N % 2
    return Grid(L, N)


def m_projections(state: FlowState, params: ModelParams) -> np.ndarray:
    """``(int z^{1-p} M w^p(x+xi), int z^{1-p} M w' w^{p-1}(x+xi))``.

    ``z^{1-p} w^p(x+xi)`` is evaluated as ``w2 (w2/z)^{p-1}`` to avoid overflow.
    """
    p = params.p
    M = term_m(state, params).values
    x = state.grid.nodes
    lw2 = log_bubble(x, params, -state.xi)
    lw1 = log_bubble(x, params, state.xi)
    # (w2/z)^{p-1} with w2/z = 1/(1 + w1/w2)
    ratio = np.exp(-(p - 1) * np.logaddexp(0.0, lw1 - lw2))
    k1 = state.w2 * ratio
    k2 = bubble_deriv(x, -state.xi, 1, params) * ratio
    wts = state.grid.weights
    return np.array([(M * k1) @ wts, (M * k2) @ wts])


def projection_expansion(xi: float, xidot: float, eta: float, etadot: float, params: ModelParams,
                         constants: str = "displayed", grid: Grid | None = None, dx: float = 0.005,
                         margin: float = 45.0) -> ProjectionExpansion:
    """Exact projections of ``M`` against the left-bubble kernels and their leading forms.

    ``lead1 = c1 (etadot - lambda eta - a e^{-2 xi})`` and ``lead2 = c2 (xidot + b e^{-2 xi})``
    with ``(a, b)`` from ``params.constants(constants)``; ``R_i = exact_i - lead_i``.
    The default grid extends ``margin`` beyond ``xi`` with spacing ``dx``.
    """
    if xi < 2:
        raise ValueError("projection expansion is only meaningful for xi >= 2")
    grid = _projection_grid(xi, dx, margin) if grid is None else grid
    state = FlowState.build(grid, params, xi, xidot, eta, etadot)
    exact1, exact2 = m_projections(state, params)
    a, b = params.constants(constants)
    e2 = np.exp(-2.0 * xi)
    lead1 = params.c1 * (etadot - params.lambda_eta * eta - a * e2)
    lead2 = params.c2 * (xidot + b * e2)
    return ProjectionExpansion(xi, float(exact1), lead1, float(exact1 - lead1), float(exact2), lead2,
                               float(exact2 - lead2), params.c1, params.c2)


def projection_sweep(xis, params: ModelParams, constants: str = "displayed", slaved: bool = True,
                     **kw) -> list[ProjectionExpansion]:
    """Projection expansion at each ``xi`` with ``eta = etadot = 0``.

    With ``slaved=True`` the neck moves by its leading law ``xidot = -b e^{-2 xi}``
    (same constant set), so ``lead2 = 0``; otherwise ``xidot = 0``.
    """
    _, b = params.constants(constants)
    out = []
    for xi in xis:
        xidot = -b * np.exp(-2.0 * xi) if slaved else 0.0
        out.append(projection_expansion(float(xi), xidot, 0.0, 0.0, params, constants=constants, **kw))
    return out


def fit_log_slope(xs, ys) -> float:
    """Least-squares slope of ``log|y|`` against ``x``."""
    return float(np.polyfit(np.asarray(xs, float), np.log(np.abs(np.asarray(ys, float))), 1)[0])
