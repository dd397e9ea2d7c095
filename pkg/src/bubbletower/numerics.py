"""Grids, quadrature, finite-difference stencils and weighted space-time norms."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import integrate
from scipy.interpolate import CubicSpline

from .profiles import Field, Grid, ModelParams, bubble, ansatz_z

__all__ = [
    "make_grid",
    "quad",
    "quad_analytic",
    "diff1",
    "diff2",
    "second_difference_matrix",
    "to_banded",
    "weighted_inner",
    "norm_l2_weighted",
    "windows",
    "norm_l2_window",
    "norm_h1",
    "norm_h2",
    "weight_alpha_sigma",
    "norm_sigma_window",
    "norm_w2sigma",
    "norm_linf_weighted",
    "WindowNorms",
    "GlobalNormReport",
    "global_norms",
    "ParamNorms",
    "param_norms",
]

_D1 = {
    2: np.array([-1 / 2, 0.0, 1 / 2]),
    4: np.array([1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12]),
    6: np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60]),
}
_D2 = {
    2: np.array([1.0, -2.0, 1.0]),
    4: np.array([-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]),
    6: np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90]),
}


def make_grid(L: float, N: int) -> Grid:
    """Uniform grid on ``[-L, L]`` with ``N`` (odd) nodes."""
    return Grid(L, N)


def quad(f, grid: Grid | None = None) -> float:
    """Composite Simpson integral of a Field (or of raw values on ``grid``)."""
    if isinstance(f, Field):
        grid, values = f.grid, f.values
    else:
        if grid is None:
            raise ValueError("raw arrays need a grid")
        values = np.asarray(f, dtype=float)
    return float(values @ grid.weights) if values.ndim == 1 else values @ grid.weights


def quad_analytic(fn: Callable[[float], float], lo: float = -np.inf, hi: float = np.inf, **kw) -> tuple[float, float]:
    """Adaptive Gauss-Kronrod integral of a scalar function: ``(value, abserr)``."""
    kw.setdefault("epsabs", 1e-13)
    kw.setdefault("epsrel", 1e-12)
    kw.setdefault("limit", 200)
    return integrate.quad(fn, lo, hi, **kw)


def _stencil_apply(values, coeffs, axis=-1):
    values = np.asarray(values, dtype=float)
    r = len(coeffs) // 2
    n = values.shape[axis]
    out = np.zeros_like(values)
    v = np.moveaxis(values, axis, -1)
    o = np.moveaxis(out, axis, -1)
    for k, c in enumerate(coeffs):
        if c != 0.0:
            o[..., r : n - r] += c * v[..., k : n - 2 * r + k]
    return out, r


def diff1(values, dx: float, order: int = 4, axis: int = -1) -> np.ndarray:
    """Central first derivative; the edges fall back to second order."""
    values = np.asarray(values, dtype=float)
    base = np.gradient(values, dx, axis=axis, edge_order=2)
    if order == 2:
        return base
    hi, r = _stencil_apply(values, _D1[order], axis)
    hi /= dx
    b = np.moveaxis(base, axis, -1)
    h = np.moveaxis(hi, axis, -1)
    b[..., r:-r] = h[..., r:-r]
    return base


def diff2(values, dx: float, order: int = 4, axis: int = -1) -> np.ndarray:
    """Central second derivative; the edges use second-order one-sided formulas."""
    values = np.asarray(values, dtype=float)
    v = np.moveaxis(values, axis, -1)
    out = np.empty_like(values)
    o = np.moveaxis(out, axis, -1)
    o[..., 1:-1] = (v[..., 2:] - 2 * v[..., 1:-1] + v[..., :-2]) / dx**2
    o[..., 0] = (2 * v[..., 0] - 5 * v[..., 1] + 4 * v[..., 2] - v[..., 3]) / dx**2
    o[..., -1] = (2 * v[..., -1] - 5 * v[..., -2] + 4 * v[..., -3] - v[..., -4]) / dx**2
    if order > 2:
        hi, r = _stencil_apply(values, _D2[order], axis)
        h = np.moveaxis(hi, axis, -1)
        o[..., r:-r] = h[..., r:-r] / dx**2
        if order == 6:
            lo4, _ = _stencil_apply(values, _D2[4], axis)
            l4 = np.moveaxis(lo4, axis, -1)
            o[..., 2] = l4[..., 2] / dx**2
            o[..., -3] = l4[..., -3] / dx**2
    return out


def _ghost_rule(kind: str, j: int, dx: float):
    """Ghost node ``j`` steps beyond an end as ``(index offset into the interior, factor)``."""
    if kind == "neumann":
        return j, 1.0
    if kind == "exponential":
        return 0, float(np.exp(-j * dx))
    raise ValueError(f"unknown boundary kind {kind!r}")


def second_difference_matrix(N: int, dx: float, order: int = 2, boundary="dirichlet") -> sp.csr_matrix:
    """Sparse matrix of the central second difference on ``N`` nodes.

    Parameters
    ----------
    order : {2, 4, 6}
    boundary : str or (str, str)
        ``"dirichlet"``: end rows are zero (the caller pins the end values) and
        rows next to an end drop to the widest centered stencil that fits.
        ``"neumann"``: even reflection about the end node.
        ``"exponential"``: ghost values ``u_end * exp(-j dx)``.
    """
    if order not in _D2:
        raise ValueError(f"order must be one of {sorted(_D2)}")
    left, right = (boundary, boundary) if isinstance(boundary, str) else boundary
    rows, cols, vals = [], [], []
    r = order // 2
    for i in range(N):
        dist = min(i, N - 1 - i)
        near_left = i < N - 1 - i
        kind = left if near_left else right
        if dist < r and kind == "dirichlet":
            if dist == 0:
                continue
            coeffs = _D2[2 * dist]
        else:
            coeffs = _D2[order]
        rr = len(coeffs) // 2
        for k, c in enumerate(coeffs):
            j = i + k - rr
            if 0 <= j < N:
                rows.append(i)
                cols.append(j)
                vals.append(c)
                continue
            if j < 0:
                off, fac = _ghost_rule(left, -j, dx)
                jj = off
            else:
                off, fac = _ghost_rule(right, j - (N - 1), dx)
                jj = N - 1 - off
            rows.append(i)
            cols.append(jj)
            vals.append(c * fac)
    mat = sp.coo_matrix((np.array(vals) / dx**2, (rows, cols)), shape=(N, N))
    return mat.tocsr()


def to_banded(mat, bw: int) -> np.ndarray:
    """Diagonal-ordered form of a square banded matrix for ``scipy.linalg.solve_banded``."""
    mat = sp.coo_matrix(mat)
    N = mat.shape[0]
    ab = np.zeros((2 * bw + 1, N))
    if np.any(np.abs(mat.row - mat.col) > bw):
        raise ValueError("matrix bandwidth exceeds bw")
    np.add.at(ab, (bw + mat.row - mat.col, mat.col), mat.data)
    return ab


def weighted_inner(f: Field, g: Field, xi_shift: float, params: ModelParams) -> float:
    """``int f(x - xi) g(x) w^{p-1}(x) dx`` with ``f`` shifted by cubic interpolation."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    grid = f.grid
    x = grid.nodes
    if xi_shift == 0.0:
        fs = f.values
    else:
        spline = CubicSpline(x, f.values, extrapolate=False)
        fs = spline(x - xi_shift)
        outside = np.isnan(fs)
        if np.any(outside):
            edge = max(abs(f.values[0]), abs(f.values[-1]))
            if edge > 1e-10:
                warnings.warn(
                    f"shift {xi_shift} moves support off the grid; edge values reach {edge:.2e}",
                    RuntimeWarning,
                    stacklevel=2,
                )
            fs = np.where(outside, 0.0, fs)
    wpm1 = bubble(x, 0.0, params) ** (params.p - 1)
    return quad(fs * g.values * wpm1, grid)


def norm_l2_weighted(psi: Field, z: Field, params: ModelParams) -> float:
    """``(int psi^2 z^{p-1} dx)^{1/2}``."""
    if psi.grid != z.grid:
        raise ValueError("fields live on different grids")
    return float(np.sqrt(quad(psi.values**2 * z.values ** (params.p - 1), psi.grid)))


# ---------------------------------------------------------------------------
# space-time windows


def windows(times: np.ndarray, t0: float | None = None) -> list[tuple[float, np.ndarray]]:
    """Unit windows ``[tau, tau + 1]`` tiled from ``times[0]`` with stride 1.

    Returns ``(tau, index array)`` pairs.  Partial trailing windows and windows
    with ``tau > t0 - 1`` are dropped.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        return []
    end = times[-1] if t0 is None else min(times[-1], t0)
    out = []
    tau = times[0]
    eps = 1e-9 * max(1.0, abs(tau))
    while tau + 1.0 <= end + eps:
        idx = np.flatnonzero((times >= tau - eps) & (times <= tau + 1.0 + eps))
        out.append((tau, idx))
        tau = tau + 1.0
    return out


def _check_window(times):
    if len(times) < 3:
        raise ValueError("window norms need at least 3 time samples")
    if times[-1] - times[0] < 1.0 - 1e-9:
        raise ValueError("window shorter than one time unit")


def _time_trapz(values, times):
    return float(np.trapezoid(values, times)) if len(times) > 1 else 0.0


def _space_time(integrand: np.ndarray, times: np.ndarray, grid: Grid) -> float:
    return _time_trapz(integrand @ grid.weights, times)


def norm_l2_window(times, psi, z, grid: Grid, params: ModelParams) -> float:
    """``||psi||_{L^2(Lambda)}`` with weight ``z^{p-1}``; arrays are ``(time, node)``."""
    times = np.asarray(times, dtype=float)
    _check_window(times)
    return float(np.sqrt(max(_space_time(psi**2 * z ** (params.p - 1), times, grid), 0.0)))


def norm_h1(times, psi, z, grid: Grid, params: ModelParams, psi_x=None) -> float:
    """``||psi||_{L^2} + ||z^{-(p-1)/2} psi_x||_{L^2}`` on one window."""
    times = np.asarray(times, dtype=float)
    _check_window(times)
    if psi_x is None:
        psi_x = diff1(psi, grid.dx, 4, axis=-1)
    l2 = norm_l2_window(times, psi, z, grid, params)
    # z^{-(p-1)} from the weight cancels z^{p-1} of the L^2 measure
    grad = np.sqrt(max(_space_time(psi_x**2, times, grid), 0.0))
    return l2 + grad


def norm_h2(times, psi, z, grid: Grid, params: ModelParams, psi_t=None) -> float:
    """Weighted ``H^2`` norm on one window.

    ``||psi_t|| + ||z^{-(p-1)}(psi_xx - psi)|| + ||z^{-(p-1)/2} psi_xx|| + H^1``,
    all in ``L^2`` with weight ``z^{p-1}``.
    """
    times = np.asarray(times, dtype=float)
    _check_window(times)
    pm1 = params.p - 1
    if psi_t is None:
        psi_t = np.gradient(psi, times, axis=0, edge_order=2)
    psi_xx = diff2(psi, grid.dx, 4, axis=-1)
    t_part = np.sqrt(max(_space_time(psi_t**2 * z**pm1, times, grid), 0.0))
    lin = np.sqrt(max(_space_time((psi_xx - psi) ** 2 * z ** (-pm1), times, grid), 0.0))
    curv = np.sqrt(max(_space_time(psi_xx**2, times, grid), 0.0))
    return t_part + lin + curv + norm_h1(times, psi, z, grid, params)


def weight_alpha_sigma(x, t, xi, z, sigma: float, theta: float, params: ModelParams):
    """Weight ``z^{n beta - sigma}`` outside the neck and ``z^{(2 beta + theta) sigma}`` inside.

    ``t`` is accepted for symmetry with the space-time setting; the weight
    depends on time only through ``xi`` and ``z``.
    """
    if sigma < 2:
        raise ValueError("sigma must be >= 2")
    if not 0 < theta <= 0.1:
        raise ValueError("theta must lie in (0, 0.1]")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n, beta = params.n, params.beta
    outer = z ** (n * beta - sigma)
    inner = z ** ((2 * beta + theta) * sigma)
    return np.where(np.abs(x) > xi, outer, inner)


def norm_sigma_window(times, g, alpha, grid: Grid, sigma: float) -> float:
    """``(iint |g|^sigma alpha)^{1/sigma}`` on one window."""
    return float(max(_space_time(np.abs(g) ** sigma * alpha, np.asarray(times, float), grid), 0.0) ** (1.0 / sigma))


def _alpha_path(times, xi_path, grid, sigma, theta, params):
    x = grid.nodes
    zs = np.array([ansatz_z(grid, float(xi), params).values for xi in xi_path])
    alpha = np.array([weight_alpha_sigma(x, t, xi, zz, sigma, theta, params) for t, xi, zz in zip(times, xi_path, zs)])
    return zs, alpha


def norm_w2sigma(times, psi, xi_path, grid: Grid, params: ModelParams, sigma: float | None = None,
                 theta: float = 0.01, psi_t=None) -> float:
    """``||psi_t|| + ||psi|| + ||psi_x|| + ||psi_xx||`` in the ``alpha_sigma``-weighted ``L^sigma``."""
    times = np.asarray(times, dtype=float)
    _check_window(times)
    sigma = params.n + 2 if sigma is None else sigma
    _, alpha = _alpha_path(times, xi_path, grid, sigma, theta, params)
    if psi_t is None:
        psi_t = np.gradient(psi, times, axis=0, edge_order=2)
    psi_x = diff1(psi, grid.dx, 4, axis=-1)
    psi_xx = diff2(psi, grid.dx, 4, axis=-1)
    return sum(norm_sigma_window(times, g, alpha, grid, sigma) for g in (psi_t, psi, psi_x, psi_xx))


def norm_linf_weighted(psi, xi, z, grid: Grid) -> float:
    """``sup |psi/z|`` over ``|x| > xi`` plus ``sup |psi|`` over ``|x| <= xi`` (one time level)."""
    x = grid.nodes
    psi = np.asarray(psi, dtype=float)
    z = np.asarray(z, dtype=float)
    outside = np.abs(x) > xi
    a = np.max(np.abs(psi[outside] / z[outside])) if np.any(outside) else 0.0
    b = np.max(np.abs(psi[~outside])) if np.any(~outside) else 0.0
    return float(a + b)


@dataclass(frozen=True)
class WindowNorms:
    tau: float
    l2: float
    h1: float
    h2: float
    w2sigma: float
    sigma_norm: float
    linf_weighted: float


@dataclass
class GlobalNormReport:
    """Per-window norms and their ``|tau|^nu``-weighted suprema."""

    nu: float
    sigma: float
    theta: float
    t0: float
    rows: list[WindowNorms] = field(default_factory=list)

    COLUMNS = ("l2", "h1", "h2", "w2sigma", "sigma_norm", "linf_weighted")

    def weighted(self, column: str) -> np.ndarray:
        vals = np.array([getattr(r, column) for r in self.rows])
        taus = np.array([r.tau for r in self.rows])
        return np.abs(taus) ** self.nu * vals

    def sup(self, column: str) -> float:
        w = self.weighted(column)
        return float(np.max(w)) if w.size else 0.0

    @property
    def star_sigma(self) -> float:
        """``||psi||_{*,sigma}``: weighted ``L^2`` plus ``sigma`` suprema."""
        return self.sup("l2") + self.sup("sigma_norm")

    @property
    def star_2_sigma(self) -> float:
        """``||psi||_{*,2,sigma}``: ``H^2`` plus ``W^{2,sigma}`` plus weighted ``L^infinity``."""
        return self.sup("h2") + self.sup("w2sigma") + self.sup("linf_weighted")

    def table(self) -> list[dict]:
        out = []
        for r in self.rows:
            row = {"tau": r.tau}
            for c in self.COLUMNS:
                v = getattr(r, c)
                row[c] = v
                row[f"{c}_weighted"] = abs(r.tau) ** self.nu * v
            out.append(row)
        return out


def global_norms(times, psi, xi_path, nu: float, sigma: float, theta: float, t0: float, grid: Grid,
                 params: ModelParams, psi_t=None) -> GlobalNormReport:
    """Tabulate all window norms of a ``psi`` history and their weighted suprema.

    ``psi`` has shape ``(len(times), grid.N)``; ``xi_path`` gives the neck
    half-width at each time.  The ``L^infinity`` column holds the largest
    weighted sup-norm over the time levels in each window.
    """
    times = np.asarray(times, dtype=float)
    psi = np.asarray(psi, dtype=float)
    xi_path = np.asarray(xi_path, dtype=float)
    if times[-1] - times[0] < 1.0 - 1e-9:
        raise ValueError("trajectory shorter than one window")
    if psi_t is None:
        psi_t = np.gradient(psi, times, axis=0, edge_order=2)
    report = GlobalNormReport(nu=nu, sigma=sigma, theta=theta, t0=t0)
    zs, alpha = _alpha_path(times, xi_path, grid, sigma, theta, params)
    for tau, idx in windows(times, t0):
        ts, ps, zz, pt = times[idx], psi[idx], zs[idx], psi_t[idx]
        l2 = norm_l2_window(ts, ps, zz, grid, params)
        h1 = norm_h1(ts, ps, zz, grid, params)
        h2 = norm_h2(ts, ps, zz, grid, params, psi_t=pt)
        al = alpha[idx]
        sig = norm_sigma_window(ts, ps, al, grid, sigma)
        w2 = sum(
            norm_sigma_window(ts, g, al, grid, sigma)
            for g in (pt, ps, diff1(ps, grid.dx, 4, axis=-1), diff2(ps, grid.dx, 4, axis=-1))
        )
        linf = max(norm_linf_weighted(ps[k], xi_path[idx][k], zz[k], grid) for k in range(len(idx)))
        report.rows.append(WindowNorms(float(tau), l2, h1, h2, w2, sig, linf))
    return report


class ParamNorms(NamedTuple):
    sup: float
    deriv_sigma: float
    eta_norm: float
    h_norm: float


def param_norms(times, values, mu: float, sigma: float, t0: float, derivative=None) -> ParamNorms:
    """Weighted-in-time norms of a scalar path.

    Returns ``sup |tau|^mu |f|``, ``sup |tau|^mu (int_tau^{tau+1} |f'|^sigma)^{1/sigma}``,
    their sum (the ``eta`` norm) and ``sup |tau|^mu |f| + sup |tau|^{1+mu} (...)``
    (the ``h`` norm).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) > 1 and np.min(np.diff(times)) * sigma > 1.0 + 1e-9:
        raise ValueError("path undersampled: need at least sigma samples per unit window")
    keep = times <= t0 + 1e-12
    sup = float(np.max(np.abs(times[keep]) ** mu * np.abs(values[keep]))) if np.any(keep) else 0.0
    if derivative is None:
        derivative = np.gradient(values, times, edge_order=2) if len(times) > 2 else np.zeros_like(values)
    derivative = np.asarray(derivative, dtype=float)
    d_mu = 0.0
    d_1mu = 0.0
    for tau, idx in windows(times, t0):
        local = _time_trapz(np.abs(derivative[idx]) ** sigma, times[idx]) ** (1.0 / sigma)
        d_mu = max(d_mu, abs(tau) ** mu * local)
        d_1mu = max(d_1mu, abs(tau) ** (1 + mu) * local)
    return ParamNorms(sup, d_mu, sup + d_mu, sup + d_1mu)
