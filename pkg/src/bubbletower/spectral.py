"""Linearized operator at the bubble, its weighted spectrum, and projection machinery.

The linearization of ``w'' - w + w^p = 0`` is ``A theta = theta'' - theta + p w^{p-1} theta``
and the weighted eigenproblem is ``A theta = -lambda B theta`` with
``B = diag(p w^{p-1})``.  In this convention ``lambda_{-1} = -(p-1)/p`` with
eigenfunction ``w`` and ``lambda_0 = 0`` with eigenfunction ``w'``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, solveh_banded

from .numerics import quad, second_difference_matrix
from .profiles import Field, Grid, ModelParams, ansatz_z, ansatz_zbar, bubble, bubble_deriv, log_bubble

__all__ = [
    "OperatorPair",
    "EigenPair",
    "CorrectionCoeffs",
    "build_l0",
    "eigenpairs",
    "spectrum_table",
    "orthogonality_functionals",
    "project_out",
    "correction_coeffs",
    "correction_field",
    "cancel_coeffs",
]


@dataclass(frozen=True)
class OperatorPair:
    """Discrete ``(A, B)`` on the interior nodes of ``grid`` (Dirichlet ends)."""

    grid: Grid
    params: ModelParams
    A: sp.csr_matrix
    B: np.ndarray

    def apply_A(self, values: np.ndarray) -> np.ndarray:
        """``A`` applied to full-grid samples; end values are treated as boundary data."""
        v = np.asarray(values, dtype=float)
        inner = self.A @ v[1:-1]
        # coupling to nonzero boundary samples
        inner[0] += v[0] / self.grid.dx**2
        inner[-1] += v[-1] / self.grid.dx**2
        out = np.zeros_like(v)
        out[1:-1] = inner
        return out


@dataclass(frozen=True)
class EigenPair:
    index: int
    lam: float
    theta: Field


@dataclass(frozen=True)
class CorrectionCoeffs:
    """Solution of ``d1 a_1^i + d2 a_2^i = E^i`` for ``i = -1, 0``.

    ``a11 = a_1^{-1}``, ``a12 = a_2^{-1}``, ``a21 = a_1^0``, ``a22 = a_2^0`` with unit
    normalized ``theta_{-1} = w/|w|`` and ``theta_0 = w'/|w'|`` in ``L^2(w^{p-1})``.
    ``raw`` holds the same four entries with ``w`` and ``w'`` in place of the
    normalized modes.
    """

    d1: float
    d2: float
    D: float
    a11: float
    a12: float
    a21: float
    a22: float
    E_minus1: float
    E_0: float
    raw: tuple[float, float, float, float]


def build_l0(grid: Grid, params: ModelParams) -> OperatorPair:
    """Second-order finite-difference ``(A, B)`` with Dirichlet-zero ends."""
    if grid.dx * params.gamma > 0.05 + 1e-12:
        raise ValueError(f"grid too coarse to resolve the bubble: dx*gamma = {grid.dx * params.gamma:.3g} > 0.05")
    x = grid.nodes[1:-1]
    pot = params.p * bubble(x, 0.0, params) ** (params.p - 1)
    D2 = second_difference_matrix(grid.N, grid.dx, 2, "dirichlet")[1:-1, 1:-1]
    A = (D2 - sp.identity(grid.N - 2) + sp.diags(pot)).tocsr()
    return OperatorPair(grid, params, A, pot)


def _full(grid, interior):
    v = np.zeros(grid.N)
    v[1:-1] = interior
    return v


def eigenpairs(op: OperatorPair, k: int = 3, tol: float = 1e-13, max_iter: int = 5000, guard: int = 4) -> list[EigenPair]:
    """The ``k`` smallest eigenpairs of ``A theta = -lambda B theta``.

    Block inverse iteration with shift ``-1`` followed by Rayleigh-Ritz.  The
    shift is below every eigenvalue (``lambda_{-1} = -(p-1)/p > -1``) and turns
    the shifted operator into ``I - D2``, which is symmetric positive definite
    and tridiagonal.
    """
    if k < 2:
        raise ValueError("need k >= 2")
    grid = op.grid
    m = grid.N - 2
    h2 = grid.dx**2
    # -A - sigma B with sigma = -1 equals I - D2; upper form for solveh_banded
    ab = np.empty((2, m))
    ab[0, :] = -1.0 / h2
    ab[1, :] = 1.0 + 2.0 / h2
    B = op.B
    negA = -op.A
    q = k + guard
    rng = np.random.default_rng(12345)
    x = grid.nodes[1:-1]
    X = np.empty((m, q))
    X[:, 0] = bubble(x, 0.0, op.params)
    X[:, 1] = bubble_deriv(x, 0.0, 1, op.params)
    X[:, 2:] = rng.standard_normal((m, q - 2)) * np.sqrt(B)[:, None]
    prev = None
    for it in range(max_iter):
        X = solveh_banded(ab, B[:, None] * X)
        Ka = X.T @ (negA @ X)
        Mb = X.T @ (B[:, None] * X)
        Ka = 0.5 * (Ka + Ka.T)
        Mb = 0.5 * (Mb + Mb.T)
        vals, vecs = eigh(Ka, Mb)
        X = X @ vecs
        cur = vals[:k]
        if prev is not None and np.max(np.abs(cur - prev)) <= tol * max(1.0, np.max(np.abs(cur))):
            break
        prev = cur
    else:
        raise RuntimeError(f"eigen-iteration did not converge in {max_iter} iterations")

    wpm1 = bubble(grid.nodes, 0.0, op.params) ** (op.params.p - 1)
    out = []
    c = grid.center
    for j in range(k):
        th = _full(grid, X[:, j])
        th /= np.sqrt(quad(th**2 * wpm1, grid))
        if abs(th[c]) > 1e-8 * np.max(np.abs(th)):
            sign = np.sign(th[c])
        else:
            sign = np.sign(th[c + 1] - th[c - 1])
        th *= sign if sign != 0 else 1.0
        out.append(EigenPair(j - 1, float(vals[j]), Field(grid, th, bool(np.allclose(th, th[::-1], atol=1e-8)))))
    return out


def _cosine(a, b, weight, grid):
    ab = quad(a * b * weight, grid)
    return abs(ab) / np.sqrt(quad(a * a * weight, grid) * quad(b * b * weight, grid))


def spectrum_table(pairs: list[EigenPair], params: ModelParams) -> list[dict]:
    """Rows ``index, lambda, tail, cosine`` for a spectrum report.

    ``tail`` is the largest of the two samples next to the ends relative to
    the sup norm; ``cosine`` compares ``theta_{-1}`` with ``w`` and ``theta_0`` with
    ``w'`` in ``L^2(w^{p-1})`` and is NaN for higher modes.
    """
    rows = []
    for pair in pairs:
        th = pair.theta.values
        grid = pair.theta.grid
        x = grid.nodes
        wpm1 = bubble(x, 0.0, params) ** (params.p - 1)
        tail = max(abs(th[1]), abs(th[-2])) / np.max(np.abs(th))
        if pair.index == -1:
            cos = _cosine(th, bubble(x, 0.0, params), wpm1, grid)
        elif pair.index == 0:
            cos = _cosine(th, bubble_deriv(x, 0.0, 1, params), wpm1, grid)
        else:
            cos = float("nan")
        rows.append({"index": pair.index, "lambda": pair.lam, "tail": tail, "cosine": cos})
    return rows


# ---------------------------------------------------------------------------
# orthogonality conditions


def _bubble_weights(x, xi, params):
    """``w^p(x + xi)`` and ``w'(x + xi) w^{p-1}(x + xi)`` evaluated without underflow issues."""
    w = bubble(x, -xi, params)
    wp = bubble_deriv(x, -xi, 1, params)
    wpm1 = w ** (params.p - 1)
    return w * wpm1, wp * wpm1


def orthogonality_functionals(f, xi: float, params: ModelParams, grid: Grid | None = None) -> np.ndarray:
    """``(int f w^p(x+xi) dx, int f w'(x+xi) w^{p-1}(x+xi) dx)``.

    These equal ``int f(x - xi) w w^{p-1}`` and ``int f(x - xi) w' w^{p-1}`` after the
    change of variables, so no interpolation is needed.  ``f`` may be a Field
    or an array with the node axis last.
    """
    if isinstance(f, Field):
        grid, vals = f.grid, f.values
    else:
        vals = np.asarray(f, dtype=float)
    k1, k2 = _bubble_weights(grid.nodes, xi, params)
    wts = grid.weights
    return np.array([(vals * k1) @ wts, (vals * k2) @ wts])


class Projection(NamedTuple):
    coeff_w: float
    coeff_wprime: float
    f_perp: Field


def _basis(grid, xi, params, basis):
    x = grid.nodes
    if basis == "bubble":
        return bubble(x, -xi, params), bubble_deriv(x, -xi, 1, params)
    if basis == "ansatz":
        return ansatz_z(grid, xi, params).values, ansatz_zbar(grid, xi, params).values
    raise ValueError(f"unknown basis {basis!r}")


def project_out(f: Field, xi: float, params: ModelParams, basis: str = "bubble") -> Projection:
    """Remove the components of ``f`` seen by the two orthogonality functionals.

    With ``basis="bubble"`` the subtracted directions are ``w(x+xi)`` and
    ``w'(x+xi)`` so the coefficients measure the bubble centered at ``-xi``
    (``f = w(. + xi)`` gives ``(1, 0)``).  ``basis="ansatz"`` subtracts
    multiples of ``z`` and ``zbar`` instead, which keeps even fields even.
    The 2x2 Gram system is solved on the grid so ``f_perp`` is orthogonal to
    round-off.
    """
    grid = f.grid
    b1, b2 = _basis(grid, xi, params, basis)
    G = np.column_stack([orthogonality_functionals(b1, xi, params, grid), orthogonality_functionals(b2, xi, params, grid)])
    rhs = orthogonality_functionals(f.values, xi, params, grid)
    c = np.linalg.solve(G, rhs)
    perp = f.values - c[0] * b1 - c[1] * b2
    even = f.even_symmetric and basis == "ansatz"
    return Projection(float(c[0]), float(c[1]), Field(grid, perp, even))


def correction_coeffs(psi: Field, psi_xx_minus_psi: Field, xi: float, xidot: float, params: ModelParams,
                      psi_x: Field | None = None) -> CorrectionCoeffs:
    """Coefficients ``(d1, d2)`` of the correction ``C`` that keeps orthogonality.

    In the frame ``xbar = x + xi`` centered on the left bubble, with
    ``phi(xbar) = psi(xbar - xi)``, ``wbar = w + w(. - 2 xi)`` and
    ``wtilde = w' - w'(. - 2 xi)``, the coefficients solve
    ``d1 a_1^i + d2 a_2^i = E^i`` where ``a_1^i = int wbar theta_i w^{p-1}``,
    ``a_2^i = int wtilde theta_i w^{p-1}`` and ``E^i = int E(phi) theta_i w^{p-1}``
    with ``E(phi) = -p xidot phi_x + (wbar^{1-p} - w^{1-p})(phi_xx - phi)``.

    Inputs are given on the original grid; every integral is evaluated there
    after the change of variables, and ``((w/wbar)^{p-1} - 1)`` is formed in log
    space so the far tails stay finite.
    """
    grid = psi.grid
    x = grid.nodes
    p = params.p
    if psi_x is None:
        from .numerics import diff1

        psi_x = Field(grid, diff1(psi.values, grid.dx, 4))
    # frame images of wbar, wtilde and the unit modes, evaluated at xbar = x + xi
    lw_left = log_bubble(x, params, -xi)
    lw_right = log_bubble(x, params, xi)
    w_l = np.exp(lw_left)
    wbar = w_l + np.exp(lw_right)
    wtilde = bubble_deriv(x, -xi, 1, params) - bubble_deriv(x, xi, 1, params)
    wp_l = bubble_deriv(x, -xi, 1, params)
    nw = np.sqrt(params.integrals["wp1"][0])
    nwp = np.sqrt(params.integrals["wprime2_wpm1"][0])
    wpm1 = w_l ** (p - 1)
    k_minus = w_l * wpm1
    k_zero = wp_l * wpm1
    # (w/wbar)^{p-1} - 1, with w/wbar = 1/(1 + exp(lw_right - lw_left))
    ratio = -np.expm1(-(p - 1) * np.log1p(np.exp(lw_right - lw_left)))
    # (wbar^{1-p} - w^{1-p}) theta_i w^{p-1} = ((w/wbar)^{p-1} - 1) theta_i
    lin = psi_xx_minus_psi.values
    wts = grid.weights
    def E_proj(mode, kernel):
        return float((-p * xidot * psi_x.values * kernel - ratio * lin * mode) @ wts)

    E_m = E_proj(w_l, k_minus) / nw
    E_0 = E_proj(wp_l, k_zero) / nwp
    raw = (float((wbar * k_minus) @ wts), float((wtilde * k_minus) @ wts),
           float((wbar * k_zero) @ wts), float((wtilde * k_zero) @ wts))
    a11, a12, a21, a22 = raw[0] / nw, raw[1] / nw, raw[2] / nwp, raw[3] / nwp
    D = a11 * a22 - a21 * a12
    if not D > 0:
        raise ValueError(f"correction system degenerate (D = {D:.3e}); |t| too small for xi = {xi}")
    d1 = (E_m * a22 - a12 * E_0) / D
    d2 = (a11 * E_0 - a21 * E_m) / D
    return CorrectionCoeffs(d1, d2, D, a11, a12, a21, a22, E_m, E_0, raw)


def correction_field(coeffs: CorrectionCoeffs, grid: Grid, xi: float, params: ModelParams) -> Field:
    """``C(x) = d1 z(x) + d2 wtilde(x + xi)``; note ``wtilde(x + xi) = -zbar(x)``."""
    z = ansatz_z(grid, xi, params).values
    zbar = ansatz_zbar(grid, xi, params).values
    return Field(grid, coeffs.d1 * z - coeffs.d2 * zbar, True)


def cancel_coeffs(E_field: Field, z: Field, zbar: Field, xi: float, params: ModelParams) -> tuple[float, float]:
    """``(c1, c2)`` such that ``E - c1 z - c2 zbar`` passes both orthogonality conditions."""
    grid = E_field.grid
    G = np.column_stack([orthogonality_functionals(z.values, xi, params, grid),
                         orthogonality_functionals(zbar.values, xi, params, grid)])
    if abs(np.linalg.det(G)) < 1e-300 or np.linalg.cond(G) > 1e14:
        raise np.linalg.LinAlgError("Gram matrix of (z, zbar) is singular")
    c = np.linalg.solve(G, orthogonality_functionals(E_field.values, xi, params, grid))
    return float(c[0]), float(c[1])
