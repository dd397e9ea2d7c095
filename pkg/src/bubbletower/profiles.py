"""Closed-form profiles and the two-bubble ansatz.

Everything here works in the normalized cylindrical variables in which the
flow reads ``(u^p)_t = u_xx - u + u^p`` with ``p = (n+2)/(n-2)``.  The steady
bubble ``w`` solves ``w'' - w + w^p = 0`` and is even and positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numpy.lib.mixins import NDArrayOperatorsMixin
from scipy import integrate

__all__ = [
    "ModelParams",
    "Grid",
    "Field",
    "Rescaling",
    "log_bubble",
    "bubble",
    "bubble_deriv",
    "ansatz_z",
    "ansatz_zbar",
    "ansatz_z_x",
    "assemble_u",
    "sphere_solution",
    "king_profile",
    "cylindrical_constants",
    "cylindrical_rescaling",
]

CONSTANT_SETS = ("displayed", "effective")


def _logcosh(s):
    s = np.abs(s)
    return s + np.log1p(np.exp(-2.0 * s)) - np.log(2.0)


def _sech(s):
    s = np.abs(s)
    e = np.exp(-s)
    return 2.0 * e / (1.0 + e * e)


@dataclass(frozen=True)
class ModelParams:
    """Dimension ``n`` and the constants derived from it.

    Parameters
    ----------
    n : int
        Space dimension, at least 3.

    Notes
    -----
    Two sets of interaction constants are available.  ``a`` and ``b`` are
    the quadrature formulas

    ``a = ((p-1) I_+ + p I_-) / (p int w^{p+1})``,
    ``b = int_0^inf w^p e^{-x} / (p int w'^2 w^{p-1})``

    with ``I_+ = int_0^inf w^p e^x`` and ``I_- = int_{-inf}^0 w^p e^x``.
    ``a_eff`` and ``b_eff`` are the coefficients that the exact projections of
    the ansatz error actually carry at leading order; they include the tail
    constant ``C_w = lim w(x) e^{|x|}``.  See ``constants``.
    """

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"dimension n must be an integer >= 3, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def p(self) -> float:
        return (self.n + 2) / (self.n - 2)

    @property
    def m(self) -> float:
        """Exponent ``(n-2)/2`` of the sech form of ``w``."""
        return (self.n - 2) / 2

    @property
    def beta(self) -> float:
        return 2.0 / (self.n - 2)

    @property
    def gamma(self) -> float:
        return 2.0 / (self.n - 2)

    @property
    def k_n(self) -> float:
        return float(np.sqrt(4.0 * self.n / (self.n - 2)))

    @property
    def lambda_eta(self) -> float:
        return (self.p - 1.0) / self.p

    @property
    def tail_constant(self) -> float:
        """``C_w`` with ``w(x) ~ C_w e^{-|x|}``."""
        return self.k_n ** self.m

    @cached_property
    def integrals(self) -> dict:
        """Defining integrals of the constants, as ``name -> (value, abserr)``."""
        p = self.p

        def logw(x):
            return float(log_bubble(x, self))

        def wprime2(x):
            return float(bubble_deriv(x, 0.0, 1, self)) ** 2

        inf = np.inf
        out = {}
        out["wp_exp_pos"] = integrate.quad(lambda x: np.exp(x + p * logw(x)), 0, inf, epsabs=1e-14, epsrel=1e-13, limit=200)
        out["wp_exp_neg"] = integrate.quad(lambda x: np.exp(x + p * logw(x)), -inf, 0, epsabs=1e-14, epsrel=1e-13, limit=200)
        out["wp_expm_pos"] = integrate.quad(lambda x: np.exp(-x + p * logw(x)), 0, inf, epsabs=1e-14, epsrel=1e-13, limit=200)
        half = integrate.quad(lambda x: np.exp((p + 1) * logw(x)), 0, inf, epsabs=1e-14, epsrel=1e-13, limit=200)
        out["wp1"] = (2 * half[0], 2 * half[1])
        half = integrate.quad(lambda x: wprime2(x) * np.exp((p - 1) * logw(x)), 0, inf, epsabs=1e-14, epsrel=1e-13, limit=200)
        out["wprime2_wpm1"] = (2 * half[0], 2 * half[1])
        return out

    def _I(self, key):
        return self.integrals[key][0]

    @cached_property
    def a(self) -> float:
        p = self.p
        num = (p - 1) * self._I("wp_exp_pos") + p * self._I("wp_exp_neg")
        return num / (p * self._I("wp1"))

    @cached_property
    def b(self) -> float:
        return self._I("wp_expm_pos") / (self.p * self._I("wprime2_wpm1"))

    @cached_property
    def a_eff(self) -> float:
        mass = self._I("wp_exp_pos") + self._I("wp_exp_neg")
        return self.tail_constant * mass / self._I("wp1")

    @cached_property
    def b_eff(self) -> float:
        mass = self._I("wp_exp_pos") + self._I("wp_exp_neg")
        return self.tail_constant * mass / (self.p * self._I("wprime2_wpm1"))

    @property
    def c1(self) -> float:
        """Coefficient ``-p int w^{p+1}`` of the eta-projection."""
        return -self.p * self._I("wp1")

    @property
    def c2(self) -> float:
        """Coefficient ``-p int w'^2 w^{p-1}`` of the xi-projection."""
        return -self.p * self._I("wprime2_wpm1")

    def constants(self, kind: str = "displayed") -> tuple[float, float]:
        """Return ``(a, b)`` for ``kind`` in ``{"displayed", "effective"}``."""
        if kind == "displayed":
            return self.a, self.b
        if kind == "effective":
            return self.a_eff, self.b_eff
        raise ValueError(f"unknown constant set {kind!r}; expected one of {CONSTANT_SETS}")


@dataclass(frozen=True)
class Grid:
    """Uniform symmetric mesh on ``[-L, L]`` with an odd node count."""

    L: float
    N: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if int(self.N) != self.N or self.N < 3 or self.N % 2 == 0:
            raise ValueError(f"N must be an odd integer >= 3, got {self.N!r}")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(-self.L, self.L, self.N)
        x[(self.N - 1) // 2] = 0.0
        x.flags.writeable = False
        return x

    @property
    def center(self) -> int:
        return (self.N - 1) // 2

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite Simpson weights."""
        w = np.ones(self.N)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= self.dx / 3.0
        w.flags.writeable = False
        return w


@dataclass
class Field(NDArrayOperatorsMixin):
    """Values sampled on a :class:`Grid` at one time.

    Arithmetic and numpy ufuncs act on the values and return a new Field.
    Mixing Fields on different grids raises ``ValueError``.
    """

    grid: Grid
    values: np.ndarray
    even_symmetric: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.N,):
            raise ValueError(f"values have shape {self.values.shape}, grid has {self.grid.N} nodes")

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.grid.N

    def __getitem__(self, item):
        return self.values[item]

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or "out" in kwargs:
            return NotImplemented
        grid = None
        even = True
        args = []
        for a in inputs:
            if isinstance(a, Field):
                if grid is not None and a.grid != grid:
                    raise ValueError("fields live on different grids")
                grid = a.grid
                even = even and a.even_symmetric
                args.append(a.values)
            else:
                if np.ndim(a) > 0:
                    even = False
                args.append(a)
        result = getattr(ufunc, method)(*args, **kwargs)
        if isinstance(result, tuple):
            return tuple(Field(grid, r, even) for r in result)
        return Field(grid, result, even)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.even_symmetric)

    def check_even(self, rtol: float = 1e-12) -> bool:
        v = self.values
        scale = max(np.max(np.abs(v)), np.finfo(float).tiny)
        return bool(np.max(np.abs(v - v[::-1])) <= rtol * scale)


def _shifted_arg(x, shift, params, lam):
    return params.gamma * (np.asarray(x, dtype=float) - shift) + np.log(lam)


def log_bubble(x, params: ModelParams, shift: float = 0.0, lam: float = 1.0):
    """``log w(x - shift)``, accurate far into the tails."""
    s = _shifted_arg(x, shift, params, lam)
    return params.m * (np.log(params.k_n / 2.0) - _logcosh(s))


def bubble(x, shift: float, params: ModelParams, lam: float = 1.0):
    """Steady bubble ``w(x - shift)``.

    ``w(x) = (k_n lam e^{gamma x} / (1 + lam^2 e^{2 gamma x}))^{(n-2)/2}``,
    evaluated as ``(k_n/2)^m sech^m(gamma x + log lam)``.
    """
    return np.exp(log_bubble(x, params, shift, lam))


def bubble_deriv(x, shift: float, order: int, params: ModelParams, lam: float = 1.0):
    """Analytic first or second derivative of ``w(x - shift)``."""
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order!r}")
    s = _shifted_arg(x, shift, params, lam)
    w = np.exp(params.m * (np.log(params.k_n / 2.0) - _logcosh(s)))
    th = np.tanh(s)
    m, g = params.m, params.gamma
    if order == 1:
        return -m * g * th * w
    sech2 = _sech(s) ** 2
    return m * g * g * w * (m * th * th - sech2)


def _mirror(v: np.ndarray) -> np.ndarray:
    """Average with the reflection so even fields are even to the last bit."""
    return 0.5 * (v + v[::-1])


def ansatz_z(grid: Grid, xi: float, params: ModelParams) -> Field:
    """``z = w(x - xi) + w(x + xi)``."""
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    x = grid.nodes
    return Field(grid, _mirror(bubble(x, xi, params) + bubble(x, -xi, params)), True)


def ansatz_zbar(grid: Grid, xi: float, params: ModelParams) -> Field:
    """``zbar = w'(x - xi) - w'(x + xi)``, the derivative of ``z`` in ``xi`` up to sign."""
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    x = grid.nodes
    return Field(grid, _mirror(bubble_deriv(x, xi, 1, params) - bubble_deriv(x, -xi, 1, params)), True)


def ansatz_z_x(grid: Grid, xi: float, params: ModelParams) -> Field:
    """Spatial derivative ``z_x = w'(x - xi) + w'(x + xi)`` (odd)."""
    x = grid.nodes
    return Field(grid, bubble_deriv(x, xi, 1, params) + bubble_deriv(x, -xi, 1, params))


def assemble_u(grid: Grid, xi: float, eta: float, psi: Field, params: ModelParams) -> Field:
    """``u = (1 + eta) z + psi``."""
    if psi.grid != grid:
        raise ValueError("psi lives on a different grid")
    z = ansatz_z(grid, xi, params)
    return Field(grid, (1.0 + eta) * z.values + psi.values, psi.even_symmetric)


def sphere_solution(t: float, T: float, params: ModelParams) -> float:
    """Spatially constant conformal factor of a round sphere shrinking at time ``T``.

    ``v = ((4/(n+2)) c_n (T - t))^{(n-2)/4}`` with ``c_n = n(n-2)/4``; it solves
    ``d(v^p)/dt + c_n v = 0``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t >= T):
        raise ValueError("sphere solution requires t < T")
    n = params.n
    c_n = n * (n - 2) / 4.0
    return (4.0 / (n + 2) * c_n * (T - t)) ** ((n - 2) / 4.0)


def king_profile(r, A: float, B: float, params: ModelParams):
    """Shape ``(A / (1 + 2 B r^2 + r^4))^{(n-2)/4}`` of a King-type solution."""
    r = np.asarray(r, dtype=float)
    if A <= 0:
        raise ValueError("A must be positive")
    base = 1.0 + 2.0 * B * r**2 + r**4
    if np.any(base <= 0):
        bad = np.flatnonzero(np.atleast_1d(base) <= 0)
        raise ValueError(f"nonpositive base 1 + 2Br^2 + r^4 at index {bad[:5].tolist()}")
    return (A / base) ** ((params.n - 2) / 4.0)


def cylindrical_constants(params: ModelParams) -> tuple[float, float]:
    """Coefficients ``(alpha, beta)`` of ``(u^p)_t = u_xx + alpha u^p - beta u``.

    ``alpha = p/(p-1)`` and ``beta = (n-2)^2/4``.  :func:`cylindrical_rescaling`
    gives the change of variables that normalizes both to one.
    """
    return params.p / (params.p - 1.0), (params.n - 2) ** 2 / 4.0


class Rescaling(NamedTuple):
    """``u = amplitude * u_norm(x / space, t / time)`` maps normalized to raw variables."""

    amplitude: float
    space: float
    time: float


def cylindrical_rescaling(params: ModelParams) -> Rescaling:
    """Amplitude, space and time stretch between the raw and normalized equations.

    With ``u(x, t) = k U(x/s, t/r)`` the raw equation becomes the normalized one
    when ``s = 1/sqrt(beta)``, ``k^{p-1} = beta/alpha`` and ``r = 1/alpha``.
    """
    alpha, beta = cylindrical_constants(params)
    return Rescaling((beta / alpha) ** (1.0 / (params.p - 1.0)), 1.0 / np.sqrt(beta), 1.0 / alpha)
