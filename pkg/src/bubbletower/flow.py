"""Time integration of the cylindrical flow and of the linear auxiliary problem.

Nonlinear equation: ``(u^p)_t = u_xx - u + u^p``.  Linear auxiliary equation:
``p z^{p-1} psi_t = psi_xx - psi + p z^{p-1} psi + z^{p-1} (f - C(psi, t))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .numerics import diff2, second_difference_matrix, to_banded, diff1
from .profiles import Field, Grid, ModelParams, ansatz_z, ansatz_zbar, bubble, bubble_deriv
from .spectral import correction_coeffs, correction_field, orthogonality_functionals, project_out

__all__ = [
    "SolverControls",
    "Trajectory",
    "StepFailure",
    "step_nonlinear",
    "evolve",
    "pde_residual",
    "mass_balance",
    "FitResult",
    "fit_ansatz",
    "step_linear_aux",
    "solve_linear_ancient",
    "neck_path",
]

log = logging.getLogger(__name__)

BOUNDARIES = ("dirichlet", "exponential", "neumann")


class StepFailure(RuntimeError):
    """Newton did not converge or positivity was lost."""


@dataclass
class SolverControls:
    """Settings shared by the nonlinear and linear steppers.

    Attributes
    ----------
    dt : float
        Base time step.
    newton_tol, newton_max : float, int
        Newton stopping tolerance (max-norm of the update) and iteration cap.
    snapshot_stride : int
        Store every ``snapshot_stride``-th step.
    boundary : str
        ``"dirichlet"`` (zero ends), ``"exponential"`` (ghosts decay like ``e^{-|x|}``)
        or ``"neumann"`` (even reflection, for spatially constant states).
    stencil_order : int
        Order of the second-difference stencil of the nonlinear stepper.
    max_halvings : int
        Step-size halvings allowed after a failed step.
    symmetric : bool
        Solve even data on ``[0, L]`` with reflection at ``x = 0``.
    renorm_interval : float or None
        When set, every ``renorm_interval`` time units the amplitude of a
        two-bubble state is reset to its slaved value (see :func:`evolve`).
    constants : str
        Constant set used by the amplitude reset.
    theta : float
        Implicitness of the linear auxiliary stepper.  The default 1 is
        backward Euler: the mass ``p z^{p-1}`` is nearly zero in the tails,
        where Crank-Nicolson (0.5) has amplification close to -1 and never
        damps.
    """

    dt: float = 0.01
    newton_tol: float = 1e-10
    newton_max: int = 25
    snapshot_stride: int = 5
    boundary: str = "dirichlet"
    stencil_order: int = 6
    max_halvings: int = 6
    symmetric: bool = False
    renorm_interval: float | None = None
    constants: str = "displayed"
    theta: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.newton_tol > 0 and self.newton_max > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if self.stencil_order not in (2, 4, 6):
            raise ValueError("stencil_order must be 2, 4 or 6")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0.5, 1]")


@dataclass
class Trajectory:
    """Snapshots of a run; ``outcome`` is ``"ok"``, ``"extinction"``, ``"blowup"`` or ``"failed"``."""

    grid: Grid
    times: list[float] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    outcome: str = "ok"

    def append(self, t: float, values: np.ndarray) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError("snapshot times must increase")
        self.times.append(float(t))
        self.values.append(np.array(values, dtype=float))

    def __len__(self):
        return len(self.times)

    def field(self, i: int) -> Field:
        return Field(self.grid, self.values[i])

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values)


# ---------------------------------------------------------------------------
# nonlinear stepper


def _half(grid: Grid) -> slice:
    return slice(grid.center, grid.N)


class _Operator:
    """Cached second-difference matrix in banded storage for one configuration."""

    _cache: dict = {}

    @classmethod
    def get(cls, N, dx, order, left, right):
        key = (N, dx, order, left, right)
        if key not in cls._cache:
            D2 = second_difference_matrix(N, dx, order, (left, right))
            bw = order // 2
            cls._cache[key] = (D2, to_banded(D2, bw), bw)
        return cls._cache[key]


def _layout(u: Field, controls: SolverControls):
    """Unknown vector, boundary kinds and the map back to the full grid."""
    grid = u.grid
    if controls.symmetric:
        vals = u.values[_half(grid)].copy()
        left = "neumann"
    else:
        vals = u.values.copy()
        left = controls.boundary
    return vals, left, controls.boundary


def _unlayout(grid: Grid, vals: np.ndarray, controls: SolverControls) -> np.ndarray:
    if not controls.symmetric:
        return vals
    full = np.empty(grid.N)
    full[grid.center:] = vals
    full[: grid.center] = vals[:0:-1]
    return full


def _be_solve(u_old: np.ndarray, dt: float, dx: float, left: str, right: str, controls: SolverControls,
              params: ModelParams) -> np.ndarray:
    """Backward Euler step for ``(u^p)_t = u_xx - u + u^p`` by damped Newton in ``u``."""
    p = params.p
    N = u_old.size
    D2, D2b, bw = _Operator.get(N, dx, controls.stencil_order, left, right)
    pinned = [i for i, k in ((0, left), (N - 1, right)) if k == "dirichlet"]
    free = np.ones(N, bool)
    free[pinned] = False
    v_old = np.abs(u_old) ** p
    u = u_old.copy()
    u[pinned] = 0.0

    def residual(u):
        # dt-scaled: u^p - v_old - dt (D2 u - u + u^p)
        up = np.abs(u) ** p
        r = up - v_old - dt * (D2 @ u - u + up)
        r[pinned] = u[pinned]
        return r

    r = residual(u)
    rn = np.max(np.abs(r))
    for it in range(controls.newton_max):
        up1 = p * np.abs(u) ** (p - 1)
        ab = -dt * D2b
        ab[bw] += up1 * (1.0 - dt) + dt
        for i in pinned:
            ab[:, i] = 0.0
            # zero the pinned row as well
            for k in range(-bw, bw + 1):
                j = i + k
                if 0 <= j < N:
                    ab[bw + i - j, j] = 0.0
            ab[bw, i] = 1.0
        delta = solve_banded((bw, bw), ab, -r)
        step = 1.0
        for _ in range(30):
            trial = u + step * delta
            if np.all(trial[free] > 0):
                rt = residual(trial)
                rtn = np.max(np.abs(rt))
                if rtn <= max(rn * (1 - 1e-4 * step), 1e-300) or rtn < 1e-14:
                    break
            step *= 0.5
        else:
            raise StepFailure("line search failed (positivity or no descent)")
        u, r, rn = trial, rt, rtn
        if np.max(np.abs(step * delta)) <= controls.newton_tol * max(1.0, np.max(np.abs(u))):
            return u
    raise StepFailure(f"Newton did not converge in {controls.newton_max} iterations (residual {rn:.2e})")


def step_nonlinear(u: Field, dt: float, controls: SolverControls, params: ModelParams) -> Field:
    """One backward Euler step of ``(u^p)_t = u_xx - u + u^p``.

    The implicit system ``(v_new - v_old)/dt = (v_new^{1/p})_xx - v_new^{1/p} + v_new``
    in ``v = u^p`` is solved with ``u_new = v_new^{1/p}`` as the Newton unknown; the
    two formulations are the same discrete equations.  Raises :class:`StepFailure`.
    """
    vals, left, right = _layout(u, controls)
    inner = vals[1:-1] if controls.boundary == "dirichlet" else vals
    if np.any(inner <= 0):
        raise StepFailure("input is not positive")
    new = _be_solve(vals, dt, u.grid.dx, left, right, controls, params)
    return Field(u.grid, _unlayout(u.grid, new, controls), u.even_symmetric)


def _renormalize(u: Field, params: ModelParams, constants: str) -> tuple[Field, dict]:
    fit = fit_ansatz(u, float("nan"), params)
    if fit.degenerate:
        return u, {"skipped": True}
    a, _ = params.constants(constants)
    eta_star = -(a / params.lambda_eta) * np.exp(-2.0 * fit.xi)
    k = (1.0 + eta_star) / (1.0 + fit.eta)
    return Field(u.grid, u.values * k, u.even_symmetric), {"xi": fit.xi, "eta": fit.eta, "eta_star": eta_star}


def evolve(u0: Field, t_start: float, t_end: float, controls: SolverControls, params: ModelParams,
           blowup: float = 1e6, callback: Callable | None = None, extinct: float = 1e-8) -> Trajectory:
    """Integrate the nonlinear flow from ``t_start`` to ``t_end``.

    Failed steps are retried with ``dt`` halved up to ``controls.max_halvings``
    times.  Loss of positivity or a sup norm below ``extinct`` ends the run with
    outcome ``"extinction"`` (the implicit stepper keeps ``u`` positive, so
    extinction usually shows up as collapse of the sup norm), and a sup norm
    above ``blowup`` with ``"blowup"``.

    The even mode ``z`` of a two-bubble state grows like ``e^{lambda t}`` with
    ``lambda = (p-1)/p``; it reflects the freedom in the extinction time.  When
    ``controls.renorm_interval`` is set the amplitude is reset periodically:
    the state is fitted as ``(1 + eta) z(xi) + psi`` and multiplied by
    ``(1 + eta*)/(1 + eta)`` with the slaved value ``eta* = -(a/lambda) e^{-2 xi}``.
    """
    if t_end < t_start:
        raise ValueError("t_end must not precede t_start")
    traj = Trajectory(u0.grid, meta={"controls": asdict(controls), "n": params.n, "L": u0.grid.L,
                                     "N": u0.grid.N, "renorm": []})
    traj.append(t_start, u0.values)
    u = u0.copy()
    t = t_start
    dt = controls.dt
    nsteps = int(round((t_end - t_start) / dt))
    if abs(nsteps * dt - (t_end - t_start)) > 1e-9 * max(1.0, abs(t_end)):
        nsteps = int(np.ceil((t_end - t_start) / dt))
    next_renorm = None if controls.renorm_interval is None else t_start + controls.renorm_interval
    for k in range(1, nsteps + 1):
        target = min(t_start + k * dt, t_end)
        try:
            u = _advance(u, target - t, controls, params)
        except StepFailure as exc:
            traj.outcome = "extinction" if "positiv" in str(exc) else "failed"
            traj.meta["failure"] = str(exc)
            traj.meta["t_fail"] = t
            log.warning("evolve stopped at t=%.4f: %s", t, exc)
            break
        t = target
        if np.max(u.values) > blowup:
            traj.outcome = "blowup"
            traj.append(t, u.values)
            break
        if np.max(u.values) < extinct:
            traj.outcome = "extinction"
            traj.meta["t_fail"] = t
            traj.append(t, u.values)
            break
        if next_renorm is not None and t >= next_renorm - 1e-12:
            u, info = _renormalize(u, params, controls.constants)
            info["t"] = t
            traj.meta["renorm"].append(info)
            next_renorm += controls.renorm_interval
        if k % controls.snapshot_stride == 0 or k == nsteps:
            traj.append(t, u.values)
        if callback is not None:
            callback(t, u)
    return traj


def _advance(u: Field, dt: float, controls: SolverControls, params: ModelParams) -> Field:
    """Advance by ``dt`` with recursive halving on failure."""
    def go(u, dt, depth):
        try:
            return step_nonlinear(u, dt, controls, params)
        except StepFailure:
            if depth >= controls.max_halvings:
                raise
            half = go(u, dt / 2, depth + 1)
            return go(half, dt / 2, depth + 1)

    return go(u, dt, 0)


def pde_residual(traj: Trajectory, index: int, params: ModelParams, order: int = 4) -> Field:
    """Centered ``d/dt u^p`` minus ``u_xx - u + u^p`` at an interior snapshot."""
    if index <= 0 or index >= len(traj) - 1:
        raise IndexError("residual needs snapshots on both sides")
    p = params.p
    t = traj.times
    dvp = (np.abs(traj.values[index + 1]) ** p - np.abs(traj.values[index - 1]) ** p) / (t[index + 1] - t[index - 1])
    u = traj.values[index]
    rhs = diff2(u, traj.grid.dx, order) - u + np.abs(u) ** p
    return Field(traj.grid, dvp - rhs)


def mass_balance(traj: Trajectory, params: ModelParams) -> np.ndarray:
    """Mismatch of ``d/dt int u^p`` against ``int (u_xx - u + u^p)`` at interior snapshots."""
    p = params.p
    grid = traj.grid
    masses = np.array([np.abs(v) ** p @ grid.weights for v in traj.values])
    t = np.asarray(traj.times)
    out = []
    for i in range(1, len(t) - 1):
        u = traj.values[i]
        rhs = (diff2(u, grid.dx, 4) - u + np.abs(u) ** p) @ grid.weights
        out.append((masses[i + 1] - masses[i - 1]) / (t[i + 1] - t[i - 1]) - rhs)
    return np.array(out)


# ---------------------------------------------------------------------------
# ansatz fitting


class FitResult(NamedTuple):
    xi: float
    eta: float
    psi: Field
    residuals: tuple[float, float]
    degenerate: bool


def _eta_for(u_vals, xi, grid, params):
    z = ansatz_z(grid, xi, params).values
    lw = orthogonality_functionals(u_vals, xi, params, grid)[0]
    lz = orthogonality_functionals(z, xi, params, grid)[0]
    return lw / lz - 1.0, z


def fit_ansatz(u: Field, t: float, params: ModelParams, xi_guess: float | None = None) -> FitResult:
    """Decompose ``u = (1 + eta) z(xi) + psi`` with ``psi`` satisfying both orthogonality conditions.

    For fixed ``xi`` the first condition is linear in ``eta``; the second is
    then a scalar equation in ``xi`` solved by Brent's method, seeded by the
    location of the left peak.  Single-peaked data return ``xi = 0`` with the
    ``degenerate`` flag set.
    """
    grid = u.grid
    x = grid.nodes
    vals = u.values

    def g(xi):
        eta, z = _eta_for(vals, xi, grid, params)
        return orthogonality_functionals(vals - (1 + eta) * z, xi, params, grid)[1]

    left = x <= 0
    peak = -x[left][np.argmax(vals[left])]
    seed = xi_guess if xi_guess is not None else peak
    degenerate = seed < 0.5 * grid.dx or peak < 1.0
    xi = 0.0
    if not degenerate:
        lo, hi = max(seed * 0.8, 1e-3), seed * 1.25
        glo, ghi = g(lo), g(hi)
        k = 0
        while glo * ghi > 0 and k < 40:
            lo, hi = max(lo * 0.9, 1e-3), min(hi * 1.1, grid.L - 1.0)
            glo, ghi = g(lo), g(hi)
            k += 1
        if glo * ghi > 0:
            degenerate = True
        else:
            xi = brentq(g, lo, hi, xtol=1e-13, rtol=1e-14, maxiter=200)
    eta, z = _eta_for(vals, xi, grid, params)
    psi = vals - (1 + eta) * z
    res = orthogonality_functionals(psi, xi, params, grid)
    return FitResult(float(xi), float(eta), Field(grid, psi, u.even_symmetric), (float(res[0]), float(res[1])),
                     bool(degenerate))


def neck_path(traj: Trajectory, params: ModelParams) -> dict:
    """Fitted ``xi``, ``eta`` and the centered derivative of ``xi`` along a trajectory."""
    t = np.asarray(traj.times)
    xi = np.empty(len(t))
    eta = np.empty(len(t))
    guess = None
    for i, v in enumerate(traj.values):
        fit = fit_ansatz(Field(traj.grid, v), t[i], params, guess)
        xi[i], eta[i] = fit.xi, fit.eta
        guess = fit.xi if fit.xi > 0 else None
    xidot = np.gradient(xi, t, edge_order=2) if len(t) > 2 else np.zeros_like(t)
    return {"t": t, "xi": xi, "eta": eta, "xidot": xidot}


# ---------------------------------------------------------------------------
# linear auxiliary equation


def _linear_operator(grid: Grid):
    D2, D2b, bw = _Operator.get(grid.N, grid.dx, 2, "dirichlet", "dirichlet")
    return D2, D2b, bw


def _aux_rhs_parts(psi, t, xi, xidot, grid, params):
    """Correction field ``C(psi, t)`` from the current ``psi``."""
    psi_xx = diff2(psi, grid.dx, 4)
    coeffs = correction_coeffs(Field(grid, psi), Field(grid, psi_xx - psi), xi, xidot, params)
    return correction_field(coeffs, grid, xi, params).values, coeffs


def step_linear_aux(psi: Field, t: float, dt: float, f: Field, xi: float, xidot: float, controls: SolverControls,
                    params: ModelParams, xi_new: float | None = None, check: bool = True) -> tuple[Field, dict]:
    """One theta-method step of the linear auxiliary equation.

    The mass ``p z^{p-1}`` is frozen at the mid-step neck position.  The
    correction ``C = d1 z - d2 zbar`` enters the step as a forcing whose two
    coefficients are fixed so that the new ``psi`` satisfies both
    orthogonality conditions at ``xi_new`` exactly; this is the discrete form
    of the condition that defines ``C``.  The step solution is linear in
    ``(d1, d2)``, so three banded solves and a 2x2 system suffice.  The record
    holds the discrete ``d1, d2``, the values from the continuum formula
    (``d1_formula``, ``d2_formula``) and the orthogonality defect of the step
    taken with the formula values (``defect``).
    """
    grid = psi.grid
    p = params.p
    if xi_new is None:
        xi_new = xi + dt * xidot
    if check:
        proj = orthogonality_functionals(f.values, xi, params, grid)
        scale = max(np.max(np.abs(f.values)), 1e-300)
        if np.max(np.abs(proj)) > 1e-8 * scale:
            log.warning("forcing is not orthogonal at t=%.3f (defect %.2e)", t, np.max(np.abs(proj)))
    xi_mid = 0.5 * (xi + xi_new)
    z = ansatz_z(grid, xi_mid, params).values
    zpm1 = z ** (p - 1)
    mass = p * zpm1
    D2, D2b, bw = _linear_operator(grid)
    th = controls.theta
    _, coeffs = _aux_rhs_parts(psi.values, t, xi, xidot, grid, params)
    Lpsi = D2 @ psi.values - psi.values + mass * psi.values
    ab = -th * D2b.copy()
    ab[bw] += mass / dt + th - th * mass
    ab[:, 0] = 0.0
    ab[:, -1] = 0.0
    ab[bw, 0] = ab[bw, -1] = 1.0
    ab[bw - 1, 1] = 0.0
    ab[bw + 1, grid.N - 2] = 0.0
    zc = ansatz_z(grid, xi, params).values
    zbar = ansatz_zbar(grid, xi, params).values
    rhs = np.empty((grid.N, 3))
    rhs[:, 0] = mass * psi.values / dt + (1 - th) * Lpsi + zpm1 * f.values
    rhs[:, 1] = zpm1 * zc
    rhs[:, 2] = -zpm1 * zbar
    rhs[0] = rhs[-1] = 0.0
    sol = solve_banded((bw, bw), ab, rhs)
    if psi.even_symmetric:
        # roundoff would otherwise seed the odd unstable mode w(x - xi) - w(x + xi)
        sol = 0.5 * (sol + sol[::-1])
    proj = np.column_stack([orthogonality_functionals(sol[:, j], xi_new, params, grid) for j in range(3)])
    d1, d2 = np.linalg.solve(proj[:, 1:], proj[:, 0])
    new = sol[:, 0] - d1 * sol[:, 1] - d2 * sol[:, 2]
    formula_step = sol[:, 0] - coeffs.d1 * sol[:, 1] - coeffs.d2 * sol[:, 2]
    defect = orthogonality_functionals(formula_step, xi_new, params, grid)
    info = {"d1": float(d1), "d2": float(d2), "d1_formula": coeffs.d1, "d2_formula": coeffs.d2, "D": coeffs.D,
            "defect": float(np.max(np.abs(defect)))}
    return Field(grid, new, psi.even_symmetric), info


def solve_linear_ancient(forcing, s: float, t0: float, controls: SolverControls, params: ModelParams,
                         xi_of_t: Callable[[float], tuple[float, float]] | None = None, even: bool = True,
                         grid: Grid | None = None, record: bool = False) -> Trajectory:
    """Solve the linear auxiliary problem from ``psi(s) = 0`` up to ``t0``.

    Parameters
    ----------
    forcing : callable or array
        ``forcing(t) -> values`` on the grid, or an array of shape
        ``(steps + 1, N)`` sampled at ``s + k dt``.
    xi_of_t : callable
        ``t -> (xi, xidot)``; defaults to the leading neck law of the
        ``controls.constants`` set.
    record : bool
        Keep ``d1``, ``d2`` and orthogonality defects in ``meta``.
    """
    if not s < t0:
        raise ValueError("need s < t0")
    from .params import xi0

    if xi_of_t is None:
        xi_of_t = lambda t: xi0(t, params, controls.constants)  # noqa: E731
    if grid is None:
        grid = forcing.grid if isinstance(forcing, Field) else None
    if grid is None:
        raise ValueError("a grid is required")
    dt = controls.dt
    nsteps = int(round((t0 - s) / dt))
    times = s + dt * np.arange(nsteps + 1)
    times[-1] = t0
    if callable(forcing):
        fget = lambda k: np.asarray(forcing(times[k]), dtype=float)  # noqa: E731
    else:
        arr = np.asarray(forcing, dtype=float)
        if arr.shape != (nsteps + 1, grid.N):
            raise ValueError(f"forcing array must have shape {(nsteps + 1, grid.N)}")
        fget = lambda k: arr[k]  # noqa: E731
    traj = Trajectory(grid, meta={"controls": asdict(controls), "n": params.n, "kind": "psi", "s": s, "t0": t0})
    psi = Field(grid, np.zeros(grid.N), even)
    traj.append(times[0], psi.values)
    xi_prev, xidot_prev = xi_of_t(times[0])
    info_rows = []
    for k in range(1, nsteps + 1):
        t_prev, t_next = times[k - 1], times[k]
        xi_next, xidot_next = xi_of_t(t_next)
        f_mid = Field(grid, 0.5 * (fget(k - 1) + fget(k)), even)
        psi, info = step_linear_aux(psi, t_prev, t_next - t_prev, f_mid, xi_prev, xidot_prev, controls, params,
                                    xi_new=xi_next, check=False)
        if record:
            info["t"] = t_next
            info_rows.append(info)
        xi_prev, xidot_prev = xi_next, xidot_next
        if k % controls.snapshot_stride == 0 or k == nsteps:
            traj.append(t_next, psi.values)
    if record:
        traj.meta["steps"] = info_rows
    return traj
