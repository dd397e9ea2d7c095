"""Reduced dynamics of the neck: ``xi_0``, the parameter ODEs, operators A and B, and the construction loop.

With ``xi = xi_0 + h`` and ``xi_0(t) = (1/2) log(2 b |t|)`` the orthogonality
conditions become

    etadot - lambda eta = F_eta := a e^{-2 xi} + r_1 + G_1,
    hdot + h / t       = F_h   := b G_3(h) + r_2 + G_2,

with ``lambda = (p-1)/p`` and ``G_3(h) = -(e^{-2(xi_0+h)} - e^{-2 xi_0} + 2 e^{-2 xi_0} h)``.
Both are solved backward from ``t0`` with zero data there.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errorterms import FlowState, m_projections, _m_values, _q_values
from .flow import SolverControls, Trajectory, solve_linear_ancient
from .numerics import param_norms, global_norms
from .profiles import Grid, ModelParams
from .spectral import orthogonality_functionals, _bubble_weights

__all__ = [
    "ParamPath",
    "xi0",
    "g3",
    "ode_rhs",
    "ode_residual",
    "backward_integral",
    "operator_a",
    "operator_b",
    "FixedPointResult",
    "fixed_point",
    "ConstructionReport",
    "construct_ancient",
    "eta_leading",
    "constant_c0",
]

log = logging.getLogger(__name__)


@dataclass
class ParamPath:
    """Sampled ``(xi, eta, h)`` and their derivatives on ``[t_start, t0]``."""

    times: np.ndarray
    xi: np.ndarray
    xidot: np.ndarray
    eta: np.ndarray
    etadot: np.ndarray
    h: np.ndarray
    hdot: np.ndarray

    def at(self, t: float) -> tuple[float, float]:
        """``(xi, xidot)`` at ``t`` by linear interpolation."""
        return float(np.interp(t, self.times, self.xi)), float(np.interp(t, self.times, self.xidot))

    def as_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)) for k in ("times", "xi", "xidot", "eta", "etadot", "h", "hdot")}


def xi0(t, params: ModelParams, constants: str = "displayed"):
    """``(xi_0(t), xi_0'(t)) = ((1/2) log(2 b |t|), -1/(2|t|))`` for ``t < 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 0):
        raise ValueError("xi_0 is defined for t < 0")
    _, b = params.constants(constants)
    val = 0.5 * np.log(2.0 * b * np.abs(t))
    der = -0.5 / np.abs(t)
    if val.ndim == 0:
        return float(val), float(der)
    return val, der


def g3(h, t, params: ModelParams, constants: str = "displayed"):
    """``G_3(h) = -(e^{-2(xi_0+h)} - e^{-2 xi_0} + 2 e^{-2 xi_0} h)``: quadratic in ``h``."""
    x0, _ = xi0(t, params, constants)
    e0 = np.exp(-2.0 * np.asarray(x0))
    h = np.asarray(h, dtype=float)
    # e^{-2h} - 1 + 2h without cancellation
    return -e0 * (np.expm1(-2.0 * h) + 2.0 * h)


def ode_rhs(t, h, params: ModelParams, G1=0.0, G2=0.0, R1=0.0, R2=0.0, constants: str = "displayed"):
    """Forcings ``(F_eta, F_h)`` of the two parameter equations.

    ``F_eta = a e^{-2 xi} + R1 + G1`` and ``F_h = b G_3(h) + R2 + G2`` where
    ``R_i`` are the expansion residuals normalized as in the ODEs
    (``-R_i/c_i`` of :func:`~bubbletower.errorterms.projection_expansion`).
    """
    a, b = params.constants(constants)
    x0, _ = xi0(t, params, constants)
    xi = np.asarray(x0) + np.asarray(h)
    return a * np.exp(-2.0 * xi) + R1 + G1, b * g3(h, t, params, constants) + R2 + G2


def ode_residual(path: ParamPath, F_eta, F_h, params: ModelParams):
    """``(etadot - lambda eta - F_eta, hdot + h/t - F_h)`` along a path."""
    return (path.etadot - params.lambda_eta * path.eta - F_eta,
            path.hdot + path.h / path.times - F_h)


def _moments(lam: float, h: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``int_0^h e^{-lam u} u^j du`` for ``j = 0, 1, 2``."""
    if lam == 0.0:
        return h, h**2 / 2, h**3 / 3
    x = lam * h
    e = np.exp(-x)
    m0 = -np.expm1(-x) / lam
    m1 = (-np.expm1(-x) - x * e) / lam**2
    m2 = (2 * (-np.expm1(-x)) - e * x * (x + 2)) / lam**3
    return m0, m1, m2


def backward_integral(times, G, lam: float = 0.0) -> np.ndarray:
    """``J(t_k) = int_{t_k}^{t_end} e^{lam (t_k - s)} G(s) ds`` on the sample grid.

    ``G`` is interpolated by the quadratic through three neighboring samples on
    each interval and integrated exactly against the exponential, then the
    intervals are accumulated from the right, which stays finite for any
    horizon.  Third-order accurate in the spacing.
    """
    t = np.asarray(times, dtype=float)
    G = np.asarray(G, dtype=float)
    K = t.size
    J = np.zeros(K)
    if K < 2:
        return J
    if K == 2:
        hk = t[1] - t[0]
        m0, m1, _ = _moments(lam, np.array([hk]))
        slope = (G[1] - G[0]) / hk
        J[0] = G[0] * m0[0] + slope * m1[0]
        return J
    hk = np.diff(t)
    m0, m1, m2 = _moments(lam, hk)
    local = np.empty(K - 1)
    for k in range(K - 1):
        i = k if k + 2 < K else k - 1
        ts = t[i : i + 3] - t[k]
        gs = G[i : i + 3]
        c2, c1, c0 = np.polyfit(ts, gs, 2)
        local[k] = c0 * m0[k] + c1 * m1[k] + c2 * m2[k]
    decay = np.exp(-lam * hk)
    for k in range(K - 2, -1, -1):
        J[k] = decay[k] * J[k + 1] + local[k]
    return J


def _check_sampling(times, F):
    times = np.asarray(times, dtype=float)
    F = np.asarray(F, dtype=float)
    if times.shape != F.shape:
        raise ValueError("forcing must be sampled on the path grid")
    if times.size >= 2 and np.any(np.diff(times) <= 0):
        raise ValueError("times must increase")
    if times.size >= 2 and np.max(np.diff(times)) > 0.5:
        raise ValueError("forcing undersampled: spacing above 0.5")
    return times, F


def operator_a(times, F, t0: float, params: ModelParams) -> np.ndarray:
    """``A(t) = -int_t^{t0} e^{lambda (t - s)} F(s) ds``: solves ``etadot - lambda eta = F``, ``eta(t0) = 0``."""
    times, F = _check_sampling(times, F)
    if times.size and abs(times[-1] - t0) > 1e-9 * max(1.0, abs(t0)):
        raise ValueError("path grid must end at t0")
    return -backward_integral(times, F, params.lambda_eta)


def operator_b(times, F, t0: float, params: ModelParams | None = None, kernel: str = "solution") -> np.ndarray:
    """Backward solution operator for ``hdot + h/t = F`` with ``h(t0) = 0``.

    ``kernel="solution"`` (default) evaluates ``|t|^{-1} int_t^{t0} s F(s) ds``,
    which solves that equation.  ``kernel="s2"`` evaluates the weighted integral
    ``|t|^{-2} int_t^{t0} s^2 F(s) ds``; it solves ``hdot + 2h/t = -F`` instead and
    is kept for comparison.
    """
    times, F = _check_sampling(times, F)
    if times.size and abs(times[-1] - t0) > 1e-9 * max(1.0, abs(t0)):
        raise ValueError("path grid must end at t0")
    if np.any(times >= 0):
        raise ValueError("operator B needs t < 0")
    if kernel == "solution":
        return backward_integral(times, times * F) / np.abs(times)
    if kernel == "s2":
        return backward_integral(times, times**2 * F) / times**2
    raise ValueError(f"unknown kernel {kernel!r}")


def eta_leading(times, t0, params: ModelParams, constants: str = "displayed") -> np.ndarray:
    """Backward solution of ``etadot - lambda eta = a e^{-2 xi_0}`` with ``eta(t0) = 0``."""
    a, _ = params.constants(constants)
    x0, _ = xi0(np.asarray(times), params, constants)
    return operator_a(times, a * np.exp(-2.0 * x0), t0, params)


def constant_c0(params: ModelParams, constants: str = "displayed", C: float = 1.0) -> float:
    """Envelope ``C_0 = 2a/(C b)`` for ``sup |t| |eta|``."""
    a, b = params.constants(constants)
    return 2.0 * a / (C * b)


# ---------------------------------------------------------------------------
# fixed point driver


@dataclass
class FixedPointResult:
    x: object
    converged: bool
    iterations: int
    history: list[float] = field(default_factory=list)


def fixed_point(fmap: Callable, init, tol: float = 1e-10, max_iter: int = 100, damping: float = 0.5,
                norm: Callable | None = None) -> FixedPointResult:
    """Damped Picard iteration ``x <- (1 - damping) x + damping map(x)``.

    Convergence is declared when ``norm(map(x) - x) < tol``; ``norm`` defaults
    to the max norm.  On failure the last iterate is returned with
    ``converged=False``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    norm = norm or (lambda d: float(np.max(np.abs(d))))
    x = np.asarray(init, dtype=float) if not callable(getattr(init, "copy", None)) else init.copy()
    hist = []
    for k in range(1, max_iter + 1):
        mx = fmap(x)
        dist = norm(np.asarray(mx) - np.asarray(x))
        hist.append(dist)
        x = (1 - damping) * np.asarray(x) + damping * np.asarray(mx)
        if dist < tol:
            return FixedPointResult(x, True, k, hist)
    return FixedPointResult(x, False, max_iter, hist)


# ---------------------------------------------------------------------------
# construction loop


@dataclass
class ConstructionReport:
    converged: bool
    iterations: list[dict] = field(default_factory=list)
    constants: str = "displayed"
    tol: float = 1e-6
    runtime: float = 0.0
    flags: list[str] = field(default_factory=list)

    @property
    def c_reduction(self) -> tuple[float, float]:
        """Initial over final ``sup|c_i|``."""
        if not self.iterations:
            return (float("nan"), float("nan"))
        a, b = self.iterations[0], self.iterations[-1]
        return (a["sup_c1"] / max(b["sup_c1"], 1e-300), a["sup_c2"] / max(b["sup_c2"], 1e-300))


def _batched_state(grid, params, xi, xidot, eta, etadot, psi, psi_t):
    col = lambda v: np.asarray(v, dtype=float)[:, None]  # noqa: E731
    return FlowState.build(grid, params, col(xi), col(xidot), col(eta), col(etadot), psi, psi_t)


def _defects(grid, params, path, psi, psi_t, d, chunk=400):
    """Per-time ``c1, c2`` and the normalized orthogonality defects of ``E`` and ``Q``.

    Returns a dict of arrays: ``c1, c2`` (cancel coefficients), ``e1, e2``
    (projections of ``E`` divided by ``-c_i``) and ``G1, G2`` (same for ``Q``).
    """
    K = path.times.size
    out = {k: np.empty(K) for k in ("c1", "c2", "e1", "e2", "G1", "G2", "m1", "m2")}
    wts = grid.weights
    x = grid.nodes
    for lo in range(0, K, chunk):
        sl = slice(lo, min(K, lo + chunk))
        st = _batched_state(grid, params, path.xi[sl], path.xidot[sl], path.eta[sl], path.etadot[sl], psi[sl], psi_t[sl])
        zq = st.z ** (1 - params.p)
        Mz = zq * _m_values(st, params)
        Q = _q_values(st, (d[sl, 0:1], d[sl, 1:2]), params)
        E = Mz + Q
        k1, k2 = _bubble_weights(x[None, :], path.xi[sl][:, None], params)
        pe = np.stack([(E * k1) @ wts, (E * k2) @ wts], axis=-1)
        pq = np.stack([(Q * k1) @ wts, (Q * k2) @ wts], axis=-1)
        pm = pe - pq
        gram = np.empty((pe.shape[0], 2, 2))
        for j, b in enumerate((st.z, st.zbar)):
            gram[:, 0, j] = (b * k1) @ wts
            gram[:, 1, j] = (b * k2) @ wts
        c = np.linalg.solve(gram, pe[..., None])[..., 0]
        out["c1"][sl], out["c2"][sl] = c[:, 0], c[:, 1]
        out["e1"][sl], out["e2"][sl] = -pe[:, 0] / params.c1, -pe[:, 1] / params.c2
        out["G1"][sl], out["G2"][sl] = -pq[:, 0] / params.c1, -pq[:, 1] / params.c2
        out["m1"][sl], out["m2"][sl] = -pm[:, 0] / params.c1, -pm[:, 1] / params.c2
        out.setdefault("Ebar", []).append(E - c[:, 0:1] * st.z - c[:, 1:2] * st.zbar)
    out["Ebar"] = np.concatenate(out["Ebar"], axis=0)
    return out


def construct_ancient(t_start: float, t0: float, outer_iters: int, controls: SolverControls | None,
                      params: ModelParams, grid: Grid | None = None, tol: float = 1e-6, damping: float = 0.5,
                      constants: str = "displayed", inner_iters: int = 1, leading_only: bool = False,
                      nu: float = 0.75, mu: float = 0.1, sigma: float | None = None, theta: float = 0.01,
                      norms: bool = True) -> tuple[ParamPath, Trajectory, ConstructionReport]:
    """Alternate between the perturbation ``psi`` and the parameters ``(eta, h)``.

    Each outer iteration (i) builds ``E(psi)`` on the current path, removes its
    ``z, zbar`` components with coefficients ``c1(t), c2(t)`` and solves the
    linear auxiliary problem from ``psi(t_start) = 0`` (``inner_iters`` Picard
    sweeps), then (ii) recomputes the normalized projections and updates
    ``eta = A(F_eta)`` and ``h = B(F_h)`` with damping.  It stops when
    ``sup|c1|`` and ``sup|c2|`` fall below ``tol`` or after ``outer_iters``
    parameter updates.

    With ``leading_only`` the perturbation is held at zero and the forcings are
    the leading terms only, so ``h = 0`` and ``eta`` solves
    ``etadot - lambda eta = a e^{-2 xi_0}``.
    """
    t_begin = time.perf_counter()
    controls = controls or SolverControls(dt=0.1, snapshot_stride=1)
    if controls.snapshot_stride != 1:
        controls = SolverControls(**{**controls.__dict__, "snapshot_stride": 1})
    if t0 > -50:
        raise ValueError("construction needs t0 <= -50")
    if t_start > t0:
        raise ValueError("t_start must not exceed t0")
    grid = grid or Grid(20.0, 2001)
    sigma = params.n + 2 if sigma is None else sigma
    a, b = params.constants(constants)
    lam = params.lambda_eta
    report = ConstructionReport(False, constants=constants, tol=tol)
    if t_start == t0:
        x0, x0d = xi0(np.array([t0]), params, constants)
        path = ParamPath(np.array([t0]), x0, x0d, np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))
        traj = Trajectory(grid, meta={"kind": "psi"})
        traj.append(t0, np.zeros(grid.N))
        report.converged = True
        return path, traj, report

    dt = controls.dt
    K = int(round((t0 - t_start) / dt))
    times = t_start + dt * np.arange(K + 1)
    times[-1] = t0
    x0, x0d = xi0(times, params, constants)
    h = np.zeros(K + 1)
    eta = eta_leading(times, t0, params, constants)
    hdot = np.zeros(K + 1)
    etadot = lam * eta + a * np.exp(-2 * x0)
    path = ParamPath(times, x0 + h, x0d + hdot, eta, etadot, h, hdot)
    psi = np.zeros((K + 1, grid.N))
    psi_t = np.zeros_like(psi)
    d = np.zeros((K + 1, 2))
    traj = Trajectory(grid, meta={"kind": "psi"})

    for it in range(outer_iters + 1):
        if not leading_only:
            for _ in range(inner_iters):
                defects = _defects(grid, params, path, psi, psi_t, d)
                lin = solve_linear_ancient(defects.pop("Ebar"), t_start, t0, controls, params, xi_of_t=path.at,
                                           grid=grid, record=True)
                psi = lin.array
                psi_t = np.gradient(psi, times, axis=0, edge_order=2)
                steps = lin.meta["steps"]
                d = np.zeros((K + 1, 2))
                # C applied on [t_k, t_{k+1}] uses psi(t_k); store it at t_k
                d[:-1, 0] = [s["d1"] for s in steps]
                d[:-1, 1] = [s["d2"] for s in steps]
                d[-1] = d[-2]
        defects = _defects(grid, params, path, psi, psi_t, d)
        defects.pop("Ebar")
        row = {
            "iteration": it,
            "sup_c1": float(np.max(np.abs(defects["c1"]))),
            "sup_c2": float(np.max(np.abs(defects["c2"]))),
            "t_sup_c1": float(times[np.argmax(np.abs(defects["c1"]))]),
            "t_sup_c2": float(times[np.argmax(np.abs(defects["c2"]))]),
            "sup_abs_t_eta": float(np.max(np.abs(times * path.eta))),
            "sup_t_mu_h": float(np.max(np.abs(times) ** mu * np.abs(path.h))),
            "sup_psi": float(np.max(np.abs(psi))),
        }
        pn_h = param_norms(times, path.h, mu, sigma, t0, derivative=path.hdot)
        pn_eta = param_norms(times, path.eta, 1.0, sigma, t0, derivative=path.etadot)
        row["h_norm"] = pn_h.h_norm
        row["eta_norm"] = pn_eta.eta_norm
        if norms and not leading_only and times[-1] - times[0] >= 1.0:
            rep = global_norms(times, psi, path.xi, nu, sigma, theta, t0, grid, params, psi_t=psi_t)
            row["psi_star_sigma"] = rep.star_sigma
            row["psi_star_2_sigma"] = rep.star_2_sigma
        report.iterations.append(row)
        log.info("outer %d: sup|c1|=%.3e sup|c2|=%.3e", it, row["sup_c1"], row["sup_c2"])
        if leading_only:
            report.converged = True
            break
        if row["sup_c1"] < tol and row["sup_c2"] < tol:
            report.converged = True
            break
        if it == outer_iters:
            break
        # parameter update: r_i + G_i equals the defect plus the current left-hand side
        e2 = np.exp(-2 * path.xi)
        F_eta = path.etadot - lam * path.eta + defects["e1"]
        F_h = path.hdot + path.h / times + defects["e2"]
        if not np.all(np.isfinite(F_eta)) or not np.all(np.isfinite(F_h)):
            report.flags.append("non-finite forcing")
            break
        eta_new = operator_a(times, F_eta, t0, params)
        h_new = operator_b(times, F_h, t0, params)
        etadot_new = lam * eta_new + F_eta
        hdot_new = F_h - h_new / times
        eta = (1 - damping) * path.eta + damping * eta_new
        etadot = (1 - damping) * path.etadot + damping * etadot_new
        h = (1 - damping) * path.h + damping * h_new
        hdot = (1 - damping) * path.hdot + damping * hdot_new
        path = ParamPath(times, x0 + h, x0d + hdot, eta, etadot, h, hdot)
        if np.any(path.xi < 0.5):
            report.flags.append("neck collapsed (xi < 0.5)")
            break

    if not report.converged:
        report.flags.append("not converged")
    for k in range(K + 1):
        traj.append(times[k], psi[k])
    traj.meta.update({"xi": path.xi.tolist()})
    report.runtime = time.perf_counter() - t_begin
    return path, traj, report
