"""Command-line interface: ``bubbletower <command> [--config FILE] [--key value ...]``.

Commands: constants, spectrum, evolve, construct, norms, diagnose, sweep.
Exit codes: 0 success, 2 solver failure, 3 configuration or input error,
4 construction not converged.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .bundle import load_bundle, save_bundle, write_csv, write_manifest
from .diagnostics import curvature_report, neck_distance, type2_functional
from .flow import SolverControls, Trajectory, evolve, neck_path
from .numerics import global_norms
from .params import construct_ancient, xi0
from .profiles import Field, Grid, ModelParams, ansatz_z, bubble
from .spectral import build_l0, eigenpairs, spectrum_table

__all__ = ["RunConfig", "ConfigError", "load_config", "main", "EXIT_OK", "EXIT_SOLVER", "EXIT_CONFIG",
           "EXIT_NOT_CONVERGED"]

log = logging.getLogger("bubbletower")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 2, 3, 4
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


@dataclass
class RunConfig:
    """All tunable run parameters; every field is also a ``--flag``."""

    n: int = 4
    L: float = 20.0
    N: int = 2001
    dt: float = 0.01
    path_dt: float = 0.1
    t_start: float = -2000.0
    duration: float = 800.0
    t0: float = -100.0
    horizon: float = 300.0
    nu: float = 0.75
    mu: float = 0.1
    gamma: float = 0.2
    sigma: float = 6.0
    theta: float = 0.05
    delta: float = 0.5
    tol: float = 1e-6
    newton_tol: float = 1e-10
    damping: float = 0.5
    outer_iters: int = 8
    snapshot_stride: int = 100
    renorm_interval: float = 1.0
    stencil_order: int = 6
    constants: str = "displayed"
    output_dir: str = "runs"
    seed: int = 0

    def validate(self) -> "RunConfig":
        errs = []
        if self.n < 3:
            errs.append("n must be >= 3")
        if self.N < 5 or self.N % 2 == 0:
            errs.append("N must be odd and >= 5")
        if not (self.L > 0 and self.dt > 0 and self.path_dt > 0 and self.duration >= 0 and self.horizon >= 0):
            errs.append("L, dt, path_dt must be positive and duration, horizon nonnegative")
        if self.sigma < 2:
            errs.append("sigma must be >= 2")
        if not 0.5 < self.nu < 1:
            errs.append("nu must lie in (1/2, 1)")
        if not 0 < self.mu < min(2 * self.nu - 1, self.gamma):
            errs.append(f"mu must lie in (0, min(2 nu - 1, gamma)) = (0, {min(2 * self.nu - 1, self.gamma):.4g})")
        if not 0 < self.theta <= 0.1:
            errs.append("theta must lie in (0, 0.1]")
        if not 0 < self.delta < 1:
            errs.append("delta must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            errs.append("damping must lie in (0, 1]")
        if self.t0 >= 0 or self.t_start >= 0:
            errs.append("t0 and t_start must be negative")
        if self.constants not in ("displayed", "effective"):
            errs.append("constants must be 'displayed' or 'effective'")
        if self.stencil_order not in (2, 4, 6):
            errs.append("stencil_order must be 2, 4 or 6")
        if self.snapshot_stride < 1 or self.outer_iters < 0:
            errs.append("snapshot_stride >= 1 and outer_iters >= 0 required")
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        lines = [f"schema_version = {SCHEMA_VERSION}"]
        lines += [f"{k} = {v}" for k, v in self.as_dict().items()]
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip().strip('"')
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def load_config(path: Path | None, overrides: dict | None = None) -> RunConfig:
    """Parse a flat ``key = value`` file (``#`` comments) and apply overrides."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        seen_schema = False
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key == "schema_version":
                if raw != str(SCHEMA_VERSION):
                    raise ConfigError(f"unsupported schema_version {raw}")
                seen_schema = True
                continue
            if key not in _TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
        if not seen_schema:
            raise ConfigError("config file lacks schema_version")
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, str(v))
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# commands


def _outdir(cfg: RunConfig, sub: str) -> Path:
    d = Path(cfg.output_dir) / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_constants(cfg: RunConfig, args) -> int:
    P = ModelParams(cfg.n)
    I = P.integrals
    rows = [("p", P.p, 0.0), ("beta", P.beta, 0.0), ("k_n", P.k_n, 0.0), ("lambda", P.lambda_eta, 0.0),
            ("a", P.a, I["wp_exp_pos"][1] + I["wp_exp_neg"][1] + I["wp1"][1]),
            ("b", P.b, I["wp_exp_pos"][1] + I["wprime2_wpm1"][1]),
            ("a_eff", P.a_eff, I["wp_exp_pos"][1] + I["wp1"][1]),
            ("b_eff", P.b_eff, I["wp_exp_pos"][1] + I["wprime2_wpm1"][1]),
            ("c1", P.c1, I["wp1"][1]), ("c2", P.c2, I["wprime2_wpm1"][1])]
    for name, val, err in rows:
        print(f"{name:8s} {val: .12g}  (quadrature error <= {err:.1e})")
    out = _outdir(cfg, "constants")
    path = write_csv(out / "constants.csv", ["name", "value", "abserr"], rows)
    write_manifest(out, "constants", cfg.as_dict(), [path])
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, args) -> int:
    P = ModelParams(cfg.n)
    op = build_l0(Grid(cfg.L, cfg.N), P)
    table = spectrum_table(eigenpairs(op, k=args.k), P)
    for r in table:
        print(f"{r['index']:3d} {r['lambda']: .10f}")
    out = _outdir(cfg, "spectrum")
    cols = list(table[0].keys())
    path = write_csv(out / "spectrum.csv", cols, table)
    write_manifest(out, "spectrum", cfg.as_dict(), [path])
    return EXIT_OK


def _initial(cfg: RunConfig, initial: str, grid: Grid, P: ModelParams) -> tuple[Field, bool]:
    x = grid.nodes
    if initial == "two-bubble":
        xi, _ = xi0(cfg.t_start, P, cfg.constants)
        return ansatz_z(grid, xi, P), True
    if initial == "bubble":
        return Field(grid, bubble(x, 0.0, P), True), False
    if initial.startswith("constant:"):
        c = float(initial.split(":", 1)[1])
        if c <= 0:
            raise ConfigError("constant initial state must be positive")
        return Field(grid, np.full(grid.N, c), True), False
    if initial.startswith("file:"):
        from .bundle import read_csv

        _, data = read_csv(Path(initial.split(":", 1)[1]))
        if data.shape[0] != grid.N:
            raise ConfigError("initial file does not match the grid")
        return Field(grid, data[:, -1]), False
    raise ConfigError(f"unknown initial state {initial!r}")


def _curvature_rows(traj: Trajectory, P: ModelParams, delta: float, xis=None) -> list[dict]:
    rows = []
    for i, t in enumerate(traj.times):
        u = traj.field(i)
        if np.any(u.values <= 0):
            continue
        win = (-xis[i], xis[i]) if xis is not None and xis[i] > 0 else None
        rep = curvature_report(u, t, P, x_window=win)
        nd = float("nan")
        if xis is not None and xis[i] > 0:
            half = xis[i] * (1 - delta)
            nd = neck_distance(u, -half, half, P)
        rows.append({**rep.summary(), "neck_distance": nd})
    return rows


def cmd_evolve(cfg: RunConfig, args) -> int:
    P = ModelParams(cfg.n)
    grid = Grid(cfg.L, cfg.N)
    u0, two = _initial(cfg, args.initial, grid, P)
    controls = SolverControls(dt=cfg.dt, newton_tol=cfg.newton_tol, snapshot_stride=cfg.snapshot_stride,
                              stencil_order=cfg.stencil_order, symmetric=u0.check_even(), boundary="neumann",
                              renorm_interval=cfg.renorm_interval if two and cfg.renorm_interval > 0 else None,
                              constants=cfg.constants)
    t_end = cfg.t_start + cfg.duration
    traj = evolve(u0, cfg.t_start, t_end, controls, P)
    out = _outdir(cfg, "evolve")
    save_bundle(traj, out / "bundle", meta={"initial": args.initial, "config": cfg.as_dict()})
    outputs = [out / "bundle" / "manifest.json"]
    xis = None
    if two:
        npth = neck_path(traj, P)
        _, b = P.constants(cfg.constants)
        xis = npth["xi"]
        rows = [{"t": t, "xi_hat": x, "xidot_hat": d, "minus_b_e2xi": -b * np.exp(-2 * x)}
                for t, x, d in zip(npth["t"], npth["xi"], npth["xidot"])]
        outputs.append(write_csv(out / "neck_law.csv", ["t", "xi_hat", "xidot_hat", "minus_b_e2xi"], rows))
    rows = _curvature_rows(traj, P, cfg.delta, xis)
    outputs.append(write_csv(out / "curvature_summary.csv",
                             ["t", "min_R11", "max_R11", "type2_sample", "neck_distance"], rows))
    write_manifest(out, "evolve", cfg.as_dict(), outputs, {"outcome": traj.outcome, "initial": args.initial})
    print(f"evolve: outcome={traj.outcome}, {len(traj)} snapshots -> {out}")
    return EXIT_OK if traj.outcome == "ok" else EXIT_SOLVER


def cmd_construct(cfg: RunConfig, args) -> int:
    P = ModelParams(cfg.n)
    grid = Grid(cfg.L, cfg.N)
    controls = SolverControls(dt=cfg.path_dt, snapshot_stride=1, constants=cfg.constants)
    t_start = cfg.t0 - cfg.horizon
    try:
        path, traj, report = construct_ancient(t_start, cfg.t0, cfg.outer_iters, controls, P, grid=grid,
                                               tol=cfg.tol, damping=cfg.damping, constants=cfg.constants,
                                               leading_only=args.leading_only, nu=cfg.nu, mu=cfg.mu,
                                               sigma=cfg.sigma, theta=cfg.theta)
    except ValueError as exc:
        # positivity loss of ztilde + psi inside the loop
        print(f"construct failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = _outdir(cfg, "construct")
    cols = ["times", "xi", "xidot", "eta", "etadot", "h", "hdot"]
    d = path.as_dict()
    p_csv = write_csv(out / "path.csv", ["t"] + cols[1:], zip(*(d[c] for c in cols)))
    # four samples per unit window keep the window norms computable
    stride = max(1, int(round(0.25 / cfg.path_dt)))
    keep = list(range(0, len(traj), stride))
    if keep[-1] != len(traj) - 1:
        keep.append(len(traj) - 1)
    sub = Trajectory(grid, meta={"kind": "psi"})
    for i in keep:
        sub.append(traj.times[i], traj.values[i])
    save_bundle(sub, out / "psi_bundle", meta={"kind": "psi", "xi": [float(path.xi[i]) for i in keep],
                                               "t0": cfg.t0, "config": cfg.as_dict()})
    rep = {"converged": report.converged, "constants": report.constants, "tol": report.tol,
           "runtime": report.runtime, "flags": report.flags, "iterations": report.iterations}
    r_json = out / "convergence.json"
    r_json.write_text(json.dumps(rep, indent=2, default=float))
    write_manifest(out, "construct", cfg.as_dict(), [p_csv, r_json, out / "psi_bundle" / "manifest.json"])
    for row in report.iterations:
        print(f"outer {row['iteration']}: sup|c1|={row['sup_c1']:.3e} sup|c2|={row['sup_c2']:.3e}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_norms(cfg: RunConfig, args) -> int:
    P = ModelParams(cfg.n)
    traj, manifest = load_bundle(Path(args.bundle))
    times = np.asarray(traj.times)
    xi_path = manifest.get("meta", {}).get("xi")
    xi_path = np.asarray(xi_path) if xi_path is not None else xi0(times, P, cfg.constants)[0]
    t0 = manifest.get("meta", {}).get("t0", float(times[-1]))
    rep = global_norms(times, traj.array, xi_path, cfg.nu, cfg.sigma, cfg.theta, t0, traj.grid, P)
    out = _outdir(cfg, "norms")
    table = rep.table()
    cols = list(table[0].keys()) if table else ["tau"]
    path = write_csv(out / "norms.csv", cols, table)
    write_manifest(out, "norms", cfg.as_dict(), [path], {"star_sigma": rep.star_sigma,
                                                         "star_2_sigma": rep.star_2_sigma})
    print(f"norms: star_sigma={rep.star_sigma:.4e} star_2_sigma={rep.star_2_sigma:.4e}")
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig, args) -> int:
    P = ModelParams(cfg.n)
    traj, manifest = load_bundle(Path(args.bundle))
    out = _outdir(cfg, "diagnose")
    outputs = []
    for i, t in enumerate(traj.times):
        if np.any(traj.values[i] <= 0):
            log.warning("snapshot %d (t=%g) is not positive; skipped", i, t)
            continue
        rep = curvature_report(traj.field(i), t, P)
        outputs.append(write_csv(out / f"curvature_{i:05d}.csv", ["x", "R11", "Rjj", "u"],
                                 zip(traj.grid.nodes, rep.R11.values, rep.Rjj.values, traj.values[i])))
    xis = None
    try:
        xis = neck_path(traj, P)["xi"]
    except (ValueError, RuntimeError):
        pass
    rows = _curvature_rows(traj, P, cfg.delta, xis)
    outputs.append(write_csv(out / "summary.csv", ["t", "min_R11", "max_R11", "type2_sample", "neck_distance"], rows))
    extra = {}
    try:
        pos = [i for i in range(len(traj)) if np.all(traj.values[i] > 0)]
        sub = Trajectory(traj.grid)
        for i in pos:
            sub.append(traj.times[i], traj.values[i])
        wins = None if xis is None else [(-xis[i], xis[i]) for i in pos]
        fit = type2_functional(sub, P, x_windows=wins)
        extra = {"type2_slope": fit.slope, "type2_verdict": fit.verdict, "gauge": fit.gauge, "note": fit.note}
    except ValueError as exc:
        extra = {"type2": f"not fitted: {exc}"}
    write_manifest(out, "diagnose", cfg.as_dict(), outputs, extra)
    print(f"diagnose: {len(traj)} snapshots -> {out}")
    return EXIT_OK


COMMANDS = {"constants": cmd_constants, "spectrum": cmd_spectrum, "evolve": cmd_evolve,
            "construct": cmd_construct, "norms": cmd_norms, "diagnose": cmd_diagnose}


def cmd_sweep(cfg: RunConfig, args) -> int:
    """Run ``args.target`` once per value of ``args.param`` in worker threads."""
    if args.target not in COMMANDS:
        raise ConfigError(f"cannot sweep {args.target!r}")
    if args.param not in _TYPES:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("no sweep values")

    def one(v):
        sub = dataclasses.replace(cfg, **{args.param: _coerce(args.param, v)},
                                  output_dir=str(Path(cfg.output_dir) / f"sweep_{args.param}_{v}"))
        sub.validate()
        return COMMANDS[args.target](sub, args)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        codes = list(pool.map(one, values))
    return max(codes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubbletower", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None)
    for f in fields(RunConfig):
        common.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None)
    subs.add_parser("constants", parents=[common])
    sp = subs.add_parser("spectrum", parents=[common])
    sp.add_argument("--k", type=int, default=3)
    ev = subs.add_parser("evolve", parents=[common])
    ev.add_argument("--initial", default="two-bubble")
    co = subs.add_parser("construct", parents=[common])
    co.add_argument("--leading-only", action="store_true")
    for name in ("norms", "diagnose"):
        p = subs.add_parser(name, parents=[common])
        p.add_argument("--bundle", required=True)
    sw = subs.add_parser("sweep", parents=[common])
    sw.add_argument("--target", default="constants")
    sw.add_argument("--param", default="n")
    sw.add_argument("--values", required=True)
    sw.add_argument("--workers", type=int, default=4)
    sw.add_argument("--k", type=int, default=3)
    sw.add_argument("--initial", default="two-bubble")
    sw.add_argument("--leading-only", action="store_true")
    sw.add_argument("--bundle", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
        cfg = load_config(args.config, overrides)
        handler = cmd_sweep if args.command == "sweep" else COMMANDS[args.command]
        return handler(cfg, args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
