"""Command-line driver: calibration, ghost-force diagnostics, single runs,
convergence sweeps, and artifact export.

Subcommands: equilibrate, ghost, run, bench, export.
Exit codes: 0 success, 2 partial (some rows failed), 1 hard error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cauchy_born import calibrate_potential
from .config import ConfigError, ExperimentConfig, load_config
from .lattice import DefectSpec
from .metrics import (defect_energy, discrete_energy_norm_error,
                      fit_convergence_slope)
from .models import build_model
from .potentials import make_potential
from .solvers import SolverConfig, minimize_energy, solve_force_balance
from .xyz import write_extended_xyz


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _csv_row(values) -> str:
    return ",".join(_fmt(v) for v in values)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.deterministic:
        cfg.deterministic = True
    if args.jobs is not None:
        cfg.jobs = args.jobs
        cfg.validate()
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _prepare(cfg: ExperimentConfig):
    pot = make_potential(cfg.potential_kind, **cfg.potential_params)
    pot, a = calibrate_potential(pot)
    return pot, a


def _solver_config(cfg: ExperimentConfig) -> SolverConfig:
    return SolverConfig(**cfg.solver)


def _solve(model, scfg: SolverConfig, overrides=()):
    if model.variant == "ATM" and "preconditioner" not in overrides:
        # the uniform atomistic Hessian is well conditioned; factorizing a
        # Laplacian for it costs more than it saves
        scfg = replace(scfg, preconditioner="none")
    if model.variant == "BQCF":
        return solve_force_balance(model, cfg=scfg)
    return minimize_energy(model, cfg=scfg)


def _build(cfg, pot, a, variant, r0, defect=None):
    defect = cfg.defect(a) if defect is None else defect
    return build_model(variant, pot, a,
                       r_domain=cfg.r_domain_ratio * r0 * a,
                       r0=r0 * a, r1=cfg.r1_ratio * r0 * a,
                       defect=defect, blend_profile=cfg.blend_profile,
                       grading_exponent=cfg.grading_exponent)


def _write_manifest(path: Path, cfg: ExperimentConfig, pot, a, extra=None):
    lines = [f"lattice_constant: {a:.15g}",
             f"potential: {cfg.potential_kind}"]
    for k, v in sorted(vars(pot).items()):
        lines.append(f"potential.{k}: {_fmt(v)}")
    for k, v in sorted(vars(cfg).items()):
        lines.append(f"config.{k}: {v}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {_fmt(v)}")
    path.write_text("\n".join(lines) + "\n")


def _site_beta(model):
    if model.blend is None:
        return np.zeros(model.lattice.n_sites)
    return model.blend(model.lattice.positions)


def cmd_equilibrate(cfg: ExperimentConfig, out: Path, verbose: bool) -> int:
    pot, a = _prepare(cfg)
    _write_manifest(out / "equilibrate_manifest.txt", cfg, pot, a)
    print(f"a* = {a:.15g}")
    return 0


def cmd_ghost(cfg: ExperimentConfig, out: Path, verbose: bool) -> int:
    pot, a = _prepare(cfg)
    defect = DefectSpec(kind="none")
    rows = []
    hist_rows = []
    for r0 in cfg.r0_values:
        for name in cfg.models:
            model = _build(cfg, pot, a, name, r0, defect=defect)
            x0 = model.zero_displacement()
            g = model.residual(x0) if name == "BQCF" else model.gradient(x0)
            ginf = float(np.abs(g).max()) if g.size else 0.0
            gl2 = float(np.linalg.norm(g))
            rows.append((name, r0 * a, model.n_free, ginf, gl2))
            hist_rows.extend(_ghost_histogram(model, g, name, r0 * a))
            if verbose:
                print(f"{name} r0={r0}a ndof={model.n_free} |g|inf={ginf:.3e}")
    _write_csv(out / "ghost.csv",
               "model,r0,ndof,ghost_inf_norm,ghost_l2_norm", rows)
    _write_csv(out / "ghost_hist.csv",
               "model,r0,bin_lo,bin_hi,mass", hist_rows)
    return 0


def _ghost_histogram(model, g, name, r0, nbins=24):
    forces = model.expand(g)
    r = np.linalg.norm(model.node_positions, axis=1)
    mag = np.linalg.norm(forces, axis=1)
    total = mag.sum()
    edges = np.linspace(0.0, r.max() + 1e-12, nbins + 1)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r < hi)
        mass = float(mag[sel].sum() / total) if total > 0 else 0.0
        rows.append((name, r0, float(lo), float(hi), mass))
    return rows


def cmd_run(cfg: ExperimentConfig, out: Path, verbose: bool,
            model_name: str, r0: float) -> int:
    pot, a = _prepare(cfg)
    scfg = _solver_config(cfg)
    scfg.verbose = verbose
    model = _build(cfg, pot, a, model_name, r0)
    res = _solve(model, scfg, cfg.solver)
    tag = f"{model_name.lower()}_r0_{_fmt(r0)}"
    u_sites = model.displacement_at_sites(res.displacement)
    write_extended_xyz(out / f"{tag}.xyz", model.lattice.positions,
                       displacements=u_sites, beta=_site_beta(model),
                       flags=model.lattice.site_flags,
                       comment=f"{model_name} r0={_fmt(r0 * a)}")
    extra = {"model": model_name, "r0": r0 * a, "ndof": model.n_free,
             "iterations": res.iterations,
             "residual_norm": res.residual_norm,
             "converged": res.converged,
             "wall_time_seconds": 0.0 if cfg.deterministic else res.wall_time}
    if model_name != "BQCF":
        extra["defect_energy"] = defect_energy(model, res.displacement)
    _write_manifest(out / f"{tag}_manifest.txt", cfg, pot, a, extra)
    if not res.converged:
        print(f"solver did not converge: {res.message}", file=sys.stderr)
        return 2
    if verbose:
        print(f"{model_name} r0={r0}a: {res.iterations} iterations, "
              f"|g|inf = {res.residual_norm:.3e}")
    return 0


def cmd_bench(cfg: ExperimentConfig, out: Path, verbose: bool) -> int:
    if len(cfg.r0_values) < 3:
        raise ConfigError("r0_values: bench needs at least 3 radii")
    pot, a = _prepare(cfg)
    scfg = _solver_config(cfg)
    defect = cfg.defect(a)

    ref_radius = cfg.reference_ratio * cfg.r_domain_ratio * max(cfg.r0_values) * a
    ref_tol = min(scfg.gradient_tolerance, 1e-9)
    ref_overrides = {"preconditioner": "none", **cfg.solver,
                     "gradient_tolerance": ref_tol}
    ref_cfg = SolverConfig(**ref_overrides)
    if verbose:
        print(f"reference ATM solve, radius {ref_radius / a:.3g}a ...")
    ref_model = build_model("ATM", pot, a, r_domain=ref_radius, defect=defect,
                            grading_exponent=cfg.grading_exponent)
    ref_res = minimize_energy(ref_model, cfg=ref_cfg)
    if not ref_res.converged:
        raise RuntimeError(f"reference solve failed: {ref_res.message}")

    rows = []
    flagged = []
    series = {name: [] for name in cfg.models}
    for r0 in cfg.r0_values:
        for name in cfg.models:
            model = _build(cfg, pot, a, name, r0, defect=defect)
            t0 = time.perf_counter()
            res = _solve(model, scfg, cfg.solver)
            wall = 0.0 if cfg.deterministic else time.perf_counter() - t0
            # error over everything inside r1: the whole region with
            # atomistic content, excluding only the outer truncation band
            err = discrete_energy_norm_error(model, res.displacement,
                                             ref_model, ref_res.displacement,
                                             cfg.r1_ratio * r0 * a)
            if name == "BQCF":
                err_energy = 0.0
                ghost = float(np.abs(model.residual(model.zero_displacement())).max())
            else:
                e_ref = defect_energy(ref_model, ref_res.displacement)
                err_energy = abs(defect_energy(model, res.displacement) - e_ref)
                ghost = _homogeneous_ghost(cfg, pot, a, name, r0)
            rows.append((name, r0 * a, model.n_free, err, err_energy,
                         ghost, res.iterations, wall))
            if res.converged:
                series[name].append((model.n_free, err))
            else:
                flagged.append(f"# non-converged: {name} r0={_fmt(r0 * a)} ({res.message})")
            if verbose:
                print(f"{name} r0={r0}a ndof={model.n_free} err_grad={err:.3e} "
                      f"iters={res.iterations}")
    footer = list(flagged)
    for name in cfg.models:
        if len(series[name]) >= 3:
            slope = fit_convergence_slope(series[name])
            footer.append(f"# slope,{name},{_fmt(slope)}")
    _write_csv(out / "bench.csv",
               "model,r0,ndof,err_grad,err_energy,ghost_inf_norm,iterations,wall_time_seconds",
               rows, footer=footer)
    _write_gnuplot(out / "bench.gp", cfg.models)
    return 2 if flagged else 0


def _homogeneous_ghost(cfg, pot, a, name, r0):
    model = _build(cfg, pot, a, name, r0, defect=DefectSpec(kind="none"))
    g = model.gradient(model.zero_displacement())
    return float(np.abs(g).max()) if g.size else 0.0


def cmd_export(cfg: ExperimentConfig, out: Path, verbose: bool) -> int:
    """Write the unrelaxed configurations (positions, beta, flags) as XYZ."""
    pot, a = _prepare(cfg)
    for r0 in cfg.r0_values:
        for name in cfg.models:
            model = _build(cfg, pot, a, name, r0)
            tag = f"config_{name.lower()}_r0_{_fmt(r0)}"
            write_extended_xyz(out / f"{tag}.xyz", model.lattice.positions,
                               beta=_site_beta(model),
                               flags=model.lattice.site_flags,
                               comment=f"{name} r0={_fmt(r0 * a)} unrelaxed")
            if verbose:
                print(f"wrote {tag}.xyz ({model.lattice.n_sites} sites)")
    _write_manifest(out / "export_manifest.txt", cfg, pot, a)
    return 0


def _write_csv(path: Path, header: str, rows, footer=()):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(_csv_row(row) + "\n")
        for line in footer:
            fh.write(line + "\n")


def _write_gnuplot(path: Path, models):
    lines = ["set datafile separator ','",
             "set logscale xy",
             "set xlabel 'DOF'",
             "set ylabel 'energy-norm error'",
             "set key left bottom"]
    plots = [f"\"< grep '^{m},' bench.csv\" using 3:4 with linespoints title '{m}'"
             for m in models]
    lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="blendqc",
                                     description="Atomistic/continuum coupling benchmarks")
    parser.add_argument("--config", help="JSON experiment configuration")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--deterministic", action="store_true",
                        help="byte-reproducible outputs (zeroed wall times)")
    parser.add_argument("--jobs", type=int, default=None,
                        help="sweep parallelism limit (runs are serialized)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("equilibrate", help="calibrate the lattice constant")
    sub.add_parser("ghost", help="ghost-force report on the defect-free lattice")
    p_run = sub.add_parser("run", help="single model solve")
    p_run.add_argument("--model", required=True)
    p_run.add_argument("--r0", type=float, required=True,
                       help="core radius in lattice-constant units")
    sub.add_parser("bench", help="convergence sweep against the ATM reference")
    sub.add_parser("export", help="write unrelaxed configurations as XYZ")

    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "equilibrate":
            return cmd_equilibrate(cfg, out, args.verbose)
        if args.command == "ghost":
            return cmd_ghost(cfg, out, args.verbose)
        if args.command == "run":
            return cmd_run(cfg, out, args.verbose, args.model, args.r0)
        if args.command == "bench":
            return cmd_bench(cfg, out, args.verbose)
        if args.command == "export":
            return cmd_export(cfg, out, args.verbose)
        raise ValueError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
