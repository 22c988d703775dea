"""Command-line front end.

Subcommands: ``analyze`` (chain fixed point + stability verdicts),
``design-region`` (constant-law stability region scan), ``thresholds``
(trigger-level extraction and density export) and ``simulate`` (slot-level
Monte Carlo). Every command reads one YAML experiment file and writes CSV
tables plus rendered figures into the output directory.

Exit codes: ``analyze`` returns 0 when every loop is GuaranteedStable and
1 otherwise; all commands return 2 on configuration or numerical errors.
Simulation divergence is a finding, not an error (exit 0).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import plots
from .chain import ConvergenceError, TruncationError, solve_network_fixed_point
from .config import ConfigError, ExperimentConfig, load_config
from .density import DegenerateTruncationError, SupportError, evolve
from .model import TriggerPolicy
from .simulate import SimConfig, empirical_stats, run_network
from .stability import report_for_network
from .synthesis import extract_thresholds, scan_region, solve_threshold_network

__all__ = ["main"]

_MASS_FLOOR = 1e-14


def _max_threads() -> int:
    raw = os.environ.get("EVNETD_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n) if n > 0 else (os.cpu_count() or 1)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _say(quiet: bool, *parts):
    if not quiet:
        print(*parts)


def _solve_for_config(cfg: ExperimentConfig):
    """Chain solution plus the effective per-loop policies.

    A threshold-only policy first goes through the threshold-to-probability
    map selected by ``conditioning``."""
    if cfg.policy.p_gamma is None:
        sol, pg, _ = solve_threshold_network(
            cfg.plant, cfg.policy.thresholds, cfg.crm.p_alpha, cfg.M,
            cfg.crm.r_max, D_max=cfg.D_max, D_phi=cfg.D_phi,
            conditioning=cfg.conditioning, spec=cfg.grid,
            chain_tol=cfg.fixed_point_tol, mass_tol=cfg.mass_tol)
        policy = TriggerPolicy(family="table", p_gamma=pg,
                               thresholds=cfg.policy.thresholds)
    else:
        sol = solve_network_fixed_point(cfg.network(), cfg.fixed_point_tol)
        policy = cfg.policy
    return sol, [policy] * cfg.M


def _write_chain_csv(sol, path: Path):
    rows = []
    for j in range(sol.pi_I.shape[0]):
        for d in range(sol.pi_I.shape[1]):
            rows.append([j, d, f"{sol.pi_I[j, d]:.17g}",
                         f"{sol.pi_T[j, d]:.17g}"])
    _write_csv(path, ["loop", "d", "pi_I", "pi_T"], rows)


def cmd_analyze(cfg: ExperimentConfig, out: Path, quiet: bool) -> int:
    sol, policies = _solve_for_config(cfg)
    report = report_for_network(sol, [cfg.plant] * cfg.M, policies, cfg.crm)

    _write_chain_csv(sol, out / "chain.csv")
    rows = []
    for j, e in enumerate(report.loops):
        rows.append([j, e.verdict, f"{e.tail_ratio_limsup:.10g}",
                     f"{e.ratio_bound:.10g}", f"{e.margin:.10g}",
                     f"{e.reliability_floor:.10g}", f"{e.kappa_alpha:.10g}",
                     f"{e.variance_bound:.10g}", f"{e.constant_law_lhs:.10g}",
                     f"{e.constant_law_rhs:.10g}"])
    _write_csv(out / "stability.csv",
               ["loop", "verdict", "tail_ratio", "bound", "margin",
                "reliability_floor", "kappa_alpha", "variance_bound",
                "constant_law_lhs", "constant_law_rhs"], rows)
    plots.plot_chain(sol, out / "chain.png")

    for j, e in enumerate(report.loops):
        _say(quiet, f"loop {j}: {e.verdict}  reliability="
                    f"{sol.reliability[j]:.6f}  tail_ratio="
                    f"{e.tail_ratio_limsup:.4f} (bound {e.ratio_bound:.4f})")
    return 0 if report.all_guaranteed() else 1


def cmd_design_region(cfg: ExperimentConfig, out: Path, quiet: bool) -> int:
    if cfg.region is None:
        raise ConfigError("design-region needs a 'region' section")
    r = cfg.region
    g = np.linspace(r["gamma_min"], r["gamma_max"], r["n_gamma"])
    a = np.linspace(r["alpha_min"], r["alpha_max"], r["n_alpha"])
    rhos = r["rho"]

    def scan(rho):
        return scan_region(g, a, cfg.M, cfg.crm.r_max, rho,
                           tol=cfg.fixed_point_tol)

    workers = min(len(rhos), _max_threads())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            regions = list(pool.map(scan, rhos))
    else:
        regions = [scan(rho) for rho in rhos]

    for rho, region in zip(rhos, regions):
        tag = "" if len(rhos) == 1 else f"_rho{rho:g}"
        rows = []
        for i, pg in enumerate(region.gamma_axis):
            for k, pa in enumerate(region.alpha_axis):
                ok = bool(region.converged[i, k])
                rows.append([
                    f"{pg:.10g}", f"{pa:.10g}",
                    f"{region.reliability[i, k]:.10g}" if ok else "nan",
                    f"{region.p_loss[i, k]:.10g}" if ok else "nan",
                    bool(region.stable[i, k]) and ok,
                    f"{region.margin[i, k]:.10g}" if ok else "nan",
                ])
        _write_csv(out / f"region{tag}.csv",
                   ["p_gamma", "p_alpha", "reliability", "p_loss", "stable",
                    "margin"], rows)
        plots.plot_region(region, out / f"region{tag}.png")
        _say(quiet, f"rho={rho:g}: {region.stable_cell_count()} of "
                    f"{region.stable.size} cells stable")
    return 0


def _write_densities(evo, out: Path, D: int):
    for d in range(1, min(D, len(evo.idle) - 1) + 1):
        for name, grids in (("idle", evo.idle), ("aux", evo.auxiliary)):
            g = grids[d]
            _write_csv(out / f"density_{name}_d{d}.csv", ["x", "value"],
                       [[f"{x:.10g}", f"{v:.10g}"]
                        for x, v in zip(g.centers(), g.values)])
            _write_csv(out / f"cdf_{name}_d{d}.csv", ["x", "value"],
                       [[f"{x:.10g}", f"{v:.10g}"]
                        for x, v in zip(g.edges(), g.cdf_at_edges())])


def cmd_thresholds(cfg: ExperimentConfig, out: Path, quiet: bool) -> int:
    if cfg.thresholds is None:
        raise ConfigError("thresholds needs a 'thresholds' section")
    cfg.require_scalar("threshold extraction")
    D = cfg.thresholds["D"]
    p_override = cfg.thresholds["p_override"]
    a = float(cfg.plant.A[0, 0])
    w = float(np.trace(cfg.plant.Rw))

    if p_override is not None:
        # fixed failure weight, no network fixed point (sensitivity studies)
        kwargs = ({"thresholds": cfg.policy.thresholds}
                  if cfg.policy.p_gamma is None
                  else {"p_gamma_targets": cfg.policy.p_gamma})
        evo = evolve(a, w, p_alpha=cfg.crm.p_alpha, p=p_override, D=D,
                     spec=cfg.grid, **kwargs)
        levels = evo.thresholds
    elif cfg.policy.p_gamma is not None:
        levels, evo, point = extract_thresholds(
            cfg.plant, cfg.policy.p_gamma, cfg.crm.p_alpha, cfg.M,
            cfg.crm.r_max, D, spec=cfg.grid, tol=cfg.fixed_point_tol)
        if point is not None:
            _say(quiet, f"design point: reliability={point.reliability:.6f} "
                        f"p_loss={point.p_loss:.6f} stable={point.stable}")
    else:
        _, _, evo = solve_threshold_network(
            cfg.plant, cfg.policy.thresholds, cfg.crm.p_alpha, cfg.M,
            cfg.crm.r_max, D_max=cfg.D_max, D_phi=max(D, 1),
            conditioning="mixed", spec=cfg.grid,
            chain_tol=cfg.fixed_point_tol, mass_tol=cfg.mass_tol)
        levels = evo.thresholds

    _write_csv(out / "thresholds.csv", ["d", "delta"],
               [[d + 1, f"{lv:.10g}"] for d, lv in enumerate(levels[:D])])
    _write_densities(evo, out, D)
    plots.plot_thresholds(levels[:D], out / "thresholds.png")
    plots.plot_cdf_pairs(evo, out / "cdf_pairs.png")
    for d, lv in enumerate(levels[:D]):
        _say(quiet, f"d={d + 1:3d}  delta={lv:.6f}  "
                    f"p_gamma={evo.p_gamma_realized[d]:.6f}")
    return 0


def cmd_simulate(cfg: ExperimentConfig, out: Path, quiet: bool,
                 seed: int | None) -> int:
    if cfg.simulate is None:
        raise ConfigError("simulate needs a 'simulate' section")
    s = cfg.simulate
    if s["trace_csv"]:
        cfg.require_scalar("the full state trace CSV")
    sim = SimConfig(net=cfg.network(), horizon=s["horizon"],
                    seed=s["seed"] if seed is None else seed,
                    record_states=s["record_states"])
    trace = run_network(sim)
    stats = empirical_stats(trace, s["D_bins"])
    sol, _ = _solve_for_config(cfg)

    msq = stats.mean_square_state
    rows = []
    for j in range(trace.M):
        rows.append([j, f"{stats.reliability[j]:.10g}",
                     f"{msq[j]:.10g}" if msq is not None else "nan",
                     int(stats.events[j].sum()), int(trace.delta[:, j].sum()),
                     bool(stats.diverged[j])])
    _write_csv(out / "summary.csv",
               ["loop", "reliability", "mean_square_state", "events",
                "successes", "diverged"], rows)

    rows = []
    for j in range(trace.M):
        for d in range(1, s["D_bins"] + 1):
            rows.append([j, d, f"{stats.p_gamma_hat[j, d - 1]:.10g}",
                         int(stats.visits[j, d - 1]),
                         bool(stats.low_confidence[j, d - 1])])
    _write_csv(out / "p_gamma_hat.csv",
               ["loop", "d", "p_gamma_hat", "visits", "low_confidence"], rows)

    rows = [[j, d, f"{stats.delay_hist[j, d]:.10g}"]
            for j in range(trace.M) for d in range(s["D_bins"] + 1)]
    _write_csv(out / "delay_hist.csv", ["loop", "d", "prob"], rows)

    if s["trace_csv"]:
        n = trace.instants
        rows = []
        for t in range(n):
            for j in range(trace.M):
                rows.append([t, j, f"{trace.x[t, j]:.10g}",
                             f"{trace.xhat[t, j]:.10g}",
                             int(trace.gamma[t, j]), int(trace.delta[t, j]),
                             int(trace.d[t, j])])
        _write_csv(out / "trace.csv",
                   ["instant", "loop", "x", "xhat", "gamma", "delta", "d"],
                   rows)
    if s["record_states"]:
        plots.plot_running_mean(trace, out / "running_mean.png")

    for j in range(trace.M):
        flag = "  DIVERGED" if stats.diverged[j] else ""
        _say(quiet, f"loop {j}: reliability analytic="
                    f"{sol.reliability[j]:.6f} empirical="
                    f"{stats.reliability[j]:.6f}{flag}")
    if trace.diverged.any():
        _say(quiet, f"divergence detected; trace truncated at instant "
                    f"{trace.instants}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evnetd",
        description="Analyze, design and simulate event-triggered control "
                    "loops over a shared p-persistent CSMA medium.")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("analyze", "chain fixed point and stability verdicts"),
        ("design-region", "constant-law stability region scan"),
        ("thresholds", "trigger-level extraction and density export"),
        ("simulate", "slot-level Monte Carlo run"),
    ]
    for name, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured simulation seed")
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "analyze":
            return cmd_analyze(cfg, out, args.quiet)
        if args.command == "design-region":
            return cmd_design_region(cfg, out, args.quiet)
        if args.command == "thresholds":
            return cmd_thresholds(cfg, out, args.quiet)
        return cmd_simulate(cfg, out, args.quiet, args.seed)
    except (ConfigError, TruncationError, ConvergenceError, SupportError,
            DegenerateTruncationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
