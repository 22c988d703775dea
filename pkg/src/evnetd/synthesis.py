"""Design of stabilizing event-triggering policies.

Covers the closed-form constant-probability law (fixed point, stability
region scan), the additive and exponential probability families, and the
end-to-end extraction of trigger levels that realize designed event
probabilities through the density engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import density
from .chain import (ChainSolution, ConvergenceError, CrmConfig, NetworkModel,
                    solve_network_fixed_point)
from .density import DensityEvolution, GridSpec
from .model import PlantModel, TriggerPolicy

__all__ = [
    "DesignPoint",
    "RegionMap",
    "constant_law_fixed_point",
    "scan_region",
    "additive_law",
    "exponential_law",
    "extract_thresholds",
    "solve_threshold_network",
]


@dataclass(frozen=True)
class DesignPoint:
    """One constant-law design: probabilities in, reliability and the
    stability margin (slack of the sufficient condition) out."""

    p_gamma: float
    p_alpha: float
    reliability: float
    p_loss: float
    stable: bool
    margin: float
    converged: bool = True
    residual: float = 0.0


@dataclass(frozen=True)
class RegionMap:
    """Grid of design points over (p_gamma, p_alpha)."""

    gamma_axis: np.ndarray
    alpha_axis: np.ndarray
    reliability: np.ndarray   # (n_gamma, n_alpha)
    p_loss: np.ndarray
    stable: np.ndarray        # bool
    margin: np.ndarray
    converged: np.ndarray     # bool
    rho: float

    def stable_cell_count(self) -> int:
        return int(np.sum(self.stable & self.converged))


def _solve_constant_grid(pg, pa, M, r_max, tol, max_iter, damping=0.5):
    """Vectorized damped fixed point of the per-attempt busy probabilities
    for a batch of symmetric constant-law networks.

    ``pg`` and ``pa`` are flat arrays of equal length; returns
    (success c, q_r matrix, converged mask, residuals)."""
    pg = np.asarray(pg, dtype=float)
    pa = np.asarray(pa, dtype=float)
    G = len(pg)
    q = np.ones((G, r_max))
    residual = np.full(G, np.inf)
    active = np.ones(G, dtype=bool)
    for _ in range(max_iter):
        # probability a packet is still pending at each attempt
        fail = 1.0 - pa[:, None] * q
        pending = np.concatenate(
            [np.ones((G, 1)), np.cumprod(fail, axis=1)[:, :-1]], axis=1)
        tx = pg[:, None] * pa[:, None] * pending
        q_new = (1.0 - tx) ** (M - 1)
        residual = np.max(np.abs(q_new - q), axis=1)
        newly_done = residual < tol
        q[active] = np.where(newly_done[active, None], q_new[active],
                             damping * q[active] + (1 - damping) * q_new[active])
        active &= ~newly_done
        if not active.any():
            break
    converged = residual < tol
    c = 1.0 - np.prod(1.0 - pa[:, None] * q, axis=1)
    return c, q, converged, residual


def constant_law_fixed_point(p_gamma: float, p_alpha: float, M: int,
                             r_max: int, tol: float = 1e-10,
                             max_iter: int = 10000,
                             rho: float | None = None) -> DesignPoint:
    """Solve one symmetric constant-law design point.

    Reliability is the closed form p_gamma * c with c the composite
    per-event success probability from the attempt-indexed fixed point;
    p_loss = 1 - reliability. When ``rho`` is given the sufficient
    stability condition p_loss * rho^2 < 1 is evaluated and its slack
    reported as the margin."""
    if not (0 < p_gamma <= 1 and 0 < p_alpha <= 1):
        raise ValueError("probabilities must lie in (0, 1]")
    if M < 1 or r_max < 1:
        raise ValueError("M and r_max must be >= 1")
    c, q, conv, res = _solve_constant_grid(
        np.array([p_gamma]), np.array([p_alpha]), M, r_max, tol, max_iter)
    reliability = float(p_gamma * c[0])
    p_loss = 1.0 - reliability
    if rho is None:
        stable, margin = False, float("nan")
    else:
        margin = 1.0 - p_loss * rho * rho
        stable = margin > 0
    return DesignPoint(
        p_gamma=p_gamma, p_alpha=p_alpha, reliability=reliability,
        p_loss=p_loss, stable=stable, margin=margin,
        converged=bool(conv[0]), residual=float(res[0]))


def scan_region(gamma_grid, alpha_grid, M: int, r_max: int, rho: float,
                tol: float = 1e-10, max_iter: int = 10000) -> RegionMap:
    """Evaluate the constant-law design over a (p_gamma, p_alpha) grid and
    mark the cells whose sufficient stability condition holds."""
    g = np.asarray(gamma_grid, dtype=float)
    a = np.asarray(alpha_grid, dtype=float)
    if np.any(np.diff(g) <= 0) or np.any(np.diff(a) <= 0):
        raise ValueError("axes must be strictly increasing")
    if np.any((g <= 0) | (g > 1)) or np.any((a <= 0) | (a > 1)):
        raise ValueError("grids must lie within (0, 1]")
    gg, aa = np.meshgrid(g, a, indexing="ij")
    c, _, conv, _ = _solve_constant_grid(
        gg.ravel(), aa.ravel(), M, r_max, tol, max_iter)
    rel = (gg.ravel() * c).reshape(gg.shape)
    p_loss = 1.0 - rel
    margin = 1.0 - p_loss * rho * rho
    return RegionMap(
        gamma_axis=g, alpha_axis=a, reliability=rel, p_loss=p_loss,
        stable=margin > 0, margin=margin,
        converged=conv.reshape(gg.shape), rho=rho)


def additive_law(p_gamma_1: float, eta: float, D: int) -> np.ndarray:
    """Additive family p_gamma,d = p_gamma,1 + eta + ... + eta^(d-1)."""
    if not 0 < p_gamma_1 < 1:
        raise ValueError("p_gamma_1 must lie in (0, 1)")
    if abs(eta) >= 1:
        raise ValueError("|eta| must be < 1")
    limit = p_gamma_1 + eta / (1.0 - eta)
    if not 0 < limit < 1:
        raise ValueError(
            f"limit p_gamma_1 + eta/(1-eta) = {limit:g} must lie in (0, 1)")
    d = np.arange(1, D + 1)
    if eta == 0:
        return np.full(D, p_gamma_1)
    partial = eta * (1.0 - eta ** (d - 1)) / (1.0 - eta)
    return p_gamma_1 + partial


def exponential_law(p_gamma_1: float, mu: float, D: int) -> np.ndarray:
    """Exponential family p_gamma,d = p_gamma,1 * mu^(d-1), mu < 1."""
    if not 0 < p_gamma_1 < 1:
        raise ValueError("p_gamma_1 must lie in (0, 1)")
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1); the sequence diverges "
                         "otherwise")
    return p_gamma_1 * mu ** np.arange(D)


def extract_thresholds(model: PlantModel, p_gamma, p_alpha: float, M: int,
                       r_max: int, D: int,
                       spec: GridSpec = GridSpec(),
                       tol: float = 1e-10,
                       max_iter: int = 10000):
    """Trigger levels realizing the designed event probabilities.

    Solves the network fixed point for the busy probability, then runs the
    density recursion with that value held fixed, solving for the level
    whose tail mass hits each target probability. Returns
    (thresholds, evolution, design_point). Scalar plants only; levels
    beyond D are meant to be held at the last entry."""
    if not model.is_scalar():
        raise ValueError("threshold extraction requires a scalar plant")
    pg_seq = np.atleast_1d(np.asarray(p_gamma, dtype=float))
    if len(pg_seq) == 1:
        point = constant_law_fixed_point(float(pg_seq[0]), p_alpha, M, r_max,
                                         tol, max_iter, rho=model.rho)
        if not point.converged:
            raise ConvergenceError("design point did not converge",
                                   point.residual)
        success = point.reliability / float(pg_seq[0])
    else:
        crm = CrmConfig(p_alpha=p_alpha, r_max=r_max)
        policy = TriggerPolicy(family="table", p_gamma=pg_seq)
        net = NetworkModel(loops=tuple((model, policy) for _ in range(M)),
                           crm=crm, D_max=max(200, 4 * D))
        sol = solve_network_fixed_point(net, tol, max_iter)
        point = None
        success = float(sol.success[0])
    p_agg = 1.0 - success / p_alpha
    evo = density.evolve(
        float(model.A[0, 0]), float(np.trace(model.Rw)),
        p_gamma_targets=pg_seq, p_alpha=p_alpha, p=p_agg, D=D, spec=spec)
    return evo.thresholds.copy(), evo, point


def lossy_event_probabilities(rho: float, noise_var: float, thresholds,
                              D: int) -> np.ndarray:
    """Event probabilities induced by trigger levels under the lossy-model
    prediction density.

    At delay d the prediction error is taken as the Gaussian of the
    worst-case recursion Phat_{d-1} = rho^2 Phat_{d-2} + tr Rw, so
    p_gamma,d is its tail mass outside the level. This is the chain's
    threshold-to-probability map in the lossy-network approximation; the
    exact conditional map is the grid pipeline (conditioning='mixed')."""
    from scipy.stats import norm
    th = np.atleast_1d(np.asarray(thresholds, dtype=float))
    levels = th[np.minimum(np.arange(1, D + 1), len(th)) - 1]
    log_rho = np.log(max(rho, 1e-300))
    powers = np.exp(np.minimum(2.0 * np.arange(D) * log_rho, 690.0))
    P = np.minimum(noise_var * np.cumsum(powers), 1e300)
    pg = 2.0 * norm.sf(levels / np.sqrt(P))
    return np.clip(pg, 1e-15, 1.0)


def solve_threshold_network(model: PlantModel, thresholds, p_alpha: float,
                            M: int, r_max: int, D_max: int = 200,
                            D_phi: int = 60,
                            conditioning: str = "lossy",
                            spec: GridSpec = GridSpec(),
                            outer_tol: float = 1e-8,
                            outer_max_iter: int = 100,
                            chain_tol: float = 1e-10,
                            mass_tol: float = 1e-6,
                            damping: float = 0.5):
    """Analyze a symmetric network whose policy is given as trigger levels.

    ``conditioning`` selects the threshold-to-probability map:

    * ``lossy`` (default): Gaussian prediction density of the worst-case
      recursion; independent of the busy channel, so the chain is solved
      once.
    * ``mixed``: exact conditional densities from the grid pipeline. These
      depend on the busy channel, which depends on the event
      probabilities, so an outer damped loop alternates the density
      recursion (for d <= D_phi, the last value held beyond) with the
      chain fixed point.

    Returns (ChainSolution, p_gamma sequence, DensityEvolution or None).
    """
    if not model.is_scalar():
        raise ValueError("threshold analysis requires a scalar plant")
    th = np.atleast_1d(np.asarray(thresholds, dtype=float))
    a = float(model.A[0, 0])
    w = float(np.trace(model.Rw))
    crm = CrmConfig(p_alpha=p_alpha, r_max=r_max)

    def chain_for(pg):
        policy = TriggerPolicy(family="table", p_gamma=pg, thresholds=th)
        net = NetworkModel(loops=tuple((model, policy) for _ in range(M)),
                           crm=crm, D_max=D_max, mass_tol=mass_tol)
        return solve_network_fixed_point(net, chain_tol)

    if conditioning == "lossy":
        pg = lossy_event_probabilities(model.rho, w, th, D_max)
        return chain_for(pg), pg, None
    if conditioning != "mixed":
        raise ValueError("conditioning must be 'lossy' or 'mixed'")

    success = 1.0 - (1.0 - p_alpha) ** r_max  # contention-free start
    evo = None
    sol = None
    delta = np.inf
    for _ in range(outer_max_iter):
        p_agg = 1.0 - success / p_alpha
        evo = density.evolve(a, w, thresholds=th, p_alpha=p_alpha,
                             p=p_agg, D=D_phi, spec=spec)
        sol = chain_for(evo.p_gamma_realized)
        new_success = float(sol.success[0])
        delta = abs(new_success - success)
        success = damping * success + (1 - damping) * new_success
        if delta < outer_tol:
            success = new_success
            break
    else:
        raise ConvergenceError(
            "threshold/chain outer loop did not converge", delta)
    return sol, evo.p_gamma_realized.copy(), evo
