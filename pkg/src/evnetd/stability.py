"""Stability tests for the solved network chain.

The verdicts are sufficient-condition verdicts only: ``NotGuaranteed``
means the test failed, never that the loop is unstable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainSolution, CrmConfig, composite_success
from .model import PlantModel

__all__ = [
    "LoopStability",
    "StabilityReport",
    "tail_ratio_condition",
    "reliability_lower_bound",
    "kappa_alpha",
    "constant_law_condition",
    "lossy_variance_bound",
    "report_for_network",
    "GUARANTEED",
    "NOT_GUARANTEED",
]

GUARANTEED = "GuaranteedStable"
NOT_GUARANTEED = "NotGuaranteed"

_MASS_FLOOR = 1e-14


@dataclass(frozen=True)
class LoopStability:
    """Per-loop outcome of the tail-ratio test."""

    verdict: str
    tail_ratio_limsup: float
    ratio_bound: float
    margin: float
    indeterminate: bool = False
    reliability_floor: float = float("nan")
    kappa_alpha: float = float("nan")
    variance_bound: float = float("nan")
    constant_law_lhs: float = float("nan")
    constant_law_rhs: float = float("nan")


@dataclass(frozen=True)
class StabilityReport:
    loops: tuple[LoopStability, ...]

    def all_guaranteed(self) -> bool:
        return all(e.verdict == GUARANTEED and not e.indeterminate
                   for e in self.loops)


def _tail_ratios(pi_I: np.ndarray, tail_window: int | None):
    """Idle-state probability ratios over the significant tail."""
    eligible = np.nonzero(pi_I > _MASS_FLOOR)[0]
    if len(eligible) < 3:
        return None, None
    last = eligible[-1]
    ratios = pi_I[1:last + 1] / pi_I[:last]
    if tail_window is None:
        tail_window = max(2, len(ratios) // 4)
    window = ratios[-tail_window:]
    return ratios, window


def tail_ratio_condition(sol: ChainSolution, model: PlantModel, loop: int = 0,
                         tail_window: int | None = None) -> LoopStability:
    """Tail-ratio sufficient condition: the limsup of successive idle-state
    probability ratios must stay below 1/(1 + rho^2).

    The limsup is estimated as the max ratio over the trailing window of
    delays with non-negligible mass (default: last 25%)."""
    bound = 1.0 / (1.0 + model.rho ** 2)
    ratios, window = _tail_ratios(sol.pi_I[loop], tail_window)
    if ratios is None:
        return LoopStability(
            verdict=NOT_GUARANTEED, tail_ratio_limsup=float("nan"),
            ratio_bound=bound, margin=float("nan"), indeterminate=True)
    est = float(np.max(window))
    verdict = GUARANTEED if est < bound else NOT_GUARANTEED
    return LoopStability(
        verdict=verdict, tail_ratio_limsup=est, ratio_bound=bound,
        margin=bound - est)


def reliability_lower_bound(rho: float) -> float:
    """Reliability floor rho^2 / (1 + rho^2) required when the tail-ratio
    condition is imposed for all delays."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    return rho * rho / (1.0 + rho * rho)


def kappa_alpha(rho: float, p_alpha: float) -> float:
    """Lower bound on the tail of p_gamma,d * q, tunable through the
    persistence probability."""
    if p_alpha <= 0:
        raise ValueError("p_alpha must be positive")
    return reliability_lower_bound(rho) / p_alpha


def constant_law_condition(p_gamma: float, crm: CrmConfig, q_r, rho: float):
    """Sufficient condition for the constant-probability policy, in the
    equivalent loss form p_l * rho^2 < 1.

    Returns (holds, lhs, rhs) with lhs = p_gamma * c / p_alpha and
    rhs = (1 - 1/rho^2) / p_alpha, so that holds == (lhs > rhs)."""
    q_r = np.asarray(q_r, dtype=float)
    if q_r.shape != (crm.r_max,):
        raise ValueError("q_r must have length r_max")
    c = float(composite_success(q_r[None, :], crm)[0])
    p_l = 1.0 - p_gamma * c
    holds = p_l * rho * rho < 1.0
    lhs = p_gamma * c / crm.p_alpha
    rhs = (1.0 - 1.0 / (rho * rho)) / crm.p_alpha if rho > 0 else -np.inf
    return holds, lhs, rhs


def lossy_variance_bound(sol: ChainSolution, model: PlantModel, loop: int = 0,
                         tail_window: int | None = None) -> float:
    """Upper bound on the steady-state error variance via the auxiliary
    (lossy-network) recursion Phat_d = rho^2 Phat_{d-1} + tr Rw.

    Returns infinity when the summation ratio test fails on the tail."""
    rho2 = model.rho ** 2
    tr_w = float(np.trace(model.Rw))
    pi = sol.pi_I[loop]
    D = len(pi) - 1
    # the summand ratio tends to (idle tail ratio) * rho^2
    ratios, window = _tail_ratios(pi, tail_window)
    if ratios is None or np.max(window) * rho2 >= 1.0:
        return float("inf")
    P_hat = np.empty(D + 1)
    P_hat[0] = tr_w
    for d in range(1, D + 1):
        # capping is safe: a convergent series has pi underflow long first
        P_hat[d] = min(rho2 * P_hat[d - 1] + tr_w, 1e300)
    terms = np.where(pi > 0.0, np.minimum(pi * P_hat, 1e300), 0.0)
    return float(terms.sum())


def report_for_network(sol: ChainSolution, models, policies, crm: CrmConfig,
                       tail_window: int | None = None) -> StabilityReport:
    """Run every applicable test for each loop of a solved network."""
    entries = []
    q_r = 1.0 - sol.p_r
    for j, model in enumerate(models):
        base = tail_ratio_condition(sol, model, j, tail_window)
        lhs = rhs = float("nan")
        pol = policies[j]
        if pol is not None and pol.p_gamma is not None and pol.is_constant():
            _, lhs, rhs = constant_law_condition(
                float(pol.p_gamma[0]), crm, q_r[j], model.rho)
        entries.append(LoopStability(
            verdict=base.verdict,
            tail_ratio_limsup=base.tail_ratio_limsup,
            ratio_bound=base.ratio_bound,
            margin=base.margin,
            indeterminate=base.indeterminate,
            reliability_floor=reliability_lower_bound(model.rho),
            kappa_alpha=kappa_alpha(model.rho, crm.p_alpha),
            variance_bound=lossy_variance_bound(sol, model, j, tail_window),
            constant_law_lhs=lhs,
            constant_law_rhs=rhs,
        ))
    return StabilityReport(loops=tuple(entries))
