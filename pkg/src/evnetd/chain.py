"""Delay-indexed Markov chain of the contention network and its coupled
(Bianchi-decoupled) fixed point.

Each loop is described by a chain over states (S, d) with S in {I, N, E, T}
and delay d since the last received packet. Under the decoupling assumption
the loops interact only through the per-attempt busy-channel probabilities
p_r, so the network reduces to a small damped fixed point on the matrix of
complementary probabilities q_r.

The composite per-event success probability

    c = 1 - prod_r (1 - p_alpha,r * q_r)

is what every downstream formula consumes; the aggregate busy probability
p = 1 - c / p_alpha is reported for reference and may be negative when
retransmissions boost the effective success.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PlantModel, TriggerPolicy

__all__ = [
    "CrmConfig",
    "NetworkModel",
    "ChainSolution",
    "TruncationError",
    "ConvergenceError",
    "idle_recursion",
    "busy_channel_no_retx",
    "busy_channel_retx",
    "composite_success",
    "solve_network_fixed_point",
    "is_network_steady",
]


class TruncationError(RuntimeError):
    """Delay truncation leaves too much probability mass beyond D_max."""


class ConvergenceError(RuntimeError):
    """Fixed point did not converge; carries the last residual."""

    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class CrmConfig:
    """p-persistent CSMA parameters: persistence probability and number of
    retransmission attempts per sampling period."""

    p_alpha: float
    r_max: int = 1
    per_attempt_alpha: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.p_alpha <= 1.0:
            raise ValueError("p_alpha must lie in (0, 1]")
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        pa = self.per_attempt_alpha
        if pa is None:
            pa = np.full(self.r_max, self.p_alpha)
        else:
            pa = np.asarray(pa, dtype=float)
            if pa.shape != (self.r_max,):
                raise ValueError("per_attempt_alpha must have length r_max")
            if np.any((pa <= 0) | (pa > 1)):
                raise ValueError("per-attempt probabilities must lie in (0, 1]")
        object.__setattr__(self, "per_attempt_alpha", pa)


@dataclass(frozen=True)
class NetworkModel:
    """M loops (plant + trigger policy) sharing one CRM."""

    loops: tuple[tuple[PlantModel, TriggerPolicy], ...]
    crm: CrmConfig
    D_max: int = 200
    mass_tol: float = 1e-6

    def __post_init__(self):
        if len(self.loops) < 1:
            raise ValueError("need at least one loop")
        if self.D_max < 1:
            raise ValueError("D_max must be >= 1")
        object.__setattr__(self, "loops", tuple(self.loops))

    @property
    def M(self) -> int:
        return len(self.loops)


@dataclass(frozen=True)
class ChainSolution:
    """Converged steady state of the coupled network chain.

    Arrays are per-loop rows; delay axes run d = 0..D_max. ``p_loss`` holds
    the delay-indexed loss probabilities p_l,d = 1 - p_gamma,d * c (constant
    policies collapse to a constant row).
    """

    pi_I: np.ndarray          # (M, D_max+1)
    pi_T: np.ndarray          # (M, D_max+1), entry d = prob of entering (T, d)
    p_r: np.ndarray           # (M, r_max) per-attempt busy probabilities
    p_agg: np.ndarray         # (M,) aggregate busy probability (may be < 0)
    success: np.ndarray       # (M,) composite per-event success c
    reliability: np.ndarray   # (M,) pi_(I,0)
    p_loss: np.ndarray        # (M, D_max) loss probability at each delay d>=1
    residual: float
    iterations: int

    @property
    def M(self) -> int:
        return self.pi_I.shape[0]

    @property
    def D_max(self) -> int:
        return self.pi_I.shape[1] - 1


def _policy_probabilities(policy: TriggerPolicy, D_max: int) -> np.ndarray:
    """Event probabilities p_gamma,d for d = 1..D_max, last entry held."""
    if policy.p_gamma is None:
        raise ValueError(
            "threshold policy has no event probabilities; derive them with "
            "evnetd.synthesis.solve_threshold_network first")
    pg = np.asarray(policy.p_gamma, dtype=float)
    if len(pg) >= D_max:
        return pg[:D_max].copy()
    return np.concatenate([pg, np.full(D_max - len(pg), pg[-1])])


def idle_recursion(p_gamma: np.ndarray, success: float, D_max: int,
                   mass_tol: float = 1e-6, p_alpha: float = 1.0):
    """Solve the idle/transmission recursion for one loop.

    ``p_gamma`` are the event probabilities for d = 1..D_max and
    ``success`` is the composite per-event success probability c. The
    recursion pi_(I,d) = (1 - s_d) pi_(I,d-1) with s_d = p_gamma,d * c is
    seeded at 1 and normalized so the idle masses sum to one; the
    transmission-entry masses pi_(T,d) = p_gamma,d * p_alpha * pi_(I,d-1)
    use the normalized idle masses.
    """
    p_gamma = np.asarray(p_gamma, dtype=float)
    if len(p_gamma) != D_max:
        raise ValueError("need one event probability per delay 1..D_max")
    s = np.clip(p_gamma * success, 0.0, 1.0)
    u = np.empty(D_max + 1)
    u[0] = 1.0
    u[1:] = np.cumprod(1.0 - s)
    total = u.sum()
    # Geometric tail estimate beyond the truncation depth.
    tail_ratio = 1.0 - s[-1]
    if tail_ratio >= 1.0:
        tail = np.inf if u[-1] > 0 else 0.0
    else:
        tail = u[-1] * tail_ratio / (1.0 - tail_ratio)
    deficit = tail / (total + tail) if np.isfinite(tail) else 1.0
    if deficit > mass_tol:
        raise TruncationError(
            f"idle-state mass deficit {deficit:.3e} exceeds tolerance "
            f"{mass_tol:.1e}; increase D_max")
    pi_I = u / total
    pi_T = np.zeros(D_max + 1)
    pi_T[1:] = p_gamma * p_alpha * pi_I[:-1]
    return pi_I, pi_T


def busy_channel_no_retx(pi_T_sums) -> np.ndarray:
    """Bianchi product without retransmissions: per-loop probability that
    some other loop transmits."""
    t = np.asarray(pi_T_sums, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("transmission-state sums must lie in [0, 1]")
    one_minus = 1.0 - t
    if np.all(one_minus > 0):
        others = np.prod(one_minus) / one_minus
    else:
        others = np.array([np.prod(np.delete(one_minus, j))
                           for j in range(len(t))])
    return 1.0 - others


def busy_channel_retx(per_attempt_T: np.ndarray, crm: CrmConfig):
    """Per-attempt busy probabilities and the aggregate busy probability.

    ``per_attempt_T`` has shape (M, r_max): row i holds the attempt-indexed
    transmission-state sums of loop i. Returns (p_r, p_agg) where p_agg
    follows the aggregate definition p = 1 - c / p_alpha and may be
    negative when retransmissions boost the effective success.
    """
    T = np.atleast_2d(np.asarray(per_attempt_T, dtype=float))
    M, r_max = T.shape
    if r_max != crm.r_max:
        raise ValueError("per_attempt_T must have r_max columns")
    p_r = np.empty_like(T)
    for r in range(r_max):
        p_r[:, r] = busy_channel_no_retx(T[:, r])
    q_r = 1.0 - p_r
    c = composite_success(q_r, crm)
    p_agg = 1.0 - c / crm.p_alpha
    return p_r, p_agg


def composite_success(q_r: np.ndarray, crm: CrmConfig) -> np.ndarray:
    """Per-event success probability c = 1 - prod_r (1 - p_alpha,r q_r)."""
    q_r = np.atleast_2d(np.asarray(q_r, dtype=float))
    return 1.0 - np.prod(1.0 - crm.per_attempt_alpha * q_r, axis=1)


def _attempt_sums(event_rate: float, q_r: np.ndarray, crm: CrmConfig) -> np.ndarray:
    """Transmission-state sum for each attempt r of one loop.

    A packet reaches attempt r if every earlier attempt failed, with
    per-attempt failure probability 1 - p_alpha,s q_s; it transmits there
    with probability p_alpha,r.
    """
    pa = crm.per_attempt_alpha
    pending = np.concatenate([[1.0], np.cumprod(1.0 - pa * q_r)[:-1]])
    return event_rate * pa * pending


def solve_network_fixed_point(net: NetworkModel, tol: float = 1e-10,
                              max_iter: int = 10000,
                              damping: float = 0.5) -> ChainSolution:
    """Damped fixed-point iteration coupling the per-loop idle recursions
    through the Bianchi busy-channel products."""
    M, r_max, D = net.M, net.crm.r_max, net.D_max
    pg = np.vstack([_policy_probabilities(pol, D) for _, pol in net.loops])
    pa = net.crm.per_attempt_alpha

    q_r = np.ones((M, r_max))
    residual = np.inf
    for it in range(1, max_iter + 1):
        c = composite_success(q_r, net.crm)
        pi_I = np.empty((M, D + 1))
        pi_T = np.empty((M, D + 1))
        event_rate = np.empty(M)
        for j in range(M):
            pi_I[j], pi_T[j] = idle_recursion(
                pg[j], float(c[j]), D, net.mass_tol, net.crm.p_alpha)
            event_rate[j] = float(np.dot(pg[j], pi_I[j, :-1]))
        T_att = np.vstack([_attempt_sums(event_rate[j], q_r[j], net.crm)
                           for j in range(M)])
        p_r_new = np.empty((M, r_max))
        for r in range(r_max):
            p_r_new[:, r] = busy_channel_no_retx(T_att[:, r])
        q_new = 1.0 - p_r_new
        residual = float(np.max(np.abs(q_new - q_r)))
        if residual < tol:
            q_r = q_new
            break
        q_r = damping * q_r + (1.0 - damping) * q_new
    else:
        raise ConvergenceError(
            f"fixed point not converged after {max_iter} iterations "
            f"(residual {residual:.3e})", residual)

    c = composite_success(q_r, net.crm)
    pi_I = np.empty((M, D + 1))
    pi_T = np.empty((M, D + 1))
    for j in range(M):
        pi_I[j], pi_T[j] = idle_recursion(
            pg[j], float(c[j]), D, net.mass_tol, net.crm.p_alpha)
    p_loss = 1.0 - pg * c[:, None]
    return ChainSolution(
        pi_I=pi_I,
        pi_T=pi_T,
        p_r=1.0 - q_r,
        p_agg=1.0 - c / net.crm.p_alpha,
        success=c,
        reliability=pi_I[:, 0].copy(),
        p_loss=p_loss,
        residual=residual,
        iterations=it,
    )


def is_network_steady(sol: ChainSolution) -> np.ndarray:
    """Per-loop steady-state test: effective success probability positive."""
    return sol.success > 0.0
