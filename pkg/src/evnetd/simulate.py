"""Slot-level Monte Carlo of the full M-loop network.

Each sampling instant: every loop steps its plant, evaluates its trigger
against the scheduler's observer replica, and loops with events contend
over r_max synchronous sub-slots of p-persistent CSMA. A sub-slot with
exactly one transmitter delivers the state and ACKs the scheduler; packets
still pending after the last sub-slot are dropped for the instant.

The per-loop random streams are spawned from one seed, so identical seed
and config give a bitwise-identical trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import NetworkModel
from .model import observer_update, step_plant, trigger_decision

__all__ = ["SimConfig", "SimTrace", "run_network", "empirical_stats"]

_DIVERGENCE_LIMIT = 1e12
_CHUNK = 8192


@dataclass(frozen=True)
class SimConfig:
    net: NetworkModel
    horizon: int
    seed: int
    record_states: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class SimTrace:
    """Per-instant records plus aggregate counters.

    Arrays have shape (instants, M); ``d`` holds the post-update delay d_k.
    ``outcome`` encodes the terminal fate of each generated packet:
    0 = no event, 1 = success, 2 = dropped without ever transmitting,
    3 = dropped after colliding at least once."""

    gamma: np.ndarray
    delta: np.ndarray
    d: np.ndarray
    attempts_used: np.ndarray
    outcome: np.ndarray
    x: np.ndarray | None = None
    xhat: np.ndarray | None = None
    collision_slots: int = 0
    diverged: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    instants: int = 0
    seed: int = 0

    @property
    def M(self) -> int:
        return self.gamma.shape[1]

    def reliability(self) -> np.ndarray:
        """Empirical per-loop success rate per sampling instant."""
        return self.delta[: self.instants].mean(axis=0)

    def mean_square_state(self) -> np.ndarray:
        if self.x is None:
            raise ValueError("states were not recorded")
        return (self.x[: self.instants] ** 2).sum(axis=-1).mean(axis=0) \
            if self.x.ndim == 3 else (self.x[: self.instants] ** 2).mean(axis=0)


def _policy_tables(net: NetworkModel):
    """Per-loop threshold and probability lookup tables, padded to a common
    delay depth with the last entry held."""
    th_rows, pg_rows = [], []
    for _, pol in net.loops:
        th_rows.append(pol.thresholds)
        pg_rows.append(pol.p_gamma)
    use_thresholds = all(t is not None for t in th_rows)
    if not use_thresholds and not all(p is not None for p in pg_rows):
        raise ValueError("every loop needs thresholds, or every loop needs "
                         "event probabilities, to simulate the trigger")
    rows = th_rows if use_thresholds else pg_rows
    depth = max(len(r) for r in rows)
    table = np.vstack([np.concatenate([r, np.full(depth - len(r), r[-1])])
                       for r in rows])
    return use_thresholds, table


def run_network(cfg: SimConfig) -> SimTrace:
    """Simulate the network; deterministic given (seed, config)."""
    net = cfg.net
    M, r_max, horizon = net.M, net.crm.r_max, cfg.horizon
    models = [m for m, _ in net.loops]
    scalar = all(m.is_scalar() for m in models)
    use_thresholds, table = _policy_tables(net)
    depth = table.shape[1]
    pa = net.crm.per_attempt_alpha

    ss = np.random.SeedSequence(cfg.seed)
    rng_noise, rng_gamma, rng_crm = [np.random.Generator(np.random.Philox(c))
                                     for c in ss.spawn(3)]

    gamma = np.zeros((horizon, M), dtype=bool)
    delta = np.zeros((horizon, M), dtype=bool)
    d_out = np.zeros((horizon, M), dtype=np.int64)
    attempts = np.zeros((horizon, M), dtype=np.uint8)
    outcome = np.zeros((horizon, M), dtype=np.uint8)
    if cfg.record_states:
        if scalar:
            x_rec = np.zeros((horizon, M))
            xh_rec = np.zeros((horizon, M))
        else:
            nmax = max(m.n for m in models)
            x_rec = np.zeros((horizon, M, nmax))
            xh_rec = np.zeros((horizon, M, nmax))
    else:
        x_rec = xh_rec = None

    diverged = np.zeros(M, dtype=bool)
    collision_slots = 0
    instants = horizon

    if scalar:
        A = np.array([float(m.A[0, 0]) for m in models])
        B = np.array([float(m.B[0, 0]) for m in models])
        L = np.array([float(m.L[0, 0]) for m in models])
        sig = np.array([np.sqrt(float(m.Rw[0, 0])) for m in models])
        x = np.zeros(M)
        xh = np.zeros(M)
        u = np.zeros(M)
        dly = np.zeros(M, dtype=np.int64)
        rows = np.arange(M)
        k = 0
        while k < horizon:
            n_chunk = min(_CHUNK, horizon - k)
            noise = rng_noise.standard_normal((n_chunk, M)) * sig
            ug = rng_gamma.random((n_chunk, M))
            ucrm = rng_crm.random((n_chunk, r_max, M))
            for t in range(n_chunk):
                x = A * x + B * u + noise[t]
                sched = A * xh + B * u
                didx = np.minimum(dly + 1, depth) - 1
                level = table[rows, didx]
                if use_thresholds:
                    g = np.abs(x - sched) > level
                else:
                    g = ug[t] < level
                dlt, att, out, ncoll = _contend(g, ucrm[t], pa, r_max)
                collision_slots += ncoll
                xh = np.where(dlt, x, sched)
                u = -L * xh
                dly = np.where(dlt, 0, dly + 1)
                i = k + t
                gamma[i] = g
                delta[i] = dlt
                d_out[i] = dly
                attempts[i] = att
                outcome[i] = out
                if x_rec is not None:
                    x_rec[i] = x
                    xh_rec[i] = xh
                if np.any(np.abs(x) > _DIVERGENCE_LIMIT):
                    diverged |= np.abs(x) > _DIVERGENCE_LIMIT
                    instants = i + 1
                    break
            else:
                k += n_chunk
                continue
            break
    else:
        instants = _run_generic(cfg, models, table, use_thresholds, pa,
                                gamma, delta, d_out, attempts, outcome,
                                x_rec, xh_rec, diverged,
                                rng_noise, rng_gamma, rng_crm)
        collision_slots = instants[1]
        instants = instants[0]

    return SimTrace(
        gamma=gamma[:instants], delta=delta[:instants], d=d_out[:instants],
        attempts_used=attempts[:instants], outcome=outcome[:instants],
        x=None if x_rec is None else x_rec[:instants],
        xhat=None if xh_rec is None else xh_rec[:instants],
        collision_slots=collision_slots, diverged=diverged,
        instants=instants, seed=cfg.seed)


def _contend(events: np.ndarray, u_slots: np.ndarray, pa: np.ndarray,
             r_max: int):
    """p-persistent contention over r_max sub-slots.

    Every pending loop redraws persistence each sub-slot; a sub-slot with a
    single transmitter succeeds, collisions leave everyone pending."""
    M = len(events)
    pending = events.copy()
    delta = np.zeros(M, dtype=bool)
    att = np.zeros(M, dtype=np.uint8)
    transmitted_once = np.zeros(M, dtype=bool)
    n_collisions = 0
    for r in range(r_max):
        if not pending.any():
            break
        tx = pending & (u_slots[r] < pa[r])
        n_tx = int(tx.sum())
        att[tx] += 1
        if n_tx == 1:
            winner = int(np.argmax(tx))
            delta[winner] = True
            pending[winner] = False
        elif n_tx > 1:
            n_collisions += 1
            transmitted_once |= tx
    out = np.zeros(M, dtype=np.uint8)
    out[events & delta] = 1
    out[events & ~delta & ~transmitted_once] = 2
    out[events & ~delta & transmitted_once] = 3
    return delta, att, out, n_collisions


def _run_generic(cfg, models, table, use_thresholds, pa, gamma, delta, d_out,
                 attempts, outcome, x_rec, xh_rec, diverged,
                 rng_noise, rng_gamma, rng_crm):
    """Matrix-plant path: same discipline, per-loop linear algebra."""
    from .model import LoopState, control_law

    net = cfg.net
    M, r_max, horizon = net.M, net.crm.r_max, cfg.horizon
    depth = table.shape[1]
    chol = [np.linalg.cholesky(m.Rw + 1e-15 * np.eye(m.n)) for m in models]
    states = [LoopState(x=np.zeros(m.n), xhat=np.zeros(m.n),
                        u=np.zeros(m.m), d=0) for m in models]
    collision_slots = 0
    for k in range(horizon):
        g = np.zeros(M, dtype=bool)
        scheds = []
        for j, (m, st) in enumerate(zip(models, states)):
            w = chol[j] @ rng_noise.standard_normal(m.n)
            st.x = step_plant(m, st, w)
            sched = m.A @ st.xhat + m.B @ st.u
            scheds.append(sched)
            didx = min(st.d + 1, depth) - 1
            if use_thresholds:
                g[j] = trigger_decision(st.x, sched, table[j, didx])
            else:
                g[j] = rng_gamma.random() < table[j, didx]
        dlt, att, out, ncoll = _contend(g, rng_crm.random((r_max, M)),
                                        pa, r_max)
        collision_slots += ncoll
        for j, (m, st) in enumerate(zip(models, states)):
            st.xhat = observer_update(m, st.xhat, st.u, int(dlt[j]), st.x)
            st.u = control_law(m, st.xhat)
            st.d = 0 if dlt[j] else st.d + 1
            d_out[k, j] = st.d
            if x_rec is not None:
                x_rec[k, j, :m.n] = st.x
                xh_rec[k, j, :m.n] = st.xhat
        gamma[k] = g
        delta[k] = dlt
        attempts[k] = att
        outcome[k] = out
        xs = np.concatenate([np.abs(st.x) for st in states])
        if np.any(xs > _DIVERGENCE_LIMIT):
            for j, st in enumerate(states):
                diverged[j] |= bool(np.any(np.abs(st.x) > _DIVERGENCE_LIMIT))
            return k + 1, collision_slots
    return horizon, collision_slots


@dataclass(frozen=True)
class EmpiricalStats:
    reliability: np.ndarray        # (M,)
    visits: np.ndarray             # (M, D_bins) visits of delay bin d = 1..D
    events: np.ndarray             # (M, D_bins)
    p_gamma_hat: np.ndarray        # (M, D_bins), nan where no visits
    low_confidence: np.ndarray     # (M, D_bins) visits < 100
    delay_hist: np.ndarray         # (M, D_bins+1) empirical Pr(d_k = d)
    mean_square_state: np.ndarray | None
    diverged: np.ndarray
    collision_slots: int


def empirical_stats(trace: SimTrace, D_bins: int) -> EmpiricalStats:
    """Per-delay empirical event probabilities and the delay distribution.

    The event at instant k is binned by d = d_{k-1} + 1, matching the
    delay index of the policy tables; bins past D_bins are discarded."""
    if trace.instants < 1:
        raise ValueError("empty trace")
    M = trace.M
    d_prev = np.vstack([np.zeros((1, M), dtype=np.int64), trace.d[:-1]])
    bin_idx = d_prev + 1
    visits = np.zeros((M, D_bins), dtype=np.int64)
    events = np.zeros((M, D_bins), dtype=np.int64)
    hist = np.zeros((M, D_bins + 1), dtype=np.int64)
    for j in range(M):
        b = bin_idx[:, j]
        sel = b <= D_bins
        visits[j] = np.bincount(b[sel] - 1, minlength=D_bins)[:D_bins]
        events[j] = np.bincount(b[sel & trace.gamma[:, j]] - 1,
                                minlength=D_bins)[:D_bins]
        dk = trace.d[:, j]
        hist[j] = np.bincount(np.minimum(dk, D_bins),
                              minlength=D_bins + 1)[:D_bins + 1]
    with np.errstate(invalid="ignore"):
        p_hat = np.where(visits > 0, events / np.maximum(visits, 1), np.nan)
    msq = None
    if trace.x is not None:
        msq = trace.mean_square_state()
    return EmpiricalStats(
        reliability=trace.reliability(),
        visits=visits, events=events, p_gamma_hat=p_hat,
        low_confidence=visits < 100,
        delay_hist=hist / trace.instants,
        mean_square_state=msq,
        diverged=trace.diverged.copy(),
        collision_slots=trace.collision_slots)
