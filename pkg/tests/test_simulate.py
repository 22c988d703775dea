import numpy as np
import pytest
from scipy.stats import chisquare

from evnetd import (CrmConfig, NetworkModel, PlantModel, SimConfig,
                    TriggerPolicy, empirical_stats, run_network,
                    solve_network_fixed_point)

MARGINAL = PlantModel(A=[[1.0]], B=[[1.0]], Rw=[[1.0]])


def _net(M, pg=None, thresholds=None, pa=0.5, r_max=10, plant=MARGINAL,
         D_max=400):
    policy = TriggerPolicy(
        family="table",
        p_gamma=None if pg is None else [pg],
        thresholds=thresholds)
    return NetworkModel(loops=tuple((plant, policy) for _ in range(M)),
                        crm=CrmConfig(p_alpha=pa, r_max=r_max), D_max=D_max)


def test_bitwise_reproducibility():
    cfg = SimConfig(net=_net(3, pg=0.6), horizon=2000, seed=42,
                    record_states=True)
    a, b = run_network(cfg), run_network(cfg)
    for name in ("gamma", "delta", "d", "attempts_used", "outcome", "x",
                 "xhat"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.collision_slots == b.collision_slots
    c = run_network(SimConfig(net=_net(3, pg=0.6), horizon=2000, seed=43,
                              record_states=True))
    assert not np.array_equal(a.x, c.x)


def test_trace_invariants():
    trace = run_network(SimConfig(net=_net(4, pg=0.7, pa=0.3, r_max=5),
                                  horizon=4000, seed=7))
    n = trace.instants
    # a success requires an event
    assert not np.any(trace.delta & ~trace.gamma)
    # d resets on success and increments otherwise
    d = trace.d[:n]
    assert np.all(d[trace.delta[:n]] == 0)
    prev = np.vstack([np.zeros((1, 4), dtype=np.int64), d[:-1]])
    assert np.all(d[~trace.delta[:n]] == prev[~trace.delta[:n]] + 1)
    # outcome bookkeeping: every event ends as one of the terminal codes
    gamma_count = trace.gamma[:n].sum()
    assert (trace.outcome[:n] > 0).sum() == gamma_count
    assert np.all((trace.outcome[:n] == 1) == trace.delta[:n])


def test_uncontended_loop_always_succeeds():
    trace = run_network(SimConfig(net=_net(1, pg=0.5, pa=1.0, r_max=1),
                                  horizon=5000, seed=1))
    assert np.array_equal(trace.gamma, trace.delta)
    assert trace.collision_slots == 0


def test_always_transmit_degenerate_delay():
    trace = run_network(SimConfig(net=_net(1, pg=1.0, pa=1.0, r_max=1),
                                  horizon=1000, seed=2))
    stats = empirical_stats(trace, D_bins=5)
    assert np.all(trace.d == 0)
    assert stats.delay_hist[0, 0] == pytest.approx(1.0)
    assert stats.reliability[0] == pytest.approx(1.0)


def test_empirical_event_probability_matches_policy():
    pg = 0.35
    trace = run_network(SimConfig(net=_net(2, pg=pg, pa=0.8, r_max=4),
                                  horizon=60_000, seed=3))
    stats = empirical_stats(trace, D_bins=6)
    hi = ~stats.low_confidence & (stats.visits > 0)
    sigma = np.sqrt(pg * (1 - pg) / np.maximum(stats.visits, 1))
    dev = np.abs(stats.p_gamma_hat - pg)
    assert np.all(dev[hi] <= 4.0 * sigma[hi])


def test_delay_histogram_matches_geometric_law():
    # uncontended constant law: Pr(d) = pi_(I,0) * p_l^d
    net = _net(1, pg=0.5, pa=0.6, r_max=2)
    trace = run_network(SimConfig(net=net, horizon=80_000, seed=4))
    stats = empirical_stats(trace, D_bins=8)
    sol = solve_network_fixed_point(net)
    p_l = 1.0 - 0.5 * sol.success[0]
    expected = sol.reliability[0] * p_l ** np.arange(9)
    counts = stats.delay_hist[0] * trace.instants
    # the final bin aggregates all deeper delays; drop it from the fit
    keep = expected * trace.instants >= 5
    keep[-1] = False
    scale = counts[keep].sum() / expected[keep].sum()
    _, pvalue = chisquare(counts[keep], expected[keep] * scale)
    assert pvalue > 0.05


def test_vector_plant_generic_path():
    plant = PlantModel(A=[[1.05, 0.2], [0.0, 0.8]], B=[[1.0], [0.3]],
                       Rw=np.eye(2) * 0.5, L=[[1.05, 0.2]])
    policy = TriggerPolicy(family="table", p_gamma=[0.4], thresholds=[0.9])
    net = NetworkModel(loops=((plant, policy), (plant, policy)),
                       crm=CrmConfig(p_alpha=0.7, r_max=3), D_max=200)
    trace = run_network(SimConfig(net=net, horizon=3000, seed=5,
                                  record_states=True))
    assert trace.x.shape == (3000, 2, 2)
    assert not np.any(trace.delta & ~trace.gamma)
    assert np.isfinite(trace.mean_square_state()).all()


def test_divergence_flag_truncates_trace():
    plant = PlantModel(A=[[3.0]], B=[[1.0]], Rw=[[1.0]])
    # events almost never fire: the open-loop state explodes
    net = _net(1, thresholds=[1e15], pa=1.0, r_max=1, plant=plant)
    trace = run_network(SimConfig(net=net, horizon=100_000, seed=6,
                                  record_states=True))
    assert trace.diverged.any()
    assert trace.instants < 100_000


def test_mixed_policy_tables_rejected():
    probs = TriggerPolicy(family="constant", p_gamma=[0.5])
    levels = TriggerPolicy(family="table", thresholds=[0.25])
    net = NetworkModel(loops=((MARGINAL, probs), (MARGINAL, levels)),
                       crm=CrmConfig(p_alpha=0.5, r_max=2), D_max=200)
    with pytest.raises(ValueError):
        run_network(SimConfig(net=net, horizon=10, seed=0))
