import numpy as np
import pytest
from scipy.stats import norm

from evnetd import (GridSpec, PlantModel, additive_law, constant_law_fixed_point,
                    exponential_law, extract_thresholds,
                    lossy_event_probabilities, scan_region,
                    solve_threshold_network)

SMALL = GridSpec(n_cells=2048)
PLANT = PlantModel(A=[[1.0]], B=[[1.0]], Rw=[[1.0]])


def test_constant_law_single_loop_closed_form():
    # free channel: c = 1 - (1 - p_alpha)^r_max exactly
    point = constant_law_fixed_point(0.7, 0.4, M=1, r_max=3, rho=1.2)
    c = 1.0 - 0.6 ** 3
    assert point.reliability == pytest.approx(0.7 * c, abs=1e-12)
    assert point.p_loss == pytest.approx(1.0 - 0.7 * c, abs=1e-12)
    assert point.stable == (point.p_loss * 1.44 < 1.0)
    assert point.margin == pytest.approx(1.0 - point.p_loss * 1.44)
    with pytest.raises(ValueError):
        constant_law_fixed_point(0.0, 0.4, 2, 1)
    with pytest.raises(ValueError):
        constant_law_fixed_point(0.5, 0.4, 0, 1)


def test_scan_region_shrinks_with_rho():
    g = np.linspace(0.05, 1.0, 12)
    a = np.linspace(0.05, 1.0, 12)
    counts = [scan_region(g, a, M=4, r_max=5, rho=r).stable_cell_count()
              for r in (0.9, 1.3, 1.8)]
    assert counts[0] == 144  # rho <= 1: every design is guaranteed
    assert counts[0] > counts[1] > counts[2]


def test_scan_region_validates_axes():
    with pytest.raises(ValueError):
        scan_region([0.5, 0.4], [0.5, 0.6], 2, 1, 1.0)
    with pytest.raises(ValueError):
        scan_region([0.0, 0.5], [0.5, 0.6], 2, 1, 1.0)


def test_additive_law_partial_sums():
    seq = additive_law(0.3, 0.2, 5)
    expected = [0.3, 0.5, 0.54, 0.548, 0.5496]
    assert np.allclose(seq, expected)
    with pytest.raises(ValueError):
        additive_law(0.9, 0.5, 5)  # limit exceeds one
    with pytest.raises(ValueError):
        additive_law(0.3, 1.0, 5)


def test_exponential_law_decay():
    seq = exponential_law(0.8, 0.5, 4)
    assert np.allclose(seq, [0.8, 0.4, 0.2, 0.1])
    with pytest.raises(ValueError):
        exponential_law(0.8, 1.2, 4)


def test_extract_thresholds_round_trip():
    levels, evo, point = extract_thresholds(
        PLANT, [0.5], 0.5, M=2, r_max=4, D=4, spec=SMALL)
    assert np.allclose(evo.p_gamma_realized, 0.5, atol=1e-9)
    assert len(levels) == 4
    assert np.all(levels > 0)
    assert point is not None and point.converged
    # first level is exact: the d=1 error is the noise Gaussian
    assert levels[0] == pytest.approx(norm.ppf(0.75), abs=1e-4)


def test_extract_thresholds_varying_targets():
    levels, evo, point = extract_thresholds(
        PLANT, [0.3, 0.5, 0.8], 0.5, M=2, r_max=4, D=3, spec=SMALL)
    assert point is None  # non-constant law has no closed-form design point
    assert np.allclose(evo.p_gamma_realized, [0.3, 0.5, 0.8], atol=1e-9)
    # tighter probability targets need wider levels
    assert levels[0] > levels[2] * 0.5


def test_lossy_event_probabilities_gaussian_oracle():
    pg = lossy_event_probabilities(1.5, 1.0, [0.25], 4)
    P = np.array([1.0, 1.0 + 1.5 ** 2, 1 + 1.5 ** 2 + 1.5 ** 4,
                  1 + 1.5 ** 2 + 1.5 ** 4 + 1.5 ** 6])
    expected = 2.0 * (1.0 - norm.cdf(0.25 / np.sqrt(P)))
    assert np.allclose(pg, expected, atol=1e-12)
    assert np.all(np.diff(pg) > 0)
    # extreme depth saturates at one without overflow
    deep = lossy_event_probabilities(2.0, 1.0, [0.25], 2000)
    assert np.all(np.isfinite(deep)) and deep[-1] == pytest.approx(1.0)


def test_solve_threshold_network_lossy_self_consistent():
    sol, pg, evo = solve_threshold_network(
        PLANT, [0.25], 0.5, M=2, r_max=10, D_max=400)
    assert evo is None
    assert np.allclose(pg[:400], lossy_event_probabilities(
        1.0, 1.0, [0.25], 400))
    assert 0 < sol.reliability[0] <= 1


def test_solve_threshold_network_mixed_converges():
    sol, pg, evo = solve_threshold_network(
        PLANT, [0.25], 0.5, M=2, r_max=10, D_max=400, D_phi=12,
        conditioning="mixed", spec=SMALL)
    assert evo is not None
    assert np.all((pg > 0) & (pg <= 1))
    # conditional event probabilities saturate once the density mixes in
    assert abs(pg[8] - pg[11]) < 0.01
    with pytest.raises(ValueError):
        solve_threshold_network(PLANT, [0.25], 0.5, 2, 10,
                                conditioning="bogus")


def test_threshold_network_requires_scalar_plant():
    vec = PlantModel(A=[[1.1, 0.0], [0.0, 0.5]], B=[[1.0], [0.0]],
                     Rw=np.eye(2), L=[[1.1, 0.0]])
    with pytest.raises(ValueError):
        solve_threshold_network(vec, [0.25], 0.5, 2, 1)
    with pytest.raises(ValueError):
        extract_thresholds(vec, [0.5], 0.5, 2, 1, 3)
