import numpy as np
import pytest
from hypothesis import given, strategies as st

from evnetd import (LoopState, PlantModel, TriggerPolicy, control_law,
                    default_gain, observer_update, spectral_radius,
                    step_plant, trigger_decision)

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)


@given(finite, finite, finite, finite)
def test_spectral_radius_matches_quadratic_formula(a, b, c, d):
    # characteristic roots of [[a, b], [c, d]] by the quadratic formula
    tr, det = a + d, a * d - b * c
    disc = complex(tr * tr - 4.0 * det) ** 0.5
    expected = max(abs((tr + disc) / 2.0), abs((tr - disc) / 2.0))
    got = spectral_radius([[a, b], [c, d]])
    assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_spectral_radius_rejects_non_square():
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


def test_deadbeat_gain_zeroes_closed_loop():
    L = default_gain([[1.5]], [[2.0]])
    assert L[0, 0] == pytest.approx(0.75)
    assert spectral_radius(np.array([[1.5]]) - np.array([[2.0]]) @ L) == 0.0


def test_deadbeat_gain_scalar_only():
    with pytest.raises(ValueError):
        default_gain(np.eye(2), np.ones((2, 1)))
    with pytest.raises(ValueError):
        default_gain([[1.0]], [[0.0]])


def test_plant_model_validation():
    m = PlantModel(A=[[1.5]], B=[[1.0]], Rw=[[1.0]])
    assert m.rho == pytest.approx(1.5)
    assert m.is_scalar()
    with pytest.raises(ValueError):
        PlantModel(A=[[1.0]], B=[[1.0]], Rw=[[-1.0]])
    with pytest.raises(ValueError):
        # supplied gain leaves the deterministic loop unstable
        PlantModel(A=[[2.0]], B=[[1.0]], Rw=[[1.0]], L=[[0.0]])


def test_plant_model_vector_requires_gain():
    A = [[1.1, 0.3], [0.0, 0.9]]
    B = [[1.0], [0.5]]
    with pytest.raises(ValueError):
        PlantModel(A=A, B=B, Rw=np.eye(2))
    m = PlantModel(A=A, B=B, Rw=np.eye(2), L=[[1.1, 0.3]])
    assert not m.is_scalar()
    assert spectral_radius(m.A - m.B @ m.L) < 1.0


def test_trigger_is_strict():
    assert trigger_decision([1.0], [0.0], 1.0) == 0
    assert trigger_decision([1.0 + 1e-12], [0.0], 1.0) == 1
    with pytest.raises(ValueError):
        trigger_decision([1.0], [0.0], 0.0)


def test_observer_update_and_control():
    m = PlantModel(A=[[1.5]], B=[[1.0]], Rw=[[1.0]])
    xh = observer_update(m, [2.0], [-1.0], 0, [99.0])
    assert xh[0] == pytest.approx(1.5 * 2.0 - 1.0)
    assert observer_update(m, [2.0], [-1.0], 1, [99.0])[0] == 99.0
    assert control_law(m, [2.0])[0] == pytest.approx(-3.0)


def test_step_plant():
    m = PlantModel(A=[[1.5]], B=[[1.0]], Rw=[[1.0]])
    s = LoopState(x=np.array([1.0]), xhat=np.array([1.0]),
                  u=np.array([-0.5]))
    assert step_plant(m, s, [0.25])[0] == pytest.approx(1.25)


def test_policy_lookup_holds_last_entry():
    pol = TriggerPolicy(family="table", p_gamma=[0.2, 0.4],
                        thresholds=[1.0, 0.5])
    assert pol.probability_at(1) == 0.2
    assert pol.probability_at(2) == 0.4
    assert pol.probability_at(17) == 0.4
    assert pol.threshold_at(17) == 0.5
    assert not pol.is_constant()
    assert TriggerPolicy(family="constant", p_gamma=[0.7]).is_constant()


def test_policy_validation():
    with pytest.raises(ValueError):
        TriggerPolicy(family="bogus", p_gamma=[0.5])
    with pytest.raises(ValueError):
        TriggerPolicy(family="constant", p_gamma=[1.5])
    with pytest.raises(ValueError):
        TriggerPolicy(family="table", thresholds=[-1.0])
    with pytest.raises(ValueError):
        TriggerPolicy(family="constant")
    threshold_only = TriggerPolicy(family="table", thresholds=[0.25])
    with pytest.raises(ValueError):
        threshold_only.probability_at(1)
