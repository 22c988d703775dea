"""Per-loop closed-loop model: plant, event trigger, observer and control law.

Everything here is a pure function of its inputs; all the stochastic and
network machinery lives in :mod:`evnetd.simulate` and :mod:`evnetd.chain`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PlantModel",
    "LoopState",
    "TriggerPolicy",
    "spectral_radius",
    "step_plant",
    "trigger_decision",
    "observer_update",
    "control_law",
    "default_gain",
]

_PSD_EIG_TOL = -1e-10


def spectral_radius(A) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def default_gain(A, B) -> np.ndarray:
    """Scalar deadbeat gain L = A/B, so that A - B L = 0.

    Only defined for first-order plants; higher-order plants must supply
    a stabilizing gain explicitly.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != (1, 1) or B.shape != (1, 1):
        raise ValueError("deadbeat default only applies to scalar plants; "
                         "supply a gain for higher-order systems")
    if B[0, 0] == 0.0:
        raise ValueError("B must be nonzero for the deadbeat gain")
    return np.array([[A[0, 0] / B[0, 0]]])


def _check_psd(name: str, S: np.ndarray) -> None:
    if not np.allclose(S, S.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(S)) < _PSD_EIG_TOL:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class PlantModel:
    """Linear plant x+ = A x + B u + w with gain u = -L xhat.

    ``rho`` caches the spectral radius of A; it is recomputed and checked
    at construction.
    """

    A: np.ndarray
    B: np.ndarray
    Rw: np.ndarray
    R0: np.ndarray | None = None
    L: np.ndarray | None = None
    rho: float = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        if B.shape[0] != n:
            raise ValueError("B must have as many rows as A")
        Rw = np.atleast_2d(np.asarray(self.Rw, dtype=float))
        if Rw.shape != (n, n):
            raise ValueError("Rw must be n x n")
        _check_psd("Rw", Rw)
        R0 = self.R0
        if R0 is None:
            R0 = Rw.copy()
        R0 = np.atleast_2d(np.asarray(R0, dtype=float))
        _check_psd("R0", R0)
        L = self.L
        if L is None:
            L = default_gain(A, B)
        L = np.atleast_2d(np.asarray(L, dtype=float))
        if L.shape != (B.shape[1], n):
            raise ValueError("L must be m x n")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Rw", Rw)
        object.__setattr__(self, "R0", R0)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "rho", spectral_radius(A))
        if spectral_radius(A - B @ L) >= 1.0:
            raise ValueError("closed loop A - B L must be Schur stable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def is_scalar(self) -> bool:
        return self.n == 1 and self.m == 1


@dataclass
class LoopState:
    """Mutable per-loop state carried across sampling instants."""

    x: np.ndarray
    xhat: np.ndarray
    u: np.ndarray
    d: int = 0


@dataclass(frozen=True)
class TriggerPolicy:
    """Event-triggering policy, either as delay-indexed probabilities or
    as explicit thresholds.

    ``family`` is one of ``constant``, ``additive``, ``exponential`` or
    ``table``. ``p_gamma`` holds the event probabilities indexed by delay
    d >= 1 (index 0 of the array is d = 1). ``thresholds`` optionally
    holds delay-indexed trigger levels; beyond the last entry the policy
    is held constant.
    """

    family: str
    p_gamma: np.ndarray | None = None
    thresholds: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in ("constant", "additive", "exponential", "table"):
            raise ValueError(f"unknown policy family {self.family!r}")
        if self.p_gamma is not None:
            pg = np.asarray(self.p_gamma, dtype=float)
            if np.any((pg <= 0) | (pg > 1)):
                raise ValueError("event probabilities must lie in (0, 1]")
            object.__setattr__(self, "p_gamma", pg)
        if self.thresholds is not None:
            th = np.asarray(self.thresholds, dtype=float)
            if np.any(th <= 0):
                raise ValueError("thresholds must be strictly positive")
            object.__setattr__(self, "thresholds", th)
        if self.p_gamma is None and self.thresholds is None:
            raise ValueError("policy needs event probabilities or thresholds")

    def probability_at(self, d: int) -> float:
        """Event probability p_gamma,d, holding the last entry beyond the
        tabulated range."""
        if self.p_gamma is None:
            raise ValueError("policy is threshold-based; probabilities must "
                             "be derived through the density engine")
        idx = min(max(d, 1), len(self.p_gamma)) - 1
        return float(self.p_gamma[idx])

    def threshold_at(self, d: int) -> float:
        if self.thresholds is None:
            raise ValueError("policy has no thresholds")
        idx = min(max(d, 1), len(self.thresholds)) - 1
        return float(self.thresholds[idx])

    def is_constant(self) -> bool:
        return self.family == "constant" or (
            self.p_gamma is not None and len(self.p_gamma) == 1
        )


def step_plant(model: PlantModel, state: LoopState, noise) -> np.ndarray:
    """One plant update A x + B u + w."""
    noise = np.asarray(noise, dtype=float).reshape(model.n)
    x = np.asarray(state.x, dtype=float).reshape(model.n)
    u = np.asarray(state.u, dtype=float).reshape(model.m)
    return model.A @ x + model.B @ u + noise


def trigger_decision(x, sched_estimate, threshold: float) -> int:
    """Level test on the innovation: 1 iff ||x - xhat_s|| strictly exceeds
    the threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    innovation = np.asarray(x, dtype=float) - np.asarray(sched_estimate, dtype=float)
    return int(np.linalg.norm(innovation) > threshold)


def observer_update(model: PlantModel, prev_estimate, prev_input,
                    delta: int, x) -> np.ndarray:
    """Received measurement overrides; otherwise model-based prediction."""
    if delta:
        return np.asarray(x, dtype=float).reshape(model.n).copy()
    prev_estimate = np.asarray(prev_estimate, dtype=float).reshape(model.n)
    prev_input = np.asarray(prev_input, dtype=float).reshape(model.m)
    return model.A @ prev_estimate + model.B @ prev_input


def control_law(model: PlantModel, estimate) -> np.ndarray:
    """u = -L xhat."""
    estimate = np.asarray(estimate, dtype=float).reshape(model.n)
    return -model.L @ estimate
