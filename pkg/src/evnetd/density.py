"""Grid-based propagation of the scalar estimation-error densities.

A density lives on a uniform symmetric mesh as cell-averaged values. One
delay step of the real system is: split the idle density at the trigger
level, reweight the untransmitted mixture, then scale by the plant pole and
convolve with the process-noise Gaussian. The auxiliary (never-transmitting)
recursion skips the split/mix stage and upper-bounds the real variance,
which is what the majorization checks certify numerically.

Grids are rebuilt each step: the output mesh is sized from the predicted
output variance so that both a unit-variance density and its 10^6-variance
descendant stay resolved with the same cell count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.optimize import brentq
from scipy.stats import norm

__all__ = [
    "GridSpec",
    "DensityGrid",
    "DensityEvolution",
    "SupportError",
    "DegenerateTruncationError",
    "gaussian_grid",
    "uniform_grid",
    "truncate_split",
    "mix_untransmitted",
    "propagate",
    "auxiliary_step",
    "symmetric_rearrangement",
    "majorizes",
    "ball_cdf",
    "variance",
    "evolve",
    "threshold_for_probability",
]


class SupportError(RuntimeError):
    """Grid support too narrow for the requested density."""


class DegenerateTruncationError(RuntimeError):
    """Truncation leaves essentially no mass on one side of the split."""


@dataclass(frozen=True)
class GridSpec:
    """Mesh controls: cell count and the half-width multiplier (in standard
    deviations of the predicted density) used when sizing grids."""

    n_cells: int = 8192
    sigma_mult: float = 8.0
    half_width: float | None = None  # explicit override


@dataclass(frozen=True)
class DensityGrid:
    """Cell-averaged density on a uniform mesh over [-x_max, x_max]."""

    x_max: float
    values: np.ndarray
    mass: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < -1e-15):
            raise ValueError("density values must be nonnegative")
        v = np.maximum(v, 0.0)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mass", float(v.sum() * self.dx))

    @property
    def n_cells(self) -> int:
        return len(self.values)

    @property
    def dx(self) -> float:
        return 2.0 * self.x_max / len(self.values)

    def centers(self) -> np.ndarray:
        return -self.x_max + (np.arange(self.n_cells) + 0.5) * self.dx

    def edges(self) -> np.ndarray:
        return np.linspace(-self.x_max, self.x_max, self.n_cells + 1)

    def cdf_at_edges(self) -> np.ndarray:
        c = np.concatenate([[0.0], np.cumsum(self.values) * self.dx])
        return c

    def normalized(self) -> "DensityGrid":
        if self.mass <= 0:
            raise ValueError("cannot normalize a zero-mass density")
        return DensityGrid(self.x_max, self.values / self.mass)


def gaussian_grid(var: float, spec: GridSpec = GridSpec()) -> DensityGrid:
    """Cell-averaged zero-mean Gaussian with the given variance, via CDF
    differences at the cell edges."""
    if var <= 0:
        raise ValueError("variance must be positive")
    sigma = np.sqrt(var)
    hw = spec.half_width if spec.half_width is not None else spec.sigma_mult * sigma
    if hw < 4.0 * sigma:
        raise SupportError(
            f"half-width {hw:g} too narrow for sigma {sigma:g}")
    edges = np.linspace(-hw, hw, spec.n_cells + 1)
    masses = np.diff(norm.cdf(edges, scale=sigma))
    dx = 2.0 * hw / spec.n_cells
    return DensityGrid(hw, masses / dx)


def uniform_grid(support: float, spec: GridSpec = GridSpec()) -> DensityGrid:
    """Uniform density on [-support, support]; mostly used in tests."""
    hw = spec.half_width if spec.half_width is not None else 2.0 * support
    if hw < support:
        raise SupportError("grid narrower than the requested support")
    g = DensityGrid(hw, np.zeros(spec.n_cells))
    frac = _inside_fraction(g, support)
    return DensityGrid(hw, frac / (2.0 * support))


def _inside_fraction(phi: DensityGrid, delta: float) -> np.ndarray:
    """Per-cell fraction of the cell covered by [-delta, delta]."""
    e = phi.edges()
    lo, hi = e[:-1], e[1:]
    overlap = np.minimum(hi, delta) - np.maximum(lo, -delta)
    return np.clip(overlap / phi.dx, 0.0, 1.0)


def inside_mass(phi: DensityGrid, delta: float) -> float:
    """Mass of phi on [-delta, delta], with partial-cell accuracy."""
    return float(np.dot(phi.values, _inside_fraction(phi, delta)) * phi.dx)


def truncate_split(phi: DensityGrid, delta: float):
    """Split an idle density at the trigger level.

    Returns (phi_inside, phi_outside, q_gamma, p_gamma): the renormalized
    non-event and event densities with the corresponding probabilities,
    computed from the same quadrature so that q_gamma + p_gamma == mass.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if delta >= phi.x_max:
        raise SupportError("trigger level outside the grid support")
    frac = _inside_fraction(phi, delta)
    q_gamma = float(np.dot(phi.values, frac) * phi.dx)
    p_gamma = phi.mass - q_gamma
    if q_gamma < 1e-12 or p_gamma < 1e-12:
        raise DegenerateTruncationError(
            f"split at {delta:g} leaves q_gamma={q_gamma:.3e}, "
            f"p_gamma={p_gamma:.3e}; renormalization ill-conditioned")
    phi_n = DensityGrid(phi.x_max, phi.values * frac / q_gamma)
    phi_e = DensityGrid(phi.x_max, phi.values * (1.0 - frac) / p_gamma)
    return phi_n, phi_e, q_gamma, p_gamma


def mix_untransmitted(phi: DensityGrid, delta: float, p_gamma: float,
                      p_alpha: float, p: float) -> DensityGrid:
    """Density of the error given that nothing was received this instant.

    Reweights the previous idle density piecewise: inside mass (non-events)
    by 1/denom, outside mass (events that were suppressed or collided) by
    (q_alpha + p p_alpha)/denom, with denom chosen so the result has unit
    mass. ``p`` is the (possibly aggregate, possibly negative) busy-channel
    probability; only the composite failure weight q_alpha + p p_alpha
    enters, and it always lies in [0, 1].
    """
    q_gamma = 1.0 - p_gamma
    fail = (1.0 - p_alpha) + p * p_alpha
    denom = q_gamma + p_gamma * fail
    if denom <= 1e-300:
        raise DegenerateTruncationError("mixture weight denominator underflow")
    frac = _inside_fraction(phi, delta)
    w = frac / denom + (1.0 - frac) * (fail / denom)
    out = DensityGrid(phi.x_max, phi.values * w)
    if abs(out.mass - phi.mass) > 1e-9:
        raise RuntimeError(
            f"mixture mass drift {out.mass - phi.mass:.3e} exceeds 1e-9; "
            "p_gamma inconsistent with the density")
    return DensityGrid(phi.x_max, out.values / out.mass)


def _resample_masses(phi: DensityGrid, new_edges: np.ndarray,
                     scale: float = 1.0) -> np.ndarray:
    """Cell masses of x -> scale * X on a new mesh, by CDF interpolation.

    Mass-conservative for monotone CDFs; mass beyond the old support is
    assigned to the boundary cells of the new mesh implicitly (the CDF is
    clamped)."""
    cdf = phi.cdf_at_edges()
    old_edges = phi.edges() * scale
    if scale < 0:
        old_edges = old_edges[::-1]
        cdf = cdf[-1] - cdf[::-1]
    interp = np.interp(new_edges, old_edges, cdf, left=0.0, right=cdf[-1])
    return np.diff(interp)


def _gaussian_kernel(var: float, dx: float, sigma_mult: float = 8.0) -> np.ndarray:
    """Odd-length cell-mass kernel of a zero-mean Gaussian on spacing dx."""
    if var <= 0:
        return np.array([1.0])
    sigma = np.sqrt(var)
    half = max(1, int(np.ceil(sigma_mult * sigma / dx)))
    edges = (np.arange(-half, half + 1) + 0.5) * dx
    cdf = norm.cdf(edges, scale=sigma)
    k = np.concatenate([[cdf[0]], np.diff(cdf), [1.0 - cdf[-1]]])
    # fold the tail mass into the end cells so the kernel sums to one
    kernel = k[1:-1].copy()
    kernel[0] += k[0]
    kernel[-1] += k[-1]
    return kernel


def propagate(phi_e: DensityGrid, a: float, noise_var: float,
              spec: GridSpec = GridSpec(),
              boundary_tol: float = 1e-7) -> DensityGrid:
    """One plant step of a density: scale by ``a`` (change of variables)
    and convolve with the process-noise Gaussian.

    The output mesh is sized from the predicted variance a^2 v + w and
    widened until the boundary mass is negligible."""
    if a == 0.0:
        raise ValueError("plant pole must be nonzero (A invertible)")
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    v_in = variance(phi_e)
    v_pred = a * a * v_in + noise_var
    hw = spec.half_width
    if hw is None:
        hw = spec.sigma_mult * np.sqrt(max(v_pred, 1e-300))
    for _ in range(16):
        edges = np.linspace(-hw, hw, spec.n_cells + 1)
        masses = _resample_masses(phi_e, edges, scale=a)
        kernel = _gaussian_kernel(noise_var, 2.0 * hw / spec.n_cells,
                                  spec.sigma_mult)
        if len(kernel) > 1:
            masses = fftconvolve(masses, kernel, mode="same")
        masses = np.maximum(masses, 0.0)
        n_edge = max(2, spec.n_cells // 512)
        lost = max(0.0, phi_e.mass - masses.sum())
        boundary = masses[:n_edge].sum() + masses[-n_edge:].sum() + lost
        if boundary <= boundary_tol:
            break
        if spec.half_width is not None:
            raise SupportError(
                f"boundary mass {boundary:.3e} exceeds {boundary_tol:.1e}; "
                "widen the grid")
        hw *= 1.6
    else:
        raise SupportError("could not contain the density after widening")
    total = masses.sum()
    if abs(total - phi_e.mass) > 1e-6:
        raise SupportError(
            f"propagation lost {phi_e.mass - total:.3e} mass; widen the grid")
    dx = 2.0 * hw / spec.n_cells
    return DensityGrid(hw, masses * (phi_e.mass / total) / dx)


def auxiliary_step(phi_hat: DensityGrid, a: float, noise_var: float,
                   spec: GridSpec = GridSpec()) -> DensityGrid:
    """Worst-case (never-transmitting) step: propagate with |a|, no mixing."""
    return propagate(phi_hat, abs(a), noise_var, spec)


def variance(phi: DensityGrid) -> float:
    """Second moment about zero by midpoint quadrature."""
    c = phi.centers()
    return float(np.dot(phi.values, c * c) * phi.dx)


def symmetric_rearrangement(phi: DensityGrid) -> DensityGrid:
    """Symmetric non-increasing rearrangement: cell values sorted into
    level sets placed outward from the origin."""
    order = np.argsort(np.abs(phi.centers()), kind="stable")
    out = np.empty_like(phi.values)
    out[order] = np.sort(phi.values)[::-1]
    return DensityGrid(phi.x_max, out)


def ball_cdf(phi: DensityGrid) -> np.ndarray:
    """Cumulative mass of the rearranged density over centered balls of
    increasing radius (one entry per cell shell)."""
    re = symmetric_rearrangement(phi)
    order = np.argsort(np.abs(re.centers()), kind="stable")
    return np.cumsum(re.values[order]) * re.dx


def _common_mesh(phi_a: DensityGrid, phi_b: DensityGrid):
    hw = max(phi_a.x_max, phi_b.x_max)
    n = max(phi_a.n_cells, phi_b.n_cells)
    edges = np.linspace(-hw, hw, n + 1)
    dx = 2.0 * hw / n
    a = DensityGrid(hw, _resample_masses(phi_a, edges) / dx)
    b = DensityGrid(hw, _resample_masses(phi_b, edges) / dx)
    return a, b


def majorizes(phi_a: DensityGrid, phi_b: DensityGrid,
              slack: float = 1e-9) -> bool:
    """True iff phi_a majorizes phi_b: the centered-ball cumulative mass of
    the rearranged phi_a dominates phi_b at every radius.

    Densities on different meshes are conservatively resampled to a common
    one; both are normalized before comparison."""
    if not (phi_a.x_max == phi_b.x_max and phi_a.n_cells == phi_b.n_cells):
        phi_a, phi_b = _common_mesh(phi_a, phi_b)
    ca = ball_cdf(phi_a.normalized())
    cb = ball_cdf(phi_b.normalized())
    return bool(np.all(ca >= cb - slack))


def threshold_for_probability(phi: DensityGrid, p_gamma_target: float,
                              xtol: float = 1e-12) -> float:
    """Trigger level whose tail mass equals the target event probability."""
    if not 0.0 < p_gamma_target < 1.0:
        raise ValueError("target event probability must lie in (0, 1)")
    total = phi.mass

    def tail_excess(t):
        return (total - inside_mass(phi, t)) - p_gamma_target

    lo, hi = 0.0, phi.x_max * (1.0 - 1e-12)
    if tail_excess(hi) > 0:
        raise SupportError("target tail mass unreachable on this grid")
    return float(brentq(tail_excess, lo, hi, xtol=xtol))


@dataclass
class DensityEvolution:
    """Delay-indexed real and auxiliary densities plus their summaries."""

    idle: list            # DensityGrid, index d = 0..D
    auxiliary: list       # DensityGrid, same indexing
    thresholds: np.ndarray        # Delta_d used at step d = 1..D
    p_gamma_realized: np.ndarray  # event mass at step d = 1..D
    variances: np.ndarray         # tr P_d, d = 0..D
    aux_variances: np.ndarray     # tr Phat_d, d = 0..D


def evolve(a: float, noise_var: float, *, thresholds=None, p_gamma_targets=None,
           p_alpha: float, p: float, D: int,
           spec: GridSpec = GridSpec()) -> DensityEvolution:
    """Run the real and auxiliary density recursions for d = 0..D.

    Exactly one of ``thresholds`` (trigger levels Delta_d, last entry held)
    or ``p_gamma_targets`` (event probabilities to hit by solving for the
    level at each step) must be given. ``p`` is the busy-channel
    probability held fixed during the evolution.
    """
    if (thresholds is None) == (p_gamma_targets is None):
        raise ValueError("give either thresholds or p_gamma_targets")
    if D < 1:
        raise ValueError("D must be >= 1")
    phi = gaussian_grid(noise_var, spec)
    phi_hat = gaussian_grid(noise_var, spec)
    idle = [phi]
    aux = [phi_hat]
    used = np.empty(D)
    realized = np.empty(D)
    for d in range(1, D + 1):
        if thresholds is not None:
            th = np.asarray(thresholds, dtype=float)
            delta = float(th[min(d, len(th)) - 1])
        else:
            tg = np.asarray(p_gamma_targets, dtype=float)
            target = float(tg[min(d, len(tg)) - 1])
            delta = threshold_for_probability(phi, target)
        _, _, q_g, p_g = truncate_split(phi, delta)
        phi_e = mix_untransmitted(phi, delta, p_g / phi.mass, p_alpha, p)
        phi = propagate(phi_e, a, noise_var, spec)
        phi = phi.normalized()
        phi_hat = auxiliary_step(phi_hat, a, noise_var, spec).normalized()
        idle.append(phi)
        aux.append(phi_hat)
        used[d - 1] = delta
        realized[d - 1] = p_g
    return DensityEvolution(
        idle=idle,
        auxiliary=aux,
        thresholds=used,
        p_gamma_realized=realized,
        variances=np.array([variance(g) for g in idle]),
        aux_variances=np.array([variance(g) for g in aux]),
    )
