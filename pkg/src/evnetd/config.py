"""Experiment configuration: a structured YAML file with explicit sections
and strict unknown-key rejection, so a typo in a probability name fails
loudly instead of silently corrupting an experiment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .chain import CrmConfig, NetworkModel
from .density import GridSpec
from .model import PlantModel, TriggerPolicy
from .synthesis import additive_law, exponential_law

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def _require_keys(section: dict, name: str, allowed: set, required: set):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(
            f"section '{name}': unknown key(s) {sorted(unknown)}; "
            f"allowed: {sorted(allowed)}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"section '{name}': missing key(s) {sorted(missing)}")


def _as_matrix(value, name: str) -> np.ndarray:
    try:
        m = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{name}' is not numeric: {exc}") from None
    if m.ndim != 2:
        raise ConfigError(f"'{name}' must be a scalar or a 2-d matrix")
    return m


def _probability(value, name: str, open_low: bool = True) -> float:
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must be a number") from None
    low_ok = p > 0 if open_low else p >= 0
    if not (low_ok and p <= 1):
        bracket = "(0, 1]" if open_low else "[0, 1]"
        raise ConfigError(f"'{name}' = {p:g} outside {bracket}")
    return p


def _positive_int(value, name: str) -> int:
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must be an integer") from None
    if n < 1:
        raise ConfigError(f"'{name}' must be >= 1, got {n}")
    return n


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment description.

    The network is symmetric: M identical loops sharing one plant and one
    triggering policy (heterogeneous networks are a library-level feature).
    Command-specific sections (region, thresholds, simulate) are optional
    and validated when present."""

    M: int
    plant: PlantModel
    policy: TriggerPolicy
    crm: CrmConfig
    conditioning: str = "lossy"
    D_max: int = 200
    D_phi: int = 60
    grid: GridSpec = field(default_factory=GridSpec)
    mass_tol: float = 1e-6
    fixed_point_tol: float = 1e-10
    region: dict | None = None
    thresholds: dict | None = None
    simulate: dict | None = None

    def network(self) -> NetworkModel:
        return NetworkModel(
            loops=tuple((self.plant, self.policy) for _ in range(self.M)),
            crm=self.crm, D_max=self.D_max, mass_tol=self.mass_tol)

    def require_scalar(self, what: str):
        if not self.plant.is_scalar():
            raise ConfigError(f"{what} requires a scalar plant")


def _parse_network(section) -> tuple[int, PlantModel]:
    _require_keys(section, "network", {"M", "A", "B", "Rw", "R0", "gain"},
                  {"M", "A", "Rw"})
    M = _positive_int(section["M"], "network.M")
    A = _as_matrix(section["A"], "network.A")
    B = _as_matrix(section.get("B", np.eye(A.shape[0])), "network.B")
    Rw = _as_matrix(section["Rw"], "network.Rw")
    R0 = _as_matrix(section.get("R0", Rw), "network.R0")
    gain = section.get("gain", "deadbeat")
    if isinstance(gain, str):
        if gain != "deadbeat":
            raise ConfigError("network.gain must be 'deadbeat' or a matrix")
        L = None
        if A.shape != (1, 1):
            raise ConfigError(
                "network.gain: the deadbeat default needs a scalar plant; "
                "supply a gain matrix")
    else:
        L = _as_matrix(gain, "network.gain")
    try:
        plant = PlantModel(A=A, B=B, Rw=Rw, R0=R0, L=L)
    except ValueError as exc:
        raise ConfigError(f"section 'network': {exc}") from None
    return M, plant


def _parse_policy(section, D_max: int) -> tuple[TriggerPolicy, str]:
    allowed = {"family", "p_gamma", "eta", "mu", "D", "p_gamma_table",
               "thresholds", "conditioning"}
    _require_keys(section, "policy", allowed, {"family"})
    family = section["family"]
    conditioning = section.get("conditioning", "lossy")
    if conditioning not in ("lossy", "mixed"):
        raise ConfigError("policy.conditioning must be 'lossy' or 'mixed'")

    def forbid(*keys):
        extra = [k for k in keys if k in section]
        if extra:
            raise ConfigError(
                f"policy: key(s) {extra} do not apply to family '{family}'")

    if family == "constant":
        forbid("eta", "mu", "p_gamma_table", "thresholds")
        pg = _probability(section.get("p_gamma"), "policy.p_gamma")
        return TriggerPolicy(family="constant", p_gamma=[pg]), conditioning
    if family == "additive":
        forbid("mu", "p_gamma_table", "thresholds")
        pg1 = _probability(section.get("p_gamma"), "policy.p_gamma")
        D = _positive_int(section.get("D", D_max), "policy.D")
        try:
            seq = additive_law(pg1, float(section["eta"]), D)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"policy (additive): {exc}") from None
        return TriggerPolicy(family="additive", p_gamma=seq), conditioning
    if family == "exponential":
        forbid("eta", "p_gamma_table", "thresholds")
        pg1 = _probability(section.get("p_gamma"), "policy.p_gamma")
        D = _positive_int(section.get("D", D_max), "policy.D")
        try:
            seq = exponential_law(pg1, float(section["mu"]), D)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"policy (exponential): {exc}") from None
        return TriggerPolicy(family="exponential", p_gamma=seq), conditioning
    if family == "table":
        forbid("eta", "mu", "p_gamma")
        if "p_gamma_table" not in section:
            raise ConfigError("policy (table): 'p_gamma_table' is required")
        seq = [_probability(v, f"policy.p_gamma_table[{i}]")
               for i, v in enumerate(section["p_gamma_table"])]
        th = section.get("thresholds")
        th = None if th is None else np.asarray(th, dtype=float)
        return TriggerPolicy(family="table", p_gamma=seq,
                             thresholds=th), conditioning
    if family == "threshold":
        forbid("eta", "mu", "p_gamma", "p_gamma_table")
        if "thresholds" not in section:
            raise ConfigError("policy (threshold): 'thresholds' is required")
        th = np.asarray(section["thresholds"], dtype=float)
        if th.ndim != 1 or len(th) == 0 or np.any(th <= 0):
            raise ConfigError("policy.thresholds must be positive levels")
        # event probabilities are derived at analysis time
        return TriggerPolicy(family="table", p_gamma=None,
                             thresholds=th), conditioning
    raise ConfigError(
        f"policy.family '{family}' not in "
        "{constant, additive, exponential, table, threshold}")


def _parse_region(section) -> dict:
    _require_keys(
        section, "region",
        {"gamma_min", "gamma_max", "n_gamma",
         "alpha_min", "alpha_max", "n_alpha", "rho"},
        {"n_gamma", "n_alpha", "rho"})
    out = {
        "gamma_min": _probability(section.get("gamma_min", 0.02),
                                  "region.gamma_min"),
        "gamma_max": _probability(section.get("gamma_max", 1.0),
                                  "region.gamma_max"),
        "n_gamma": _positive_int(section["n_gamma"], "region.n_gamma"),
        "alpha_min": _probability(section.get("alpha_min", 0.02),
                                  "region.alpha_min"),
        "alpha_max": _probability(section.get("alpha_max", 1.0),
                                  "region.alpha_max"),
        "n_alpha": _positive_int(section["n_alpha"], "region.n_alpha"),
    }
    rho = section["rho"]
    rhos = [float(r) for r in (rho if isinstance(rho, list) else [rho])]
    if any(r <= 0 for r in rhos):
        raise ConfigError("region.rho values must be positive")
    out["rho"] = rhos
    if out["gamma_min"] >= out["gamma_max"]:
        raise ConfigError("region: gamma_min must be < gamma_max")
    if out["alpha_min"] >= out["alpha_max"]:
        raise ConfigError("region: alpha_min must be < alpha_max")
    return out


def _parse_thresholds(section) -> dict:
    _require_keys(section, "thresholds", {"D", "p_override"}, {"D"})
    out = {"D": _positive_int(section["D"], "thresholds.D")}
    if "p_override" in section:
        out["p_override"] = _probability(
            section["p_override"], "thresholds.p_override", open_low=False)
    else:
        out["p_override"] = None
    return out


def _parse_simulate(section) -> dict:
    _require_keys(section, "simulate",
                  {"horizon", "seed", "record_states", "trace_csv", "D_bins"},
                  {"horizon", "seed"})
    out = {
        "horizon": _positive_int(section["horizon"], "simulate.horizon"),
        "seed": int(section["seed"]),
        "record_states": bool(section.get("record_states", False)),
        "trace_csv": bool(section.get("trace_csv", False)),
        "D_bins": _positive_int(section.get("D_bins", 20),
                                "simulate.D_bins"),
    }
    if out["trace_csv"] and not out["record_states"]:
        raise ConfigError("simulate.trace_csv requires record_states: true")
    return out


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}" if mark else ""
            raise ConfigError(f"invalid YAML{where}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping of sections")
    _require_keys(raw, "<top>",
                  {"network", "crm", "policy", "numerics", "region",
                   "thresholds", "simulate"},
                  {"network", "crm", "policy"})
    for name in ("network", "crm", "policy", "numerics", "region",
                 "thresholds", "simulate"):
        if name in raw and not isinstance(raw[name], dict):
            raise ConfigError(f"section '{name}' must be a mapping")

    num = raw.get("numerics", {})
    _require_keys(num, "numerics",
                  {"D_max", "D_phi", "n_cells", "sigma_mult", "mass_tol",
                   "fixed_point_tol"}, set())
    D_max = _positive_int(num.get("D_max", 200), "numerics.D_max")
    D_phi = _positive_int(num.get("D_phi", 60), "numerics.D_phi")
    grid = GridSpec(n_cells=_positive_int(num.get("n_cells", 8192),
                                          "numerics.n_cells"),
                    sigma_mult=float(num.get("sigma_mult", 8.0)))
    mass_tol = float(num.get("mass_tol", 1e-6))
    fp_tol = float(num.get("fixed_point_tol", 1e-10))
    if mass_tol <= 0 or fp_tol <= 0:
        raise ConfigError("numerics tolerances must be positive")

    M, plant = _parse_network(raw["network"])

    crm_sec = raw["crm"]
    _require_keys(crm_sec, "crm", {"p_alpha", "r_max"}, {"p_alpha", "r_max"})
    crm = CrmConfig(p_alpha=_probability(crm_sec["p_alpha"], "crm.p_alpha"),
                    r_max=_positive_int(crm_sec["r_max"], "crm.r_max"))

    policy, conditioning = _parse_policy(raw["policy"], D_max)

    cfg = ExperimentConfig(
        M=M, plant=plant, policy=policy, crm=crm, conditioning=conditioning,
        D_max=D_max, D_phi=D_phi, grid=grid, mass_tol=mass_tol,
        fixed_point_tol=fp_tol,
        region=_parse_region(raw["region"]) if "region" in raw else None,
        thresholds=(_parse_thresholds(raw["thresholds"])
                    if "thresholds" in raw else None),
        simulate=(_parse_simulate(raw["simulate"])
                  if "simulate" in raw else None),
    )
    if policy.thresholds is not None or conditioning == "mixed":
        cfg.require_scalar("a threshold policy")
    return cfg
