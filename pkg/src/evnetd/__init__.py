"""Event-triggered control loops over a shared p-persistent CSMA medium:
chain analysis, stability tests, density propagation, policy synthesis and
slot-level Monte Carlo validation."""

from .model import (PlantModel, LoopState, TriggerPolicy, spectral_radius,
                    step_plant, trigger_decision, observer_update,
                    control_law, default_gain)
from .chain import (CrmConfig, NetworkModel, ChainSolution,
                    solve_network_fixed_point, is_network_steady,
                    TruncationError, ConvergenceError)
from .stability import (StabilityReport, LoopStability, tail_ratio_condition,
                        reliability_lower_bound, kappa_alpha,
                        constant_law_condition, lossy_variance_bound,
                        report_for_network)
from .density import (GridSpec, DensityGrid, DensityEvolution, gaussian_grid,
                      truncate_split, mix_untransmitted, propagate,
                      auxiliary_step, majorizes, variance, evolve,
                      threshold_for_probability)
from .synthesis import (DesignPoint, RegionMap, constant_law_fixed_point,
                        scan_region, additive_law, exponential_law,
                        extract_thresholds, lossy_event_probabilities,
                        solve_threshold_network)
from .simulate import SimConfig, SimTrace, run_network, empirical_stats
from .config import ConfigError, ExperimentConfig, load_config

__version__ = "0.1.0"
