"""Joint position, velocity and orientation tracking from LEO satellite and RIS links.

Submodules: ``manifold`` (state space and its operators), ``geometry`` (link
parameters), ``channel`` (propagation and received pilots), ``fim`` (Fisher
information and observation covariances), ``ukf`` (manifold and Euclidean
unscented filters), ``scenario`` (orbits, trajectories, synthetic worlds),
``experiment`` (Monte Carlo and CRB sweeps) and ``cli``.
"""
from .errors import FilterStepError, LeorisError
from .experiment import compute_metrics, crb_sweep, run_monte_carlo
from .fim import crb_phi_d, fim_inverse, observation_covariance, observation_fim
from .geometry import WaveConstants, assemble_observation
from .manifold import UeState, manifold_mean, so3_boxminus, so3_boxplus, state_boxminus, state_boxplus
from .scenario import ScenarioConfig, build_world, desk_scenario, full_scenario
from .ukf import EuclideanUKF, FilterConfig, FilterState, RiemannianUKF, track, ukf_weights

__all__ = [
    "EuclideanUKF", "FilterConfig", "FilterState", "FilterStepError", "LeorisError", "RiemannianUKF",
    "ScenarioConfig", "UeState", "WaveConstants", "assemble_observation", "build_world",
    "compute_metrics", "crb_phi_d", "crb_sweep", "desk_scenario", "fim_inverse", "manifold_mean",
    "observation_covariance", "observation_fim", "full_scenario", "run_monte_carlo",
    "so3_boxminus", "so3_boxplus", "state_boxminus", "state_boxplus", "track", "ukf_weights",
]
__version__ = "0.1.0"
