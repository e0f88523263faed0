"""Adversarial episodic RL with switching costs: SEEDS and SEEDS-UT."""
from .adversary import AdversarySpec, generate_losses, lower_bound_mdp
from .estimators import SEEDS, SEEDSUT
from .harness import ExperimentConfig, compute_regret, fit_loglog, parse_config, run_experiment, sweep_and_fit
from .mdp import (
    DeterministicPolicy,
    LayeredMdp,
    Trajectory,
    expected_episode_loss,
    occupancy_of_policy,
    run_episode,
    validate_mdp,
)
from .occupancy import (
    OccupancyMeasure,
    TripleOccupancy,
    best_fixed_occupancy,
    induced_transition,
    kl_unnormalized,
    marginalize,
    policy_from_occupancy,
    validate_occupancy,
)
from .omd import ProjectionError, ProjectionReport, multiplicative_update, project_confidence, project_known
from .rng import RngStream
from .seeds import SeedsParams, estimate_loss_seeds, run_seeds, seeds_params, seeds_update
from .seeds_ut import (
    ConfidenceSet,
    Counts,
    SeedsUtParams,
    build_confidence_set,
    estimate_loss_ut,
    run_seeds_ut,
    seedsut_params,
    update_counts,
    upper_occupancy,
)

__version__ = "0.1.0"
