"""Unsupervised phoneme forced alignment with VAE-regularized encoders."""
from .annealing import AnnealingSchedule, anneal_occupancy, gaussian_filter, schedule_sigma
from .decode import BoundarySet, MetricsReport, boundary_errors, metrics, path_to_boundaries
from .dp import (
    AlignmentPath,
    ForwardLattice,
    InfeasibleLatticeError,
    backward,
    brute_force_best_path,
    brute_force_logsum,
    brute_force_occupancy,
    forward_sum,
    occupancy,
    viterbi,
)
from .estimator import VaeAligner
from .lattice import StateSequence, build_lattice, expand_to_states, log_matching, log_position_prior
from .training import TrainConfig, Utterance, desk_config, total_loss

__version__ = "0.1.0"
