"""Multi-robot motion planning by sequential penalized parabolic relaxation."""

from .bench import (
    ExperimentResult,
    GenerationError,
    RandomMapSpec,
    generate_preset,
    generate_random_instance,
    run_bad_seed_recovery,
    run_scaling,
    run_success_rate,
)
from .conic import CapabilityError, ConicProgram, solve
from .estimators import ParabolicPlanner, ScpPlanner
from .model import (
    DynamicsModel,
    FeasibilityReport,
    ObstacleSpec,
    ProblemInstance,
    RobotSpec,
    Solution,
    Tolerances,
    build_double_integrator,
    evaluate_objective,
    load_scenario,
    load_solution,
    propagate,
    rollout,
    save_scenario,
    save_solution,
    straight_line_seed,
    verify,
)
from .relax import RelaxationConfig, build_relaxation, relaxation_gap
from .scp import ScpConfig, solve_scp
from .sequential import SequentialConfig, SolveReport, solve_sequential, stopping_criterion
from .validation import InvalidInstanceError

__version__ = "0.1.0"
