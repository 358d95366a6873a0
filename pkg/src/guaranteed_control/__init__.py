"""Guaranteed control of differential games under compact disturbance
constraints: simulation, dynamic inversion, extremal-shift strategies, grid
value functions and ensemble estimates of guaranteed results."""

from .core import (
    Box,
    Dynamics,
    FiniteSet,
    MissingSampleError,
    ModelError,
    NumericalError,
    Partition,
    Signal,
    StateEscapeError,
    TestSchedule,
    Trajectory,
    build_test_schedule,
    integrate,
    locate_index,
    sup_distance,
)
from .evaluation import (
    AdversarialFeedback,
    BlockRandom,
    DisturbanceEnsemble,
    RandomBangBang,
    chain_check,
    constant_bank,
    convergence_study,
    estimate_guaranteed_result,
)
from .inversion import (
    check_assumption1,
    check_assumption2,
    check_saddle,
    identify_surrogate_multi,
    identify_surrogate_single,
    quotient_classes,
)
from .oracle import GridGeometry, ValueTable, dp_quasi_value, exact_projection_oracle, value_shift_vector
from .strategies import (
    EpsilonFeedback,
    EpsilonStrategyConfig,
    UStarConfig,
    UStarFeedback,
    simulate_closed_loop,
)

__version__ = "0.1.0"
