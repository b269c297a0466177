"""Bilevel trajectory optimization with mixed boundary conditions on
Koopman generator surrogates.

Pipeline: identify a bilinear generator model from sampled Lie-derivative
data (`gedmd`), convexify the fixed-boundary fixed-period subproblem as an
equality-constrained QP on exactly discretized lifted LTI dynamics
(`lower_level`), search the low-dimensional boundary/period space on top
(`upper_level`), and validate against a direct-transcription NLP of the
original dynamics (`baseline_nlp`).
"""

from .errors import (
    BuildError,
    ConfigError,
    CorrelationError,
    DataError,
    DegenerateQpError,
    DomainEvaluationError,
    HybridEventError,
    IntegrationError,
    KoopbilevelError,
    LowerLevelError,
    NonConvergenceError,
    NoSolutionError,
    NumericError,
)
from .systems import (
    ControlAffineSystem,
    ControlSignal,
    HybridExtras,
    Trajectory,
    apply_reset,
    eval_rhs,
    get_system,
    rk4_step,
    simulate,
)
from .lifting import (
    ObservableDictionary,
    get_dictionary,
    lift,
    lift_gradient,
    manifold_defect,
    unlift,
)
from .gedmd import (
    GeneratorModel,
    LiftedLTI,
    SampleSet,
    assemble_data,
    fit_generator,
    identify,
    linearize,
    prediction_error,
    sample_states,
)
from .numerics import (
    KktResult,
    ZohPair,
    expm,
    pearson,
    pinv_svd,
    resample_common_grid,
    solve_kkt,
    zoh_discretize,
)
from .lower_level import (
    BoundaryVariant,
    LowerLevelProblem,
    LowerLevelSolution,
    build_qp,
    choose_linearization_point,
    lower_cost_breakdown,
    solve_lower,
)
from .upper_level import (
    BilevelSolution,
    MixedBoundaryConstraint,
    UpperConfig,
    make_periodic_amplitude_anchor,
    make_walker_gait,
    solve_general,
    solve_reduced,
    sweep_period,
    upper_objective,
)
from .baseline_nlp import (
    NlpConfig,
    NlpSolution,
    TranscribedNlp,
    evaluate_solution,
    solve_nlp,
    transcribe,
)

__version__ = "0.1.0"
