"""Sequential Monte Carlo bandits: particle Thompson sampling for static,
contextual and dynamic Bernoulli bandits, with baselines, a replay evaluator
and a simulation harness."""

__version__ = "0.1.0"

from .errors import (
    BanditError,
    ConfigurationError,
    ContractError,
    DegeneracyError,
    InvalidInputError,
    NumericalError,
    ParseError,
    UndefinedResultError,
)
from .model import (
    HierarchicalNormalPrior,
    IndependentNormalPrior,
    InteractionRecord,
    Link,
    ObservationModel,
    ParamVector,
    RandomWalkDynamics,
    expected_reward,
    link_eval,
    link_inverse,
    log_likelihood,
)
from .smc import (
    History,
    MoveKernel,
    ParticleSet,
    effective_sample_size,
    init_particles,
    probability_of_optimality,
    resample,
    reweight,
    step_dynamic,
    step_static,
    thompson_select,
)
from .policies import (
    BetaTSPolicy,
    EpsGreedyPolicy,
    FixedArmPolicy,
    Policy,
    PolicySpec,
    RandomPolicy,
    SMCDynamicPolicy,
    SMCSettings,
    SMCStaticPolicy,
    UCBPolicy,
    build_policy,
)
from .replay import ReplayLog, average_reward, load_log, replay_evaluate, replay_repeated, welch_t_test
