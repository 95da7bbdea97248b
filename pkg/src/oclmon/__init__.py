"""Online collaborative learning for monitoring many dependent processes.

The per-unit coefficients are modelled as ``beta_i = Q c_i``: ``K``
canonical models shared by the population and a membership vector per unit,
regularised towards similar units through a graph Laplacian.  The CL-UCB
policy spends a per-cycle budget of ``M`` observations on the units with the
highest upper confidence bound on their outcome.
"""

from .collab_model import (
    History,
    PopulationModel,
    Regularizer,
    SimilarityGraph,
    SufficientStats,
    als_fit,
    build_laplacian,
    init_membership,
    objective,
    predict,
    solve_canonical,
    solve_membership,
)
from .environment import (
    GroundTruth,
    ReplayDataset,
    SimConfig,
    features_at,
    load_replay,
    simulate_population,
    similarity_heat_kernel,
    similarity_inner,
)
from .errors import (
    ConfigError,
    DimensionError,
    IllConditionedError,
    OCLError,
    ReplayFormatError,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    cycle_regret,
    emit_results,
    estimation_error,
    run_experiment,
    sweep,
)
from .policy import (
    CLUCB,
    GOBLin,
    LinUCB,
    ExplorationParams,
    RegretBoundParams,
    make_policy,
    select_top_m,
    theorem1_bound,
)

__version__ = "0.1.0"
