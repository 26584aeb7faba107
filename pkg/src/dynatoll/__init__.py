"""Dynamic user equilibrium with embedded emission estimation and
second-best dynamic toll optimization."""

from .network import (
    ArcSpec,
    FundamentalDiagram,
    Network,
    ODPair,
    PathSpec,
    TimeGrid,
    fd_flow,
    fd_phi,
    fd_psi,
    validate_network,
)
from .flows import PathFlowProfile, zero_profile
from .loading import (
    ArrivalPenaltyParams,
    CumulativeCurve,
    DNLResult,
    arc_travel_time,
    diverge_split,
    effective_delay,
    lax_hopf_exit,
    load_network,
)
from .emissions import (
    EmissionModel,
    PathEmissionResult,
    emfac_model,
    emission_per_distance,
    emission_rate,
    path_emission,
    total_emission,
)
from .equilibrium import (
    DUEReport,
    FixedPointParams,
    equilibrium_audit,
    fixed_point_solve,
    initial_profile,
    project_lambda,
    total_travel_cost,
)
from .tolls import TollSchedule, path_toll_costs, zero_toll
from .tolling import (
    MPCCState,
    Multipliers,
    ObjectiveValue,
    PenaltySettings,
    Weights,
    complementarity_residuals,
    evaluate_toll,
    fd_gradient,
    gradient_projection_solve,
    penalty_Q,
    scalarized_objective,
)
from .reports import ComparisonReport, RunManifest
from .scenario import Scenario, load_bundled, load_scenario

__version__ = "0.1.0"
