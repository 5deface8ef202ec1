"""Individual-level SEIR modeling over explicit contact data.

Forward epidemic simulation, exact per-individual posterior inference of
infection traces by block-Gibbs sampling, Monte Carlo EM estimation of
transmission parameters, a federated message-passing variant of the sampler,
and a closed-loop harness for evaluating testing-and-quarantining policies.
"""

from ._version import __version__
from .contacts import (ContactLog, ContactPatternSpec, ContactPhase,
                       generate_contacts, generate_day_contacts)
from .em import EMConfig, EMResult, Weights, em_fit
from .federated import FederatedConfig, FederatedResult, FederatedSimulation
from .forward import (SCENARIOS, ForwardSimulation, ScenarioConfig,
                      ScenarioResult, run_scenario)
from .gibbs import (GibbsConfig, GibbsEngine, TripleSpace,
                    extend_censored_traces, risk_scores, trace_log_score)
from .model import (EXPOSED, INFECTIOUS, RECOVERED, STATE_NAMES, SUSCEPTIBLE,
                    CrispError, DataError, DomainError, DurationDistribution,
                    InfectionTrace, ModelParams, NumericalError, TestLog,
                    contact_rate, default_qe, default_qi, no_infection_prob,
                    test_likelihood, trace_state, trace_states,
                    transition_prob)
from .policy import (PolicyParams, PolicyRunConfig, RunMetrics, default_grid,
                     evaluate_policy_grid, run_policy, summarize_grid)

__all__ = [
    "__version__",
    "SUSCEPTIBLE", "EXPOSED", "INFECTIOUS", "RECOVERED", "STATE_NAMES",
    "CrispError", "DomainError", "DataError", "NumericalError",
    "DurationDistribution", "ModelParams", "InfectionTrace", "TestLog",
    "default_qe", "default_qi", "contact_rate", "no_infection_prob",
    "test_likelihood", "trace_state", "trace_states", "transition_prob",
    "ContactLog", "ContactPhase", "ContactPatternSpec",
    "generate_contacts", "generate_day_contacts",
    "ForwardSimulation", "ScenarioConfig", "ScenarioResult", "SCENARIOS",
    "run_scenario",
    "GibbsConfig", "GibbsEngine", "TripleSpace", "extend_censored_traces",
    "risk_scores", "trace_log_score",
    "EMConfig", "EMResult", "Weights", "em_fit",
    "FederatedConfig", "FederatedResult", "FederatedSimulation",
    "PolicyParams", "PolicyRunConfig", "RunMetrics", "default_grid",
    "evaluate_policy_grid", "run_policy", "summarize_grid",
]
