"""Mechanical DNA unzipping as a killed birth-death walk in a random base
environment, with exact Bayesian recovery of the hidden sequence.

Modules: ``energy`` (environment and transition law), ``walker`` (replica
simulation and sufficient statistics), ``inference`` (site posteriors, global
MAP decoding, error probabilities), ``rates`` (analytic moments and decay
rates), ``protocols`` (force ladders and the energy estimator), ``cli``
(batch front-end).
"""

from .energy import (
    BASES,
    Base,
    BaseSequence,
    EnergyEnvironment,
    EnergyTable,
    Environment,
    ForceField,
    ModelParams,
    check_injectivity,
    delta_g,
    environment_from_json,
    free_energy_profile,
    hop_probability,
    lookup_g0,
    transition_rates,
)
from .inference import (
    DecodeResult,
    EdgePotentials,
    ErrorReport,
    Prior,
    RateFit,
    SitePosterior,
    build_edge_potentials,
    decode_map,
    empirical_rate,
    empirical_rate_from_logs,
    error_report,
    local_information,
    log_partition,
    prob_any_error,
    prob_nonsuccessive_errors,
    rate_residuals,
    sequence_posterior,
    site_error_probability,
    site_map_estimate,
    site_posterior,
)
from .protocols import (
    EnergyEstimate,
    LevelLadder,
    LevelStats,
    ProtocolPlan,
    build_protocol,
    estimate_energy,
    h_margins,
    q_prob,
    rc_energy,
    run_protocol,
    sequence_from_energies,
    validate_ladder,
    window_schedule,
)
from .rates import (
    MarginSet,
    RateReport,
    count_moments,
    decision_margins,
    expected_unzip_time,
    gap_value,
    joint_up_count_pmf,
    lc_bound,
    obstacle_height,
    pair_count_pmf,
    pbar,
    rate_report,
    rc_site,
)
from .walker import (
    AggregateStats,
    SeedSpec,
    StepCapExceeded,
    WalkStats,
    accumulate_checkpoints,
    simulate_continuous_walk,
    simulate_discrete_walk,
    simulate_ensemble,
    verify_conservation,
)

__version__ = "0.1.0"
