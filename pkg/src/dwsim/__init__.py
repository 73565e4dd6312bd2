"""Monte Carlo and quadrature toolkit for critical branching Brownian
fields: cluster moment densities, uniform Brownian trees, hitting
probabilities, and Palm-conditioning experiments."""

__version__ = "0.1.0"

from .estimates import EstimateWithError
from .kernels import (
    DiscreteMeasure,
    convolve_heat,
    diagonal_distance,
    gaussian_domination_factor,
    heat_density,
)
from .moments import (
    MomentDensityRequest,
    markov_split_check,
    process_moment_density,
    q1,
    q2_cluster,
    q3_cluster_mc,
)
from .particles import (
    ClusterSample,
    ParticleField,
    count_surviving_ancestors,
    rebase_ancestors,
    sample_cluster,
    sample_stationary_cluster,
    simulate_field,
)
from .palm import (
    HittingRequest,
    campbell_palm_estimate,
    decoupling_experiment,
    estimate_hitting,
    joint_hitting_factorization,
    multiplicity_diagnostics,
)
from .point_processes import (
    order_statistic_density,
    sample_poisson_times,
    sample_uniform_binomial,
)
from .streams import RunningMoments, stream
from .trees import (
    DiscreteTreeTopology,
    MarkedBrownianTree,
    cluster_moment_density_mc,
    enumerate_topologies,
    sample_brownian_tree,
    sample_topology,
)

__all__ = [
    "EstimateWithError",
    "DiscreteMeasure",
    "convolve_heat",
    "diagonal_distance",
    "gaussian_domination_factor",
    "heat_density",
    "MomentDensityRequest",
    "markov_split_check",
    "process_moment_density",
    "q1",
    "q2_cluster",
    "q3_cluster_mc",
    "ClusterSample",
    "ParticleField",
    "count_surviving_ancestors",
    "rebase_ancestors",
    "sample_cluster",
    "sample_stationary_cluster",
    "simulate_field",
    "HittingRequest",
    "campbell_palm_estimate",
    "decoupling_experiment",
    "estimate_hitting",
    "joint_hitting_factorization",
    "multiplicity_diagnostics",
    "order_statistic_density",
    "sample_poisson_times",
    "sample_uniform_binomial",
    "RunningMoments",
    "stream",
    "DiscreteTreeTopology",
    "MarkedBrownianTree",
    "cluster_moment_density_mc",
    "enumerate_topologies",
    "sample_brownian_tree",
    "sample_topology",
]
