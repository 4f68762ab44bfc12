"""Reduced dynamic chain event graphs for recurrent events in open populations."""

from .ciquery import check_cut, check_fine_cut, ci_statements, find_fine_cuts, is_intrinsic, roll_out, slice_dag
from .conjugate import PriorConfig, Scorer, SufficientStats, log_bayes_factor, log_marginal_likelihood, phantom_priors
from .data import Dataset, DataError, PathObservation, load_dataset, sufficient_stats
from .diagnostics import cluster_error, error_report, hellinger_weibull, leave_one_out, situational_error
from .graph import (
    Clustering,
    EventTree,
    HuedTree,
    ModifiedTree,
    Rdceg,
    Staging,
    StagingError,
    StructureError,
    build_rdceg,
    modify_tree,
    passage_slices,
    positions_from_staging,
)
from .laws import CompoundWeibullIG, Convolution, Mixture, PointMass, Weibull, compound_moments
from .models import GroundTruthModel, builtin_models, epilepsy_like_model, falls_model, smoking_model
from .search import SearchConfig, ahc_clusters, ahc_stages, select_model
from .simulate import simulate_population, simulate_stats
from .smp import CondensationError, Smp, absorption_probability, condense_smp, first_passage, renewal_kernel, to_smp

__version__ = "0.1.0"
