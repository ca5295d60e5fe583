"""Monte Carlo maximum likelihood for autologistic lattice models.

Exact small-lattice oracles, Gibbs and importance sampling, resampled-MCMC
normalizing-constant estimation, adaptive likelihood maximization, and the
asymptotic-variance toolkit used to validate all of it.
"""

from .asymptotics import (CltReport, SandwichCov, SllnReport, clt_validate,
                          eta_table, exact_sandwich, lyapunov_moment,
                          optimal_h, schwarz_bound, slln_validate, xi_term)
from .errors import (ConfigError, DegenerateWeightsError, EvalOverflowError,
                     InfeasibleExactError, NumericalError)
from .estimators import (Atoms, IsremcConfig, PsiBox, adapis_run, atoms_eval,
                         atoms_log_eval, compact, is_atoms, is_estimate,
                         isremc_increment, merge_running)
from .experiments import (ExperimentConfig, RunRecord, fit_replications,
                          format_summary, generate_lattice, read_lattice,
                          read_records_csv, run_one, summarize, write_lattice,
                          write_records_csv)
from .model import (AutologisticLattice, Binomial, exact_log_norm,
                    exact_mean_suffstat, log_unnorm_density, neighbor_counts,
                    suff_stat)
from .optimizer import (ExactLogLik, FitResult, McLogLik, NewtonConfig,
                        PseudoLogLik, adap_mcml, benchmark_mcml, exact_mle,
                        mpl_estimate, newton_maximize)
from .samplers import (BinomialOptimal, BinomialTheta, BinomialUniform,
                       GibbsKernel, IdentityKernel, PseudoLikelihood,
                       TabularDensity, binomial_sample, gibbs_conditional,
                       gibbs_sweep, make_rng, pseudolik_log_density,
                       pseudolik_sample, rep_seed, run_gibbs)

__version__ = "0.1.0"

__all__ = [
    "AutologisticLattice", "Binomial", "suff_stat", "neighbor_counts",
    "log_unnorm_density", "exact_log_norm", "exact_mean_suffstat",
    "rep_seed", "make_rng", "gibbs_conditional", "gibbs_sweep", "run_gibbs",
    "GibbsKernel", "IdentityKernel", "PseudoLikelihood", "pseudolik_sample",
    "pseudolik_log_density", "BinomialUniform", "BinomialTheta",
    "BinomialOptimal", "binomial_sample", "TabularDensity",
    "Atoms", "IsremcConfig", "PsiBox", "atoms_eval", "atoms_log_eval",
    "compact", "merge_running", "is_atoms", "is_estimate", "adapis_run",
    "isremc_increment",
    "NewtonConfig", "FitResult", "McLogLik", "ExactLogLik", "PseudoLogLik",
    "newton_maximize", "benchmark_mcml", "adap_mcml", "mpl_estimate",
    "exact_mle",
    "SandwichCov", "CltReport", "SllnReport", "exact_sandwich", "optimal_h",
    "schwarz_bound", "eta_table", "xi_term", "lyapunov_moment",
    "clt_validate", "slln_validate",
    "ExperimentConfig", "RunRecord", "fit_replications", "run_one",
    "write_records_csv", "read_records_csv", "summarize", "format_summary",
    "write_lattice", "read_lattice", "generate_lattice",
    "ConfigError", "NumericalError", "InfeasibleExactError",
    "DegenerateWeightsError", "EvalOverflowError",
]
