"""Exact and Monte Carlo tools for block decompositions and functional CLTs of mixing arrays."""
from .blocks import (BlockPartition, RegularityReport, construct_projective_blocks,
                     construct_rho_blocks, max_eps_for_perturbation, min_A_for_perturbation,
                     perturbation_D, perturbation_E, verify_regularity)
from .fclt import (PathEnsemble, TimeChangeTable, bm_statistics, brownian_ensemble, build_paths,
                   lindeberg_max_report, maximal_inequality_check, path_block_closeness,
                   time_change)
from .mixing import (JointBlockDistribution, MixingProfile, Provenance, alpha_exact,
                     coefficient_profile, delta_coefficient, phi_exact, rho_exact)
from .models import (ExactOracle, MarkovArrayModel, MDepArrayModel, MonteCarloOracle,
                     iid_model, ma1_model, two_state_chain)
from .subexp import SubexpSpec, check_def1, estimate_u_n, ratio_lemma

__version__ = "0.1.0"
