"""Verification laboratory for multi-overlap self-averaging identities in
diluted spin glasses: disorder sampling, exact and Monte Carlo Gibbs
expectations, replica-monomial algebra, the identity catalog, and a symbolic
engine that regenerates the identity coefficients from formal power series.
"""

from .errors import CapacityError, CorruptRealizationError, ValidationError
from .exact import (CorrelationTensor, correlation_tensor, gibbs_weights,
                    log_partition, quenched_pressure)
from .expansion import (ExpansionTerm, energy_expansion_terms,
                        energy_product_layer, first_family_terms,
                        formal_log_expansion, generic_order_closed_form_terms,
                        log_extraction)
from .identities import (IdentityReport, PhiSpec, default_phi_dictionary,
                         factorization_residual, first_family_residual,
                         four_overlap_residual, gg_pair_residual, gg_residual,
                         magnetization_sa_residual, pressure_derivative_check,
                         stochastic_stability_residual)
from .model import (CouplingTerm, DisorderRealization, ModelSpec,
                    PerturbationSpec, energy, merge_perturbation_params,
                    realization_seed, sample_disorder)
from .moments import (OverlapEstimate, ReplicaMonomial, canonicalize, estimate,
                      format_monomial, literal_monomial, monomial_product,
                      parse_monomial, reduce_to_correlators, shared_pattern)
from .quench import EnsembleSpec, run_ensemble, run_manifest, sweep_sizes
from .sampler import ChainConfig, mc_estimate_monomial, run_chain

__version__ = "0.1.0"
