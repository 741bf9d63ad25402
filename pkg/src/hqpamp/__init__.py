"""Approximate message passing and state evolution for the histogram query problem."""

from .amp import AmpConfig, AmpResult, amp_decode, eta, rbp_decode
from .model import (
    HQPInstance,
    center_data,
    error_metrics,
    exhaustive_posterior,
    generate_instance,
    load_instance,
    m_from_kappa,
    save_instance,
)
from .numerics import ExpectationEngine, SupSearchConfig, gauss_engine, mc_engine, sup_search
from .se import (
    Partition,
    SEConfig,
    check_monotone_pair,
    check_nishimori,
    connected_components,
    effective_resistance,
    limit_matrix,
    noninformative_start,
    order_params_from_x,
    se_iterate,
    se_map_f,
)
from .thresholds import (
    ScalarMap,
    kappa_binary,
    kappa_general_lower_bound,
    kappa_matching,
    kappa_sym,
    phi_binary,
    phi_sym,
    scalar_se,
    sym_asymptotic_ratio,
)

__version__ = "0.1.0"
