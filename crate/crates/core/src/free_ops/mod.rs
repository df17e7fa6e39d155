//! Free-probability operations: Marchenko–Pastur maps, the law of `χ`, the
//! special and general tensor limits, and the trace expansion of the
//! tensor moments.

mod chi;
mod general;
mod moments;
mod mp;

pub use chi::{
    chi_law, chi_law_with_diagnostics, chi_weights, q_limit_special, special_case_applies,
};
pub use general::{
    general_stieltjes, gmres, q_limit_general, sample_replicas, FreeApprox, FreeApproxConfig,
    GeneralDiagnostics, Operators, StochasticOperators, Strategy, AUTO_DENSE_LIMIT, MIN_PA,
};
pub use moments::{
    h_matrix, iid_eigenvalue_moment, q_moment_binomial, q_moment_formula, z_matrix,
    MAX_MOMENT_ORDER,
};
pub use mp::{
    gram_map, gram_map_with_diagnostics, mp_map, mp_map_with_diagnostics, mp_measure,
    mp_measure_on, GridSpec, MpMapConfig, SolverDiagnostics, DEFAULT_RELATIVE_ETA,
};
