//! Finite-alphabet directed information, information densities and
//! nonasymptotic Berger-Tung bounds with inter-block memory.
//!
//! Joint pmfs use labeled axes `(name, time, observer)`: the source `X` and
//! estimate `Xhat` belong to observer 0, observations `Y` and auxiliaries `U`
//! to observers `1..=K`.

mod bound;
mod info;
mod kernel;
mod pmf;
mod rates;
mod region;
mod text;

pub use bound::{
    estimate_event_probability, evaluate_bt_both, evaluate_bt_bound, evaluate_bt_sharp, gamma, BtBound, CodeParams,
    McEstimate, MC_BLOCK,
};
pub use info::{
    causally_conditioned_di, check_permutation, directed_information, info_density_tables, BtLayout, DensityTable,
    InfoDensities,
};
pub use kernel::{assemble, CausalKernel, KernelRole};
pub use pmf::{names, Axis, AxisRef, Factor, FinitePmf, Marginal, Process, ENUMERATION_CAP, NORMALIZATION_TOL};
pub use rates::{achievable_rates, check_separate_encoding, select_code_sizes, CodeSizes, Rates, MARKOV_TOL};
pub use region::{region_equivalence, RegionReport, BOUNDARY_MARGIN, MAX_OBSERVERS};
pub use text::{parse_bt_spec, BtSpec};
