//! Convex-relaxed variational image restoration with a Wasserstein prior on
//! the grayvalue histogram.
//!
//! An image `u: Ω → [0,1]` is lifted to a field `φ(x, l)` over pixels and
//! grayvalue planes. In the lifted space the data term and the histogram map
//! become linear, total variation stays convex, and the Wasserstein-1
//! distance on the line reduces to an `ℓ1` distance between CDFs. The relaxed
//! problem is minimized by a product-space Douglas-Rachford iteration whose
//! blocks all have cheap proximity operators.
//!
//! Modules:
//!
//! - [`field`]: images, level grids, histograms, lifted fields and the maps
//!   between them.
//! - [`transport`]: `W1` on the line, monotone couplings, dual certificates
//!   and Hoeffding-Fréchet checks.
//! - [`proxops`]: soft-thresholding, monotone column projection, gradient
//!   coupling projection and the Wasserstein prox.
//! - [`solver`]: problem definition, energies and the splitting solver.
//! - [`oracle`]: slow brute-force references. Only tests call these.

pub mod error;
pub mod field;
pub mod oracle;
pub mod proxops;
pub mod solver;
pub mod transport;

pub use error::{Error, Result};
pub use field::{
    cdf_of, histogram_of, lift, marginal_histogram, threshold, Cdf, Histogram, Image, LevelGrid,
    LiftedField, LiftedShape, PlaneStack,
};
pub use proxops::{GradientField, TvKind};
pub use solver::{
    data_cost_table, primal_energy, relaxed_energy, solve, DataCost, DataTerm, Problem,
    relaxed_energy_of, image_tv, SolveReport, SolverParams, TraceSample,
};
pub use transport::{
    dual_feasible, hf_bounds_check, ot_monotone, w1_cdf, w1_dual_certificate, CostMatrix,
    DualPair, TransportPlan,
};
