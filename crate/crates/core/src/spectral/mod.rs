//! Periodic grid fields and Fourier-multiplier operators on the torus.
//!
//! A differential operator of order `k` acts on Fourier coefficients through
//! `i^k A(κ)` with `κ = 2π ξ / period`. On an even grid the Nyquist component of
//! `κ` is set to zero so that odd multipliers preserve real fields; pure Nyquist
//! modes are then annihilated by every homogeneous operator, like constants.

mod ball;
mod fft;
mod field;
mod grid;
mod io;
mod ops;

pub use ball::{ball_integral, unit_ball_volume, BallInfo, BallMask, MaskPoint};
pub use field::PeriodicField;
pub use grid::{Frequency, GridSpec, MAX_POINTS};
pub use io::{dump_field, load_field, write_csv_slice, FieldHeader, LAYOUT};
pub use ops::{
    apply_multiplier, apply_operator, apply_pseudoinverse, c_star_residual, decompose, derivatives, mollify,
    project_afree, riesz_potential, Decomposition, DecompositionSummary, SpectralOperator,
    SpectralProjector, AFREE_TOLERANCE,
};
pub(crate) use ops::{mat_vec, rank_of};
