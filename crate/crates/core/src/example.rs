//! The two-mode reference example used throughout the tests and the CLI.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::quantizer::{build_log_quantizer, QuantizerPartition};
use crate::synthesis::LyapunovCertificate;
use crate::system::{Mode, Plant};

pub const SAMPLING_PERIOD: f64 = 0.025;
pub const XI0: f64 = 0.08;
pub const ETA: f64 = 1.2;
/// Bands per half-axis; coverage radius `0.08·1.2³⁸ ≈ 81.2` encloses `B(80)`.
pub const LEVELS: usize = 38;
pub const DECREASE_RATE: f64 = 1.0;
pub const OUTER_RADIUS: f64 = 68.6;
pub const INNER_RADIUS: f64 = 0.175;
/// Published growth rate used for the dwell-time certificate.
pub const PUBLISHED_D: f64 = 55.15;
pub const PUBLISHED_P: [f64; 4] = [2.9171, 0.3489, 0.3489, 3.6256];
pub const PUBLISHED_K1: [f64; 2] = [1.38, -1.86];
pub const PUBLISHED_K2: [f64; 2] = [-2.80, 3.77];

pub fn a1() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -3.0, 2.0]) / 6.0
}

pub fn b1() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 1, &[-4.0, 3.0]) / 6.0
}

pub fn a2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, -5.0, 1.0, 2.0])
}

pub fn b2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 1, &[1.0, -1.0])
}

/// Plant with the gains as printed (two decimals).
pub fn printed_plant() -> Plant {
    Plant::new(
        vec![
            Mode::new(a1(), b1(), DMatrix::from_row_slice(1, 2, &PUBLISHED_K1)),
            Mode::new(a2(), b2(), DMatrix::from_row_slice(1, 2, &PUBLISHED_K2)),
        ],
        SAMPLING_PERIOD,
    )
    .expect("reference plant is well formed")
}

/// Plant with the regulator gains recomputed for the cost `∫ xᵀx + u²`.
///
/// The printed `K₁` does not reproduce the quoted cross-mode eigenvalues;
/// the recomputed gains do.
pub fn plant() -> Plant {
    printed_plant()
        .refine_gains_lqr(&DMatrix::identity(2, 2), &DMatrix::identity(1, 1))
        .expect("printed gains are stabilising")
}

pub fn quantizer() -> QuantizerPartition {
    build_log_quantizer(XI0, ETA, LEVELS, 2).expect("reference quantizer parameters are valid")
}

pub fn reference_p() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &PUBLISHED_P)
}

pub fn reference_certificate() -> Result<LyapunovCertificate> {
    LyapunovCertificate::new(reference_p(), DECREASE_RATE, OUTER_RADIUS, INNER_RADIUS)
}
