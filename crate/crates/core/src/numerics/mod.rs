//! Numerical kernels shared by both seller variants.

pub mod covariance;
pub mod ecdf;
pub mod estimators;
pub mod quadrature;

pub use covariance::{
    psd_direction_doubling, psd_double_dominance, weighted_norm, CovarianceState, StepCovariance,
};
pub use ecdf::{default_bin_count, dkw_band, EmpiricalDist, HistogramPdf};
pub use estimators::{
    ball_constrained_lsq, fit_theta_known_f, fit_theta_unknown_f, known_f_objective, KnownFit,
    KnownFitOptions, SimObservation, UnknownFit, WinObservation,
};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
