use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, ClubError, Result};

/// `Λ = λI + Σ φφᵀ` for one step, with its inverse and log-determinant
/// maintained by rank-one updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCovariance {
    pub gram: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub logdet: f64,
    pub count: usize,
}

impl StepCovariance {
    fn new(d: usize, lambda: f64) -> Self {
        StepCovariance {
            gram: DMatrix::identity(d, d) * lambda,
            inverse: DMatrix::identity(d, d) / lambda,
            logdet: d as f64 * lambda.ln(),
            count: 0,
        }
    }

    fn absorb(&mut self, phi: &[f64]) {
        let v = DVector::from_column_slice(phi);
        self.gram.ger(1.0, &v, &v, 1.0);
        let inv_v = &self.inverse * &v;
        let denom = 1.0 + v.dot(&inv_v);
        self.inverse.ger(-1.0 / denom, &inv_v, &inv_v, 1.0);
        self.logdet += denom.ln();
        self.count += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceState {
    pub lambda: f64,
    steps: Vec<StepCovariance>,
}

impl CovarianceState {
    /// Regularization `λ = 1`.
    pub fn new(d: usize, horizon: usize) -> Self {
        Self::with_regularization(d, horizon, 1.0)
    }

    pub fn with_regularization(d: usize, horizon: usize, lambda: f64) -> Self {
        assert!(lambda > 0.0, "regularization must be positive");
        CovarianceState {
            lambda,
            steps: (0..horizon).map(|_| StepCovariance::new(d, lambda)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.gram.nrows())
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, h: usize) -> &StepCovariance {
        &self.steps[h]
    }

    pub fn update(&mut self, h: usize, phi: &[f64]) -> Result<()> {
        check_index("step", h, self.steps.len())?;
        if phi.len() != self.dim() {
            return Err(ClubError::InvalidDimensions(format!(
                "feature of length {} for dimension {}",
                phi.len(),
                self.dim()
            )));
        }
        self.steps[h].absorb(phi);
        Ok(())
    }

    /// Recomputes every `Λ⁻¹` from `Λ` by Cholesky. The rank-one updates
    /// start from `I/λ` and lose about `log₁₀(1/λ)` digits when `λ` is tiny.
    pub fn refresh_inverses(&mut self) -> Result<()> {
        for s in &mut self.steps {
            let chol = s.gram.clone().cholesky().ok_or(ClubError::NotPositiveDefinite)?;
            let inv = chol.inverse();
            s.inverse = (&inv + inv.transpose()) * 0.5;
        }
        Ok(())
    }

    pub fn grams(&self) -> Vec<DMatrix<f64>> {
        self.steps.iter().map(|s| s.gram.clone()).collect()
    }
}

/// `‖φ‖_A = √(φᵀ A φ)`.
pub fn weighted_norm(phi: &[f64], inv: &DMatrix<f64>) -> f64 {
    let d = phi.len();
    let mut q = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += inv[(i, j)] * phi[j];
        }
        q += phi[i] * row;
    }
    q.max(0.0).sqrt()
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(ClubError::Asymmetric(asym));
    }
    Ok(())
}

fn doubling_spectrum(lam_new: &DMatrix<f64>, lam_old: &DMatrix<f64>) -> Result<DVector<f64>> {
    if lam_new.shape() != lam_old.shape() || !lam_new.is_square() {
        return Err(ClubError::InvalidDimensions("matrices must be square and equal-sized".into()));
    }
    check_symmetric(lam_new)?;
    check_symmetric(lam_old)?;
    let diff = lam_new - lam_old * 2.0;
    let diff = (&diff + diff.transpose()) * 0.5;
    Ok(SymmetricEigen::new(diff).eigenvalues)
}

/// `Λ_old⁻¹ ⪰ 2 Λ_new⁻¹`, i.e. `Λ_new - 2Λ_old ⪰ 0`: the information has
/// doubled in every direction.
pub fn psd_double_dominance(lam_new: &DMatrix<f64>, lam_old: &DMatrix<f64>) -> Result<bool> {
    Ok(doubling_spectrum(lam_new, lam_old)?.min() >= -1e-10)
}

/// `Λ_old⁻¹ ⊀ 2 Λ_new⁻¹`: some direction `x` has `xᵀΛ_old⁻¹x >= 2 xᵀΛ_new⁻¹x`,
/// i.e. the information has doubled in at least one direction. Implies
/// `det Λ_new >= 2 det Λ_old`.
pub fn psd_direction_doubling(lam_new: &DMatrix<f64>, lam_old: &DMatrix<f64>) -> Result<bool> {
    Ok(doubling_spectrum(lam_new, lam_old)?.max() >= -1e-10)
}
