//! Compound-symmetric covariance of the patient-level random effects:
//! common variance σ² on the diagonal, common covariance ρσ² elsewhere.

use nalgebra::DMatrix;

use super::InferenceError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundSymmetry {
    pub sigma: f64,
    pub rho: f64,
    pub dim: usize,
}

/// Lower bound on ρ keeping a `dim`-dimensional compound-symmetric matrix positive definite.
pub fn rho_lower_bound(dim: usize) -> f64 {
    if dim <= 1 {
        f64::NEG_INFINITY
    } else {
        -1.0 / (dim as f64 - 1.0)
    }
}

impl CompoundSymmetry {
    pub fn new(sigma: f64, rho: f64, dim: usize) -> Result<Self, InferenceError> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(InferenceError::Domain(format!("sigma must be >= 0, got {sigma}")));
        }
        if dim == 0 {
            return Err(InferenceError::Domain("dimension must be positive".into()));
        }
        if !(rho > rho_lower_bound(dim) && rho < 1.0) {
            return Err(InferenceError::Domain(format!(
                "rho {rho} outside ({}, 1) for dimension {dim}",
                rho_lower_bound(dim)
            )));
        }
        Ok(Self { sigma, rho, dim })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let s2 = self.sigma * self.sigma;
        DMatrix::from_fn(self.dim, self.dim, |i, j| if i == j { s2 } else { self.rho * s2 })
    }

    /// Eigenvalues: σ²(1 − ρ) with multiplicity dim − 1, and σ²(1 + (dim − 1)ρ).
    pub fn eigenvalues(&self) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        (s2 * (1.0 - self.rho), s2 * (1.0 + (self.dim as f64 - 1.0) * self.rho))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let (a, b) = self.eigenvalues();
        a.min(b)
    }

    /// Coefficients (a, b) of the symmetric square root of the correlation part,
    /// `a·I + b·J`, so that `σ (a I + b J)` squared gives the covariance.
    pub fn root_coefficients(rho: f64, dim: usize) -> (f64, f64) {
        let a = (1.0 - rho).sqrt();
        let b = ((1.0 + (dim as f64 - 1.0) * rho).sqrt() - a) / dim as f64;
        (a, b)
    }

    /// Maps a standard-normal vector to a draw with this covariance.
    pub fn apply_root(&self, z: &[f64]) -> Vec<f64> {
        let (a, b) = Self::root_coefficients(self.rho, self.dim);
        let sum: f64 = z.iter().sum();
        z.iter().map(|v| self.sigma * (a * v + b * sum)).collect()
    }

    /// Log-density of N(0, D) at `u`; requires σ > 0.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let d = self.dim as f64;
        let (l1, l2) = self.eigenvalues();
        let sum: f64 = u.iter().sum();
        let ss: f64 = u.iter().map(|v| v * v).sum();
        // D⁻¹ = [I − ρ/(1 + (d−1)ρ) J] / (σ²(1 − ρ))
        let quad = (ss - self.rho / (1.0 + (d - 1.0) * self.rho) * sum * sum) / l1;
        let log_det = (d - 1.0) * l1.ln() + l2.ln();
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
    }
}

/// Builds the compound-symmetric random-effects covariance matrix.
pub fn build_covariance(sigma: f64, rho: f64, dim: usize) -> Result<DMatrix<f64>, InferenceError> {
    Ok(CompoundSymmetry::new(sigma, rho, dim)?.matrix())
}
