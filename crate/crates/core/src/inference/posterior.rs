use super::{CompoundSymmetry, InferenceError, LambdaMode, MixedData, ModelSpec};
use crate::glm::dot;
use crate::stats::{bernoulli_logit_ll, expit};

/// Smoothing constant in `|β| ≈ sqrt(β² + ε)` used for gradients only.
pub const SMOOTHING_EPSILON: f64 = 1e-8;

/// `Σ_k [ln(λ/2) − λ|β_k|]`: log of the product of independent Laplace(0, 1/λ) densities.
pub fn laplace_log_prior(betas: &[f64], lambda: f64) -> Result<f64, InferenceError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(InferenceError::Domain(format!("lambda must be > 0, got {lambda}")));
    }
    let log_half = (lambda / 2.0).ln();
    Ok(betas.iter().map(|b| log_half - lambda * b.abs()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorTerms {
    pub log_likelihood: f64,
    pub laplace_prior: f64,
    pub intercept_prior: f64,
    pub random_effects: f64,
    pub hyperpriors: f64,
}

impl PosteriorTerms {
    pub fn total(&self) -> f64 {
        self.log_likelihood
            + self.laplace_prior
            + self.intercept_prior
            + self.random_effects
            + self.hyperpriors
    }
}

/// Unnormalized log-posterior of the mixed model in the centered parameterization.
pub struct LogPosterior<'a> {
    pub data: &'a MixedData,
    pub spec: &'a ModelSpec,
}

impl<'a> LogPosterior<'a> {
    pub fn new(data: &'a MixedData, spec: &'a ModelSpec) -> Self {
        Self { data, spec }
    }

    /// Random-effect contribution to each row's linear predictor.
    pub fn random_offsets(&self, u: &[Vec<f64>]) -> Vec<f64> {
        (0..self.data.design.rows())
            .map(|r| dot(self.data.design.row(r), &u[self.data.groups[r]]))
            .collect()
    }

    pub fn log_likelihood(&self, beta: &[f64], offsets: &[f64]) -> f64 {
        let x = &self.data.design;
        (0..x.rows())
            .map(|r| bernoulli_logit_ll(self.data.outcomes[r], dot(x.row(r), beta) + offsets[r]))
            .sum()
    }

    fn intercept_prior(&self, b0: f64) -> f64 {
        let s = self.spec.intercept_prior_sd;
        -0.5 * (b0 / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Every addend of the log-posterior at a given state (u on the centered scale).
    pub fn terms(
        &self,
        beta: &[f64],
        u: &[Vec<f64>],
        sigma: f64,
        rho: f64,
        lambda: f64,
    ) -> Result<PosteriorTerms, InferenceError> {
        let offsets = self.random_offsets(u);
        let log_likelihood = self.log_likelihood(beta, &offsets);
        let laplace_prior = laplace_log_prior(&beta[1..], lambda)?;
        let intercept_prior = self.intercept_prior(beta[0]);
        let random_effects = if sigma > 0.0 {
            let cs = CompoundSymmetry::new(sigma, rho, beta.len())?;
            u.iter().map(|ui| cs.log_density(ui)).sum()
        } else {
            0.0
        };
        let scale = self.spec.sigma_prior_scale;
        let (lo, hi) = self.spec.rho_support(beta.len());
        let mut hyperpriors = if self.spec.fixed_sigma.is_none() {
            // Half-Normal density on σ.
            (2.0 / std::f64::consts::PI).sqrt().ln() - scale.ln() - 0.5 * (sigma / scale).powi(2)
        } else {
            0.0
        };
        hyperpriors -= (hi - lo).ln();
        if let LambdaMode::Hyperprior { shape, rate } = self.spec.lambda {
            hyperpriors += shape * rate.ln() - statrs::function::gamma::ln_gamma(shape)
                + (shape - 1.0) * lambda.ln()
                - rate * lambda;
        }
        Ok(PosteriorTerms {
            log_likelihood,
            laplace_prior,
            intercept_prior,
            random_effects,
            hyperpriors,
        })
    }

    /// β-block log density (likelihood + Laplace + intercept prior) with exact |β|.
    pub fn beta_log_density(&self, beta: &[f64], offsets: &[f64], lambda: f64) -> f64 {
        let l1: f64 = beta[1..].iter().map(|b| b.abs()).sum();
        self.log_likelihood(beta, offsets) - lambda * l1 + self.intercept_prior(beta[0])
    }

    /// β-block log density with |β| replaced by `sqrt(β² + ε)`.
    pub fn smoothed_beta_log_density(&self, beta: &[f64], offsets: &[f64], lambda: f64) -> f64 {
        let l1: f64 = beta[1..]
            .iter()
            .map(|b| (b * b + SMOOTHING_EPSILON).sqrt())
            .sum();
        self.log_likelihood(beta, offsets) - lambda * l1 + self.intercept_prior(beta[0])
    }

    /// Gradient of [`Self::smoothed_beta_log_density`].
    pub fn smoothed_beta_gradient(&self, beta: &[f64], offsets: &[f64], lambda: f64) -> Vec<f64> {
        let x = &self.data.design;
        let mut g = vec![0.0; beta.len()];
        for r in 0..x.rows() {
            let row = x.row(r);
            let resid = f64::from(u8::from(self.data.outcomes[r])) - expit(dot(row, beta) + offsets[r]);
            for (gk, xk) in g.iter_mut().zip(row) {
                *gk += resid * xk;
            }
        }
        g[0] -= beta[0] / self.spec.intercept_prior_sd.powi(2);
        for k in 1..beta.len() {
            g[k] -= lambda * beta[k] / (beta[k] * beta[k] + SMOOTHING_EPSILON).sqrt();
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_values() {
        let v = laplace_log_prior(&[0.0; 10], 1.0).unwrap();
        assert!((v - 10.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((v + 6.9315).abs() < 1e-4);
        assert!((laplace_log_prior(&[1.0], 2.0).unwrap() + 2.0).abs() < 1e-15);
        assert!(laplace_log_prior(&[1.0], 0.0).is_err());
        assert!(laplace_log_prior(&[1.0], -1.0).is_err());
    }

    #[test]
    fn laplace_density_integrates_to_one() {
        // Composite Simpson on [-L, L]; tails beyond carry exp(-λL).
        for lambda in [0.3, 1.0, 4.0] {
            let l: f64 = 60.0 / lambda;
            let n = 200_000;
            let h = 2.0 * l / n as f64;
            let f = |b: f64| laplace_log_prior(&[b], lambda).unwrap().exp();
            let mut s = f(-l) + f(l);
            for i in 1..n {
                let b = -l + i as f64 * h;
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(b);
            }
            let integral = s * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "lambda {lambda}: {integral}");
        }
    }
}
