//! Adaptive Metropolis-within-Gibbs for the mixed model.
//!
//! Random effects use the non-centered form `u_i = σ (a I + b J) z_i` with
//! `z_i ~ N(0, I)`, so a proposal on `z_i` is a σ-scaled proposal on `u_i` and
//! the chain stays mobile as σ → 0. Moves per iteration:
//!
//! - β: preconditioned Langevin (or random walk), exact |β| in the acceptance ratio;
//! - each patient's z: Crank–Nicolson proposal, which leaves N(0, I) invariant;
//! - log σ and logit-scaled ρ with z fixed;
//! - log σ jointly with a rescaling of β by the logistic attenuation factor;
//! - log σ and ρ with u fixed (z rescaled), which interweaves the two parameterizations;
//! - λ from its Gamma conditional.
//!
//! Step sizes adapt by Robbins–Monro during burn-in only.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    AcceptanceRates, BetaProposal, CompoundSymmetry, FitSummary, InferenceError, LambdaMode,
    LogPosterior, MixedData, ModelSpec, ParameterSummary, PosteriorDraws, ESS_THRESHOLD,
    PSRF_THRESHOLD,
};
use crate::cohort::{CenteringConstants, CohortTable, FACTOR_NAMES};
use crate::diagnostics::{diagnose, identical_chains, ParameterDiagnostics};
use crate::glm::{dot, fit_logistic, Design, FitOptions, Penalty};
use crate::stats::{bernoulli_logit_ll, expit, mean, quantile_sorted, variance};

const LANGEVIN_TARGET: f64 = 0.574;
const RANDOM_WALK_TARGET: f64 = 0.234;
const BLOCK_TARGET: f64 = 0.3;
const SCALAR_TARGET: f64 = 0.44;

/// Result of fitting the model to a cohort table.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub draws: PosteriorDraws,
    pub summary: FitSummary,
    pub centering: CenteringConstants,
    pub spec: ModelSpec,
    pub rows: usize,
    pub patients: usize,
}

/// Fits the mixed model to a cohort with complete covariates.
pub fn fit_model(data: &CohortTable, spec: &ModelSpec) -> Result<ModelFit, InferenceError> {
    if !data.records().iter().all(|r| r.covariates().is_ok()) {
        return Err(InferenceError::Data("cohort has missing covariates; impute first".into()));
    }
    let centering = match spec.centering {
        Some(c) => c,
        None => data.factor_means()?,
    };
    let factors: Vec<[f64; 10]> = data
        .factor_matrix(&centering)?
        .iter()
        .map(|f| *f.values())
        .collect();
    let (groups, _) = data.patient_groups();
    let mut mixed = MixedData::new(
        Design::with_intercept(&factors),
        data.outcomes(),
        groups,
        FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
    )?;
    let mut labels = vec![String::new(); mixed.group_rows.len()];
    for (r, g) in mixed.groups.iter().enumerate() {
        if labels[*g].is_empty() {
            labels[*g] = data.records()[r].patient_id.clone();
        }
    }
    mixed.group_labels = labels;
    let mut spec = spec.clone();
    spec.centering = Some(centering);
    let (draws, summary) = fit_design(&mixed, &spec)?;
    Ok(ModelFit {
        draws,
        summary,
        centering,
        spec,
        rows: data.len(),
        patients: mixed.group_rows.len(),
    })
}

struct Init {
    beta: Vec<f64>,
    chol: DMatrix<f64>,
}

fn initial_estimate(data: &MixedData) -> Result<Init, InferenceError> {
    let opts = FitOptions {
        penalty: Penalty::Ridge(1e-2),
        intercept_prior_variance: Some(100.0),
        ..Default::default()
    };
    let fit = fit_logistic(&data.design, &data.outcomes, &opts)?;
    let p = fit.coefficients.len();
    let cov = DMatrix::from_row_slice(p, p, &fit.covariance);
    let chol = cov
        .cholesky()
        .ok_or_else(|| InferenceError::Data("initial information matrix not positive definite".into()))?
        .l();
    Ok(Init {
        beta: fit.coefficients,
        chol,
    })
}

fn separation_warnings(data: &MixedData) -> Vec<String> {
    let mut out = Vec::new();
    let x = &data.design;
    for k in 1..x.cols() {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut levels: Vec<f64> = Vec::new();
        for r in 0..x.rows() {
            let v = x.row(r)[k];
            let c = usize::from(data.outcomes[r]);
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
            if levels.len() <= 2 && !levels.contains(&v) {
                levels.push(v);
            }
        }
        let name = &data.names[k - 1];
        if hi[0] < lo[1] || hi[1] < lo[0] {
            out.push(format!("separation: `{name}` perfectly predicts the outcome"));
        } else if levels.len() == 2 {
            for level in &levels {
                let ys: Vec<bool> = (0..x.rows())
                    .filter(|r| x.row(*r)[k] == *level)
                    .map(|r| data.outcomes[r])
                    .collect();
                if ys.iter().all(|y| *y) || ys.iter().all(|y| !*y) {
                    out.push(format!("quasi-separation: one level of `{name}` has a single outcome class"));
                    break;
                }
            }
        }
    }
    out
}

struct ChainOutput {
    beta: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    rho: Vec<f64>,
    lambda: Vec<f64>,
    u_mean: Vec<Vec<f64>>,
    acceptance: AcceptanceRates,
}

fn total_ll(y: &[bool], fixed: &[f64], rand: &[f64]) -> f64 {
    y.iter()
        .zip(fixed.iter().zip(rand))
        .map(|(y, (f, r))| bernoulli_logit_ll(*y, f + r))
        .sum()
}

fn adapt(log_scale: &mut f64, accept_prob: f64, target: f64, iteration: usize) {
    adapt_within(log_scale, accept_prob, target, iteration, 3.0);
}

fn adapt_within(log_scale: &mut f64, accept_prob: f64, target: f64, iteration: usize, max: f64) {
    let gamma = (iteration as f64 + 10.0).powf(-0.6);
    *log_scale = (*log_scale + gamma * (accept_prob - target)).clamp(-15.0, max);
}

fn run_chain(
    data: &MixedData,
    spec: &ModelSpec,
    init: &Init,
    chain: usize,
) -> Result<ChainOutput, InferenceError> {
    let settings = &spec.sampler;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(chain as u64);

    let x = &data.design;
    let y = &data.outcomes;
    let n = x.rows();
    let p = x.cols();
    let n_groups = data.group_rows.len();
    let np = p - 1;
    let post = LogPosterior::new(data, spec);
    let active = spec.fixed_sigma != Some(0.0);
    let (rho_lo, rho_hi) = spec.rho_support(p);
    let row_sums: Vec<f64> = (0..n).map(|r| x.row(r).iter().sum()).collect();

    let mut chol = init.chol.clone();
    let mut beta: Vec<f64> = {
        let xi = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let jitter = &chol * xi * 1.5;
        init.beta.iter().zip(jitter.iter()).map(|(b, j)| b + j).collect()
    };
    let mut sigma = match spec.fixed_sigma {
        Some(s) => s,
        None => 0.1 * (0.5 * rng.sample::<f64, _>(StandardNormal)).exp(),
    };
    let mut rho: f64 = (0.1 * rng.sample::<f64, _>(StandardNormal)).clamp(rho_lo + 1e-3, rho_hi - 1e-3);
    let mut lambda = match spec.lambda {
        LambdaMode::Fixed { value } => value,
        LambdaMode::Hyperprior { .. } => 1.0,
    };
    let mut z: Vec<f64> = if active {
        (0..n_groups * p).map(|_| rng.sample(StandardNormal)).collect()
    } else {
        vec![0.0; n_groups * p]
    };
    let z_of = |z: &[f64], g: usize| -> Vec<f64> { z[g * p..(g + 1) * p].to_vec() };
    let mut xz: Vec<f64> = (0..n)
        .map(|r| dot(x.row(r), &z[data.groups[r] * p..(data.groups[r] + 1) * p]))
        .collect();
    let mut zsum: Vec<f64> = (0..n_groups).map(|g| z_of(&z, g).iter().sum()).collect();
    let rand_lp_for = |sigma: f64, rho: f64, xz: &[f64], zsum: &[f64]| -> Vec<f64> {
        if !active {
            return vec![0.0; n];
        }
        let (a, b) = CompoundSymmetry::root_coefficients(rho, p);
        (0..n)
            .map(|r| sigma * (a * xz[r] + b * zsum[data.groups[r]] * row_sums[r]))
            .collect()
    };
    let mut rand_lp = rand_lp_for(sigma, rho, &xz, &zsum);
    let mut fixed_lp = x.linear_predictor(&beta);

    let langevin = settings.beta_proposal == BetaProposal::Langevin;
    let beta_target = if langevin { LANGEVIN_TARGET } else { RANDOM_WALK_TARGET };
    let mut log_h: f64 = if langevin { (1.0f64).ln() } else { (2.38 / (p as f64).sqrt()).ln() };
    // Crank–Nicolson step size for z, on the logit scale.
    let mut logit_sz: f64 = 0.0;
    let mut log_ss: f64 = (0.5f64).ln();
    let mut log_sr: f64 = (0.5f64).ln();
    let mut log_ssc: f64 = (0.1f64).ln();
    let mut log_sj: f64 = (0.5f64).ln();
    let mut log_src: f64 = (0.1f64).ln();

    let mut lp_beta = post.beta_log_density(&beta, &rand_lp, lambda);
    let mut grad = post.smoothed_beta_gradient(&beta, &rand_lp, lambda);
    let keep = (settings.iterations - settings.burn_in).div_ceil(settings.thin);
    let mut out = ChainOutput {
        beta: Vec::with_capacity(keep),
        sigma: Vec::with_capacity(keep),
        rho: Vec::with_capacity(keep),
        lambda: Vec::with_capacity(keep),
        u_mean: vec![vec![0.0; p]; n_groups],
        acceptance: AcceptanceRates::default(),
    };
    let mut acc = [0.0f64; 4];
    let window = (settings.burn_in / 5, 2 * settings.burn_in / 5);
    let mut window_draws: Vec<Vec<f64>> = Vec::new();

    for it in 0..settings.iterations {
        let burning = it < settings.burn_in;

        // β block.
        {
            let h = log_h.exp();
            let xi = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let drift = |g: &[f64]| -> DVector<f64> {
                let gv = DVector::from_row_slice(g);
                &chol * (chol.transpose() * gv) * (0.5 * h * h)
            };
            let bv = DVector::from_row_slice(&beta);
            let fwd_mean = if langevin { &bv + drift(&grad) } else { bv.clone() };
            let prop = &fwd_mean + &chol * &xi * h;
            let prop_beta: Vec<f64> = prop.iter().copied().collect();
            let lp_prop = post.beta_log_density(&prop_beta, &rand_lp, lambda);
            let mut log_alpha = lp_prop - lp_beta;
            let mut grad_prop = Vec::new();
            if langevin && lp_prop.is_finite() {
                grad_prop = post.smoothed_beta_gradient(&prop_beta, &rand_lp, lambda);
                let bwd_mean = &prop + drift(&grad_prop);
                let resid = chol
                    .solve_lower_triangular(&(&bv - bwd_mean))
                    .unwrap_or_else(|| DVector::from_element(p, f64::INFINITY));
                log_alpha += -resid.norm_squared() / (2.0 * h * h) + 0.5 * xi.norm_squared();
            }
            let alpha = if log_alpha.is_nan() { 0.0 } else { log_alpha.min(0.0).exp() };
            if rng.random::<f64>() < alpha {
                beta = prop_beta;
                lp_beta = lp_prop;
                fixed_lp = x.linear_predictor(&beta);
                grad = if langevin {
                    grad_prop
                } else {
                    post.smoothed_beta_gradient(&beta, &rand_lp, lambda)
                };
                if !burning {
                    acc[0] += 1.0;
                }
            }
            if burning {
                adapt(&mut log_h, alpha, beta_target, it);
            }
            if !lp_beta.is_finite() {
                return Err(InferenceError::NonFinite { chain, iteration: it });
            }
        }

        if active {
            // Patient blocks.
            let (a, b) = CompoundSymmetry::root_coefficients(rho, p);
            let sz = expit(logit_sz);
            let keep = (1.0 - sz * sz).sqrt();
            let mut block_acc = 0.0;
            for g in 0..n_groups {
                let zg = &z[g * p..(g + 1) * p];
                let prop: Vec<f64> = zg
                    .iter()
                    .map(|v| keep * v + sz * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let prop_sum: f64 = prop.iter().sum();
                // The proposal preserves N(0, I), so only the likelihood enters.
                let mut delta = 0.0;
                let rows = &data.group_rows[g];
                let mut new_xz = Vec::with_capacity(rows.len());
                let mut new_rand = Vec::with_capacity(rows.len());
                for &r in rows {
                    let nx = dot(x.row(r), &prop);
                    let nr = sigma * (a * nx + b * prop_sum * row_sums[r]);
                    delta += bernoulli_logit_ll(y[r], fixed_lp[r] + nr)
                        - bernoulli_logit_ll(y[r], fixed_lp[r] + rand_lp[r]);
                    new_xz.push(nx);
                    new_rand.push(nr);
                }
                let alpha = delta.min(0.0).exp();
                if rng.random::<f64>() < alpha {
                    z[g * p..(g + 1) * p].copy_from_slice(&prop);
                    zsum[g] = prop_sum;
                    for (i, &r) in rows.iter().enumerate() {
                        xz[r] = new_xz[i];
                        rand_lp[r] = new_rand[i];
                    }
                    if !burning {
                        acc[1] += 1.0 / n_groups as f64;
                    }
                }
                block_acc += alpha;
            }
            if burning {
                adapt_within(&mut logit_sz, block_acc / n_groups as f64, BLOCK_TARGET, it, 30.0);
            }

            let ll_now = total_ll(y, &fixed_lp, &rand_lp);

            // σ on the log scale.
            let mut ll_now = ll_now;
            if spec.fixed_sigma.is_none() {
                let s2 = spec.sigma_prior_scale.powi(2);
                let prop_sigma = sigma * (log_ss.exp() * rng.sample::<f64, _>(StandardNormal)).exp();
                let ratio = prop_sigma / sigma;
                let prop_rand: Vec<f64> = rand_lp.iter().map(|v| v * ratio).collect();
                let ll_prop = total_ll(y, &fixed_lp, &prop_rand);
                let log_prior = |s: f64| -s * s / (2.0 * s2) + s.ln();
                let delta = ll_prop - ll_now + log_prior(prop_sigma) - log_prior(sigma);
                let alpha = if delta.is_nan() { 0.0 } else { delta.min(0.0).exp() };
                if rng.random::<f64>() < alpha {
                    sigma = prop_sigma;
                    rand_lp = prop_rand;
                    ll_now = ll_prop;
                    if !burning {
                        acc[2] += 1.0;
                    }
                }
                if burning {
                    adapt(&mut log_ss, alpha, SCALAR_TARGET, it);
                }
            }

            // ρ on the logit scale of its support.
            {
                let width = rho_hi - rho_lo;
                let t = crate::stats::logit((rho - rho_lo) / width);
                let t_prop = t + log_sr.exp() * rng.sample::<f64, _>(StandardNormal);
                let prop_rho = rho_lo + width * expit(t_prop);
                if prop_rho > rho_lo && prop_rho < rho_hi {
                    let prop_rand = rand_lp_for(sigma, prop_rho, &xz, &zsum);
                    let ll_prop = total_ll(y, &fixed_lp, &prop_rand);
                    let jac = |r: f64| ((r - rho_lo) * (rho_hi - r)).ln();
                    let delta = ll_prop - ll_now + jac(prop_rho) - jac(rho);
                    let alpha = if delta.is_nan() { 0.0 } else { delta.min(0.0).exp() };
                    if rng.random::<f64>() < alpha {
                        rho = prop_rho;
                        rand_lp = prop_rand;
                        ll_now = ll_prop;
                        if !burning {
                            acc[3] += 1.0;
                        }
                    }
                    if burning {
                        adapt(&mut log_sr, alpha, SCALAR_TARGET, it);
                    }
                }
            }
            // Joint σ–β move: β is rescaled by the logistic attenuation factor
            // sqrt((1 + c²V')/(1 + c²V)), V the realized random-offset variance.
            if spec.fixed_sigma.is_none() && sigma > 0.0 {
                const C2: f64 = 0.346;
                let s2 = spec.sigma_prior_scale.powi(2);
                let v = rand_lp.iter().map(|r| r * r).sum::<f64>() / n as f64;
                let prop_sigma = sigma * (log_sj.exp() * rng.sample::<f64, _>(StandardNormal)).exp();
                let k = prop_sigma / sigma;
                let t = ((1.0 + C2 * v * k * k) / (1.0 + C2 * v)).sqrt();
                let prop_beta: Vec<f64> = beta.iter().map(|b| b * t).collect();
                let prop_fixed: Vec<f64> = fixed_lp.iter().map(|f| f * t).collect();
                let prop_rand: Vec<f64> = rand_lp.iter().map(|r| r * k).collect();
                let prior = |b: &[f64], s: f64| -> f64 {
                    -lambda * b[1..].iter().map(|v| v.abs()).sum::<f64>()
                        - 0.5 * (b[0] / spec.intercept_prior_sd).powi(2)
                        - s * s / (2.0 * s2)
                        + s.ln()
                };
                let ll_prop = total_ll(y, &prop_fixed, &prop_rand);
                let delta = ll_prop - ll_now + prior(&prop_beta, prop_sigma) - prior(&beta, sigma)
                    + p as f64 * t.ln();
                let alpha = if delta.is_nan() { 0.0 } else { delta.min(0.0).exp() };
                if rng.random::<f64>() < alpha {
                    sigma = prop_sigma;
                    beta = prop_beta;
                    fixed_lp = prop_fixed;
                    rand_lp = prop_rand;
                }
                if burning {
                    adapt(&mut log_sj, alpha, SCALAR_TARGET, it);
                }
            }

            // Interweaved moves holding u fixed: the likelihood cancels, z is rescaled.
            let dims = (n_groups * p) as f64;
            let zz: f64 = z.iter().map(|v| v * v).sum();
            if spec.fixed_sigma.is_none() && sigma > 0.0 {
                let s2 = spec.sigma_prior_scale.powi(2);
                let prop_sigma = sigma * (log_ssc.exp() * rng.sample::<f64, _>(StandardNormal)).exp();
                let k = sigma / prop_sigma;
                let delta = -0.5 * zz * (k * k - 1.0) - (prop_sigma * prop_sigma - sigma * sigma) / (2.0 * s2)
                    + (prop_sigma / sigma).ln()
                    + dims * k.ln();
                let alpha = if delta.is_nan() { 0.0 } else { delta.min(0.0).exp() };
                if rng.random::<f64>() < alpha {
                    sigma = prop_sigma;
                    z.iter_mut().for_each(|v| *v *= k);
                    zsum.iter_mut().for_each(|v| *v *= k);
                    xz.iter_mut().for_each(|v| *v *= k);
                }
                if burning {
                    adapt(&mut log_ssc, alpha, SCALAR_TARGET, it);
                }
            }
            {
                let zz: f64 = z.iter().map(|v| v * v).sum();
                let width = rho_hi - rho_lo;
                let t = crate::stats::logit((rho - rho_lo) / width);
                let prop_rho = rho_lo + width * expit(t + log_src.exp() * rng.sample::<f64, _>(StandardNormal));
                if prop_rho > rho_lo && prop_rho < rho_hi {
                    let d = p as f64;
                    let (a, b) = CompoundSymmetry::root_coefficients(rho, p);
                    let (a2, b2) = CompoundSymmetry::root_coefficients(prop_rho, p);
                    let kappa = b2 / (a2 + d * b2);
                    // z' = S(ρ')⁻¹ S(ρ) z = (a/a') z + γ_g 1.
                    let ratio = a / a2;
                    let gamma: Vec<f64> = zsum
                        .iter()
                        .map(|s| (b * s - kappa * (a + d * b) * s) / a2)
                        .collect();
                    let new_zz: f64 = (0..n_groups)
                        .map(|g| {
                            ratio * ratio * z[g * p..(g + 1) * p].iter().map(|v| v * v).sum::<f64>()
                                + 2.0 * ratio * gamma[g] * zsum[g]
                                + d * gamma[g] * gamma[g]
                        })
                        .sum();
                    let log_det = |a: f64, b: f64| (d - 1.0) * a.ln() + (a + d * b).ln();
                    let jac = |r: f64| ((r - rho_lo) * (rho_hi - r)).ln();
                    let delta = -0.5 * (new_zz - zz) + n_groups as f64 * (log_det(a, b) - log_det(a2, b2))
                        + jac(prop_rho)
                        - jac(rho);
                    let alpha = if delta.is_nan() { 0.0 } else { delta.min(0.0).exp() };
                    if rng.random::<f64>() < alpha {
                        rho = prop_rho;
                        for g in 0..n_groups {
                            for v in &mut z[g * p..(g + 1) * p] {
                                *v = ratio * *v + gamma[g];
                            }
                            zsum[g] = ratio * zsum[g] + d * gamma[g];
                        }
                        for r in 0..n {
                            xz[r] = ratio * xz[r] + gamma[data.groups[r]] * row_sums[r];
                        }
                    }
                    if burning {
                        adapt(&mut log_src, alpha, SCALAR_TARGET, it);
                    }
                }
            }
            // Random offsets changed; refresh the β-block cache.
            lp_beta = post.beta_log_density(&beta, &rand_lp, lambda);
            grad = post.smoothed_beta_gradient(&beta, &rand_lp, lambda);
        }

        if let LambdaMode::Hyperprior { shape, rate } = spec.lambda {
            let l1: f64 = beta[1..].iter().map(|b| b.abs()).sum();
            let dist = Gamma::new(shape + np as f64, 1.0 / (rate + l1))
                .map_err(|e| InferenceError::Domain(e.to_string()))?;
            lambda = rng.sample(dist);
            lp_beta = post.beta_log_density(&beta, &rand_lp, lambda);
            grad = post.smoothed_beta_gradient(&beta, &rand_lp, lambda);
        }

        if burning {
            if it >= window.0 && it < window.1 {
                window_draws.push(beta.clone());
            }
            if it + 1 == window.1 && window_draws.len() >= 4 * p {
                if let Some(l) = empirical_cholesky(&window_draws, &init.chol) {
                    chol = l;
                    grad = post.smoothed_beta_gradient(&beta, &rand_lp, lambda);
                }
            }
        } else if (it - settings.burn_in) % settings.thin == 0 {
            out.beta.push(beta.clone());
            out.sigma.push(sigma);
            out.rho.push(rho);
            out.lambda.push(lambda);
            if active {
                let (a, b) = CompoundSymmetry::root_coefficients(rho, p);
                for g in 0..n_groups {
                    for k in 0..p {
                        out.u_mean[g][k] += sigma * (a * z[g * p + k] + b * zsum[g]);
                    }
                }
            }
        }
    }
    let kept = out.beta.len().max(1) as f64;
    for u in &mut out.u_mean {
        for v in u.iter_mut() {
            *v /= kept;
        }
    }
    let post_iters = (settings.iterations - settings.burn_in) as f64;
    out.acceptance = AcceptanceRates {
        beta: acc[0] / post_iters,
        random_effects: acc[1] / post_iters,
        sigma: acc[2] / post_iters,
        rho: acc[3] / post_iters,
    };
    Ok(out)
}

/// Regularized Cholesky factor of the empirical covariance of warm-up draws.
fn empirical_cholesky(draws: &[Vec<f64>], fallback: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = draws[0].len();
    let n = draws.len() as f64;
    let means: Vec<f64> = (0..p).map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / n).collect();
    let mut cov = DMatrix::zeros(p, p);
    for d in draws {
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] += (d[a] - means[a]) * (d[b] - means[b]) / (n - 1.0);
            }
        }
    }
    let base = fallback * fallback.transpose();
    let w = n / (n + 5.0);
    let blended = cov * w + base * (1.0 - w);
    blended.cholesky().map(|c| c.l())
}

/// Runs all chains (in parallel) and summarizes the draws.
pub fn fit_design(
    data: &MixedData,
    spec: &ModelSpec,
) -> Result<(PosteriorDraws, FitSummary), InferenceError> {
    spec.validate(data.slopes())?;
    let events = data.outcomes.iter().filter(|y| **y).count();
    if events == 0 || events == data.outcomes.len() {
        return Err(InferenceError::Data("outcome must take both values".into()));
    }
    let init = initial_estimate(data)?;
    let chains: Vec<ChainOutput> = (0..spec.sampler.chains)
        .into_par_iter()
        .map(|c| run_chain(data, spec, &init, c))
        .collect::<Result<_, _>>()?;

    let n_groups = data.group_rows.len();
    let p = data.design.cols();
    let mut u_mean = vec![vec![0.0; p]; n_groups];
    for c in &chains {
        for (g, u) in c.u_mean.iter().enumerate() {
            for k in 0..p {
                u_mean[g][k] += u[k] / chains.len() as f64;
            }
        }
    }
    let mut names = vec!["intercept".to_string()];
    names.extend(data.names.iter().cloned());
    let acceptance = chains.iter().map(|c| c.acceptance).collect();
    let mut draws = PosteriorDraws {
        coefficient_names: names,
        beta: Vec::new(),
        sigma: Vec::new(),
        rho: Vec::new(),
        lambda: Vec::new(),
        random_effect_means: u_mean,
        group_labels: data.group_labels.clone(),
        acceptance,
    };
    for c in chains {
        draws.beta.push(c.beta);
        draws.sigma.push(c.sigma);
        draws.rho.push(c.rho);
        draws.lambda.push(c.lambda);
    }
    draws.validate()?;
    let mut summary = summarize(&draws);
    let mut warnings = separation_warnings(data);
    warnings.append(&mut summary.warnings);
    summary.warnings = warnings;
    Ok((draws, summary))
}

fn summarize(draws: &PosteriorDraws) -> FitSummary {
    let psrf_available = draws.chains() >= 2;
    let mut parameters = Vec::new();
    let mut warnings = Vec::new();
    let mut converged = true;
    let coefficient_count = draws.coefficient_names.len();
    for (i, (name, trace)) in draws.scalar_traces().into_iter().enumerate() {
        let refs: Vec<&[f64]> = trace.iter().map(Vec::as_slice).collect();
        let mut pooled: Vec<f64> = trace.iter().flatten().copied().collect();
        let diagnostics = diagnose(&name, &refs, psrf_available);
        let m = mean(&pooled);
        let var = variance(&pooled);
        pooled.sort_by(f64::total_cmp);
        if i < coefficient_count {
            let psrf_bad = diagnostics.psrf.is_some_and(|r| r > PSRF_THRESHOLD);
            if psrf_bad || diagnostics.ess < ESS_THRESHOLD {
                converged = false;
                warnings.push(format!(
                    "`{name}` not converged: PSRF {:?}, ESS {:.0}",
                    diagnostics.psrf, diagnostics.ess
                ));
            }
        }
        parameters.push(ParameterSummary {
            name,
            mean: m,
            sd: var.sqrt(),
            variance: var,
            lower: quantile_sorted(&pooled, 0.025).min(m),
            upper: quantile_sorted(&pooled, 0.975).max(m),
            diagnostics,
        });
    }
    FitSummary {
        parameters,
        warnings,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub parameters: Vec<ParameterDiagnostics>,
    pub identical_chains: bool,
    pub passed: bool,
}

/// Split-chain PSRF and ESS for every scalar parameter.
pub fn mcmc_diagnostics(draws: &PosteriorDraws) -> Result<McmcDiagnostics, InferenceError> {
    if draws.draws_per_chain() < 100 {
        return Err(InferenceError::InsufficientDraws {
            needed: "at least 100 retained draws per chain",
            detail: format!("got {}", draws.draws_per_chain()),
        });
    }
    let multi = draws.chains() >= 2;
    let mut parameters = Vec::new();
    let mut identical = false;
    let mut passed = true;
    for (name, trace) in draws.scalar_traces() {
        let refs: Vec<&[f64]> = trace.iter().map(Vec::as_slice).collect();
        let d = diagnose(&name, &refs, multi);
        if multi && !d.zero_variance && identical_chains(&refs) {
            identical = true;
        }
        if d.zero_variance
            && draws.coefficient_names.contains(&name)
            || d.psrf.is_some_and(|r| r > PSRF_THRESHOLD)
        {
            passed = false;
        }
        parameters.push(d);
    }
    for d in parameters.iter().filter(|d| draws.coefficient_names.contains(&d.name)) {
        if d.ess < ESS_THRESHOLD {
            passed = false;
        }
    }
    Ok(McmcDiagnostics {
        parameters,
        identical_chains: identical,
        passed: passed && !identical,
    })
}
