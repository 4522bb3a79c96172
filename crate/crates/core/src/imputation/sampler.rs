use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ColumnKind, FrameImputation, ImputationError, ImputationFrame, ImputationModel, Traces};
use crate::stats::{mean, truncated_normal, variance};

/// Standardized targets and predictors on the latent scale.
struct Problem {
    n: usize,
    q: usize,
    groups: Vec<usize>,
    group_rows: Vec<Vec<usize>>,
    /// Row-major N × p, intercept first.
    x: DMatrix<f64>,
    /// Cholesky factor of (X'X)⁻¹.
    xtx_inv_chol: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    kinds: Vec<ColumnKind>,
    /// `observed[j][r]` on the latent scale (continuous) or 0/1 (binary).
    observed: Vec<Vec<Option<f64>>>,
    raw: Vec<Vec<Option<f64>>>,
    /// Continuous targets: observed mean and sd used for standardizing.
    scale: Vec<(f64, f64)>,
    predictor_names: Vec<String>,
    target_names: Vec<String>,
    prior_df: f64,
}

struct State {
    /// N × q latent values.
    y: DMatrix<f64>,
    /// p × q coefficients.
    beta: DMatrix<f64>,
    /// G × q random intercepts.
    b: DMatrix<f64>,
    sigma: DMatrix<f64>,
    psi: DMatrix<f64>,
    /// Log step sizes of the random-effect scale (diagonal) and shear moves, q × q row-major.
    log_step: Vec<f64>,
}

/// Robbins–Monro acceptance target for the scale and shear moves.
const LINEAR_TARGET: f64 = 0.44;

fn standardize(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    let sd = variance(values).sqrt();
    (m, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

fn build(frame: &ImputationFrame, model: &ImputationModel) -> Result<(Problem, Vec<String>), ImputationError> {
    let n = frame.rows();
    let g = frame.groups.iter().max().map_or(0, |m| m + 1);
    let mut group_rows = vec![Vec::new(); g];
    for (r, k) in frame.groups.iter().enumerate() {
        group_rows[*k].push(r);
    }
    let mut dropped = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut predictor_names = vec!["intercept".to_string()];
    for name in &model.predictors {
        let col = frame.column(name).expect("validated");
        let v: Vec<f64> = col.values.iter().map(|c| c.expect("validated")).collect();
        let (m, sd) = standardize(&v);
        if variance(&v) <= 0.0 {
            dropped.push(name.clone());
            continue;
        }
        cols.push(v.iter().map(|x| (x - m) / sd).collect());
        predictor_names.push(name.clone());
    }
    let p = cols.len() + 1;
    let x = DMatrix::from_fn(n, p, |r, c| if c == 0 { 1.0 } else { cols[c - 1][r] });
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx.cholesky().ok_or(ImputationError::Singular)?.inverse();
    let xtx_inv_chol = xtx_inv.clone().cholesky().ok_or(ImputationError::Singular)?.l();

    let mut kinds = Vec::new();
    let mut observed = Vec::new();
    let mut raw = Vec::new();
    let mut scale = Vec::new();
    for name in &model.targets {
        let col = frame.column(name).expect("validated");
        kinds.push(col.kind);
        raw.push(col.values.clone());
        match col.kind {
            ColumnKind::Continuous => {
                let obs: Vec<f64> = col.values.iter().flatten().copied().collect();
                let (m, sd) = standardize(&obs);
                scale.push((m, sd));
                observed.push(col.values.iter().map(|v| v.map(|x| (x - m) / sd)).collect());
            }
            ColumnKind::Binary => {
                scale.push((0.0, 1.0));
                observed.push(col.values.clone());
            }
        }
    }
    let q = model.targets.len();
    Ok((
        Problem {
            n,
            q,
            groups: frame.groups.clone(),
            group_rows,
            x,
            xtx_inv_chol,
            xtx_inv,
            kinds,
            observed,
            raw,
            scale,
            predictor_names,
            target_names: model.targets.clone(),
            prior_df: model.settings.prior_df.unwrap_or(q as f64),
        },
        dropped,
    ))
}

fn std_normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Σ ~ IW(df, scale) through a Bartlett draw of Σ⁻¹ ~ Wishart(df, scale⁻¹).
pub(crate) fn sample_inverse_wishart(df: f64, scale: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Option<DMatrix<f64>> {
    let d = scale.nrows();
    let l = scale.clone().cholesky()?.inverse().cholesky()?.l();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(df - i as f64).ok()?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    let s = w.cholesky()?.inverse();
    Some((&s + s.transpose()) * 0.5)
}

impl Problem {
    fn initial_state(&self) -> State {
        let y = DMatrix::from_fn(self.n, self.q, |r, j| match (self.kinds[j], self.observed[j][r]) {
            (ColumnKind::Continuous, Some(v)) => v,
            (ColumnKind::Binary, Some(v)) => {
                if v > 0.5 {
                    0.8
                } else {
                    -0.8
                }
            }
            _ => 0.0,
        });
        State {
            y,
            beta: DMatrix::zeros(self.x.ncols(), self.q),
            b: DMatrix::zeros(self.group_rows.len(), self.q),
            sigma: DMatrix::identity(self.q, self.q),
            psi: DMatrix::identity(self.q, self.q) * 0.5,
            log_step: vec![(0.3f64).ln(); self.q * self.q],
        }
    }

    /// Latent cells with the random intercepts integrated out: within a patient
    /// the stacked latents are N(X B, I ⊗ Σ + J ⊗ Ψ). Must be followed by a draw of b.
    fn update_latent(&self, s: &mut State, rng: &mut ChaCha8Rng) -> Option<()> {
        let q = self.q;
        let fitted = &self.x * &s.beta;
        for rows in &self.group_rows {
            let n = rows.len() * q;
            let cov = DMatrix::from_fn(n, n, |a, c| {
                let (ra, ja) = (a / q, a % q);
                let (rc, jc) = (c / q, c % q);
                s.psi[(ja, jc)] + if ra == rc { s.sigma[(ja, jc)] } else { 0.0 }
            });
            let prec = cov.cholesky()?.inverse();
            for a in 0..n {
                let (r, j) = (rows[a / q], a % q);
                let obs = self.observed[j][r];
                if self.kinds[j] == ColumnKind::Continuous && obs.is_some() {
                    continue;
                }
                let paa = prec[(a, a)];
                let mut shift = 0.0;
                for c in 0..n {
                    if c != a {
                        let (rc, jc) = (rows[c / q], c % q);
                        shift += prec[(a, c)] * (s.y[(rc, jc)] - fitted[(rc, jc)]);
                    }
                }
                let m = fitted[(r, j)] - shift / paa;
                let sd = paa.recip().sqrt();
                s.y[(r, j)] = match obs {
                    Some(v) if v > 0.5 => truncated_normal(m, sd, 0.0, f64::INFINITY, rng.random()),
                    Some(_) => truncated_normal(m, sd, f64::NEG_INFINITY, 0.0, rng.random()),
                    None => m + sd * rng.sample::<f64, _>(StandardNormal),
                };
            }
        }
        Some(())
    }

    fn update_beta(&self, s: &mut State, rng: &mut ChaCha8Rng) -> Option<()> {
        let mut resid = s.y.clone();
        for r in 0..self.n {
            for j in 0..self.q {
                resid[(r, j)] -= s.b[(self.groups[r], j)];
            }
        }
        let hat = &self.xtx_inv * (self.x.transpose() * resid);
        let ls = s.sigma.clone().cholesky()?.l();
        let e = std_normal_matrix(hat.nrows(), self.q, rng);
        s.beta = hat + &self.xtx_inv_chol * e * ls.transpose();
        Some(())
    }

    fn update_random(&self, s: &mut State, rng: &mut ChaCha8Rng) -> Option<()> {
        let prec = s.sigma.clone().cholesky()?.inverse();
        let psi_inv = s.psi.clone().cholesky()?.inverse();
        let fitted = &self.x * &s.beta;
        for (g, rows) in self.group_rows.iter().enumerate() {
            let mut total = DVector::zeros(self.q);
            for &r in rows {
                for j in 0..self.q {
                    total[j] += s.y[(r, j)] - fitted[(r, j)];
                }
            }
            let post_prec = &psi_inv + &prec * rows.len() as f64;
            let cov = post_prec.cholesky()?.inverse();
            let m = &cov * (&prec * total);
            let l = cov.cholesky()?.l();
            let z = DVector::from_fn(self.q, |_, _| rng.sample(StandardNormal));
            let draw = m + l * z;
            for j in 0..self.q {
                s.b[(g, j)] = draw[j];
            }
        }
        Some(())
    }

    fn update_covariances(&self, s: &mut State, rng: &mut ChaCha8Rng) -> Option<()> {
        let mut resid = &s.y - &self.x * &s.beta;
        for r in 0..self.n {
            for j in 0..self.q {
                resid[(r, j)] -= s.b[(self.groups[r], j)];
            }
        }
        let eye = DMatrix::identity(self.q, self.q);
        s.sigma = sample_inverse_wishart(
            self.prior_df + self.n as f64,
            &(&eye + resid.transpose() * &resid),
            rng,
        )?;
        s.psi = sample_inverse_wishart(
            self.prior_df + self.group_rows.len() as f64,
            &(&eye + s.b.transpose() * &s.b),
            rng,
        )?;
        // Binary latents are only defined up to scale; fix their residual variance at one.
        for j in 0..self.q {
            if self.kinds[j] != ColumnKind::Binary {
                continue;
            }
            let sd = s.sigma[(j, j)].sqrt();
            s.y.column_mut(j).scale_mut(sd.recip());
            s.beta.column_mut(j).scale_mut(sd.recip());
            s.b.column_mut(j).scale_mut(sd.recip());
            s.sigma.row_mut(j).scale_mut(sd.recip());
            s.sigma.column_mut(j).scale_mut(sd.recip());
            s.psi.row_mut(j).scale_mut(sd.recip());
            s.psi.column_mut(j).scale_mut(sd.recip());
        }
        Some(())
    }

    /// Metropolis moves `b_g → M b_g`, `Ψ → M Ψ M'` for a random scale
    /// `M = diag(1, .., c, .., 1)` or shear `M = I + a e_j e_k'`.
    ///
    /// N(b | Ψ) is invariant under the map and the Jacobians cancel against the
    /// inverse-Wishart determinant, leaving `|det M|^−ν`, the trace term and the
    /// latent likelihood in the ratio.
    fn update_linear(&self, s: &mut State, rng: &mut ChaCha8Rng, adapt: Option<usize>) -> Option<()> {
        let q = self.q;
        let prec = s.sigma.clone().cholesky()?.inverse();
        let mut resid = &s.y - &self.x * &s.beta;
        for r in 0..self.n {
            for j in 0..q {
                resid[(r, j)] -= s.b[(self.groups[r], j)];
            }
        }
        for j in 0..q {
            for k in 0..q {
                let slot = j * q + k;
                let step = s.log_step[slot].exp() * rng.sample::<f64, _>(StandardNormal);
                let mut m = DMatrix::<f64>::identity(q, q);
                let log_det = if j == k {
                    m[(j, j)] = step.exp();
                    step
                } else {
                    m[(j, k)] = step;
                    0.0
                };
                let delta_b = &s.b * (&m - DMatrix::identity(q, q)).transpose();
                let weighted = &resid * &prec;
                let mut delta_ll = 0.0;
                for r in 0..self.n {
                    let g = self.groups[r];
                    let d = delta_b.row(g);
                    let quad = (d * &prec).dot(&d);
                    delta_ll += d.dot(&weighted.row(r)) - 0.5 * quad;
                }
                let psi_new = &m * &s.psi * m.transpose();
                let trace_old = s.psi.clone().cholesky()?.inverse().trace();
                let trace_new = psi_new.clone().cholesky()?.inverse().trace();
                let log_ratio = delta_ll - self.prior_df * log_det - 0.5 * (trace_new - trace_old);
                let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
                if accept {
                    for r in 0..self.n {
                        let g = self.groups[r];
                        for c in 0..q {
                            resid[(r, c)] -= delta_b[(g, c)];
                        }
                    }
                    s.b += delta_b;
                    s.psi = (&psi_new + psi_new.transpose()) * 0.5;
                }
                if let Some(it) = adapt {
                    let rate = (it as f64 + 10.0).powf(-0.6);
                    s.log_step[slot] += rate * (f64::from(u8::from(accept)) - LINEAR_TARGET);
                    s.log_step[slot] = s.log_step[slot].clamp(-8.0, 2.0);
                }
            }
        }
        Some(())
    }

    fn step(&self, s: &mut State, rng: &mut ChaCha8Rng, adapt: Option<usize>) -> Option<()> {
        self.update_latent(s, rng)?;
        self.update_random(s, rng)?;
        self.update_beta(s, rng)?;
        self.update_covariances(s, rng)?;
        self.update_linear(s, rng, adapt)?;
        let finite = s.y.iter().chain(s.beta.iter()).chain(s.sigma.iter()).chain(s.psi.iter()).all(|v| v.is_finite());
        finite.then_some(())
    }

    fn trace_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for t in &self.target_names {
            for p in &self.predictor_names {
                names.push(format!("beta[{t},{p}]"));
            }
        }
        for j in 0..self.q {
            for k in 0..=j {
                if !(j == k && self.kinds[j] == ColumnKind::Binary) {
                    names.push(format!("sigma[{},{}]", self.target_names[j], self.target_names[k]));
                }
            }
        }
        for j in 0..self.q {
            for k in 0..=j {
                names.push(format!("psi[{},{}]", self.target_names[j], self.target_names[k]));
            }
        }
        names
    }

    fn trace_values(&self, s: &State) -> Vec<f64> {
        let mut out = Vec::new();
        for j in 0..self.q {
            out.extend(s.beta.column(j).iter());
        }
        for j in 0..self.q {
            for k in 0..=j {
                if !(j == k && self.kinds[j] == ColumnKind::Binary) {
                    out.push(s.sigma[(j, k)]);
                }
            }
        }
        for j in 0..self.q {
            for k in 0..=j {
                out.push(s.psi[(j, k)]);
            }
        }
        out
    }

    /// Imputed cells on the data scale; observed cells carry their input value.
    fn imputed_values(&self, s: &State) -> Vec<Vec<f64>> {
        (0..self.q)
            .map(|j| {
                let (m, sd) = self.scale[j];
                (0..self.n)
                    .map(|r| match (self.raw[j][r], self.kinds[j]) {
                        (Some(v), _) => v,
                        (None, ColumnKind::Binary) => f64::from(u8::from(s.y[(r, j)] > 0.0)),
                        (None, ColumnKind::Continuous) => m + sd * s.y[(r, j)],
                    })
                    .collect()
            })
            .collect()
    }
}

struct ChainOutput {
    draws: Vec<Vec<Vec<f64>>>,
    trace: Vec<Vec<f64>>,
}

fn run_chain(problem: &Problem, model: &ImputationModel, chain: usize, keep: usize) -> Result<ChainOutput, ImputationError> {
    let settings = &model.settings;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(chain as u64);
    let mut state = problem.initial_state();
    let names = problem.trace_names().len();
    let mut trace = vec![Vec::with_capacity(keep * settings.gap); names];
    let mut draws = Vec::with_capacity(keep);
    let total = settings.burn_in + keep * settings.gap;
    for it in 1..=total {
        problem
            .step(&mut state, &mut rng, (it <= settings.burn_in).then_some(it))
            .ok_or(ImputationError::Divergence { chain, iteration: it })?;
        if it > settings.burn_in {
            for (t, v) in trace.iter_mut().zip(problem.trace_values(&state)) {
                t.push(v);
            }
            if (it - settings.burn_in) % settings.gap == 0 {
                draws.push(problem.imputed_values(&state));
            }
        }
    }
    Ok(ChainOutput { draws, trace })
}

/// Draws `m` imputations of every target column. With no missing cells the
/// sampler is skipped and every imputation equals the input.
pub fn impute_frame(frame: &ImputationFrame, model: &ImputationModel) -> Result<FrameImputation, ImputationError> {
    model.validate(frame)?;
    let m = model.settings.imputations;
    let targets: Vec<usize> = model
        .targets
        .iter()
        .map(|t| frame.columns.iter().position(|c| &c.name == t).expect("validated"))
        .collect();
    if targets.iter().all(|j| frame.columns[*j].missing() == 0) {
        let copy: Vec<Vec<f64>> = targets
            .iter()
            .map(|j| frame.columns[*j].values.iter().map(|v| v.expect("complete")).collect())
            .collect();
        return Ok(FrameImputation {
            targets: model.targets.clone(),
            draws: vec![copy; m],
            traces: Traces::default(),
            dropped_predictors: Vec::new(),
        });
    }
    let (problem, dropped) = build(frame, model)?;
    let chains = model.settings.chains;
    let outputs: Vec<ChainOutput> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let keep = m / chains + usize::from(c < m % chains);
            run_chain(&problem, model, c, keep)
        })
        .collect::<Result<_, _>>()?;
    let retained = outputs.iter().map(|o| o.trace.first().map_or(0, Vec::len)).min().unwrap_or(0);
    let traces = Traces {
        names: problem.trace_names(),
        chains: outputs
            .iter()
            .map(|o| o.trace.iter().map(|t| t[..retained].to_vec()).collect())
            .collect(),
    };
    Ok(FrameImputation {
        targets: model.targets.clone(),
        draws: outputs.into_iter().flat_map(|o| o.draws).collect(),
        traces,
        dropped_predictors: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_wishart_mean() {
        // E[Σ] = S / (df − d − 1).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let df = 10.0;
        let mut acc = DMatrix::zeros(2, 2);
        let n = 20000;
        for _ in 0..n {
            acc += sample_inverse_wishart(df, &scale, &mut rng).unwrap();
        }
        acc /= n as f64;
        let expected = &scale / (df - 3.0);
        for (a, e) in acc.iter().zip(expected.iter()) {
            assert!((a - e).abs() < 0.03 * e.abs().max(0.1), "{a} vs {e}");
        }
    }
}
