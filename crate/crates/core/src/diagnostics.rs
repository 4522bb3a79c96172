//! Convergence diagnostics shared by the mixed-model sampler and the imputation sampler:
//! split-chain potential scale reduction and autocorrelation-based effective sample size.

use serde::{Deserialize, Serialize};

use crate::stats::{mean, variance};

/// Variance below which a trace is treated as constant.
const ZERO_VARIANCE: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    /// `None` when it cannot be computed (single chain where unavailable, or zero variance).
    pub psrf: Option<f64>,
    pub ess: f64,
    pub zero_variance: bool,
}

fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        // Odd lengths drop the middle draw.
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn within_between(chains: &[Vec<f64>]) -> (f64, f64, f64) {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / chains.len() as f64;
    let b = n * variance(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    (w, b, var_plus)
}

/// Split-R̂ over equal-length chains: each chain is halved, then the classic
/// between/within comparison is applied to the halves.
pub fn split_psrf(chains: &[&[f64]]) -> Option<f64> {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return None;
    }
    let halves = split(chains);
    let (w, _b, var_plus) = within_between(&halves);
    if w <= ZERO_VARIANCE {
        return None;
    }
    Some((var_plus / w).sqrt())
}

fn autocovariance(chain: &[f64], m: f64, lag: usize) -> f64 {
    let n = chain.len();
    let mut s = 0.0;
    for t in 0..n - lag {
        s += (chain[t] - m) * (chain[t + lag] - m);
    }
    s / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone positive sequence.
/// Constant traces have ESS 0.
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() {
        return 0.0;
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return 0.0;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let m_chains = chains.len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let owned: Vec<Vec<f64>> = chains.iter().map(|c| c.to_vec()).collect();
    let (w, _b, mut var_plus) = within_between(&owned);
    let nf = n as f64;
    if chains.len() == 1 {
        var_plus = w;
    }
    if var_plus <= ZERO_VARIANCE || w <= ZERO_VARIANCE {
        return 0.0;
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&means)
            .map(|(c, m)| autocovariance(c, *m, lag))
            .sum::<f64>()
            / m_chains;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = m_chains * nf;
    // Antithetic chains can push tau below its floor.
    let tau = tau.max(1.0 / total.log10().max(1.0));
    total / tau
}

/// True when two chains are bit-identical.
pub fn identical_chains(chains: &[&[f64]]) -> bool {
    for i in 0..chains.len() {
        for j in i + 1..chains.len() {
            if chains[i] == chains[j] {
                return true;
            }
        }
    }
    false
}

pub fn diagnose(name: &str, chains: &[&[f64]], psrf_available: bool) -> ParameterDiagnostics {
    let zero_variance = chains.iter().all(|c| {
        c.first()
            .map_or(true, |first| c.iter().all(|v| v == first))
    }) && {
        let firsts: Vec<f64> = chains.iter().filter_map(|c| c.first().copied()).collect();
        firsts.windows(2).all(|w| w[0] == w[1])
    };
    ParameterDiagnostics {
        name: name.to_string(),
        psrf: if psrf_available && !zero_variance {
            split_psrf(chains)
        } else {
            None
        },
        ess: if zero_variance {
            0.0
        } else {
            effective_sample_size(chains)
        },
        zero_variance,
    }
}
