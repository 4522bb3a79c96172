use super::ValidationError;

const Z_975: f64 = 1.959963984540054;

fn split(scores: &[f64], outcomes: &[bool]) -> Result<(Vec<f64>, Vec<f64>), ValidationError> {
    if scores.len() != outcomes.len() {
        return Err(ValidationError::Shape(format!(
            "{} scores but {} outcomes",
            scores.len(),
            outcomes.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ValidationError::NonFinite("scores"));
    }
    let mut events = Vec::new();
    let mut non_events = Vec::new();
    for (s, y) in scores.iter().zip(outcomes) {
        if *y {
            events.push(*s);
        } else {
            non_events.push(*s);
        }
    }
    if events.is_empty() || non_events.is_empty() {
        return Err(ValidationError::SingleClass);
    }
    events.sort_by(f64::total_cmp);
    non_events.sort_by(f64::total_cmp);
    Ok((events, non_events))
}

/// (count below, count equal) of `x` in a sorted slice.
fn rank_counts(sorted: &[f64], x: f64) -> (usize, usize) {
    let below = sorted.partition_point(|v| *v < x);
    let not_above = sorted.partition_point(|v| *v <= x);
    (below, not_above - below)
}

/// Twice the Mann–Whitney statistic, `2·concordant + ties`, in integer arithmetic.
fn doubled_pair_count(events: &[f64], non_events: &[f64]) -> u128 {
    events
        .iter()
        .map(|s| {
            let (below, ties) = rank_counts(non_events, *s);
            2 * below as u128 + ties as u128
        })
        .sum()
}

/// P(score_event > score_nonevent) + ½ P(tie).
pub fn auc(scores: &[f64], outcomes: &[bool]) -> Result<f64, ValidationError> {
    let (e, n) = split(scores, outcomes)?;
    let pairs = 2 * e.len() as u128 * n.len() as u128;
    Ok(doubled_pair_count(&e, &n) as f64 / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AucEstimate {
    pub auc: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// AUC with a 95% interval from the distribution-free (DeLong) variance.
pub fn auc_with_ci(scores: &[f64], outcomes: &[bool]) -> Result<AucEstimate, ValidationError> {
    let (e, n) = split(scores, outcomes)?;
    let (n1, n0) = (e.len() as f64, n.len() as f64);
    let a = doubled_pair_count(&e, &n) as f64 / (2.0 * n1 * n0);
    let v10: Vec<f64> = e
        .iter()
        .map(|s| {
            let (below, ties) = rank_counts(&n, *s);
            (below as f64 + 0.5 * ties as f64) / n0
        })
        .collect();
    let v01: Vec<f64> = n
        .iter()
        .map(|s| {
            let (below, ties) = rank_counts(&e, *s);
            let above = e.len() - below - ties;
            (above as f64 + 0.5 * ties as f64) / n1
        })
        .collect();
    let var = |v: &[f64]| -> f64 {
        if v.len() < 2 {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let se = (var(&v10) / n1 + var(&v01) / n0).sqrt();
    Ok(AucEstimate {
        auc: a,
        se,
        lower: (a - Z_975 * se).max(0.0),
        upper: (a + Z_975 * se).min(1.0),
    })
}
