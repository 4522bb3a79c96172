//! Minimum development sample size and events per variable.
//!
//! cargo run --example sample_size

use rrms_prognosis::cohort::{riley_sample_size, Epv};

fn main() -> anyhow::Result<()> {
    // 22 model degrees of freedom, anticipated Cox-Snell R² 0.09, target shrinkage 0.9,
    // outcome prevalence 17.2%, margin of error 0.05 on the overall risk.
    let s = riley_sample_size(22, 0.09, 0.9, 0.172, 0.05)?;
    println!("shrinkage criterion:      n >= {}", s.coefficient_shrinkage);
    println!("optimism-in-fit criterion n >= {}", s.optimism_in_fit);
    println!("overall-risk criterion:   n >= {}", s.overall_risk);
    println!("required:                 n >= {}", s.minimum());

    let epv = Epv::from_events(302, 22)?;
    println!("EPV {epv}");
    if let Some(w) = epv.warning {
        println!("warning: {w}");
    }
    Ok(())
}
