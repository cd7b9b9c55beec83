//! The closed-form conflict correction on hand-sized update pairs.
//!
//! Run with: cargo run --example projection

use incofl::{inco_update_with_outcome, project_theorem1, ProjectionBranch, SurgeryConfig, Tensor};

fn show(name: &str, g0: &[f64], gk: &[f64]) -> incofl::Result<()> {
    let g0 = Tensor::vector(g0.to_vec())?;
    let gk = Tensor::vector(gk.to_vec())?;
    let outcome = project_theorem1(&g0, &gk)?;
    let branch = match outcome.branch {
        ProjectionBranch::Identity => "identity (no conflict)",
        ProjectionBranch::Corrected => "corrected (conflict removed)",
    };
    println!("{name}");
    println!("  anchor g0 = {:?}", g0.values());
    println!("  deep   gk = {:?}", gk.values());
    println!(
        "  alpha = {}, beta = {}, theta = {}",
        outcome.alpha, outcome.beta, outcome.theta
    );
    println!("  branch = {branch}");
    println!("  g_opt  = {:?}", outcome.g_opt.values());
    println!();
    Ok(())
}

fn main() -> incofl::Result<()> {
    // The correction solves: stay close to the deep update while never
    // pointing against the anchor. A negative inner product triggers the
    // subtraction; otherwise the deep update is already optimal.
    show("conflicting pair", &[1.0, 0.0], &[-2.0, 3.0])?;
    show("aligned pair", &[1.0, 0.0], &[2.0, 3.0])?;
    show("orthogonal pair", &[1.0, 0.0], &[0.0, 3.0])?;

    // The full mixing step normalizes both updates, corrects the deep
    // one, adds the anchor direction, and restores the average scale.
    let g0 = Tensor::vector(vec![1.0, 0.0])?;
    let gk = Tensor::vector(vec![-2.0, 3.0])?;
    let cfg = SurgeryConfig::default();
    let (mixed, outcome) = inco_update_with_outcome(&g0, &gk, &cfg)?;
    println!("full mixing step on the conflicting pair");
    println!("  combined update = {:?}", mixed.values());
    if let Some(outcome) = outcome {
        println!("  beta on unit vectors = {}", outcome.beta);
    }
    Ok(())
}
