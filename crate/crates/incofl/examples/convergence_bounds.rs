//! Convergence-bound evaluators on hand constants and on constants
//! estimated from a real model.
//!
//! Run with: cargo run --example convergence_bounds

use incofl::{
    drift_bound, estimate_constants, eta_bound_monotone, init_model, rounds_to_epsilon,
    synth_classification, Activation, ConvergenceConstants, GroupSpec, SquareInit, StageNetConfig,
};

fn main() -> incofl::Result<()> {
    // Hand-sized constants keep every term checkable on paper.
    let constants = ConvergenceConstants {
        smoothness: 1.0,
        grad_variance: 1.0,
        grad_norm_bound: 1.0,
        covariance_bound: 1.0,
        local_steps: 2,
        learning_rate: 1.0,
        initial_gap: 4.0,
        target_tolerance: 8.0,
    };
    let grad_sum = 10.0;
    println!("hand constants (all ones, E = 2, eta = 1)");
    println!("  one-round drift bound at loss 5, S = {grad_sum}:");
    println!("    {}", drift_bound(&constants, 5.0, grad_sum));
    let eta = eta_bound_monotone(&constants, grad_sum)?;
    println!(
        "  largest monotone step size: {} (admissible: {})",
        eta.value, eta.admissible
    );
    // At eta = 1 the noise terms swamp the progress term and no round
    // count can reach the tolerance; the evaluator refuses.
    match rounds_to_epsilon(&constants) {
        Err(err) => println!("  rounds at eta 1: {err}"),
        Ok(t) => println!("  rounds at eta 1: {t}"),
    }
    let gentler = ConvergenceConstants {
        learning_rate: 0.1,
        ..constants
    };
    println!(
        "  rounds at eta 0.1: {}",
        rounds_to_epsilon(&gentler)?
    );
    println!();

    // The same evaluators fed by measured constants.
    let dataset = synth_classification(300, 8, 3, 1.5, 21);
    let cfg = StageNetConfig {
        input_dim: 8,
        stage_widths: vec![12],
        stages: 1,
        num_classes: 3,
        activation: Activation::Tanh,
        square_init: SquareInit::FanIn,
    };
    let group = GroupSpec::new(1, vec![2], vec![0]);
    let model = init_model(&cfg, &group, 4)?;
    let estimate = estimate_constants(&model, &dataset, 8, 17)?;
    println!("estimated from a width-12 model on 300 samples");
    println!("  smoothness        ~ {:.4}", estimate.smoothness);
    println!("  gradient variance ~ {:.6}", estimate.grad_variance);
    println!("  gradient norm     ~ {:.4}", estimate.grad_norm_bound);
    println!("  layer covariance  ~ {:.6}", estimate.covariance_bound);
    let measured = estimate.into_constants(4, 0.05, 1.0, 0.1);
    let eta = eta_bound_monotone(&measured, 0.5)?;
    println!(
        "  monotone step-size bound at S = 0.5: {:.4} (admissible: {})",
        eta.value, eta.admissible
    );
    Ok(())
}
