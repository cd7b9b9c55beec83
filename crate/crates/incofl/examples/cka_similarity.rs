//! Representation similarity: invariances of the linear score and a
//! pairwise comparison between differently initialized models.
//!
//! Run with: cargo run --example cka_similarity

use incofl::{
    init_model, linear_cka, pairwise_stage_cka, synth_classification, Activation, GroupSpec,
    SquareInit, StageNetConfig, Tensor,
};

fn main() -> incofl::Result<()> {
    // Similarity is invariant to isotropic scaling and insensitive to
    // which basis the features are expressed in.
    let x = Tensor::from_rows(vec![
        vec![1.0, 2.0],
        vec![-1.0, 0.5],
        vec![0.3, -0.7],
        vec![2.0, 1.0],
    ])?;
    let doubled = x.scale(2.0);
    println!("cka(x, 2x) = {}", linear_cka(&x, &doubled)?);

    let rotated = Tensor::from_rows(
        (0..x.rows())
            .map(|i| {
                let (a, b) = (x.at(i, 0), x.at(i, 1));
                // Rotate each row by 30 degrees.
                let (s, c) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
                vec![c * a - s * b, s * a + c * b]
            })
            .collect(),
    )?;
    println!("cka(x, rotated x) = {}", linear_cka(&x, &rotated)?);

    let noise = Tensor::from_rows(vec![
        vec![0.9, -0.2],
        vec![0.1, 1.4],
        vec![-0.6, 0.3],
        vec![0.4, 0.8],
    ])?;
    println!("cka(x, unrelated) = {}", linear_cka(&x, &noise)?);
    println!();

    // Two models with different seeds, compared stage by stage on a
    // shared evaluation batch.
    let cfg = StageNetConfig {
        input_dim: 6,
        stage_widths: vec![8, 8],
        stages: 2,
        num_classes: 3,
        activation: Activation::Tanh,
        square_init: SquareInit::FanIn,
    };
    let group = GroupSpec::new(1, vec![2, 2], vec![0, 1]);
    let model_a = init_model(&cfg, &group, 1)?;
    let model_b = init_model(&cfg, &group, 2)?;
    let dataset = synth_classification(64, 6, 3, 1.0, 9);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let (batch, _) = dataset.batch(&all);
    for stage in 0..cfg.stages {
        let matrix = pairwise_stage_cka(&[(0, &model_a), (1, &model_b)], &batch, stage)?;
        println!(
            "stage {stage}: cross-model similarity {:.4}",
            matrix.mean_off_diagonal().unwrap()
        );
    }
    Ok(())
}
