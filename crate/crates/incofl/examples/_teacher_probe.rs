use incofl::metrics::accuracy;
use incofl::model::{forward, init_model, local_train, Optimizer, TrainerConfig};
use incofl::{synth_teacher, Dataset, GroupSpec, SquareInit, StageNetConfig};

fn main() {
    let tcfg = TrainerConfig {
        optimizer: Optimizer::Sgd,
        learning_rate: 0.1,
        local_epochs: 40,
        batch_size: 32,
        prox_mu: 0.0,
        seed: 1,
    };
    for &(tdepth, gain_label) in &[(2usize, "g2"), (3, "g3")] {
        let data = synth_teacher(5000, 32, 10, tdepth, 32, 33);
        let (train, test) = split(&data);
        for depth in [1usize, 2, 3, 5] {
            let mcfg = StageNetConfig {
                input_dim: 32,
                stage_widths: vec![32],
                stages: 1,
                num_classes: 10,
                activation: incofl::model::Activation::Tanh,
                square_init: SquareInit::FanIn,
            };
            let group = GroupSpec::new(1, vec![depth], vec![0]);
            let w = init_model(&mcfg, &group, 7).unwrap();
            let report = local_train(&w, &train, &tcfg, &w, 0, 0).unwrap();
            let logits = forward(&report.model, test.features()).unwrap().logits;
            let acc = accuracy(&logits, test.labels());
            println!("teacher depth {tdepth} ({gain_label}) student depth {depth}: test acc {acc:.4}");
        }
    }
}

fn split(data: &Dataset) -> (Dataset, Dataset) {
    let n = data.len();
    let cut = n * 4 / 5;
    let train_idx: Vec<usize> = (0..cut).collect();
    let test_idx: Vec<usize> = (cut..n).collect();
    let (tf, tl) = data.batch(&train_idx);
    let (vf, vl) = data.batch(&test_idx);
    (
        Dataset::new(tf, tl, data.num_classes()).unwrap(),
        Dataset::new(vf, vl, data.num_classes()).unwrap(),
    )
}
