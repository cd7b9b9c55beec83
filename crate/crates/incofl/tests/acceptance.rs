//! End-to-end acceptance checks. Every test pins one stated requirement
//! at its stated tolerance and prints a single verdict line; run with
//! `cargo test --test acceptance -- --nocapture` to see them all.
//!
//! The directional experiment behind criteria 08, 09, and 10 is a frozen
//! configuration: nested-depth groups, a near-identity-initialized
//! single-stage net where intra-stage updates share a common direction,
//! full-batch local steps, and seeds 0, 1, 2. The three tests share one
//! set of runs.

mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use incofl::{
    aggregate, build_plan, derive_rng, drift_bound, eta_bound_monotone, grads_on_batch,
    init_model, linear_cka, loss_on_batch, project_theorem1, rounds_to_epsilon, run_experiment,
    Activation, ClientAlgo, ConvergenceConstants, DataConfig, ExperimentConfig, GroupSpec,
    LayerKey, Method, Optimizer, PartitionConfig, RunOptions, SquareInit, StageNetConfig,
    SurgeryConfig, Tensor, TrainerConfig,
};

fn verdict(number: usize, label: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {label}: {status} ({detail})");
    assert!(pass, "criterion {number:02} {label}: {status} ({detail})");
}

fn random_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[test]
fn criterion_01_projection_matches_qp_solver() {
    let started = Instant::now();
    let mut rng = derive_rng(101, "qp-pairs", &[]);
    let mut worst_gap = 0.0_f64;
    let mut worst_residual = 0.0_f64;
    for case in 0..1000 {
        let dim = 2 + case % 63;
        let g0_values = loop {
            let candidate = random_vector(dim, &mut rng);
            if candidate.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-3 {
                break candidate;
            }
        };
        let gk_values = random_vector(dim, &mut rng);
        let g0 = Tensor::vector(g0_values.clone()).unwrap();
        let gk = Tensor::vector(gk_values.clone()).unwrap();
        let outcome = project_theorem1(&g0, &gk).unwrap();
        let oracle = common::qp_halfspace_oracle(&g0_values, &gk_values, 400);

        let diff: f64 = outcome
            .g_opt
            .values()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let oracle_norm = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gk_norm = incofl::norm(&gk);
        worst_gap = worst_gap.max(diff / oracle_norm.max(gk_norm).max(1e-12));

        let residual = incofl::inner(&outcome.g_opt, &g0).unwrap();
        let scale = incofl::norm(&g0) * incofl::norm(&outcome.g_opt);
        if residual < 0.0 && scale > 0.0 {
            worst_residual = worst_residual.max(-residual / scale);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst_gap < 1e-8 && worst_residual <= 1e-9 && elapsed < 10.0;
    verdict(
        1,
        "projection-vs-qp-solver",
        pass,
        &format!(
            "1000 pairs, max rel gap {worst_gap:.2e}, worst residual ratio {worst_residual:.2e}, {elapsed:.2}s"
        ),
    );
}

#[test]
fn criterion_02_matrix_and_vector_projection_identical() {
    let started = Instant::now();
    let mut rng = derive_rng(102, "matrix-pairs", &[]);
    let mut exact = true;
    for _ in 0..500 {
        let rows = rng.random_range(1..=12);
        let cols = rng.random_range(1..=12);
        let a = loop {
            let candidate = random_vector(rows * cols, &mut rng);
            if candidate.iter().map(|v| v * v).sum::<f64>() > 0.0 {
                break candidate;
            }
        };
        let b = random_vector(rows * cols, &mut rng);
        let matrix = project_theorem1(
            &Tensor::matrix(rows, cols, a.clone()).unwrap(),
            &Tensor::matrix(rows, cols, b.clone()).unwrap(),
        )
        .unwrap();
        let vector = project_theorem1(
            &Tensor::vector(a).unwrap(),
            &Tensor::vector(b).unwrap(),
        )
        .unwrap();
        exact &= matrix.alpha == vector.alpha
            && matrix.beta == vector.beta
            && matrix.theta == vector.theta
            && matrix.branch == vector.branch
            && matrix.g_opt.values() == vector.g_opt.values();
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = exact && elapsed < 5.0;
    verdict(
        2,
        "matrix-vs-vector-projection",
        pass,
        &format!("500 pairs bitwise identical: {exact}, {elapsed:.2}s"),
    );
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let started = Instant::now();
    let cfg = StageNetConfig {
        input_dim: 6,
        stage_widths: vec![8, 6, 5],
        stages: 3,
        num_classes: 4,
        activation: Activation::Tanh,
        square_init: SquareInit::FanIn,
    };
    let group = GroupSpec::new(1, vec![2, 2, 2], vec![0]);
    let weights = init_model(&cfg, &group, 31).unwrap();

    let mut rng = derive_rng(103, "fd-batch", &[]);
    let batch = Tensor::from_rows(
        (0..16)
            .map(|_| random_vector(6, &mut rng))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..4)).collect();

    let (_, grads) = grads_on_batch(&weights, &batch, &labels).unwrap();
    let analytic = grads.to_flat();
    let flat = weights.to_flat();
    let probes = 200.min(flat.len());
    let stride = (flat.len() / probes).max(1);
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for probe in 0..probes {
        let i = (probe * stride) % flat.len();
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let loss_plus =
            loss_on_batch(&weights.with_values(&plus).unwrap(), &batch, &labels).unwrap();
        let loss_minus =
            loss_on_batch(&weights.with_values(&minus).unwrap(), &batch, &labels).unwrap();
        let numeric = (loss_plus - loss_minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && elapsed < 10.0;
    verdict(
        3,
        "finite-difference-gradients",
        pass,
        &format!("{probes} coordinates, max rel err {worst:.2e}, {elapsed:.2}s"),
    );
}

/// Nondecreasing depth sequences of the given length over 1..=max_depth.
fn depth_sequences(length: usize, max_depth: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, remaining: usize, max_depth: usize, out: &mut Vec<Vec<usize>>) {
        if remaining == 0 {
            out.push(prefix.clone());
            return;
        }
        let floor = prefix.last().copied().unwrap_or(1);
        for depth in floor..=max_depth {
            prefix.push(depth);
            extend(prefix, remaining - 1, max_depth, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), length, max_depth, &mut out);
    out
}

/// Cheap deterministic value for one coordinate of one contribution,
/// varied enough that membership mistakes cannot cancel out.
fn synthetic_value(client: usize, layer: usize, coord: usize) -> f64 {
    let mixed = (client.wrapping_mul(2654435761))
        ^ (layer.wrapping_mul(40503))
        ^ (coord.wrapping_mul(97));
    ((mixed & 0xFFFF) as f64) / 32768.0 - 1.0
}

#[test]
fn criterion_04_aggregation_matches_brute_force() {
    let started = Instant::now();
    let mut configs = 0usize;
    let mut exact = true;
    for group_count in 1..=5usize {
        for depths in depth_sequences(group_count, 6) {
            // Every combination of 1..=4 clients per group, enumerated as
            // a base-4 counter.
            let combos = 4usize.pow(group_count as u32);
            for combo in 0..combos {
                let mut groups = Vec::with_capacity(group_count);
                let mut next_client = 0;
                let mut code = combo;
                for (g, &depth) in depths.iter().enumerate() {
                    let size = 1 + code % 4;
                    code /= 4;
                    let clients: Vec<usize> = (next_client..next_client + size).collect();
                    next_client += size;
                    groups.push(GroupSpec::new(g + 1, vec![depth], clients));
                }
                let plan = build_plan(&groups, 1).unwrap();
                let mut contributions: BTreeMap<usize, BTreeMap<LayerKey, Tensor>> =
                    BTreeMap::new();
                for group in &groups {
                    for &client in &group.client_ids {
                        let mut layers = BTreeMap::new();
                        for index in 0..group.depth_per_stage[0] {
                            let len = 1 + index % 3;
                            let values: Vec<f64> = (0..len)
                                .map(|coord| synthetic_value(client, index, coord))
                                .collect();
                            layers.insert(
                                LayerKey::new(0, index),
                                Tensor::vector(values).unwrap(),
                            );
                        }
                        contributions.insert(client, layers);
                    }
                }
                let fast = aggregate(&plan, &contributions).unwrap();
                let slow = common::naive_mean_aggregate(&groups, 1, &contributions);
                exact &= fast.len() == slow.len()
                    && fast.iter().all(|(key, tensor)| {
                        slow[key].shape() == tensor.shape()
                            && slow[key].values() == tensor.values()
                    });
                configs += 1;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = exact && elapsed < 5.0;
    verdict(
        4,
        "aggregation-vs-brute-force",
        pass,
        &format!("{configs} configurations exhaustive, exact: {exact}, {elapsed:.2}s"),
    );
}

#[test]
fn criterion_05_cka_properties_and_oracle() {
    let started = Instant::now();
    let mut rng = derive_rng(105, "cka-pairs", &[]);

    let mut worst_self = 0.0_f64;
    let mut worst_rotation = 0.0_f64;
    let mut worst_scaling = 0.0_f64;
    let mut worst_oracle = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(8..=32);
        let dx = rng.random_range(2..=8);
        let dy = rng.random_range(2..=8);
        let x_rows: Vec<Vec<f64>> = (0..n).map(|_| random_vector(dx, &mut rng)).collect();
        let y_rows: Vec<Vec<f64>> = (0..n).map(|_| random_vector(dy, &mut rng)).collect();
        let x = Tensor::from_rows(x_rows.clone()).unwrap();
        let y = Tensor::from_rows(y_rows.clone()).unwrap();

        worst_self = worst_self.max((linear_cka(&x, &x).unwrap() - 1.0).abs());

        let baseline = linear_cka(&x, &y).unwrap();

        let rotation = common::random_orthogonal(dx, &mut rng);
        let rotated_rows: Vec<Vec<f64>> = x_rows
            .iter()
            .map(|row| {
                (0..dx)
                    .map(|j| (0..dx).map(|i| row[i] * rotation[i][j]).sum())
                    .collect()
            })
            .collect();
        let rotated = Tensor::from_rows(rotated_rows).unwrap();
        worst_rotation = worst_rotation.max((linear_cka(&rotated, &y).unwrap() - baseline).abs());

        let factor = rng.random_range(0.1..10.0);
        worst_scaling =
            worst_scaling.max((linear_cka(&x.scale(factor), &y).unwrap() - baseline).abs());

        let oracle = common::hsic_cka_oracle(&x_rows, &y_rows);
        worst_oracle = worst_oracle.max((baseline - oracle).abs());
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst_self <= 1e-9
        && worst_rotation <= 1e-9
        && worst_scaling <= 1e-9
        && worst_oracle <= 1e-9
        && elapsed < 10.0;
    verdict(
        5,
        "cka-properties-and-oracle",
        pass,
        &format!(
            "self {worst_self:.1e}, rotation {worst_rotation:.1e}, scaling {worst_scaling:.1e}, oracle {worst_oracle:.1e}, {elapsed:.2}s"
        ),
    );
}

#[test]
fn criterion_06_step_bound_separates_descent_from_divergence() {
    let started = Instant::now();
    // Quadratic objective 0.5 xᵀAx with A diagonal, so the curvature
    // constant is the largest diagonal entry. The eigen oracle confirms it.
    let diag = [1.0, 2.5, 4.0];
    let matrix: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
        .collect();
    let smoothness = common::power_iteration_sym(&matrix, 100);
    let oracle_ok = (smoothness - 4.0).abs() <= 1e-9;

    let constants = ConvergenceConstants {
        smoothness,
        grad_variance: 0.0,
        grad_norm_bound: 0.0,
        covariance_bound: 0.0,
        local_steps: 1,
        learning_rate: 0.1,
        initial_gap: 1.0,
        target_tolerance: 0.1,
    };
    let bound = eta_bound_monotone(&constants, 1.0).unwrap();
    let bound_ok = bound.admissible && (bound.value - 2.0 / smoothness).abs() <= 1e-12;

    let loss = |x: &[f64; 3]| 0.5 * (0..3).map(|i| diag[i] * x[i] * x[i]).sum::<f64>();
    let descend = |eta: f64, steps: usize| {
        let mut x = [1.0, 1.0, 1.0];
        let mut losses = Vec::with_capacity(steps + 1);
        losses.push(loss(&x));
        for _ in 0..steps {
            for i in 0..3 {
                x[i] -= eta * diag[i] * x[i];
            }
            losses.push(loss(&x));
        }
        losses
    };

    let safe = descend(0.5 * bound.value, 200);
    let monotone = safe.windows(2).all(|w| w[1] <= w[0]);

    let unsafe_losses = descend(2.0 * bound.value, 50);
    let diverges = unsafe_losses.windows(2).any(|w| w[1] > w[0]);

    let elapsed = started.elapsed().as_secs_f64();
    let pass = oracle_ok && bound_ok && monotone && diverges && elapsed < 5.0;
    verdict(
        6,
        "step-bound-descent-vs-divergence",
        pass,
        &format!(
            "eigen oracle {smoothness:.9}, bound {:.6}, monotone at half: {monotone}, diverges at double: {diverges}, {elapsed:.2}s",
            bound.value
        ),
    );
}

#[test]
fn criterion_07_bound_evaluators_reproduce_hand_values() {
    let started = Instant::now();

    let drift_constants = ConvergenceConstants {
        smoothness: 1.0,
        grad_variance: 0.0,
        grad_norm_bound: 0.0,
        covariance_bound: 0.0,
        local_steps: 1,
        learning_rate: 1.0,
        initial_gap: 1.0,
        target_tolerance: 1.0,
    };
    // loss 5, S = 2: 5 - (1 - 1/2)*2 = 4.
    let drift = drift_bound(&drift_constants, 5.0, 2.0);
    let drift_ok = (drift - 4.0).abs() <= 1e-12;
    let frozen = drift_bound(
        &ConvergenceConstants {
            learning_rate: 0.0,
            ..drift_constants
        },
        5.0,
        2.0,
    );
    let frozen_ok = (frozen - 5.0).abs() <= 1e-12;

    // S = 10, L = 1, sigma^2 = 1, rho^2 = 1, Gamma = 0.5, E = 5:
    // (20 - 6) / (10 + 5 + 7) = 14/22.
    let eta_constants = ConvergenceConstants {
        smoothness: 1.0,
        grad_variance: 1.0,
        grad_norm_bound: 1.0,
        covariance_bound: 0.5,
        local_steps: 5,
        learning_rate: 0.1,
        initial_gap: 1.0,
        target_tolerance: 1.0,
    };
    let eta = eta_bound_monotone(&eta_constants, 10.0).unwrap();
    let eta_ok = eta.admissible && (eta.value - 14.0 / 22.0).abs() <= 1e-12;

    // kappa = 1, E = 1, eta = 0.1, L = 1, epsilon = 1, no noise:
    // 2 / (0.1 * 1.9).
    let rounds_constants = ConvergenceConstants {
        smoothness: 1.0,
        grad_variance: 0.0,
        grad_norm_bound: 0.0,
        covariance_bound: 0.0,
        local_steps: 1,
        learning_rate: 0.1,
        initial_gap: 1.0,
        target_tolerance: 1.0,
    };
    let rounds = rounds_to_epsilon(&rounds_constants).unwrap();
    let rounds_ok = (rounds - 2.0 / (0.1 * 1.9)).abs() <= 1e-12;

    let elapsed = started.elapsed().as_secs_f64();
    let pass = drift_ok && frozen_ok && eta_ok && rounds_ok && elapsed < 1.0;
    verdict(
        7,
        "bound-evaluators-hand-values",
        pass,
        &format!(
            "drift {drift:.12} (want 4), frozen {frozen:.12} (want 5), step bound {:.12} (want {:.12}), rounds {rounds:.6} (want {:.6}), {elapsed:.2}s",
            eta.value,
            14.0 / 22.0,
            2.0 / (0.1 * 1.9)
        ),
    );
}

/// Per-arm statistics extracted from the shared directional runs.
struct ArmStats {
    accs: Vec<f64>,
    deep_betas: Vec<f64>,
    deep_ckas: Vec<f64>,
}

struct DirectionalRuns {
    fed: ArmStats,
    hetero: ArmStats,
    inco: ArmStats,
    inco_no_project: ArmStats,
    secs: f64,
}

fn nested_groups() -> Vec<GroupSpec> {
    let depths = [1usize, 2, 4, 7, 10];
    let sizes = [2usize, 3, 4, 5, 6];
    let mut groups = Vec::new();
    let mut next_client = 0;
    for (i, (&depth, &size)) in depths.iter().zip(&sizes).enumerate() {
        let clients: Vec<usize> = (next_client..next_client + size).collect();
        next_client += size;
        groups.push(GroupSpec::new(i + 1, vec![depth], clients));
    }
    groups
}

fn directional_config(method: Method, project: bool) -> ExperimentConfig {
    ExperimentConfig {
        method,
        client_algo: ClientAlgo::Plain,
        surgery: SurgeryConfig {
            normalize: true,
            optimize: project,
            ..SurgeryConfig::default()
        },
        rounds: 100,
        clients: 20,
        sample_ratio: 1.0,
        groups: nested_groups(),
        model: StageNetConfig {
            input_dim: 32,
            stage_widths: vec![24],
            stages: 1,
            num_classes: 10,
            activation: Activation::Tanh,
            square_init: SquareInit::NearIdentity { noise: 0.25 },
        },
        trainer: TrainerConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.8,
            local_epochs: 2,
            batch_size: 4096,
            prox_mu: 0.0,
            seed: 0,
        },
        partition: PartitionConfig {
            num_clients: 20,
            dirichlet_alpha: 0.5,
            seed: 0,
            min_per_client: 10,
        },
        eval_batch: 256,
        log_every: 20,
        seeds: vec![0, 1, 2],
        data: DataConfig::Teacher {
            n: 5000,
            dim: 32,
            classes: 10,
            teacher_depth: 3,
            teacher_width: 32,
            seed: 33,
        },
        upload_noise_std: 0.0,
    }
}

fn run_arm(method: Method, project: bool) -> ArmStats {
    let cfg = directional_config(method, project);
    let opts = RunOptions::default();
    let mut stats = ArmStats {
        accs: Vec::new(),
        deep_betas: Vec::new(),
        deep_ckas: Vec::new(),
    };
    for seed in [0u64, 1, 2] {
        let summary = run_experiment(&cfg, seed, &opts).expect("directional run completes");
        let record = &summary.final_round;
        stats.accs.push(record.mean_acc);
        let betas: Vec<f64> = record.beta_rates.iter().filter_map(|b| *b).collect();
        if !betas.is_empty() {
            stats.deep_betas.push(mean(&betas));
        }
        if let Some(Some(cka)) = record.stage_cka.last() {
            stats.deep_ckas.push(*cka);
        }
    }
    stats
}

static DIRECTIONAL: OnceLock<DirectionalRuns> = OnceLock::new();

fn directional_runs() -> &'static DirectionalRuns {
    DIRECTIONAL.get_or_init(|| {
        let started = Instant::now();
        let fed = run_arm(Method::FedAvgGroupwise, true);
        let hetero = run_arm(Method::HeteroAvg, true);
        let inco = run_arm(Method::InCo, true);
        let inco_no_project = run_arm(Method::InCo, false);
        DirectionalRuns {
            fed,
            hetero,
            inco,
            inco_no_project,
            secs: started.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_08_directional_accuracy_ordering() {
    let runs = directional_runs();
    let fed = mean(&runs.fed.accs);
    let hetero = mean(&runs.hetero.accs);
    let inco = mean(&runs.inco.accs);
    let inco_gap = (inco - hetero) * 100.0;
    let hetero_gap = (hetero - fed) * 100.0;
    let pass = inco_gap >= 1.0 && hetero_gap >= 1.0 && runs.secs < 600.0;
    verdict(
        8,
        "directional-accuracy-ordering",
        pass,
        &format!(
            "seed means: layer-mixing {:.4}, shared-layer averaging {:.4}, per-group averaging {:.4}; gaps {inco_gap:+.2} and {hetero_gap:+.2} points (needs both >= 1.00), runs took {:.0}s",
            inco, hetero, fed, runs.secs
        ),
    );
}

#[test]
fn criterion_09_projection_raises_positive_alignment_rate() {
    let runs = directional_runs();
    let with_projection = mean(&runs.inco.deep_betas);
    let without = mean(&runs.inco_no_project.deep_betas);
    let pass = with_projection > without;
    verdict(
        9,
        "projection-raises-alignment-rate",
        pass,
        &format!(
            "deep-layer positive-alignment rate {with_projection:.4} with projection vs {without:.4} without"
        ),
    );
}

#[test]
fn criterion_10_surgery_raises_cross_client_cka() {
    let runs = directional_runs();
    let inco = mean(&runs.inco.deep_ckas);
    let fed = mean(&runs.fed.deep_ckas);
    let pass = inco > fed;
    verdict(
        10,
        "surgery-raises-cross-client-cka",
        pass,
        &format!("final-round deepest-stage mean off-diagonal CKA {inco:.4} vs {fed:.4}"),
    );
}

fn determinism_config() -> ExperimentConfig {
    ExperimentConfig {
        method: Method::InCo,
        client_algo: ClientAlgo::Prox,
        surgery: SurgeryConfig::default(),
        rounds: 8,
        clients: 6,
        sample_ratio: 0.5,
        groups: vec![
            GroupSpec::new(1, vec![1], vec![0, 1]),
            GroupSpec::new(2, vec![2], vec![2, 3]),
            GroupSpec::new(3, vec![3], vec![4, 5]),
        ],
        model: StageNetConfig {
            input_dim: 16,
            stage_widths: vec![12],
            stages: 1,
            num_classes: 5,
            activation: Activation::Relu,
            square_init: SquareInit::FanIn,
        },
        trainer: TrainerConfig {
            optimizer: Optimizer::adam_defaults(),
            learning_rate: 0.01,
            local_epochs: 2,
            batch_size: 32,
            prox_mu: 0.1,
            seed: 7,
        },
        partition: PartitionConfig {
            num_clients: 6,
            dirichlet_alpha: 0.5,
            seed: 3,
            min_per_client: 5,
        },
        eval_batch: 64,
        log_every: 1,
        seeds: vec![5],
        data: DataConfig::Teacher {
            n: 600,
            dim: 16,
            classes: 5,
            teacher_depth: 2,
            teacher_width: 16,
            seed: 9,
        },
        upload_noise_std: 0.01,
    }
}

#[test]
fn criterion_11_runs_are_byte_deterministic() {
    let started = Instant::now();
    let cfg = determinism_config();
    let mut outputs = Vec::new();
    for threads in [1usize, 1, 4] {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            threads: Some(threads),
        };
        run_experiment(&cfg, 5, &opts).expect("determinism run completes");
        let bytes = std::fs::read(dir.path().join("metrics_seed5.csv")).unwrap();
        outputs.push(bytes);
    }
    let repeat_identical = outputs[0] == outputs[1];
    let threads_identical = outputs[0] == outputs[2];
    let elapsed = started.elapsed().as_secs_f64();
    let pass = repeat_identical && threads_identical && elapsed < 120.0;
    verdict(
        11,
        "byte-identical-runs",
        pass,
        &format!(
            "repeat invocation identical: {repeat_identical}, 1-thread vs 4-thread identical: {threads_identical}, {elapsed:.2}s"
        ),
    );
}
