//! Convergence diagnostics: closed-form bound evaluators over smoothness
//! and gradient-noise constants, plus empirical estimators for those
//! constants probed from a model and a shard.
//!
//! The evaluators are exact formula transcriptions; the estimators return
//! plug-in values labeled as estimates. Nothing here asserts the bounds
//! are tight.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{grads_on_batch, ModelWeights};
use crate::seeding::derive_rng;

/// The constants the bounds are evaluated against. Estimated or assumed;
/// the evaluators treat them as given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    /// Gradient Lipschitz constant (commonly written L).
    pub smoothness: f64,
    /// Bound on the stochastic-gradient variance (sigma squared).
    pub grad_variance: f64,
    /// Bound on the expected stochastic-gradient norm (rho, unsquared).
    pub grad_norm_bound: f64,
    /// Bound on the covariance between a model's layer gradients (Gamma).
    pub covariance_bound: f64,
    /// Local optimizer steps per round (E).
    pub local_steps: usize,
    /// Step size (eta).
    pub learning_rate: f64,
    /// Initial optimality gap: starting loss minus optimal loss (kappa).
    pub initial_gap: f64,
    /// Target stationarity tolerance (epsilon).
    pub target_tolerance: f64,
}

impl ConvergenceConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("smoothness", self.smoothness),
            ("grad_variance", self.grad_variance),
            ("grad_norm_bound", self.grad_norm_bound),
            ("covariance_bound", self.covariance_bound),
            ("learning_rate", self.learning_rate),
            ("initial_gap", self.initial_gap),
            ("target_tolerance", self.target_tolerance),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "constant {name} must be finite and nonnegative, got {value}"
                )));
            }
        }
        if self.local_steps == 0 {
            return Err(Error::InvalidConfig(
                "local_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Upper bound on the next round's loss given this round's loss and the
/// accumulated squared gradient norm S over the local steps:
///
/// loss − (η − Lη²/2)·S + (L·E·η²/2)·σ² + 2η(Γ + ρ²) + Lη²(2ρ² + σ² + Γ)
pub fn drift_bound(c: &ConvergenceConstants, loss_t: f64, grad_norm_sq_sum: f64) -> f64 {
    let eta = c.learning_rate;
    let l = c.smoothness;
    let sigma2 = c.grad_variance;
    let rho2 = c.grad_norm_bound * c.grad_norm_bound;
    let gamma = c.covariance_bound;
    let s = grad_norm_sq_sum;
    loss_t - (eta - l * eta * eta / 2.0) * s
        + (l * c.local_steps as f64 * eta * eta / 2.0) * sigma2
        + 2.0 * eta * (gamma + rho2)
        + l * eta * eta * (2.0 * rho2 + sigma2 + gamma)
}

/// A step-size threshold plus whether it is usable: a nonpositive value
/// means no step size satisfies the descent condition for the given
/// constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaBound {
    pub value: f64,
    pub admissible: bool,
}

/// Largest step size for which the per-round loss is guaranteed to
/// decrease, as a function of the accumulated squared gradient norm S:
///
/// [2S − 4(Γ + ρ²)] / [L(S + Eρ² + 2(2ρ² + σ² + Γ))]
///
/// With σ = ρ = Γ = 0 this collapses to the classical 2/L.
pub fn eta_bound_monotone(c: &ConvergenceConstants, grad_norm_sq_sum: f64) -> Result<EtaBound> {
    if c.smoothness == 0.0 {
        return Err(Error::ZeroSmoothness);
    }
    let sigma2 = c.grad_variance;
    let rho2 = c.grad_norm_bound * c.grad_norm_bound;
    let gamma = c.covariance_bound;
    let s = grad_norm_sq_sum;
    let numerator = 2.0 * s - 4.0 * (gamma + rho2);
    let denominator =
        c.smoothness * (s + c.local_steps as f64 * rho2 + 2.0 * (2.0 * rho2 + sigma2 + gamma));
    if denominator == 0.0 {
        return Err(Error::InvalidConfig(
            "step-size bound denominator is zero; need nonzero S or noise constants".into(),
        ));
    }
    let value = numerator / denominator;
    Ok(EtaBound {
        value,
        admissible: value > 0.0,
    })
}

/// Communication rounds sufficient to reach the target tolerance:
///
/// T = 2κ / (Eη·((2 − Lη)ε − 3Lησ² − 2(2 + Lη)Γ − 4(1 + Lη)ρ²))
///
/// Errors when the denominator is nonpositive, meaning the tolerance is
/// not reachable under these constants.
pub fn rounds_to_epsilon(c: &ConvergenceConstants) -> Result<f64> {
    let eta = c.learning_rate;
    let l = c.smoothness;
    let sigma2 = c.grad_variance;
    let rho2 = c.grad_norm_bound * c.grad_norm_bound;
    let gamma = c.covariance_bound;
    let inner = (2.0 - l * eta) * c.target_tolerance
        - 3.0 * l * eta * sigma2
        - 2.0 * (2.0 + l * eta) * gamma
        - 4.0 * (1.0 + l * eta) * rho2;
    let denominator = c.local_steps as f64 * eta * inner;
    if denominator <= 0.0 {
        return Err(Error::EpsilonUnreachable { denominator });
    }
    Ok(2.0 * c.initial_gap / denominator)
}

/// Plug-in estimates for the assumption constants, probed empirically.
/// These are observed maxima, not proven bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsEstimate {
    pub smoothness: f64,
    pub grad_variance: f64,
    pub grad_norm_bound: f64,
    pub covariance_bound: f64,
    pub minibatches_used: usize,
    pub probes_used: usize,
}

impl ConstantsEstimate {
    /// Completes the estimate into evaluator inputs with the caller's
    /// schedule parameters.
    pub fn into_constants(
        self,
        local_steps: usize,
        learning_rate: f64,
        initial_gap: f64,
        target_tolerance: f64,
    ) -> ConvergenceConstants {
        ConvergenceConstants {
            smoothness: self.smoothness,
            grad_variance: self.grad_variance,
            grad_norm_bound: self.grad_norm_bound,
            covariance_bound: self.covariance_bound,
            local_steps,
            learning_rate,
            initial_gap,
            target_tolerance,
        }
    }
}

/// Largest observed gradient-difference ratio ‖g(x) − g(y)‖ / ‖x − y‖
/// over random perturbation pairs around `base`. Generic in the gradient
/// so it can be pointed at any differentiable objective.
pub fn smoothness_probe<F>(
    gradient: F,
    base: &[f64],
    probes: usize,
    scale: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if probes == 0 || base.is_empty() {
        return Err(Error::InsufficientData(
            "smoothness probing needs parameters and at least one probe".into(),
        ));
    }
    let mut best: f64 = 0.0;
    for probe in 0..probes {
        let mut rng = derive_rng(seed, "smoothness-probe", &[probe as u64]);
        let mut x = base.to_vec();
        let mut y = base.to_vec();
        for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
            *xi += scale * rng.sample::<f64, _>(StandardNormal);
            *yi += scale * rng.sample::<f64, _>(StandardNormal);
        }
        let distance_sq: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let distance = distance_sq.sqrt();
        if distance <= 1e-12 {
            continue;
        }
        let gx = gradient(&x)?;
        let gy = gradient(&y)?;
        let diff_sq: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum();
        best = best.max(diff_sq.sqrt() / distance);
    }
    Ok(best)
}

/// Splits `0..n` into `pieces` contiguous, nearly equal index chunks.
fn contiguous_chunks(n: usize, pieces: usize) -> Vec<Vec<usize>> {
    let mut chunks = Vec::with_capacity(pieces);
    for piece in 0..pieces {
        let start = piece * n / pieces;
        let end = (piece + 1) * n / pieces;
        chunks.push((start..end).collect());
    }
    chunks
}

/// Probes the model and shard for plug-in constant estimates:
/// - smoothness: max gradient-difference ratio over `probes` random
///   weight-perturbation pairs;
/// - gradient variance: max over layers of the mean squared deviation of
///   minibatch gradients from the full-shard gradient, over up to
///   `probes` disjoint contiguous minibatches;
/// - gradient norm bound: largest minibatch gradient norm seen;
/// - covariance bound: largest covariance of gradient norms across
///   minibatches among same-stage square-layer pairs, floored at zero.
pub fn estimate_constants(
    w: &ModelWeights,
    shard: &Dataset,
    probes: usize,
    seed: u64,
) -> Result<ConstantsEstimate> {
    if shard.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "constant estimation needs at least 2 samples, shard has {}",
            shard.len()
        )));
    }
    if probes == 0 {
        return Err(Error::InsufficientData(
            "constant estimation needs at least one probe".into(),
        ));
    }
    let minibatches = probes.min(shard.len()).max(1);
    let chunks = contiguous_chunks(shard.len(), minibatches);
    let keys = w.layer_keys();

    // One gradient per minibatch, split by layer in canonical order, plus
    // the square-layer gradient norms the covariance estimate needs.
    let mut per_batch_layers: Vec<Vec<Vec<f64>>> = Vec::with_capacity(minibatches);
    let mut per_batch_key_norms: Vec<Vec<f64>> = Vec::with_capacity(minibatches);
    let mut batch_weights: Vec<f64> = Vec::with_capacity(minibatches);
    for chunk in &chunks {
        let (batch, labels) = shard.batch(chunk);
        let (_, grads) = grads_on_batch(w, &batch, &labels)?;
        per_batch_key_norms.push(
            keys.iter()
                .map(|&key| {
                    let vector = grads
                        .square_layer_vector(key)
                        .expect("key enumerated from the same model");
                    crate::tensor::norm(&vector)
                })
                .collect(),
        );
        per_batch_layers.push(grads.layer_vectors());
        batch_weights.push(chunk.len() as f64 / shard.len() as f64);
    }

    // Full-shard gradient as the size-weighted mean of the minibatch
    // gradients; for a partition of the shard this is the exact full
    // gradient, and duplicated minibatches cancel exactly.
    let layer_count = per_batch_layers[0].len();
    let mut full_layers: Vec<Vec<f64>> = per_batch_layers[0]
        .iter()
        .map(|layer| vec![0.0; layer.len()])
        .collect();
    for (batch_layers, weight) in per_batch_layers.iter().zip(&batch_weights) {
        for (full, layer) in full_layers.iter_mut().zip(batch_layers) {
            for (f, g) in full.iter_mut().zip(layer) {
                *f += weight * g;
            }
        }
    }

    let mut grad_variance: f64 = 0.0;
    for layer in 0..layer_count {
        let mut mean_sq_dev = 0.0;
        for batch_layers in &per_batch_layers {
            let dev: f64 = batch_layers[layer]
                .iter()
                .zip(&full_layers[layer])
                .map(|(g, f)| (g - f) * (g - f))
                .sum();
            mean_sq_dev += dev;
        }
        grad_variance = grad_variance.max(mean_sq_dev / minibatches as f64);
    }

    let mut grad_norm_bound: f64 = 0.0;
    for batch_layers in &per_batch_layers {
        let norm_sq: f64 = batch_layers
            .iter()
            .flat_map(|layer| layer.iter())
            .map(|g| g * g)
            .sum();
        grad_norm_bound = grad_norm_bound.max(norm_sq.sqrt());
    }

    // Covariance of gradient norms between square layers of the same
    // stage, across minibatches.
    let mut covariance_bound: f64 = 0.0;
    for i in 0..keys.len() {
        for j in (i + 1)..keys.len() {
            if keys[i].stage != keys[j].stage {
                continue;
            }
            let xs: Vec<f64> = per_batch_key_norms.iter().map(|norms| norms[i]).collect();
            let ys: Vec<f64> = per_batch_key_norms.iter().map(|norms| norms[j]).collect();
            let mean_x: f64 = xs.iter().sum::<f64>() / minibatches as f64;
            let mean_y: f64 = ys.iter().sum::<f64>() / minibatches as f64;
            let covariance: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - mean_x) * (y - mean_y))
                .sum::<f64>()
                / minibatches as f64;
            covariance_bound = covariance_bound.max(covariance);
        }
    }

    let full_flat: Vec<f64> = w.to_flat();
    let full_batch_indices: Vec<usize> = (0..shard.len()).collect();
    let (full_batch, full_labels) = shard.batch(&full_batch_indices);
    let smoothness = smoothness_probe(
        |flat| {
            let probe_model = w.with_values(flat)?;
            let (_, grads) = grads_on_batch(&probe_model, &full_batch, &full_labels)?;
            Ok(grads.to_flat())
        },
        &full_flat,
        probes,
        0.05,
        seed,
    )?;

    Ok(ConstantsEstimate {
        smoothness,
        grad_variance,
        grad_norm_bound,
        covariance_bound,
        minibatches_used: minibatches,
        probes_used: probes,
    })
}
