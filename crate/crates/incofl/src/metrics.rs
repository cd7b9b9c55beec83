//! Diagnostics: representation similarity, correction statistics,
//! gradient histograms, and accuracy.

use std::collections::BTreeMap;

use crate::aggregation::{ClientId, LayerKey};
use crate::error::{Error, Result};
use crate::model::{forward, ModelWeights};
use crate::tensor::{matmul, transpose, Tensor};

/// Subtracts each column's mean. CKA is invariant to feature offsets, and
/// centering first is what makes the Frobenius form equal the HSIC form.
fn center_columns(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut means = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            means[c] += x.at(r, c);
        }
    }
    for mean in &mut means {
        *mean /= rows as f64;
    }
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            values.push(x.at(r, c) - means[c]);
        }
    }
    Tensor::new(vec![rows, cols], values).expect("centering preserves finiteness")
}

fn frobenius_sq(x: &Tensor) -> f64 {
    x.values().iter().map(|v| v * v).sum()
}

/// Linear centered kernel alignment between two feature matrices on the
/// same n samples: ‖Ȳᵀ X̄‖²_F / (‖X̄ᵀ X̄‖_F · ‖Ȳᵀ Ȳ‖_F) with column-centered
/// X̄, Ȳ. Invariant to orthogonal rotation and isotropic scaling of either
/// side; 1 when the representations match up to those transforms.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.rows()],
            got: vec![y.rows()],
        });
    }
    if x.rows() < 2 {
        return Err(Error::TooFewRows { rows: x.rows() });
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    let cross = frobenius_sq(&matmul(&transpose(&yc), &xc)?);
    let x_norm = frobenius_sq(&matmul(&transpose(&xc), &xc)?).sqrt();
    let y_norm = frobenius_sq(&matmul(&transpose(&yc), &yc)?).sqrt();
    let denominator = x_norm * y_norm;
    if denominator == 0.0 {
        return Err(Error::DegenerateFeatures);
    }
    Ok(cross / denominator)
}

/// Pairwise CKA scores for one stage across a set of client models, all
/// evaluated on the same batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CkaMatrix {
    pub stage: usize,
    pub scores: Vec<Vec<f64>>,
    pub client_ids: Vec<ClientId>,
}

impl CkaMatrix {
    /// Mean of the strictly off-diagonal entries; `None` with fewer than
    /// two clients.
    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let k = self.client_ids.len();
        if k < 2 {
            return None;
        }
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    total += self.scores[i][j];
                    count += 1;
                }
            }
        }
        Some(total / count as f64)
    }
}

/// Runs every client model forward on the shared batch and scores all
/// pairs of that stage's features.
pub fn pairwise_stage_cka(
    clients: &[(ClientId, &ModelWeights)],
    eval_batch: &Tensor,
    stage: usize,
) -> Result<CkaMatrix> {
    let mut features = Vec::with_capacity(clients.len());
    let mut client_ids = Vec::with_capacity(clients.len());
    for (client_id, model) in clients {
        let pass = forward(model, eval_batch)?;
        let stage_feature = pass.stage_features.into_iter().nth(stage).ok_or_else(|| {
            Error::InvalidConfig(format!("model has no stage {stage} for CKA"))
        })?;
        features.push(stage_feature);
        client_ids.push(*client_id);
    }
    let k = features.len();
    let mut scores = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let score = linear_cka(&features[i], &features[j])?;
            scores[i][j] = score;
            scores[j][i] = score;
        }
    }
    Ok(CkaMatrix {
        stage,
        scores,
        client_ids,
    })
}

/// Running per-layer counts of how often the deep/anchor alignment came
/// out positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BetaStats {
    counts: BTreeMap<LayerKey, (usize, usize)>,
}

impl BetaStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Positive means strictly greater than zero.
    pub fn record_beta(&mut self, layer: LayerKey, beta: f64) {
        let (total, positive) = self.counts.entry(layer).or_insert((0, 0));
        *total += 1;
        if beta > 0.0 {
            *positive += 1;
        }
    }

    pub fn count_total(&self, layer: &LayerKey) -> usize {
        self.counts.get(layer).map_or(0, |&(total, _)| total)
    }

    pub fn count_positive(&self, layer: &LayerKey) -> usize {
        self.counts.get(layer).map_or(0, |&(_, positive)| positive)
    }

    /// `None` when the layer has no recorded values, so "no data" stays
    /// distinguishable from "rate zero".
    pub fn positive_rate(&self, layer: &LayerKey) -> Option<f64> {
        self.counts
            .get(layer)
            .filter(|&&(total, _)| total > 0)
            .map(|&(total, positive)| positive as f64 / total as f64)
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerKey> {
        self.counts.keys()
    }
}

/// Bin counts over a fixed range, with explicit buckets for values that
/// fall outside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub underflow: usize,
    pub bins: Vec<usize>,
    pub overflow: usize,
}

/// Histograms the tensor's values over `bins` equal-width bins spanning
/// `[lo, hi]`; the top edge lands in the last bin.
pub fn gradient_histogram(g: &Tensor, bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidConfig(format!(
            "histogram range must satisfy lo < hi, got ({lo}, {hi})"
        )));
    }
    let mut histogram = Histogram {
        underflow: 0,
        bins: vec![0; bins],
        overflow: 0,
    };
    let width = hi - lo;
    for &v in g.values() {
        if v < lo {
            histogram.underflow += 1;
        } else if v > hi {
            histogram.overflow += 1;
        } else {
            let index = (((v - lo) / width) * bins as f64) as usize;
            histogram.bins[index.min(bins - 1)] += 1;
        }
    }
    Ok(histogram)
}

/// Fraction of rows whose argmax matches the label. Ties resolve to the
/// lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let (rows, cols) = (logits.rows(), logits.cols());
    debug_assert_eq!(rows, labels.len());
    if rows == 0 {
        return 0.0;
    }
    let mut correct = 0;
    for (r, &label) in labels.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..cols {
            let v = logits.at(r, c);
            if v > best.0 {
                best = (v, c);
            }
        }
        if best.1 == label {
            correct += 1;
        }
    }
    correct as f64 / rows as f64
}
