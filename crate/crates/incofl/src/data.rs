//! Synthetic datasets, IDX-format loading, and non-IID partitioning.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_rng;
use crate::tensor::Tensor;

/// A labeled classification dataset with dense row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::IdxCountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::InvalidLabel {
                    label,
                    classes: num_classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of examples per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &label in &self.labels {
            counts[label] += 1;
        }
        counts
    }

    /// Gathers the given rows into a new (len × d) batch plus its labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut values = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            for j in 0..d {
                values.push(self.features.at(i, j));
            }
            labels.push(self.labels[i]);
        }
        let features = Tensor::new(vec![indices.len(), d], values)
            .expect("gathered batch has consistent shape");
        (features, labels)
    }
}

/// How the training data is spread across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub seed: u64,
    #[serde(default = "default_min_per_client")]
    pub min_per_client: usize,
}

fn default_min_per_client() -> usize {
    2
}

/// Draws one Gaussian cluster per class and labels points round-robin, so
/// classes are balanced up to remainder. `cluster_spread` scales the
/// within-class noise; at zero every point sits exactly on its class mean.
pub fn synth_classification(
    n: usize,
    dim: usize,
    classes: usize,
    cluster_spread: f64,
    seed: u64,
) -> Dataset {
    let mut mean_rng = derive_rng(seed, "synth-means", &[]);
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mean: Vec<f64> = (0..dim)
            .map(|_| mean_rng.sample::<f64, _>(StandardNormal))
            .collect();
        means.push(mean);
    }
    let mut point_rng = derive_rng(seed, "synth-points", &[]);
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        for j in 0..dim {
            let noise: f64 = point_rng.sample(StandardNormal);
            values.push(means[class][j] + cluster_spread * noise);
        }
        labels.push(class);
    }
    let features = Tensor::new(vec![n, dim], values).expect("synthetic features are finite");
    Dataset::new(features, labels, classes).expect("synthetic labels are in range")
}

/// Labels standard-normal points with the argmax of a randomly initialized
/// Tanh network, so class regions are curved and reward model depth, unlike
/// the linearly separable Gaussian clusters. Weights are drawn wide enough
/// to push pre-activations into the saturating range. Per-class logit
/// offsets are tuned by a fixed damped iteration so no class collapses to a
/// sliver of the input space.
pub fn synth_teacher(
    n: usize,
    dim: usize,
    classes: usize,
    teacher_depth: usize,
    teacher_width: usize,
    seed: u64,
) -> Dataset {
    let mut point_rng = derive_rng(seed, "teacher-points", &[]);
    let values: Vec<f64> = (0..n * dim)
        .map(|_| point_rng.sample(StandardNormal))
        .collect();

    let mut dims = Vec::with_capacity(teacher_depth + 2);
    dims.push(dim);
    for _ in 0..teacher_depth {
        dims.push(teacher_width);
    }
    dims.push(classes);
    let mut weights = Vec::with_capacity(dims.len() - 1);
    for layer in 0..dims.len() - 1 {
        let mut rng = derive_rng(seed, "teacher-layer", &[layer as u64]);
        let (fan_in, fan_out) = (dims[layer], dims[layer + 1]);
        let bound = (3.0 * 4.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        weights.push((w, fan_in, fan_out));
    }

    let mut logits = vec![0.0; n * classes];
    let mut hidden = Vec::new();
    for i in 0..n {
        let mut current: Vec<f64> = values[i * dim..(i + 1) * dim].to_vec();
        for (layer, (w, fan_in, fan_out)) in weights.iter().enumerate() {
            hidden.clear();
            hidden.resize(*fan_out, 0.0);
            for (r, &x) in current.iter().enumerate().take(*fan_in) {
                for c in 0..*fan_out {
                    hidden[c] += x * w[r * fan_out + c];
                }
            }
            let last = layer + 1 == weights.len();
            if !last {
                for v in hidden.iter_mut() {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut current, &mut hidden);
        }
        logits[i * classes..(i + 1) * classes].copy_from_slice(&current);
    }

    let target = n as f64 / classes as f64;
    let mut offsets = vec![0.0; classes];
    let mut labels = vec![0usize; n];
    for _ in 0..60 {
        let mut counts = vec![0usize; classes];
        for i in 0..n {
            let row = &logits[i * classes..(i + 1) * classes];
            let mut best = 0;
            for c in 1..classes {
                if row[c] + offsets[c] > row[best] + offsets[best] {
                    best = c;
                }
            }
            labels[i] = best;
            counts[best] += 1;
        }
        for c in 0..classes {
            offsets[c] -= 0.5 * ((counts[c].max(1) as f64 / target).ln());
        }
    }

    let features = Tensor::new(vec![n, dim], values).expect("teacher features are finite");
    Dataset::new(features, labels, classes).expect("teacher labels are in range")
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn read_u32(&mut self) -> Result<u32> {
        let slice = self.take(4)?;
        Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
    }

    fn take(&mut self, count: usize) -> Result<&'a [u8]> {
        if self.pos + count > self.bytes.len() {
            return Err(Error::IdxTruncated {
                needed: self.pos + count,
                had: self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + count];
        self.pos += count;
        Ok(slice)
    }
}

/// Loads an IDX image/label file pair (the Fashion-MNIST distribution
/// format): big-endian magic and dimensions, then raw unsigned bytes.
/// Pixels are scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let mut images = IdxReader::new(&image_bytes);
    let magic = images.read_u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = images.read_u32()? as usize;
    let rows = images.read_u32()? as usize;
    let cols = images.read_u32()? as usize;
    let pixels = images.take(count * rows * cols)?;

    let label_bytes = fs::read(labels_path)?;
    let mut labels_reader = IdxReader::new(&label_bytes);
    let magic = labels_reader.read_u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let label_count = labels_reader.read_u32()? as usize;
    if label_count != count {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let labels: Vec<usize> = labels_reader
        .take(label_count)?
        .iter()
        .map(|&b| b as usize)
        .collect();

    let values: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let features = Tensor::new(vec![count, rows * cols], values)?;
    let num_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, num_classes)
}

/// Splits sample indices across clients with per-class Dirichlet draws:
/// for each class a proportion vector over clients is sampled and the
/// class's (shuffled) indices are cut accordingly. Smaller alpha gives
/// more skewed shards. Redraws everything up to a bounded number of times
/// until every shard has `min_per_client` samples.
pub fn dirichlet_partition(labels: &[usize], cfg: &PartitionConfig) -> Result<Vec<Vec<usize>>> {
    if labels.is_empty() {
        return Err(Error::EmptyShard);
    }
    let k = cfg.num_clients;
    if labels.len() < k * cfg.min_per_client {
        return Err(Error::PartitionInfeasible {
            clients: k,
            min_per_client: cfg.min_per_client,
            retries: 0,
        });
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (index, &label) in labels.iter().enumerate() {
        by_class[label].push(index);
    }

    const MAX_RETRIES: u64 = 100;
    for attempt in 0..MAX_RETRIES {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (class, indices) in by_class.iter().enumerate() {
            if indices.is_empty() {
                continue;
            }
            let mut rng = derive_rng(cfg.seed, "partition-class", &[class as u64, attempt]);
            let mut shuffled = indices.clone();
            shuffle(&mut shuffled, &mut rng);
            let proportions = dirichlet_draw(k, cfg.dirichlet_alpha, &mut rng);
            let m = shuffled.len();
            let mut start = 0;
            let mut cumulative = 0.0;
            for (client, share) in proportions.iter().enumerate() {
                cumulative += share;
                let end = if client + 1 == k {
                    m
                } else {
                    ((cumulative * m as f64).floor() as usize).min(m)
                };
                shards[client].extend_from_slice(&shuffled[start..end]);
                start = end;
            }
        }
        if shards.iter().all(|s| s.len() >= cfg.min_per_client) {
            for shard in &mut shards {
                shard.sort_unstable();
            }
            return Ok(shards);
        }
    }
    Err(Error::PartitionInfeasible {
        clients: k,
        min_per_client: cfg.min_per_client,
        retries: MAX_RETRIES as usize,
    })
}

/// Symmetric Dirichlet sample via normalized Gamma draws.
fn dirichlet_draw<R: Rng>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0 validated by config");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // Tiny alpha can underflow every draw to zero; resample.
        if total > 0.0 {
            return draws.iter().map(|d| d / total).collect();
        }
    }
}

/// Fisher-Yates shuffle. Written out so the order depends only on our own
/// RNG stream, not on a library's shuffle implementation details.
fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Deterministically splits a shard into (train, holdout) index lists,
/// holding out the given fraction (at least one sample stays in train).
pub fn split_holdout(shard: &[usize], fraction: f64, seed: u64, client: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order = shard.to_vec();
    let mut rng = derive_rng(seed, "holdout-split", &[client as u64]);
    shuffle(&mut order, &mut rng);
    let holdout_len = ((shard.len() as f64) * fraction).floor() as usize;
    let holdout_len = holdout_len.min(shard.len().saturating_sub(1));
    let (holdout, train) = order.split_at(holdout_len);
    let mut train = train.to_vec();
    let mut holdout = holdout.to_vec();
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}
