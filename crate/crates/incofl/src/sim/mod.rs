//! Experiment configuration and the federated training loop.
//!
//! A run wires the pieces together: partition a dataset across clients,
//! hand each sampled client its group's architecture, train locally,
//! aggregate on the server with the configured method, and log metrics.
//! Every random choice flows from one run seed through labeled streams,
//! so a run is reproducible bit for bit regardless of thread count.

mod report;
mod server;

pub use report::{Artifacts, CsvSchema, RoundRecord, RunSummary};
pub use server::{sample_clients, server_round, ServerModel, ServerState};

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{build_plan, ClientId, GroupSpec};
use crate::convergence::{estimate_constants, eta_bound_monotone, ConstantsEstimate};
use crate::data::{
    dirichlet_partition, load_idx, split_holdout, synth_classification, synth_teacher, Dataset,
    PartitionConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, pairwise_stage_cka};
use crate::model::{
    forward, local_train, ModelDelta, ModelWeights, StageNetConfig, TrainerConfig,
};
use crate::seeding::{derive_rng, derive_seed};
use crate::surgery::SurgeryConfig;
use crate::tensor::Tensor;

/// Fraction of each client's shard reserved for evaluation.
const HOLDOUT_FRACTION: f64 = 0.2;

/// Minibatch probes used when estimating convergence constants.
const CONSTANT_PROBES: usize = 8;

/// Server-side aggregation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Plain averaging within each group; groups never exchange weights.
    FedAvgGroupwise,
    /// Layer-wise averaging across groups over shared layers.
    HeteroAvg,
    /// Layer-wise averaging plus anchor-mixed deep-layer updates.
    InCo,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::FedAvgGroupwise => "FedAvgGroupwise",
            Method::HeteroAvg => "HeteroAvg",
            Method::InCo => "InCo",
        }
    }
}

/// Client-side objective. `Prox` adds the proximal pull toward the
/// received weights with the trainer's `prox_mu`; `Plain` ignores it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientAlgo {
    #[default]
    Plain,
    Prox,
}

/// Where the training data comes from: a seeded Gaussian-cluster mixture,
/// or a pair of IDX files on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Synthetic {
        n: usize,
        dim: usize,
        classes: usize,
        cluster_spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Teacher {
        n: usize,
        dim: usize,
        classes: usize,
        teacher_depth: usize,
        teacher_width: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DataConfig {
    fn synthetic_shape(&self) -> Option<(usize, usize, usize)> {
        match self {
            DataConfig::Synthetic {
                n, dim, classes, ..
            }
            | DataConfig::Teacher {
                n, dim, classes, ..
            } => Some((*n, *dim, *classes)),
            DataConfig::Idx { .. } => None,
        }
    }
}

fn default_eval_batch() -> usize {
    256
}

fn default_log_every() -> usize {
    1
}

/// Full description of one experiment. Loadable from TOML; the same
/// structure is echoed back in the run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default)]
    pub client_algo: ClientAlgo,
    #[serde(default)]
    pub surgery: SurgeryConfig,
    pub rounds: usize,
    pub clients: usize,
    pub sample_ratio: f64,
    pub groups: Vec<GroupSpec>,
    pub model: StageNetConfig,
    pub trainer: TrainerConfig,
    pub partition: PartitionConfig,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    /// Standard deviation of Gaussian noise added to uploaded deltas.
    /// Zero disables the hook.
    #[serde(default)]
    pub upload_noise_std: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.groups.is_empty() {
            return Err(Error::InvalidConfig("at least one group is required".into()));
        }
        let counted: usize = self.groups.iter().map(|g| g.client_ids.len()).sum();
        if counted != self.clients {
            return Err(Error::InvalidConfig(format!(
                "groups list {counted} clients but the experiment declares {}",
                self.clients
            )));
        }
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sample_ratio must be in (0, 1], got {}",
                self.sample_ratio
            )));
        }
        if self.partition.num_clients != self.clients {
            return Err(Error::InvalidConfig(format!(
                "partition covers {} clients but the experiment declares {}",
                self.partition.num_clients, self.clients
            )));
        }
        if !(self.trainer.learning_rate > 0.0 && self.trainer.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.trainer.learning_rate
            )));
        }
        if self.trainer.local_epochs == 0 {
            return Err(Error::InvalidConfig("local_epochs must be positive".into()));
        }
        if self.trainer.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.trainer.prox_mu < 0.0 {
            return Err(Error::InvalidConfig("prox_mu must be nonnegative".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be positive".into()));
        }
        if self.eval_batch == 0 {
            return Err(Error::InvalidConfig("eval_batch must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if self.upload_noise_std < 0.0 {
            return Err(Error::InvalidConfig(
                "upload_noise_std must be nonnegative".into(),
            ));
        }
        if let Some((n, dim, classes)) = self.data.synthetic_shape() {
            if n == 0 {
                return Err(Error::InvalidConfig("synthetic n must be positive".into()));
            }
            if dim != self.model.input_dim {
                return Err(Error::InvalidConfig(format!(
                    "data dim {dim} does not match model input_dim {}",
                    self.model.input_dim
                )));
            }
            if classes != self.model.num_classes {
                return Err(Error::InvalidConfig(format!(
                    "data classes {classes} does not match model num_classes {}",
                    self.model.num_classes
                )));
            }
        }
        if let DataConfig::Teacher {
            teacher_depth,
            teacher_width,
            ..
        } = &self.data
        {
            if *teacher_depth == 0 || *teacher_width == 0 {
                return Err(Error::InvalidConfig(
                    "teacher depth and width must be positive".into(),
                ));
            }
        }
        build_plan(&self.groups, self.model.stages)?;
        Ok(())
    }

    fn effective_prox_mu(&self) -> f64 {
        match self.client_algo {
            ClientAlgo::Plain => 0.0,
            ClientAlgo::Prox => self.trainer.prox_mu,
        }
    }
}

/// Per-invocation knobs that are not part of the experiment identity.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where to write the metrics CSV and summary JSON. No files when unset.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for local training. Default: the global thread pool.
    pub threads: Option<usize>,
}

fn load_dataset(data: &DataConfig) -> Result<Dataset> {
    match data {
        DataConfig::Synthetic {
            n,
            dim,
            classes,
            cluster_spread,
            seed,
        } => Ok(synth_classification(*n, *dim, *classes, *cluster_spread, *seed)),
        DataConfig::Teacher {
            n,
            dim,
            classes,
            teacher_depth,
            teacher_width,
            seed,
        } => Ok(synth_teacher(
            *n,
            *dim,
            *classes,
            *teacher_depth,
            *teacher_width,
            *seed,
        )),
        DataConfig::Idx { images, labels } => load_idx(images, labels),
    }
}

fn materialize(dataset: &Dataset, indices: &[usize]) -> Result<Dataset> {
    let (features, labels) = dataset.batch(indices);
    Dataset::new(features, labels, dataset.num_classes())
}

fn fisher_yates(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Pools every client's held-out rows and keeps a seeded subsample, so all
/// similarity scores are computed on one shared batch.
fn build_cka_batch(
    dataset: &Dataset,
    holdout_indices: &[Vec<usize>],
    eval_batch: usize,
    run_seed: u64,
) -> Option<Tensor> {
    if eval_batch < 2 {
        return None;
    }
    let mut pooled: Vec<usize> = holdout_indices.iter().flatten().copied().collect();
    pooled.sort_unstable();
    if pooled.len() < 2 {
        return None;
    }
    let mut rng = derive_rng(run_seed, "cka-batch", &[]);
    fisher_yates(&mut pooled, &mut rng);
    pooled.truncate(eval_batch.min(pooled.len()));
    pooled.sort_unstable();
    let (features, _) = dataset.batch(&pooled);
    Some(features)
}

fn perturb_delta(delta: &mut ModelDelta, std: f64, run_seed: u64, round: usize, client: ClientId) -> Result<()> {
    let mut rng = derive_rng(run_seed, "upload-noise", &[round as u64, client as u64]);
    let noisy = |t: &Tensor, rng: &mut ChaCha8Rng| -> Result<Tensor> {
        let values = t
            .values()
            .iter()
            .map(|v| v + std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::new(t.shape().to_vec(), values)
    };
    for stage in 0..delta.projections.len() {
        delta.projections[stage] = noisy(&delta.projections[stage], &mut rng)?;
    }
    for tensor in delta.stage_layers.values_mut() {
        *tensor = noisy(tensor, &mut rng)?;
    }
    delta.classifier = noisy(&delta.classifier, &mut rng)?;
    Ok(())
}

/// Dataset, shards, and holdouts as a run at `run_seed` sees them.
struct Prepared {
    dataset: Dataset,
    client_ids: Vec<ClientId>,
    group_of: BTreeMap<ClientId, usize>,
    train_sets: Vec<Dataset>,
    holdout_sets: Vec<Dataset>,
    holdout_indices: Vec<Vec<usize>>,
}

fn prepare(cfg: &ExperimentConfig, run_seed: u64) -> Result<Prepared> {
    let dataset = load_dataset(&cfg.data)?;
    if dataset.dim() != cfg.model.input_dim {
        return Err(Error::InvalidConfig(format!(
            "dataset dim {} does not match model input_dim {}",
            dataset.dim(),
            cfg.model.input_dim
        )));
    }
    if dataset.num_classes() != cfg.model.num_classes {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes but the model expects {}",
            dataset.num_classes(),
            cfg.model.num_classes
        )));
    }
    let mut client_ids: Vec<ClientId> = cfg
        .groups
        .iter()
        .flat_map(|g| g.client_ids.iter().copied())
        .collect();
    client_ids.sort_unstable();
    let mut group_of = BTreeMap::new();
    for (gi, group) in cfg.groups.iter().enumerate() {
        for &id in &group.client_ids {
            group_of.insert(id, gi);
        }
    }
    let partition_cfg = PartitionConfig {
        seed: derive_seed(cfg.partition.seed, "partition-run", &[run_seed]),
        ..cfg.partition.clone()
    };
    let shards = dirichlet_partition(dataset.labels(), &partition_cfg)?;
    let holdout_seed = derive_seed(run_seed, "holdout", &[]);
    let mut train_sets = Vec::with_capacity(client_ids.len());
    let mut holdout_sets = Vec::with_capacity(client_ids.len());
    let mut holdout_indices = Vec::with_capacity(client_ids.len());
    for index in 0..client_ids.len() {
        let (train_idx, hold_idx) =
            split_holdout(&shards[index], HOLDOUT_FRACTION, holdout_seed, index);
        train_sets.push(materialize(&dataset, &train_idx)?);
        holdout_sets.push(materialize(&dataset, &hold_idx)?);
        holdout_indices.push(hold_idx);
    }
    Ok(Prepared {
        dataset,
        client_ids,
        group_of,
        train_sets,
        holdout_sets,
        holdout_indices,
    })
}

impl Prepared {
    /// Index of the client with the largest training shard; ties go to
    /// the lowest client id.
    fn richest_client(&self) -> usize {
        (0..self.client_ids.len())
            .max_by_key(|&i| (self.train_sets[i].len(), usize::MAX - i))
            .expect("validated nonempty groups")
    }
}

/// Constants estimate plus the context it was measured in.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub seed: u64,
    pub client: ClientId,
    pub shard_size: usize,
    pub estimate: ConstantsEstimate,
}

/// Probes convergence constants exactly as a run at `run_seed` would:
/// same dataset, same partition, same initial weights, measured on the
/// best-provisioned client's training shard.
pub fn probe_constants(cfg: &ExperimentConfig, run_seed: u64) -> Result<ConstantsReport> {
    cfg.validate()?;
    let prep = prepare(cfg, run_seed)?;
    let state = ServerState::new(cfg, derive_seed(run_seed, "model-init", &[]))?;
    let richest = prep.richest_client();
    let id = prep.client_ids[richest];
    let group = &cfg.groups[prep.group_of[&id]];
    let model = state.distribute(group.group_id, &group.depth_per_stage)?;
    let estimate = estimate_constants(
        &model,
        &prep.train_sets[richest],
        CONSTANT_PROBES,
        derive_seed(run_seed, "constants", &[]),
    )?;
    Ok(ConstantsReport {
        seed: run_seed,
        client: id,
        shard_size: prep.train_sets[richest].len(),
        estimate,
    })
}

struct EvalContext<'a> {
    cfg: &'a ExperimentConfig,
    schema: &'a CsvSchema,
    run_seed: u64,
    client_ids: &'a [ClientId],
    group_of: &'a BTreeMap<ClientId, usize>,
    holdouts: &'a [Dataset],
    cka_batch: Option<Tensor>,
    constants: Option<ConstantsEstimate>,
}

impl EvalContext<'_> {
    /// Evaluates every client on its holdout with the weights it would
    /// receive, then derives the aggregate row. `round_stats` carries the
    /// mean squared-gradient sum and mean step count of the round that
    /// just finished; absent for the initial row.
    fn evaluate(
        &self,
        state: &ServerState,
        round_stats: Option<(f64, usize)>,
    ) -> Result<RoundRecord> {
        let cfg = self.cfg;
        let group_models: Vec<ModelWeights> = cfg
            .groups
            .iter()
            .map(|g| state.distribute(g.group_id, &g.depth_per_stage))
            .collect::<Result<_>>()?;
        let mut client_acc: Vec<Option<f64>> = Vec::with_capacity(self.client_ids.len());
        for (index, id) in self.client_ids.iter().enumerate() {
            let holdout = &self.holdouts[index];
            if holdout.is_empty() {
                client_acc.push(None);
                continue;
            }
            let model = &group_models[self.group_of[id]];
            let pass = forward(model, holdout.features())?;
            client_acc.push(Some(accuracy(&pass.logits, holdout.labels())));
        }
        let present: Vec<f64> = client_acc.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::InsufficientData(
                "no client has held-out samples to evaluate".into(),
            ));
        }
        let mean_acc = present.iter().sum::<f64>() / present.len() as f64;
        let max_acc = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_acc = present.iter().copied().fold(f64::INFINITY, f64::min);
        let mut group_acc = Vec::with_capacity(cfg.groups.len());
        for group in &cfg.groups {
            let members: Vec<f64> = group
                .client_ids
                .iter()
                .filter_map(|id| {
                    let index = self.client_ids.binary_search(id).ok()?;
                    client_acc[index]
                })
                .collect();
            let value = if members.is_empty() {
                f64::NAN
            } else {
                members.iter().sum::<f64>() / members.len() as f64
            };
            group_acc.push(value);
        }
        let mut stage_cka = vec![None; cfg.model.stages];
        if let Some(batch) = &self.cka_batch {
            let refs: Vec<(ClientId, &ModelWeights)> = self
                .client_ids
                .iter()
                .map(|id| (*id, &group_models[self.group_of[id]]))
                .collect();
            for (stage, slot) in stage_cka.iter_mut().enumerate() {
                match pairwise_stage_cka(&refs, batch, stage) {
                    Ok(matrix) => *slot = matrix.mean_off_diagonal(),
                    Err(Error::DegenerateFeatures) | Err(Error::TooFewRows { .. }) => {
                        log::debug!("round {}: no usable similarity for stage {stage}", state.round);
                    }
                    Err(other) => return Err(other),
                }
            }
        }
        let beta_rates = self
            .schema
            .deep_keys()
            .iter()
            .map(|key| state.beta_stats.positive_rate(key))
            .collect();
        let eta_bound = match (&self.constants, round_stats) {
            (Some(estimate), Some((mean_grad_sq_sum, mean_steps))) => {
                let constants = (*estimate).into_constants(
                    mean_steps,
                    cfg.trainer.learning_rate,
                    1.0,
                    0.1,
                );
                eta_bound_monotone(&constants, mean_grad_sq_sum)
                    .ok()
                    .map(|bound| bound.value)
            }
            _ => None,
        };
        Ok(RoundRecord {
            round: state.round,
            method: cfg.method.name().to_string(),
            seed: self.run_seed,
            mean_acc,
            max_acc,
            min_acc,
            group_acc,
            stage_cka,
            beta_rates,
            eta_bound,
        })
    }
}

/// Runs one experiment end to end for one seed and returns the summary,
/// writing the metrics CSV and summary JSON when an output directory is
/// given. Two invocations with the same config and seed produce identical
/// records regardless of `threads`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    run_seed: u64,
    opts: &RunOptions,
) -> Result<RunSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let prep = prepare(cfg, run_seed)?;
    let Prepared {
        dataset,
        client_ids,
        group_of,
        train_sets,
        holdout_sets,
        holdout_indices,
    } = &prep;

    let mut state = ServerState::new(cfg, derive_seed(run_seed, "model-init", &[]))?;

    // Convergence constants come from one probe on the best-provisioned
    // client at the initial weights; the per-round bound then varies only
    // through the observed gradient sums.
    let constants = {
        let richest = prep.richest_client();
        let group = &cfg.groups[group_of[&client_ids[richest]]];
        let model = state.distribute(group.group_id, &group.depth_per_stage)?;
        match estimate_constants(
            &model,
            &train_sets[richest],
            CONSTANT_PROBES,
            derive_seed(run_seed, "constants", &[]),
        ) {
            Ok(estimate) => Some(estimate),
            Err(err) => {
                log::warn!("constants estimate unavailable: {err}");
                None
            }
        }
    };

    let schema = CsvSchema::from_config(cfg);
    let cka_batch = build_cka_batch(dataset, holdout_indices, cfg.eval_batch, run_seed);
    let ctx = EvalContext {
        cfg,
        schema: &schema,
        run_seed,
        client_ids,
        group_of,
        holdouts: holdout_sets,
        cka_batch,
        constants,
    };

    let trainer = TrainerConfig {
        seed: derive_seed(cfg.trainer.seed, "trainer-run", &[run_seed]),
        prox_mu: cfg.effective_prox_mu(),
        ..cfg.trainer.clone()
    };

    let pool = match opts.threads {
        Some(threads) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
        ),
        None => None,
    };

    let mut records = vec![ctx.evaluate(&state, None)?];

    let index_of: BTreeMap<ClientId, usize> = client_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();

    for round in 1..=cfg.rounds {
        let sampled = sample_clients(round, cfg, run_seed);
        let jobs: Vec<(ClientId, usize, ModelWeights)> = sampled
            .iter()
            .map(|id| {
                let group = &cfg.groups[group_of[id]];
                let model = state.distribute(group.group_id, &group.depth_per_stage)?;
                Ok((*id, index_of[id], model))
            })
            .collect::<Result<_>>()?;
        let run_one = |(client, index, model): &(ClientId, usize, ModelWeights)| {
            let report = local_train(
                model,
                &train_sets[*index],
                &trainer,
                model,
                round as u64,
                *client as u64,
            )
            .map_err(|e| Error::Training {
                round,
                client: *client,
                source: Box::new(e),
            })?;
            let mut delta = report.delta;
            if cfg.upload_noise_std > 0.0 {
                perturb_delta(&mut delta, cfg.upload_noise_std, run_seed, round, *client)?;
            }
            Ok((*client, delta, report.sum_grad_sq, report.steps))
        };
        let results: Vec<(ClientId, ModelDelta, f64, usize)> = match &pool {
            Some(pool) => pool.install(|| jobs.par_iter().map(run_one).collect::<Result<_>>())?,
            None => jobs.par_iter().map(run_one).collect::<Result<_>>()?,
        };
        let mut deltas = BTreeMap::new();
        let mut grad_sq_sum = 0.0;
        let mut step_sum = 0usize;
        for (client, delta, grad_sq, steps) in results {
            deltas.insert(client, delta);
            grad_sq_sum += grad_sq;
            step_sum += steps;
        }
        let count = sampled.len() as f64;
        let round_stats = (
            grad_sq_sum / count,
            ((step_sum as f64 / count).round() as usize).max(1),
        );
        server_round(&mut state, deltas, cfg)?;
        if round % cfg.log_every == 0 || round == cfg.rounds {
            records.push(ctx.evaluate(&state, Some(round_stats))?);
        }
    }

    let mut artifacts = Artifacts::default();
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("metrics_seed{run_seed}.csv"));
        fs::write(&csv_path, schema.render(&records))?;
        artifacts.metrics_csv = Some(csv_path);
        artifacts.summary_json = Some(dir.join(format!("summary_seed{run_seed}.json")));
    }
    let summary = RunSummary {
        config: cfg.clone(),
        seed: run_seed,
        rounds_completed: cfg.rounds,
        final_round: records.last().expect("round zero is always logged").clone(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        artifacts,
        records,
    };
    if let Some(path) = &summary.artifacts.summary_json {
        summary.write_json(path)?;
    }
    Ok(summary)
}
