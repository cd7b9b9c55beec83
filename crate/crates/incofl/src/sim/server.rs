//! Server-side state and the per-round aggregation step.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::aggregation::{aggregate, build_plan, AggregationPlan, ClientId, LayerKey};
use crate::error::{Error, Result};
use crate::metrics::BetaStats;
use crate::model::{init_model, ModelDelta, ModelWeights};
use crate::seeding::derive_rng;
use crate::surgery::inco_update_with_outcome;
use crate::tensor::Tensor;

use super::{ExperimentConfig, Method};

/// The weights the server maintains: a single model covering the largest
/// architecture, or one model per group when groups never share layers.
#[derive(Debug, Clone)]
pub enum ServerModel {
    Unified(ModelWeights),
    PerGroup(Vec<ModelWeights>),
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub model: ServerModel,
    pub round: usize,
    pub plan: AggregationPlan,
    pub beta_stats: BetaStats,
    group_ids: Vec<usize>,
}

impl ServerState {
    /// Builds the round-zero state: fresh weights (largest architecture,
    /// or one model per group for the groupwise method) plus the full
    /// aggregation plan.
    pub fn new(cfg: &ExperimentConfig, init_seed: u64) -> Result<ServerState> {
        let plan = build_plan(&cfg.groups, cfg.model.stages)?;
        let largest = cfg.groups.last().ok_or_else(|| {
            Error::InvalidConfig("experiment needs at least one group".into())
        })?;
        let model = match cfg.method {
            Method::FedAvgGroupwise => {
                let models = cfg
                    .groups
                    .iter()
                    .map(|group| init_model(&cfg.model, group, init_seed))
                    .collect::<Result<Vec<_>>>()?;
                ServerModel::PerGroup(models)
            }
            Method::HeteroAvg | Method::InCo => {
                ServerModel::Unified(init_model(&cfg.model, largest, init_seed)?)
            }
        };
        Ok(ServerState {
            model,
            round: 0,
            plan,
            beta_stats: BetaStats::new(),
            group_ids: cfg.groups.iter().map(|g| g.group_id).collect(),
        })
    }

    /// The weights a group's clients receive this round.
    pub fn distribute(&self, group_id: usize, depth_per_stage: &[usize]) -> Result<ModelWeights> {
        match &self.model {
            ServerModel::Unified(model) => model.restrict_to(depth_per_stage),
            ServerModel::PerGroup(models) => {
                let index = self
                    .group_ids
                    .iter()
                    .position(|&id| id == group_id)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!("unknown group id {group_id}"))
                    })?;
                Ok(models[index].clone())
            }
        }
    }
}

/// Uniform sample without replacement of ceil(K · ratio) client ids,
/// deterministic per (run seed, round), returned sorted.
pub fn sample_clients(round: usize, cfg: &ExperimentConfig, run_seed: u64) -> Vec<ClientId> {
    let mut ids: Vec<ClientId> = cfg
        .groups
        .iter()
        .flat_map(|g| g.client_ids.iter().copied())
        .collect();
    ids.sort_unstable();
    let count = ((cfg.clients as f64) * cfg.sample_ratio).ceil() as usize;
    let count = count.clamp(1, ids.len());
    let mut rng = derive_rng(run_seed, "client-sampling", &[round as u64]);
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let mut sample = ids[..count].to_vec();
    sample.sort_unstable();
    sample
}

fn mean_tensors(parts: &[&Tensor]) -> Result<Tensor> {
    let mut sum = parts[0].clone();
    for part in &parts[1..] {
        sum = sum.add(part)?;
    }
    Ok(sum.scale(1.0 / parts.len() as f64))
}

/// Plain mean of structurally identical deltas (clients from one group).
fn mean_deltas(deltas: &[&ModelDelta]) -> Result<ModelDelta> {
    let first = deltas[0];
    let mut stage_layers = BTreeMap::new();
    for key in first.stage_layers.keys() {
        let parts: Vec<&Tensor> = deltas
            .iter()
            .map(|d| {
                d.stage_layers.get(key).ok_or(Error::MissingContribution {
                    client: 0,
                    layer: *key,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        stage_layers.insert(*key, mean_tensors(&parts)?);
    }
    let mut projections = Vec::with_capacity(first.projections.len());
    for stage in 0..first.projections.len() {
        let parts: Vec<&Tensor> = deltas.iter().map(|d| &d.projections[stage]).collect();
        projections.push(mean_tensors(&parts)?);
    }
    let parts: Vec<&Tensor> = deltas.iter().map(|d| &d.classifier).collect();
    let classifier = mean_tensors(&parts)?;
    Ok(ModelDelta {
        stage_layers,
        projections,
        classifier,
    })
}

/// One aggregation step. `deltas` must come from this round's sampled
/// clients only; the contributor plan is restricted to them, so layers
/// none of them own are skipped this round.
///
/// Groupwise averaging touches one model per group. The heterogeneous
/// methods aggregate layer-wise across all groups; the mixing method then
/// rewrites every deep layer's aggregated delta with the anchor-mixed
/// update and records the observed alignment. A zero anchor falls back to
/// the unmodified delta for that layer.
pub fn server_round(
    state: &mut ServerState,
    deltas: BTreeMap<ClientId, ModelDelta>,
    cfg: &ExperimentConfig,
) -> Result<()> {
    state.round += 1;
    if deltas.is_empty() {
        return Ok(());
    }
    match cfg.method {
        Method::FedAvgGroupwise => {
            let ServerModel::PerGroup(models) = &mut state.model else {
                return Err(Error::InvalidConfig(
                    "groupwise method requires per-group server models".into(),
                ));
            };
            for (index, group) in cfg.groups.iter().enumerate() {
                let members: Vec<&ModelDelta> = group
                    .client_ids
                    .iter()
                    .filter_map(|id| deltas.get(id))
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mean = mean_deltas(&members)?;
                models[index] = models[index].apply_delta(&mean)?;
            }
        }
        Method::HeteroAvg | Method::InCo => {
            let sampled: BTreeSet<ClientId> = deltas.keys().copied().collect();
            let plan = state.plan.restrict(&sampled);
            let client_count = deltas.len();
            let mut square_contributions: BTreeMap<ClientId, BTreeMap<LayerKey, Tensor>> =
                BTreeMap::new();
            let mut projection_sums: Option<Vec<Tensor>> = None;
            let mut classifier_sum: Option<Tensor> = None;
            for (client, delta) in deltas {
                square_contributions.insert(client, delta.stage_layers);
                projection_sums = Some(match projection_sums {
                    None => delta.projections,
                    Some(sums) => sums
                        .iter()
                        .zip(&delta.projections)
                        .map(|(a, b)| a.add(b))
                        .collect::<Result<Vec<_>>>()?,
                });
                classifier_sum = Some(match classifier_sum {
                    None => delta.classifier,
                    Some(sum) => sum.add(&delta.classifier)?,
                });
            }
            let mut aggregated = aggregate(&plan, &square_contributions)?;
            if cfg.method == Method::InCo {
                apply_surgery(state, &mut aggregated, cfg)?;
            }
            let scale = 1.0 / client_count as f64;
            let final_delta = ModelDelta {
                stage_layers: aggregated,
                projections: projection_sums
                    .expect("nonempty deltas")
                    .iter()
                    .map(|t| t.scale(scale))
                    .collect(),
                classifier: classifier_sum.expect("nonempty deltas").scale(scale),
            };
            let ServerModel::Unified(model) = &mut state.model else {
                return Err(Error::InvalidConfig(
                    "heterogeneous methods require a unified server model".into(),
                ));
            };
            *model = model.apply_delta(&final_delta)?;
        }
    }
    Ok(())
}

/// Rewrites each deep layer's aggregated delta by mixing in the stage's
/// aggregated anchor delta. Anchor layers themselves stay untouched.
fn apply_surgery(
    state: &mut ServerState,
    aggregated: &mut BTreeMap<LayerKey, Tensor>,
    cfg: &ExperimentConfig,
) -> Result<()> {
    for stage in 0..cfg.model.stages {
        let anchor_key = LayerKey::new(stage, 0);
        let Some(anchor) = aggregated.get(&anchor_key).cloned() else {
            continue;
        };
        let deep_keys: Vec<LayerKey> = aggregated
            .keys()
            .filter(|k| k.stage == stage && !k.is_anchor())
            .copied()
            .collect();
        for key in deep_keys {
            let deep = aggregated.get(&key).expect("key listed above").clone();
            match inco_update_with_outcome(&anchor, &deep, &cfg.surgery) {
                Ok((updated, outcome)) => {
                    aggregated.insert(key, updated);
                    if let Some(outcome) = outcome {
                        state.beta_stats.record_beta(key, outcome.beta);
                    }
                }
                Err(Error::ZeroAnchor) => {
                    log::warn!(
                        "round {}: zero anchor delta in stage {stage}; layer {key} keeps its aggregated delta",
                        state.round
                    );
                }
                Err(other) => return Err(other),
            }
        }
    }
    Ok(())
}
