//! Layer-wise averaging across client groups of different depths.
//!
//! Clients are organized into groups ordered by model size, and the groups
//! are nested: a layer present in a small model is present in every larger
//! one. Each layer is averaged only over the clients whose architecture
//! contains it, so shallow layers see every client while the deepest layers
//! see only the largest group.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type ClientId = usize;

/// Addresses one square layer inside a stage. Index 0 is the anchor layer
/// that supplies the shallow gradient for the rest of its stage.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct LayerKey {
    pub stage: usize,
    pub index_in_stage: usize,
}

impl LayerKey {
    pub fn new(stage: usize, index_in_stage: usize) -> Self {
        Self {
            stage,
            index_in_stage,
        }
    }

    pub fn is_anchor(&self) -> bool {
        self.index_in_stage == 0
    }
}

impl fmt::Display for LayerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}.l{}", self.stage, self.index_in_stage)
    }
}

/// One architecture group: which clients run it and how many square layers
/// it has per stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: usize,
    pub depth_per_stage: Vec<usize>,
    pub client_ids: Vec<ClientId>,
}

impl GroupSpec {
    pub fn new(group_id: usize, depth_per_stage: Vec<usize>, client_ids: Vec<ClientId>) -> Self {
        Self {
            group_id,
            depth_per_stage,
            client_ids,
        }
    }

    /// Does this group's architecture contain the given layer?
    pub fn owns(&self, layer: LayerKey) -> bool {
        self.depth_per_stage
            .get(layer.stage)
            .is_some_and(|&depth| layer.index_in_stage < depth)
    }
}

/// For every layer, the ordered list of (client, group) pairs contributing
/// to its average. Contributors are sorted by client id, and aggregation
/// sums in exactly that order, so results are bit-reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationPlan {
    contributors: BTreeMap<LayerKey, Vec<(ClientId, usize)>>,
}

impl AggregationPlan {
    pub fn layers(&self) -> impl Iterator<Item = &LayerKey> {
        self.contributors.keys()
    }

    pub fn contributors(&self, layer: &LayerKey) -> &[(ClientId, usize)] {
        self.contributors
            .get(layer)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Restricts the plan to a sampled subset of clients. Layers that lose
    /// every contributor are dropped, which downstream treats as "no update
    /// this round".
    pub fn restrict(&self, clients: &BTreeSet<ClientId>) -> AggregationPlan {
        let contributors = self
            .contributors
            .iter()
            .filter_map(|(layer, list)| {
                let kept: Vec<_> = list
                    .iter()
                    .copied()
                    .filter(|(client, _)| clients.contains(client))
                    .collect();
                (!kept.is_empty()).then_some((*layer, kept))
            })
            .collect();
        AggregationPlan { contributors }
    }
}

fn validate_groups(groups: &[GroupSpec], stages: usize) -> Result<()> {
    let mut seen_clients = BTreeSet::new();
    for group in groups {
        if group.depth_per_stage.len() != stages {
            return Err(Error::InvalidConfig(format!(
                "group {} lists {} stages, expected {}",
                group.group_id,
                group.depth_per_stage.len(),
                stages
            )));
        }
        if group.depth_per_stage.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "group {} has a zero-depth stage; every stage needs at least the anchor layer",
                group.group_id
            )));
        }
        for &client in &group.client_ids {
            if !seen_clients.insert(client) {
                return Err(Error::DuplicateClient { client });
            }
        }
    }
    for pair in groups.windows(2) {
        let (small, large) = (&pair[0], &pair[1]);
        if small.group_id >= large.group_id {
            return Err(Error::InvalidConfig(format!(
                "group ids must be strictly increasing, got {} then {}",
                small.group_id, large.group_id
            )));
        }
        for stage in 0..stages {
            if small.depth_per_stage[stage] > large.depth_per_stage[stage] {
                return Err(Error::NonNestedGroups {
                    small_group: small.group_id,
                    large_group: large.group_id,
                    stage,
                    small_depth: small.depth_per_stage[stage],
                    large_depth: large.depth_per_stage[stage],
                });
            }
        }
    }
    Ok(())
}

/// Builds the contributor lists: a client contributes to layer (s, i) iff
/// its group's depth in stage s exceeds i.
pub fn build_plan(groups: &[GroupSpec], stages: usize) -> Result<AggregationPlan> {
    validate_groups(groups, stages)?;
    let mut contributors: BTreeMap<LayerKey, Vec<(ClientId, usize)>> = BTreeMap::new();
    for group in groups {
        for stage in 0..stages {
            for index in 0..group.depth_per_stage[stage] {
                let layer = LayerKey::new(stage, index);
                let list = contributors.entry(layer).or_default();
                for &client in &group.client_ids {
                    list.push((client, group.group_id));
                }
            }
        }
    }
    for list in contributors.values_mut() {
        list.sort_by_key(|&(client, _)| client);
    }
    Ok(AggregationPlan { contributors })
}

/// Unweighted mean of each layer's contributions, summed in plan order.
pub fn aggregate(
    plan: &AggregationPlan,
    contributions: &BTreeMap<ClientId, BTreeMap<LayerKey, Tensor>>,
) -> Result<BTreeMap<LayerKey, Tensor>> {
    aggregate_impl(plan, contributions, None)
}

/// Weighted variant: each client's contribution is weighted (for example
/// by sample count) and the layer total is divided by the weight sum.
pub fn aggregate_weighted(
    plan: &AggregationPlan,
    contributions: &BTreeMap<ClientId, BTreeMap<LayerKey, Tensor>>,
    weights: &BTreeMap<ClientId, f64>,
) -> Result<BTreeMap<LayerKey, Tensor>> {
    aggregate_impl(plan, contributions, Some(weights))
}

fn aggregate_impl(
    plan: &AggregationPlan,
    contributions: &BTreeMap<ClientId, BTreeMap<LayerKey, Tensor>>,
    weights: Option<&BTreeMap<ClientId, f64>>,
) -> Result<BTreeMap<LayerKey, Tensor>> {
    let mut output = BTreeMap::new();
    for (layer, list) in &plan.contributors {
        if list.is_empty() {
            continue;
        }
        let mut sum: Option<Tensor> = None;
        let mut weight_sum = 0.0;
        for &(client, _group) in list {
            let tensor = contributions
                .get(&client)
                .and_then(|layers| layers.get(layer))
                .ok_or(Error::MissingContribution {
                    client,
                    layer: *layer,
                })?;
            let weight = match weights {
                Some(map) => *map.get(&client).unwrap_or(&1.0),
                None => 1.0,
            };
            weight_sum += weight;
            sum = Some(match sum {
                None => tensor.scale(weight),
                Some(acc) => acc.add_scaled(weight, tensor)?,
            });
        }
        let mean = sum.expect("nonempty contributor list").scale(1.0 / weight_sum);
        output.insert(*layer, mean);
    }
    Ok(output)
}
