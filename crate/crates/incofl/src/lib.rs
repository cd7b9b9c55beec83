//! Federated-learning simulator for depth-heterogeneous clients.
//!
//! The library trains a family of nested multilayer perceptrons across
//! simulated clients, averages shared layers across architecture groups,
//! and optionally strengthens deep layers with the anchor layer's update
//! through normalization and a closed-form conflict correction. Diagnostics
//! cover representation similarity, correction-branch rates, and smoothness
//! constants feeding step-size and round-count bounds.

pub mod aggregation;
pub mod convergence;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod sim;
pub mod surgery;
pub mod tensor;

pub use aggregation::{
    aggregate, aggregate_weighted, build_plan, AggregationPlan, ClientId, GroupSpec, LayerKey,
};
pub use convergence::{
    drift_bound, estimate_constants, eta_bound_monotone, rounds_to_epsilon, smoothness_probe,
    ConstantsEstimate, ConvergenceConstants, EtaBound,
};
pub use data::{
    dirichlet_partition, load_idx, synth_classification, synth_teacher, Dataset, PartitionConfig,
};
pub use metrics::{
    accuracy, gradient_histogram, linear_cka, pairwise_stage_cka, BetaStats, CkaMatrix, Histogram,
};
pub use error::{Error, Result};
pub use model::{
    backward, forward, grads_on_batch, init_model, local_train, loss_on_batch, Activation,
    ModelDelta, ModelGrads, ModelWeights, Optimizer, SquareInit, StageNetConfig, TrainerConfig,
};
pub use sim::{
    probe_constants, run_experiment, sample_clients, server_round, ClientAlgo, ConstantsReport,
    CsvSchema, DataConfig, ExperimentConfig, Method, RoundRecord, RunOptions, RunSummary,
    ServerModel, ServerState,
};
pub use surgery::{
    cross_layer_sum, inco_update, inco_update_with_outcome, normalize_pair, project_theorem1,
    ProjectionBranch, ProjectionOutcome, SurgeryConfig,
};
pub use tensor::{inner, matmul, norm, transpose, Tensor};
