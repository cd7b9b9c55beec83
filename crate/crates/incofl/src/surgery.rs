//! Cross-layer gradient mixing with conflict correction.
//!
//! A deep layer's aggregated update is strengthened by adding the anchor
//! layer's update from the same stage. Both updates are normalized to unit
//! length first so neither magnitude dominates, and the result is rescaled
//! to the average of the original magnitudes. When the two updates point
//! against each other, the anchor component is removed by a closed-form
//! halfspace projection instead of a numeric solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{inner, norm, Tensor};

fn default_true() -> bool {
    true
}

fn default_epsilon_norm() -> f64 {
    1e-12
}

/// Which pieces of the mixing pipeline are active. Disabling both leaves
/// the raw sum of the two updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurgeryConfig {
    /// Rescale both updates to unit length before combining.
    pub normalize: bool,
    /// Apply the conflict correction to the deep update.
    pub optimize: bool,
    /// Subtract the scaled anchor even when the updates already agree.
    /// The correction term vanishes as the conflict does, so this keeps
    /// the applied formula branch-free.
    #[serde(default = "default_true")]
    pub always_subtract: bool,
    /// Norms at or below this threshold are treated as zero during
    /// normalization instead of being divided by.
    #[serde(default = "default_epsilon_norm")]
    pub epsilon_norm: f64,
}

impl Default for SurgeryConfig {
    fn default() -> Self {
        Self {
            normalize: true,
            optimize: true,
            always_subtract: true,
            epsilon_norm: default_epsilon_norm(),
        }
    }
}

/// Which case of the closed-form solution applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionBranch {
    /// The updates do not conflict; the deep update is kept as is.
    Identity,
    /// The anchor component was subtracted to resolve a conflict.
    Corrected,
}

/// Result of projecting a deep update onto the halfspace that does not
/// oppose the anchor update.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOutcome {
    pub g_opt: Tensor,
    /// Correction coefficient beta / alpha.
    pub theta: f64,
    /// Squared anchor norm.
    pub alpha: f64,
    /// Alignment between the deep and anchor updates.
    pub beta: f64,
    pub branch: ProjectionBranch,
}

/// Closed-form solution of "stay as close as possible to the deep update
/// without opposing the anchor": if the alignment beta is nonnegative the
/// deep update already satisfies the constraint, otherwise the minimizer
/// is the deep update minus theta times the anchor with theta = beta/alpha.
pub fn project_theorem1(g0: &Tensor, gk: &Tensor) -> Result<ProjectionOutcome> {
    let alpha = inner(g0, g0)?;
    if alpha == 0.0 {
        return Err(Error::ZeroAnchor);
    }
    let beta = inner(gk, g0)?;
    let theta = beta / alpha;
    let (g_opt, branch) = if beta >= 0.0 {
        (gk.clone(), ProjectionBranch::Identity)
    } else {
        (gk.add_scaled(-theta, g0)?, ProjectionBranch::Corrected)
    };
    Ok(ProjectionOutcome {
        g_opt,
        theta,
        alpha,
        beta,
        branch,
    })
}

/// Rescales both updates to unit length and reports the shared magnitude
/// the combined result should be restored to: the mean of the two norms.
/// Updates with norm at or below `epsilon` are left as zero vectors.
pub fn normalize_pair(g0: &Tensor, gk: &Tensor, epsilon: f64) -> (Tensor, Tensor, f64) {
    let n0 = norm(g0);
    let nk = norm(gk);
    let unit = |t: &Tensor, n: f64| {
        if n <= epsilon {
            Tensor::zeros(t.shape().to_vec())
        } else {
            t.scale(1.0 / n)
        }
    };
    (unit(g0, n0), unit(gk, nk), (n0 + nk) / 2.0)
}

/// Plain sum of the anchor and deep updates, with shape checking.
pub fn cross_layer_sum(g0: &Tensor, gk: &Tensor) -> Result<Tensor> {
    gk.add(g0)
}

/// Combined update for one deep layer, honoring the configured pipeline.
pub fn inco_update(g0: &Tensor, gk: &Tensor, config: &SurgeryConfig) -> Result<Tensor> {
    inco_update_with_outcome(g0, gk, config).map(|(update, _)| update)
}

/// As [`inco_update`], but also reports the projection diagnostics when an
/// alignment was computed. The outcome's branch and correction follow the
/// strict case split even when `always_subtract` applies the branch-free
/// formula to the returned update; callers use the outcome for statistics
/// and the tensor for the actual update.
///
/// Returns an error when the correction is requested against a zero
/// anchor, and `None` diagnostics when the anchor is zero but no
/// correction was asked for.
pub fn inco_update_with_outcome(
    g0: &Tensor,
    gk: &Tensor,
    config: &SurgeryConfig,
) -> Result<(Tensor, Option<ProjectionOutcome>)> {
    match (config.normalize, config.optimize) {
        (true, true) => {
            let (u0, uk, scale) = normalize_pair(g0, gk, config.epsilon_norm);
            let outcome = project_theorem1(&u0, &uk)?;
            let combined = if config.always_subtract {
                uk.add_scaled(-outcome.theta, &u0)?
            } else {
                outcome.g_opt.clone()
            };
            Ok((combined.scale(scale), Some(outcome)))
        }
        (true, false) => {
            let (u0, uk, scale) = normalize_pair(g0, gk, config.epsilon_norm);
            let combined = u0.add(&uk)?.scale(scale);
            let outcome = project_theorem1(&u0, &uk).ok();
            Ok((combined, outcome))
        }
        (false, true) => {
            let outcome = project_theorem1(g0, gk)?;
            let update = if config.always_subtract {
                gk.add_scaled(-outcome.theta, g0)?
            } else {
                outcome.g_opt.clone()
            };
            Ok((update, Some(outcome)))
        }
        (false, false) => {
            let update = cross_layer_sum(g0, gk)?;
            let outcome = project_theorem1(g0, gk).ok();
            Ok((update, outcome))
        }
    }
}
