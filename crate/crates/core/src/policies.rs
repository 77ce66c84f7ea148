//! Serving policies: the query-aware controller, its baselines and its
//! ablations, all expressed as settings over the same cluster machinery.

use core::fmt;
use core::str::FromStr;

use crate::allocator::{QueueModel, Topology};
use crate::profiles::ModelProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PolicyKind {
    /// Periodic re-solve of threshold, allocation and batch sizes.
    #[default]
    QueryAware,
    /// One solve at peak demand, frozen for the whole run.
    QueryAwareStatic,
    /// Every query served by the light model.
    ClipperLight,
    /// Every query served by the heavy model.
    ClipperHeavy,
    /// Query-agnostic random split between the two models, share chosen by
    /// the allocator.
    ProteusLike,
    /// Threshold pinned; allocation and batch sizes still optimized.
    AblStaticThreshold,
    /// Batch sizes driven by AIMD instead of the latency constraint.
    AblAimdBatching,
    /// Queuing delay assumed to be twice the execution latency.
    AblNoQueuingModel,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::QueryAware,
        PolicyKind::QueryAwareStatic,
        PolicyKind::ClipperLight,
        PolicyKind::ClipperHeavy,
        PolicyKind::ProteusLike,
        PolicyKind::AblStaticThreshold,
        PolicyKind::AblAimdBatching,
        PolicyKind::AblNoQueuingModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::QueryAware => "query-aware",
            PolicyKind::QueryAwareStatic => "query-aware-static",
            PolicyKind::ClipperLight => "clipper-light",
            PolicyKind::ClipperHeavy => "clipper-heavy",
            PolicyKind::ProteusLike => "proteus-like",
            PolicyKind::AblStaticThreshold => "abl-static-threshold",
            PolicyKind::AblAimdBatching => "abl-aimd-batching",
            PolicyKind::AblNoQueuingModel => "abl-no-queuing-model",
        }
    }

    pub fn strategy(self, params: &PolicyParams) -> Strategy {
        let base = Strategy {
            topology: Topology::Cascade,
            queue_model: QueueModel::LittlesLaw,
            pinned_threshold: None,
            aimd: None,
            frozen: false,
        };
        match self {
            PolicyKind::QueryAware => base,
            PolicyKind::QueryAwareStatic => Strategy { frozen: true, ..base },
            PolicyKind::ClipperLight => Strategy { topology: Topology::LightOnly, ..base },
            PolicyKind::ClipperHeavy => Strategy { topology: Topology::HeavyOnly, ..base },
            PolicyKind::ProteusLike => Strategy { topology: Topology::Split, ..base },
            PolicyKind::AblStaticThreshold => {
                Strategy { pinned_threshold: Some(params.static_threshold), ..base }
            }
            PolicyKind::AblAimdBatching => Strategy { aimd: Some(params.aimd), ..base },
            PolicyKind::AblNoQueuingModel => {
                Strategy { queue_model: QueueModel::TwiceExecution, ..base }
            }
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown policy `{0}`")]
pub struct UnknownPolicy(pub alloc::string::String);

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownPolicy(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AimdParams {
    pub add_step: u32,
    pub mult_factor: f64,
}

impl Default for AimdParams {
    fn default() -> Self {
        Self { add_step: 1, mult_factor: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    /// Threshold used by [`PolicyKind::AblStaticThreshold`].
    pub static_threshold: f64,
    pub aimd: AimdParams,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self { static_threshold: 0.5, aimd: AimdParams::default() }
    }
}

/// What a policy changes about the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub topology: Topology,
    pub queue_model: QueueModel,
    pub pinned_threshold: Option<f64>,
    /// When set, batch sizes follow AIMD and the latency constraint is off.
    pub aimd: Option<AimdParams>,
    /// Solve once at peak demand and never again.
    pub frozen: bool,
}

/// Next batch size under AIMD, always a profiled size.
pub fn aimd_update(profile: &ModelProfile, current: u32, timeout: bool, params: AimdParams) -> u32 {
    if timeout {
        let target = current as f64 * params.mult_factor;
        profile
            .batch_sizes()
            .rev()
            .find(|&b| b as f64 <= target)
            .unwrap_or_else(|| profile.min_batch())
    } else {
        let target = current.saturating_add(params.add_step);
        profile.batch_sizes().find(|&b| b >= target).unwrap_or_else(|| profile.max_batch())
    }
}
