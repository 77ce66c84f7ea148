//! Core of a trace-driven simulator for serving a two-stage model cascade.
//!
//! A lightweight model answers every query first. A discriminator attaches a
//! confidence score to its output, and queries whose score falls below the
//! current confidence threshold are deferred to a heavyweight model. A
//! periodic controller picks the threshold, the number of servers hosting each
//! model, and both batch sizes by solving a small integer program exactly.
//!
//! ```text
//!  arrivals ──▶ load balancer ──▶ light workers ──(c ≥ t)──▶ sink
//!                    ▲                 │
//!                    │              (c < t)
//!               controller             ▼
//!          (demand EWMA, solve)   heavy workers ────────────▶ sink
//! ```
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the CLI and
//! wall-clock timing live in the `cascadesim` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod allocator;
pub mod cluster;
pub mod engine;
pub mod metrics;
pub mod policies;
pub mod profiles;
pub mod rng;
pub mod workload;

pub use allocator::{
    latency_feasible, queuing_delay, solve, solve_static_peak, throughput_feasible,
    AllocationPlan, AllocationProblem, QueueModel, QueueState, ThresholdGrid, Topology,
};
pub use cluster::{
    ClusterConfig, LatencyBilling, ModelKind, Outcome, QueryRecord, SimOutput, Simulation,
    TickLog,
};
pub use engine::{Event, EventQueue, SimClock};
pub use metrics::{quality_aggregate, slo_violation_ratio, IntervalSnapshot, RunSummary};
pub use policies::{aimd_update, PolicyKind};
pub use profiles::{CascadeProfile, DeferralCurve, ModelProfile, ProfileError};
pub use workload::{ArrivalMode, Query, QueryOutcomeModel, Trace, WorkloadError};
