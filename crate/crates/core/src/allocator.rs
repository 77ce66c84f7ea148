//! Resource allocation: pick the confidence threshold, per-model server counts
//! and batch sizes that maximize the threshold while meeting demand and the
//! latency SLO.
//!
//! The decision space is small (threshold grid × profiled batch pairs), and
//! once `(t, b1, b2)` is fixed the server counts are forced: the fewest
//! servers whose aggregate throughput covers each model's demand. The solver
//! walks thresholds from the top and stops at the first one with a feasible
//! batch pair, which makes the search exact.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::profiles::{CascadeProfile, DeferralCurve, ModelProfile, ProfileError};

/// Delay reported for a non-empty queue that receives no arrivals.
pub const DEFAULT_STALL_DELAY: f64 = 1e6;
pub const DEFAULT_OVERPROVISION: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocError {
    #[error("arrival rate {0} is negative or not finite")]
    BadArrivalRate(f64),
    #[error("threshold grid must start at 0, stay within [0, 1] and strictly increase")]
    BadGrid,
    #[error("grid step {0} must divide 1 into at most 10000 parts")]
    BadGridStep(f64),
    #[error("over-provisioning factor {0} must be at least 1")]
    BadOverprovision(f64),
    #[error("demand {0} is negative or not finite")]
    BadDemand(f64),
    #[error("server count must be positive")]
    NoServers,
    #[error("pinned threshold {0} is not on the grid")]
    PinnedOffGrid(f64),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Candidate confidence thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    points: Vec<f64>,
}

impl ThresholdGrid {
    /// `0, step, 2·step, …, 1`; `step` must divide 1.
    pub fn uniform(step: f64) -> Result<Self, AllocError> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(AllocError::BadGridStep(step));
        }
        let n = libm::round(1.0 / step);
        if (n * step - 1.0).abs() > 1e-9 || n > 10_000.0 {
            return Err(AllocError::BadGridStep(step));
        }
        let n = n as usize;
        Ok(Self { points: (0..=n).map(|k| k as f64 / n as f64).collect() })
    }

    pub fn new(points: Vec<f64>) -> Result<Self, AllocError> {
        let ok = points.first() == Some(&0.0)
            && points.iter().all(|p| (0.0..=1.0).contains(p))
            && points.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self { points })
        } else {
            Err(AllocError::BadGrid)
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn max(&self) -> f64 {
        *self.points.last().expect("grid contains 0")
    }

    pub fn contains(&self, t: f64) -> bool {
        self.points.contains(&t)
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::uniform(0.01).expect("0.01 divides 1")
    }
}

/// How queries move through the two model pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Topology {
    /// Light model first; queries below the threshold continue to heavy.
    #[default]
    Cascade,
    /// Each query visits exactly one model; `t` is the share sent to heavy.
    Split,
    LightOnly,
    HeavyOnly,
}

/// Queuing-delay estimate used in the latency constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueueModel {
    /// Little's law on the observed queue length and arrival rate.
    #[default]
    LittlesLaw,
    /// Assume each model's queuing delay is twice its execution latency.
    TwiceExecution,
}

/// Aggregate queue state of one model pool.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueueState {
    pub queue_length: u64,
    pub arrival_rate: f64,
}

/// Little's law `W = L / λ`; a stalled non-empty queue reports `stall_delay`.
pub fn queuing_delay_with(
    queue_length: u64,
    arrival_rate: f64,
    stall_delay: f64,
) -> Result<f64, AllocError> {
    if !(arrival_rate >= 0.0 && arrival_rate.is_finite()) {
        return Err(AllocError::BadArrivalRate(arrival_rate));
    }
    Ok(if queue_length == 0 {
        0.0
    } else if arrival_rate == 0.0 {
        stall_delay
    } else {
        queue_length as f64 / arrival_rate
    })
}

pub fn queuing_delay(queue_length: u64, arrival_rate: f64) -> Result<f64, AllocError> {
    queuing_delay_with(queue_length, arrival_rate, DEFAULT_STALL_DELAY)
}

#[derive(Debug, Clone)]
pub struct AllocationProblem<'a> {
    pub demand: f64,
    pub servers: u32,
    pub cascade: &'a CascadeProfile,
    /// Live deferral curve; starts as the cascade's offline profile.
    pub deferral: &'a DeferralCurve,
    pub overprovision: f64,
    pub grid: &'a ThresholdGrid,
    pub light_queue: QueueState,
    pub heavy_queue: QueueState,
    pub topology: Topology,
    pub queue_model: QueueModel,
    pub pinned_threshold: Option<f64>,
    pub pinned_batches: Option<(u32, u32)>,
    pub enforce_latency: bool,
    pub stall_delay: f64,
}

impl<'a> AllocationProblem<'a> {
    pub fn new(cascade: &'a CascadeProfile, grid: &'a ThresholdGrid, demand: f64, servers: u32) -> Self {
        Self {
            demand,
            servers,
            cascade,
            deferral: &cascade.deferral,
            overprovision: DEFAULT_OVERPROVISION,
            grid,
            light_queue: QueueState::default(),
            heavy_queue: QueueState::default(),
            topology: Topology::Cascade,
            queue_model: QueueModel::LittlesLaw,
            pinned_threshold: None,
            pinned_batches: None,
            enforce_latency: true,
            stall_delay: DEFAULT_STALL_DELAY,
        }
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        if !(self.demand >= 0.0 && self.demand.is_finite()) {
            return Err(AllocError::BadDemand(self.demand));
        }
        if self.servers == 0 {
            return Err(AllocError::NoServers);
        }
        if !(self.overprovision >= 1.0 && self.overprovision.is_finite()) {
            return Err(AllocError::BadOverprovision(self.overprovision));
        }
        for q in [self.light_queue, self.heavy_queue] {
            if !(q.arrival_rate >= 0.0 && q.arrival_rate.is_finite()) {
                return Err(AllocError::BadArrivalRate(q.arrival_rate));
            }
        }
        if let Some(t) = self.pinned_threshold {
            if !self.grid.contains(t) {
                return Err(AllocError::PinnedOffGrid(t));
            }
        }
        if let Some((b1, b2)) = self.pinned_batches {
            self.cascade.light.exec_latency(b1)?;
            self.cascade.heavy.exec_latency(b2)?;
        }
        Ok(())
    }

    fn light(&self) -> &ModelProfile {
        &self.cascade.light
    }

    fn heavy(&self) -> &ModelProfile {
        &self.cascade.heavy
    }

    /// Over-provisioned demand `λ·D`.
    pub fn provisioned_demand(&self) -> f64 {
        self.overprovision * self.demand
    }

    /// Share of provisioned demand that reaches the heavy model at `t`.
    pub fn heavy_share(&self, t: f64) -> f64 {
        match self.topology {
            Topology::Cascade => self.deferral.deferral_fraction(t.clamp(0.0, 1.0)).unwrap_or(1.0),
            Topology::Split => t,
            Topology::LightOnly => 0.0,
            Topology::HeavyOnly => 1.0,
        }
    }

    /// Share of provisioned demand that reaches the light model at `t`.
    pub fn light_share(&self, t: f64) -> f64 {
        match self.topology {
            Topology::Cascade | Topology::LightOnly => 1.0,
            Topology::Split => 1.0 - t,
            Topology::HeavyOnly => 0.0,
        }
    }

    /// Queuing delays `(q1, q2)` the latency constraint charges for `plan`.
    pub fn queue_delays(&self, plan: &AllocationPlan) -> (f64, f64) {
        match self.queue_model {
            QueueModel::LittlesLaw => (
                self.little(self.light_queue),
                self.little(self.heavy_queue),
            ),
            QueueModel::TwiceExecution => (
                2.0 * self.light().exec_latency(plan.b1).unwrap_or(f64::INFINITY),
                2.0 * self.heavy().exec_latency(plan.b2).unwrap_or(f64::INFINITY),
            ),
        }
    }

    fn little(&self, q: QueueState) -> f64 {
        queuing_delay_with(q.queue_length, q.arrival_rate, self.stall_delay).unwrap_or(self.stall_delay)
    }
}

/// The decision vector `(x1, x2, b1, b2, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationPlan {
    /// Servers hosting the light model.
    pub x1: u32,
    /// Servers hosting the heavy model.
    pub x2: u32,
    pub b1: u32,
    pub b2: u32,
    /// Confidence threshold (heavy routing share under [`Topology::Split`]).
    pub t: f64,
    pub feasible: bool,
}

/// Latency constraint: queuing plus execution along the query's path must fit
/// within the SLO.
pub fn latency_feasible(plan: &AllocationPlan, problem: &AllocationProblem) -> bool {
    if !problem.enforce_latency {
        return true;
    }
    let (Ok(e1), Ok(e2)) = (
        problem.light().exec_latency(plan.b1),
        problem.heavy().exec_latency(plan.b2),
    ) else {
        return false;
    };
    let (q1, q2) = problem.queue_delays(plan);
    let slo = problem.cascade.slo_seconds;
    match problem.topology {
        Topology::Cascade => e1 + q1 + e2 + q2 <= slo,
        Topology::LightOnly => e1 + q1 <= slo,
        Topology::HeavyOnly => e2 + q2 <= slo,
        Topology::Split => {
            (plan.t >= 1.0 || e1 + q1 <= slo) && (plan.t <= 0.0 || e2 + q2 <= slo)
        }
    }
}

/// Throughput constraints: each pool covers its share of `λ·D` and the pools
/// fit in the cluster.
pub fn throughput_feasible(plan: &AllocationPlan, problem: &AllocationProblem) -> bool {
    let (Ok(t1), Ok(t2)) = (
        problem.light().throughput(plan.b1),
        problem.heavy().throughput(plan.b2),
    ) else {
        return false;
    };
    let need = problem.provisioned_demand();
    plan.x1 as u64 + plan.x2 as u64 <= problem.servers as u64
        && plan.x1 as f64 * t1 >= need * problem.light_share(plan.t)
        && plan.x2 as f64 * t2 >= need * problem.heavy_share(plan.t)
}

/// Fewest servers `x` with `x · per_server >= load`, evaluated with the same
/// floating-point expression the feasibility predicate uses.
fn min_servers(load: f64, per_server: f64) -> u64 {
    if load <= 0.0 {
        return 0;
    }
    let mut x = libm::ceil(load / per_server).max(0.0) as u64;
    while x > 0 && (x - 1) as f64 * per_server >= load {
        x -= 1;
    }
    while (x as f64) * per_server < load {
        x += 1;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveStats {
    /// `(t, b1, b2)` candidates examined.
    pub candidates: u64,
}

pub fn solve(problem: &AllocationProblem) -> AllocationPlan {
    solve_with_stats(problem).0
}

/// Solves at the trace's peak demand with empty queues. The returned plan is
/// meant to be frozen for the whole run.
pub fn solve_static_peak(problem: &AllocationProblem, peak_demand: f64) -> AllocationPlan {
    let mut at_peak = problem.clone();
    at_peak.demand = peak_demand;
    at_peak.light_queue = QueueState::default();
    at_peak.heavy_queue = QueueState::default();
    solve(&at_peak)
}

pub fn solve_with_stats(problem: &AllocationProblem) -> (AllocationPlan, SolveStats) {
    let mut stats = SolveStats::default();
    let pairs = batch_pairs(problem);
    let thresholds = candidate_thresholds(problem);
    let need = problem.provisioned_demand();

    for &t in thresholds.iter().rev() {
        let mut best: Option<AllocationPlan> = None;
        let (light_load, heavy_load) = (need * problem.light_share(t), need * problem.heavy_share(t));
        for &(b1, b2) in &pairs {
            stats.candidates += 1;
            let (Ok(t1), Ok(t2)) =
                (problem.light().throughput(b1), problem.heavy().throughput(b2))
            else {
                continue;
            };
            let (x1, x2) = match problem.topology {
                Topology::HeavyOnly => (0, min_servers(heavy_load, t2).max(1)),
                Topology::LightOnly => (min_servers(light_load, t1).max(1), 0),
                Topology::Cascade | Topology::Split => {
                    (min_servers(light_load, t1).max(1), min_servers(heavy_load, t2))
                }
            };
            if x1 + x2 > problem.servers as u64 {
                continue;
            }
            let plan = AllocationPlan { x1: x1 as u32, x2: x2 as u32, b1, b2, t, feasible: true };
            if !latency_feasible(&plan, problem) || !throughput_feasible(&plan, problem) {
                continue;
            }
            if best.is_none_or(|cur| prefer(problem, &plan, &cur) == Ordering::Less) {
                best = Some(plan);
            }
        }
        if let Some(plan) = best {
            return (plan, stats);
        }
    }
    (fallback_plan(problem, &pairs), stats)
}

/// Like [`solve_with_stats`], but keeps `incumbent` when it is still feasible
/// and reaches the optimal threshold, so the controller does not churn
/// between equally good plans.
pub fn solve_with_incumbent(
    problem: &AllocationProblem,
    incumbent: Option<&AllocationPlan>,
) -> (AllocationPlan, SolveStats) {
    let (plan, stats) = solve_with_stats(problem);
    match incumbent {
        Some(inc)
            if plan.feasible
                && inc.feasible
                && inc.t == plan.t
                && problem.pinned_batches.is_none_or(|pb| pb == (inc.b1, inc.b2))
                && latency_feasible(inc, problem)
                && throughput_feasible(inc, problem) =>
        {
            (*inc, stats)
        }
        _ => (plan, stats),
    }
}

/// Tie-break among plans with equal `t`: lowest execution latency along the
/// path (partial batches are billed at the configured size, so smaller
/// batches waste less at light load), then fewer servers, then fewer light
/// servers, then smaller batches.
fn prefer(problem: &AllocationProblem, a: &AllocationPlan, b: &AllocationPlan) -> Ordering {
    let path = |p: &AllocationPlan| {
        let e1 = problem.light().exec_latency(p.b1).unwrap_or(f64::INFINITY);
        let e2 = problem.heavy().exec_latency(p.b2).unwrap_or(f64::INFINITY);
        match problem.topology {
            Topology::LightOnly => e1,
            Topology::HeavyOnly => e2,
            Topology::Cascade | Topology::Split => e1 + e2,
        }
    };
    path(a)
        .total_cmp(&path(b))
        .then((a.x1 + a.x2).cmp(&(b.x1 + b.x2)))
        .then(a.x1.cmp(&b.x1))
        .then(a.b1.cmp(&b.b1))
        .then(a.b2.cmp(&b.b2))
}

fn candidate_thresholds(problem: &AllocationProblem) -> Vec<f64> {
    if let Some(t) = problem.pinned_threshold {
        return alloc::vec![t];
    }
    match problem.topology {
        Topology::LightOnly => alloc::vec![0.0],
        Topology::HeavyOnly => alloc::vec![1.0],
        Topology::Cascade | Topology::Split => problem.grid.points().to_vec(),
    }
}

fn batch_pairs(problem: &AllocationProblem) -> Vec<(u32, u32)> {
    if let Some(pair) = problem.pinned_batches {
        return alloc::vec![pair];
    }
    let (light, heavy) = (problem.light(), problem.heavy());
    match problem.topology {
        Topology::LightOnly => light.batch_sizes().map(|b1| (b1, heavy.min_batch())).collect(),
        Topology::HeavyOnly => heavy.batch_sizes().map(|b2| (light.min_batch(), b2)).collect(),
        Topology::Cascade | Topology::Split => light
            .batch_sizes()
            .flat_map(|b1| heavy.batch_sizes().map(move |b2| (b1, b2)))
            .collect(),
    }
}

/// Best-effort plan when no threshold is feasible: give the whole cluster to
/// the model that must carry all traffic and pick the batch size with the
/// smallest throughput deficit whose execution alone fits the SLO.
fn fallback_plan(problem: &AllocationProblem, pairs: &[(u32, u32)]) -> AllocationPlan {
    let s = problem.servers;
    let need = problem.provisioned_demand();
    let slo = problem.cascade.slo_seconds;
    let (light, heavy) = (problem.light(), problem.heavy());
    let fits = |b1: u32, b2: u32, t: f64| -> bool {
        let (e1, e2) = (light.exec_latency(b1).unwrap_or(f64::INFINITY), heavy.exec_latency(b2).unwrap_or(f64::INFINITY));
        if !problem.enforce_latency {
            return true;
        }
        match problem.topology {
            Topology::Cascade if t > 0.0 => e1 + e2 <= slo,
            Topology::HeavyOnly => e2 <= slo,
            Topology::Split if t > 0.0 => e1 <= slo && e2 <= slo,
            _ => e1 <= slo,
        }
    };
    let deficit = |x: u32, b: u32, model: &ModelProfile, load: f64| -> f64 {
        (load - x as f64 * model.throughput(b).unwrap_or(0.0)).max(0.0)
    };

    let mut candidates: Vec<AllocationPlan> = Vec::new();
    match (problem.topology, problem.pinned_threshold) {
        (Topology::HeavyOnly, _) => {
            for &(b1, b2) in pairs {
                candidates.push(AllocationPlan { x1: 0, x2: s, b1, b2, t: 1.0, feasible: false });
            }
        }
        (Topology::Cascade | Topology::Split, Some(t)) if t > 0.0 => {
            for &(b1, b2) in pairs {
                for x1 in 1..s {
                    candidates.push(AllocationPlan { x1, x2: s - x1, b1, b2, t, feasible: false });
                }
                candidates.push(AllocationPlan { x1: s, x2: 0, b1, b2, t, feasible: false });
            }
        }
        _ => {
            for &(b1, b2) in pairs {
                candidates.push(AllocationPlan { x1: s, x2: 0, b1, b2, t: 0.0, feasible: false });
            }
        }
    }

    let fitting: Vec<&AllocationPlan> = candidates.iter().filter(|p| fits(p.b1, p.b2, p.t)).collect();
    let pool: Vec<&AllocationPlan> =
        if fitting.is_empty() { candidates.iter().collect() } else { fitting };
    let score = |p: &AllocationPlan| -> f64 {
        deficit(p.x1, p.b1, light, need * problem.light_share(p.t))
            + deficit(p.x2, p.b2, heavy, need * problem.heavy_share(p.t))
    };
    let mut best = *pool[0];
    let mut best_score = score(&best);
    for p in pool.into_iter().skip(1) {
        let sc = score(p);
        let better = sc < best_score
            || (sc == best_score && (p.b1, p.b2) < (best.b1, best.b2));
        if better {
            best = *p;
            best_score = sc;
        }
    }
    best
}

/// Splits all `servers` between the two models. Servers the plan leaves idle
/// go one at a time to whichever pool is more heavily utilized (light on
/// ties).
pub fn hosted_counts(plan: &AllocationPlan, problem: &AllocationProblem) -> (u32, u32) {
    let s = problem.servers;
    match problem.topology {
        Topology::LightOnly => return (s, 0),
        Topology::HeavyOnly => return (0, s),
        Topology::Cascade | Topology::Split => {}
    }
    let need = problem.provisioned_demand();
    let load1 = need * problem.light_share(plan.t);
    let load2 = need * problem.heavy_share(plan.t);
    let t1 = problem.light().throughput(plan.b1).unwrap_or(1.0);
    let t2 = problem.heavy().throughput(plan.b2).unwrap_or(1.0);
    let util = |load: f64, x: u32, per: f64| -> f64 {
        if load <= 0.0 {
            0.0
        } else if x == 0 {
            f64::INFINITY
        } else {
            load / (x as f64 * per)
        }
    };
    let (mut x1, mut x2) = (plan.x1.min(s), plan.x2.min(s - plan.x1.min(s)));
    while x1 + x2 < s {
        if util(load2, x2, t2) > util(load1, x1, t1) {
            x2 += 1;
        } else {
            x1 += 1;
        }
    }
    (x1, x2)
}
