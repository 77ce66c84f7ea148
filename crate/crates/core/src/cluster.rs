//! The simulated serving cluster: load balancer, workers, discriminator check,
//! heavy-stage deferral, sink accounting and the periodic controller.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::allocator::{
    self, AllocError, AllocationPlan, AllocationProblem, QueueState, ThresholdGrid, Topology,
    DEFAULT_OVERPROVISION, DEFAULT_STALL_DELAY,
};
use crate::engine::{Event, EventKind, EventQueue};
use crate::metrics::{IntervalSnapshot, RunSummary};
use crate::policies::{aimd_update, PolicyKind, PolicyParams, Strategy};
use crate::profiles::{CascadeProfile, DeferralCurve, ModelProfile, ProfileError, DEFAULT_CURVE_DECAY};
use crate::rng::{self, Stream};
use crate::workload::{
    generate_arrivals, ArrivalMode, Ewma, Query, QueryOutcomeModel, Trace, WorkloadError,
    DEFAULT_EWMA_ALPHA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Light,
    Heavy,
}

impl ModelKind {
    fn index(self) -> usize {
        match self {
            ModelKind::Light => 0,
            ModelKind::Heavy => 1,
        }
    }
}

/// Which latency a partially filled batch is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatencyBilling {
    /// The configured batch size's latency, however many queries were formed.
    #[default]
    Configured,
    /// The latency of the smallest profiled batch holding the formed queries.
    FormedSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    ServedLight,
    ServedHeavy,
    Dropped,
    Late,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::ServedLight => "served_light",
            Outcome::ServedHeavy => "served_heavy",
            Outcome::Dropped => "dropped",
            Outcome::Late => "late",
        }
    }
}

/// Lifecycle of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: u64,
    pub arrival: f64,
    pub deadline: f64,
    pub confidence: f64,
    pub light_start: Option<f64>,
    pub light_end: Option<f64>,
    pub heavy_start: Option<f64>,
    pub heavy_end: Option<f64>,
    pub completion: Option<f64>,
    pub outcome: Option<Outcome>,
    pub delivered_quality: Option<f64>,
    /// Needed the heavy model but none was hosted, so the light answer went out.
    pub forced_light: bool,
}

impl QueryRecord {
    pub fn new(id: u64, arrival: f64, deadline: f64, confidence: f64) -> Self {
        Self {
            id,
            arrival,
            deadline,
            confidence,
            light_start: None,
            light_end: None,
            heavy_start: None,
            heavy_end: None,
            completion: None,
            outcome: None,
            delivered_quality: None,
            forced_light: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub servers: u32,
    pub policy: PolicyKind,
    pub policy_params: PolicyParams,
    pub control_interval: f64,
    pub overprovision: f64,
    pub ewma_alpha: f64,
    pub grid: ThresholdGrid,
    /// Extra delay before a re-hosted worker can run its new model.
    pub switch_delay: f64,
    pub billing: LatencyBilling,
    /// Feed light-stage confidences back into the deferral curve.
    pub online_curve: bool,
    pub curve_decay: f64,
    /// Queries sampled to build the initial deferral curve when the cascade
    /// profile carries none.
    pub profiling_samples: u64,
    pub outcome_model: QueryOutcomeModel,
    pub arrival_mode: ArrivalMode,
    pub seed: u64,
    pub stall_delay: f64,
    pub record_events: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            servers: 16,
            policy: PolicyKind::QueryAware,
            policy_params: PolicyParams::default(),
            control_interval: 10.0,
            overprovision: DEFAULT_OVERPROVISION,
            ewma_alpha: DEFAULT_EWMA_ALPHA,
            grid: ThresholdGrid::default(),
            switch_delay: 0.0,
            billing: LatencyBilling::Configured,
            online_curve: true,
            curve_decay: DEFAULT_CURVE_DECAY,
            profiling_samples: 10_000,
            outcome_model: QueryOutcomeModel::default(),
            arrival_mode: ArrivalMode::Poisson,
            seed: 0,
            stall_delay: DEFAULT_STALL_DELAY,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("invalid cluster config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("no worker hosts any model")]
    NoWorkers,
    #[error("simulation failed: {0}")]
    Engine(String),
}

/// One controller decision.
#[derive(Debug, Clone, PartialEq)]
pub struct TickLog {
    pub tick: u32,
    pub time: f64,
    pub demand_estimate: f64,
    pub light_queue: QueueState,
    pub heavy_queue: QueueState,
    pub plan: AllocationPlan,
    pub hosted_light: u32,
    pub hosted_heavy: u32,
    /// Solver candidates examined; 0 when the plan was reused.
    pub candidates: u64,
    pub solver_micros: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub records: Vec<QueryRecord>,
    pub intervals: Vec<IntervalSnapshot>,
    pub ticks: Vec<TickLog>,
    /// Deferral curve in force at each tick, then the final one.
    pub curves: Vec<DeferralCurve>,
    pub event_log: Option<Vec<Event>>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone)]
struct Worker {
    model: ModelKind,
    queue: VecDeque<u64>,
    busy: bool,
    busy_until: f64,
    /// Earliest time the hosted model can start a batch.
    available_at: f64,
    start_pending: bool,
    batch: Vec<u64>,
    batch_model: ModelKind,
    served_count: u64,
    deferred_count: u64,
}

impl Worker {
    /// Queries waiting plus those in the running batch.
    fn load(&self) -> usize {
        self.queue.len() + self.batch.len()
    }

    fn new(model: ModelKind) -> Self {
        Self {
            model,
            queue: VecDeque::new(),
            busy: false,
            busy_until: 0.0,
            available_at: 0.0,
            start_pending: false,
            batch: Vec::new(),
            batch_model: model,
            served_count: 0,
            deferred_count: 0,
        }
    }
}

/// Join-shortest-queue: index of the shortest queue, lowest index on ties.
pub fn route_query(queue_lengths: &[usize]) -> Option<usize> {
    queue_lengths
        .iter()
        .enumerate()
        .min_by_key(|&(i, &len)| (len, i))
        .map(|(i, _)| i)
}

/// Strict rule: finishing exactly at the deadline is on time.
pub fn predicted_late(now: f64, remaining_latency: f64, deadline: f64) -> bool {
    now + remaining_latency > deadline
}

/// Deferral curve from the confidences of `samples` queries drawn on the
/// profiling stream.
pub fn profile_deferral(model: &QueryOutcomeModel, seed: u64, samples: u64) -> DeferralCurve {
    let m = QueryOutcomeModel { seed: rng::stream_seed(seed, Stream::Profiling), ..*model };
    let mut curve = DeferralCurve::empty();
    for id in 0..samples {
        curve
            .observe(m.sample_query(id, 0.0, 1.0).confidence, 1.0)
            .expect("confidence is clamped to [0, 1]");
    }
    curve
}

pub type Timer<'t> = &'t mut dyn FnMut() -> Option<u64>;

pub struct Simulation<'a> {
    cascade: &'a CascadeProfile,
    trace: &'a Trace,
    config: ClusterConfig,
    strategy: Strategy,
    outcome: QueryOutcomeModel,
    arrivals: Vec<f64>,
    queries: Vec<Query>,
    records: Vec<QueryRecord>,
    workers: Vec<Worker>,
    curve: DeferralCurve,
    plan: AllocationPlan,
    batch: [u32; 2],
    ewma: Ewma,
    routing: ChaCha8Rng,
    interval: Option<IntervalSnapshot>,
    intervals: Vec<IntervalSnapshot>,
    ticks: Vec<TickLog>,
    curves: Vec<DeferralCurve>,
    interval_arrivals: u64,
    pool_arrivals: [u64; 2],
    in_flight: u64,
}

impl<'a> Simulation<'a> {
    pub fn new(
        cascade: &'a CascadeProfile,
        trace: &'a Trace,
        config: ClusterConfig,
    ) -> Result<Self, ClusterError> {
        if config.servers == 0 {
            return Err(ClusterError::Config("servers must be positive"));
        }
        if !(config.control_interval > 0.0 && config.control_interval.is_finite()) {
            return Err(ClusterError::Config("control_interval must be positive"));
        }
        if !(config.overprovision >= 1.0 && config.overprovision.is_finite()) {
            return Err(ClusterError::Config("overprovision must be at least 1"));
        }
        if !(config.switch_delay >= 0.0 && config.switch_delay.is_finite()) {
            return Err(ClusterError::Config("switch_delay must be non-negative"));
        }
        if !(config.curve_decay > 0.0 && config.curve_decay <= 1.0) {
            return Err(ClusterError::Config("curve_decay must be in (0, 1]"));
        }
        let strategy = config.policy.strategy(&config.policy_params);
        if let Some(t) = strategy.pinned_threshold {
            if !config.grid.contains(t) {
                return Err(ClusterError::Config("static threshold must lie on the grid"));
            }
        }
        if let Some(aimd) = strategy.aimd {
            if !(aimd.mult_factor > 0.0 && aimd.mult_factor < 1.0) {
                return Err(ClusterError::Config("AIMD factor must be in (0, 1)"));
            }
        }
        config.outcome_model.validate()?;
        let ewma = Ewma::with_prior(config.ewma_alpha, trace.rates()[0])?;

        let outcome = QueryOutcomeModel { seed: config.seed, ..config.outcome_model };
        let curve = if cascade.deferral.total_mass() > 0.0 {
            cascade.deferral.clone()
        } else {
            profile_deferral(&config.outcome_model, config.seed, config.profiling_samples)
        };
        let arrivals = generate_arrivals(trace, config.seed, config.arrival_mode);
        let batch = match strategy.aimd {
            Some(_) => [cascade.light.min_batch(), cascade.heavy.min_batch()],
            None => [cascade.light.max_batch(), cascade.heavy.max_batch()],
        };
        Ok(Self {
            cascade,
            trace,
            strategy,
            outcome,
            queries: Vec::with_capacity(arrivals.len()),
            records: Vec::with_capacity(arrivals.len()),
            arrivals,
            workers: (0..config.servers).map(|_| Worker::new(ModelKind::Light)).collect(),
            curve,
            plan: AllocationPlan {
                x1: config.servers,
                x2: 0,
                b1: batch[0],
                b2: batch[1],
                t: 0.0,
                feasible: false,
            },
            batch,
            ewma,
            routing: rng::stream_rng(config.seed, Stream::Routing),
            interval: None,
            intervals: Vec::new(),
            ticks: Vec::new(),
            curves: Vec::new(),
            interval_arrivals: 0,
            pool_arrivals: [0; 2],
            in_flight: 0,
            config,
        })
    }

    pub fn run(self) -> Result<SimOutput, ClusterError> {
        self.run_timed(&mut || None)
    }

    /// Runs the trace to completion and drains. `timer` returns a monotonic
    /// microsecond reading (or nothing) and is read around every solve.
    pub fn run_timed(mut self, timer: Timer<'_>) -> Result<SimOutput, ClusterError> {
        let mut q = if self.config.record_events { EventQueue::with_log() } else { EventQueue::new() };
        let engine = |e| ClusterError::Engine(alloc::format!("{e}"));
        q.schedule(0.0, EventKind::ControlTick { tick: 0 }).map_err(engine)?;
        if let Some(&t) = self.arrivals.first() {
            q.schedule(t, EventKind::QueryArrival { query: 0 }).map_err(engine)?;
        }
        q.schedule(self.trace.duration(), EventKind::TraceEnd).map_err(engine)?;

        q.run_until(f64::INFINITY, |q, ev| self.handle(q, ev, timer)).map_err(engine)?;

        self.close_interval(self.trace.duration());
        self.curves.push(self.curve.clone());
        let summary = RunSummary::from_records(&self.records);
        Ok(SimOutput {
            records: self.records,
            intervals: self.intervals,
            ticks: self.ticks,
            curves: self.curves,
            event_log: q.take_log(),
            summary,
        })
    }

    fn handle(&mut self, q: &mut EventQueue, ev: Event, timer: Timer<'_>) -> Result<(), ClusterError> {
        match ev.kind {
            EventKind::QueryArrival { query } => self.on_arrival(q, query),
            EventKind::BatchStart { worker } => self.on_batch_start(q, worker as usize),
            EventKind::BatchComplete { worker } => self.on_batch_complete(q, worker as usize),
            EventKind::ControlTick { tick } => self.on_tick(q, tick, timer),
            EventKind::TraceEnd => Ok(()),
        }
    }

    fn profile(&self, model: ModelKind) -> &'a ModelProfile {
        match model {
            ModelKind::Light => &self.cascade.light,
            ModelKind::Heavy => &self.cascade.heavy,
        }
    }

    fn hosted(&self, model: ModelKind) -> u32 {
        self.workers.iter().filter(|w| w.model == model).count() as u32
    }

    fn on_arrival(&mut self, q: &mut EventQueue, id: u64) -> Result<(), ClusterError> {
        let now = q.now();
        let query = self.outcome.sample_query(id, now, self.cascade.slo_seconds);
        self.records.push(QueryRecord::new(id, now, query.deadline, query.confidence));
        self.queries.push(query);
        self.interval_arrivals += 1;
        self.in_flight += 1;
        if let Some(&next) = self.arrivals.get(id as usize + 1) {
            schedule(q, next, EventKind::QueryArrival { query: id + 1 })?;
        }
        let pool = match self.strategy.topology {
            Topology::HeavyOnly => ModelKind::Heavy,
            Topology::Split => {
                let u: f64 = self.routing.random();
                if u < self.plan.t { ModelKind::Heavy } else { ModelKind::Light }
            }
            Topology::Cascade | Topology::LightOnly => ModelKind::Light,
        };
        self.enqueue(q, id, pool, true)
    }

    /// Appends `id` to the shortest queue of `pool`. Falls back to the other
    /// pool when `pool` is empty; a deferral with no heavy worker is answered
    /// with the light output.
    fn enqueue(&mut self, q: &mut EventQueue, id: u64, pool: ModelKind, count: bool) -> Result<(), ClusterError> {
        let lens: Vec<(usize, usize)> = self
            .workers
            .iter()
            .enumerate()
            .filter(|(_, w)| w.model == pool)
            .map(|(i, w)| (i, w.load()))
            .collect();
        let Some(pick) = route_query(&lens.iter().map(|&(_, l)| l).collect::<Vec<_>>()) else {
            let other = match pool {
                ModelKind::Light => ModelKind::Heavy,
                ModelKind::Heavy => ModelKind::Light,
            };
            if pool == ModelKind::Heavy && self.records[id as usize].light_end.is_some() {
                self.records[id as usize].forced_light = true;
                if let Some(iv) = &mut self.interval {
                    iv.forced_light += 1;
                }
                self.complete(q.now(), id, ModelKind::Light);
                return Ok(());
            }
            if self.hosted(other) == 0 {
                return Err(ClusterError::NoWorkers);
            }
            return self.enqueue(q, id, other, count);
        };
        let w = lens[pick].0;
        if count {
            self.pool_arrivals[pool.index()] += 1;
        }
        self.workers[w].queue.push_back(id);
        self.kick(q, w)
    }

    /// Schedules a batch start on an idle worker with queued work.
    fn kick(&mut self, q: &mut EventQueue, w: usize) -> Result<(), ClusterError> {
        let worker = &mut self.workers[w];
        if worker.busy || worker.start_pending || worker.queue.is_empty() {
            return Ok(());
        }
        worker.start_pending = true;
        let at = worker.available_at.max(q.now());
        schedule(q, at, EventKind::BatchStart { worker: w as u32 })?;
        Ok(())
    }

    fn exec_latency(&self, model: ModelKind, formed: usize) -> Result<f64, ClusterError> {
        let profile = self.profile(model);
        let b = self.batch[model.index()];
        let billed = match self.config.billing {
            LatencyBilling::Configured => b,
            LatencyBilling::FormedSize => {
                profile.batch_sizes().find(|&s| s as usize >= formed).unwrap_or(b)
            }
        };
        Ok(profile.exec_latency(billed)?)
    }

    /// Latency still ahead of a query about to start on `model`.
    fn remaining_latency(&self, id: u64, model: ModelKind) -> Result<f64, ClusterError> {
        let e_heavy = self.cascade.heavy.exec_latency(self.batch[1])?;
        Ok(match model {
            ModelKind::Heavy => e_heavy,
            ModelKind::Light => {
                let e_light = self.cascade.light.exec_latency(self.batch[0])?;
                let defers = self.strategy.topology == Topology::Cascade
                    && self.queries[id as usize].confidence < self.plan.t
                    && self.hosted(ModelKind::Heavy) > 0;
                if defers { e_light + e_heavy } else { e_light }
            }
        })
    }

    fn on_batch_start(&mut self, q: &mut EventQueue, w: usize) -> Result<(), ClusterError> {
        let now = q.now();
        self.workers[w].start_pending = false;
        if self.workers[w].busy {
            return Ok(());
        }
        if now < self.workers[w].available_at {
            return self.kick(q, w);
        }
        let model = self.workers[w].model;
        let cap = self.batch[model.index()] as usize;
        let mut batch = Vec::with_capacity(cap);
        let own_latency = self.profile(model).exec_latency(self.batch[model.index()])?;
        let mut timeouts = [false; 2];
        while batch.len() < cap {
            let Some(id) = self.workers[w].queue.pop_front() else { break };
            let deadline = self.queries[id as usize].deadline;
            if predicted_late(now, self.remaining_latency(id, model)?, deadline) {
                self.drop_query(id);
                // blame the stage whose latency pushed the query past its deadline
                let culprit = if predicted_late(now, own_latency, deadline) { model } else { ModelKind::Heavy };
                timeouts[culprit.index()] = true;
            } else {
                batch.push(id);
            }
        }
        for m in [ModelKind::Light, ModelKind::Heavy] {
            if timeouts[m.index()] {
                self.aimd_feedback(m, true);
            }
        }
        if batch.is_empty() {
            return Ok(());
        }
        let latency = self.exec_latency(model, batch.len())?;
        for &id in &batch {
            let r = &mut self.records[id as usize];
            match model {
                ModelKind::Light => r.light_start = Some(now),
                ModelKind::Heavy => r.heavy_start = Some(now),
            }
        }
        let worker = &mut self.workers[w];
        worker.busy = true;
        worker.busy_until = now + latency;
        worker.batch = batch;
        worker.batch_model = model;
        schedule(q, now + latency, EventKind::BatchComplete { worker: w as u32 })?;
        Ok(())
    }

    fn on_batch_complete(&mut self, q: &mut EventQueue, w: usize) -> Result<(), ClusterError> {
        let now = q.now();
        let batch = core::mem::take(&mut self.workers[w].batch);
        let model = self.workers[w].batch_model;
        self.workers[w].busy = false;
        let mut timeout = false;
        for id in batch {
            let deadline = self.queries[id as usize].deadline;
            timeout |= now > deadline;
            match model {
                ModelKind::Light => {
                    self.records[id as usize].light_end = Some(now);
                    let c = self.queries[id as usize].confidence;
                    if self.config.online_curve {
                        self.curve.observe(c, self.config.curve_decay)?;
                    }
                    if self.strategy.topology == Topology::Cascade && c < self.plan.t {
                        self.workers[w].deferred_count += 1;
                        self.enqueue(q, id, ModelKind::Heavy, true)?;
                    } else {
                        self.workers[w].served_count += 1;
                        self.complete(now, id, ModelKind::Light);
                    }
                }
                ModelKind::Heavy => {
                    self.records[id as usize].heavy_end = Some(now);
                    self.workers[w].served_count += 1;
                    self.complete(now, id, ModelKind::Heavy);
                }
            }
        }
        self.aimd_feedback(model, timeout);
        self.kick(q, w)
    }

    fn aimd_feedback(&mut self, model: ModelKind, timeout: bool) {
        if let Some(params) = self.strategy.aimd {
            let i = model.index();
            self.batch[i] = aimd_update(self.profile(model), self.batch[i], timeout, params);
        }
    }

    fn complete(&mut self, now: f64, id: u64, model: ModelKind) {
        let query = self.queries[id as usize];
        let r = &mut self.records[id as usize];
        let (quality, served) = match model {
            ModelKind::Light => (query.quality_light, Outcome::ServedLight),
            ModelKind::Heavy => (query.quality_heavy, Outcome::ServedHeavy),
        };
        let outcome = if now > query.deadline { Outcome::Late } else { served };
        r.completion = Some(now);
        r.delivered_quality = Some(quality);
        r.outcome = Some(outcome);
        self.in_flight -= 1;
        if let Some(iv) = &mut self.interval {
            match outcome {
                Outcome::ServedLight => iv.served_light += 1,
                Outcome::ServedHeavy => iv.served_heavy += 1,
                _ => iv.late += 1,
            }
            iv.quality_sum += quality;
        }
    }

    fn drop_query(&mut self, id: u64) {
        self.records[id as usize].outcome = Some(Outcome::Dropped);
        self.in_flight -= 1;
        if let Some(iv) = &mut self.interval {
            iv.dropped += 1;
        }
    }

    fn queue_state(&self, model: ModelKind) -> QueueState {
        QueueState {
            queue_length: self
                .workers
                .iter()
                .filter(|w| w.model == model)
                .map(|w| w.queue.len() as u64)
                .sum(),
            arrival_rate: self.pool_arrivals[model.index()] as f64 / self.config.control_interval,
        }
    }

    fn close_interval(&mut self, end: f64) {
        if let Some(mut iv) = self.interval.take() {
            let span = end - iv.interval_start;
            iv.demand_observed =
                if span > 0.0 { self.interval_arrivals as f64 / span } else { 0.0 };
            iv.in_flight_end = self.in_flight;
            iv.arrived = self.interval_arrivals;
            self.intervals.push(iv);
        }
    }

    fn on_tick(&mut self, q: &mut EventQueue, tick: u32, timer: Timer<'_>) -> Result<(), ClusterError> {
        let now = q.now();
        let delta = self.config.control_interval;
        let (light_queue, heavy_queue) = if tick == 0 {
            (QueueState::default(), QueueState::default())
        } else {
            (self.queue_state(ModelKind::Light), self.queue_state(ModelKind::Heavy))
        };
        let estimate = if tick == 0 {
            self.ewma.value().unwrap_or(0.0)
        } else {
            self.close_interval(now);
            let observed = self.interval_arrivals as f64 / delta;
            self.ewma.observe(observed)
        };

        // open the new interval first: applying a plan can complete queries
        self.interval = Some(IntervalSnapshot {
            interval_start: now,
            demand_observed: 0.0,
            demand_estimated: estimate,
            plan: self.plan,
            hosted_light: 0,
            hosted_heavy: 0,
            arrived: 0,
            served_light: 0,
            served_heavy: 0,
            dropped: 0,
            late: 0,
            forced_light: 0,
            in_flight_end: 0,
            quality_sum: 0.0,
        });
        self.interval_arrivals = 0;

        let reuse = self.strategy.frozen && tick > 0;
        let (plan, candidates, micros) = if reuse {
            (self.plan, 0, None)
        } else {
            let mut problem = AllocationProblem::new(self.cascade, &self.config.grid, estimate, self.config.servers);
            problem.deferral = &self.curve;
            problem.overprovision = self.config.overprovision;
            problem.light_queue = light_queue;
            problem.heavy_queue = heavy_queue;
            problem.topology = self.strategy.topology;
            problem.queue_model = self.strategy.queue_model;
            problem.pinned_threshold = self.strategy.pinned_threshold;
            problem.stall_delay = self.config.stall_delay;
            if self.strategy.aimd.is_some() {
                problem.pinned_batches = Some((self.batch[0], self.batch[1]));
                problem.enforce_latency = false;
            }
            if self.strategy.frozen {
                problem.demand = self.trace.max_rate();
                problem.light_queue = QueueState::default();
                problem.heavy_queue = QueueState::default();
            }
            problem.validate()?;
            let before = timer();
            let incumbent = (tick > 0).then_some(&self.plan);
            let (plan, stats) = allocator::solve_with_incumbent(&problem, incumbent);
            let after = timer();
            let micros = before.zip(after).map(|(a, b)| b.saturating_sub(a));
            let (_, target_heavy) = allocator::hosted_counts(&plan, &problem);
            self.apply(q, &plan, target_heavy)?;
            (plan, stats.candidates, micros)
        };

        let (hosted_light, hosted_heavy) = (self.hosted(ModelKind::Light), self.hosted(ModelKind::Heavy));
        self.ticks.push(TickLog {
            tick,
            time: now,
            demand_estimate: estimate,
            light_queue,
            heavy_queue,
            plan,
            hosted_light,
            hosted_heavy,
            candidates,
            solver_micros: micros,
        });
        self.curves.push(self.curve.clone());
        if let Some(iv) = &mut self.interval {
            iv.plan = plan;
            iv.hosted_light = hosted_light;
            iv.hosted_heavy = hosted_heavy;
        }
        self.pool_arrivals = [0; 2];

        let next = (tick + 1) as f64 * delta;
        if next < self.trace.duration() {
            schedule(q, next, EventKind::ControlTick { tick: tick + 1 })?;
        }
        Ok(())
    }

    /// Installs `plan`: threshold, batch sizes, and re-hosting so the pools
    /// match [`allocator::hosted_counts`].
    fn apply(&mut self, q: &mut EventQueue, plan: &AllocationPlan, target_heavy: u32) -> Result<(), ClusterError> {
        let now = q.now();
        let initial = self.ticks.is_empty();
        self.plan = *plan;
        if self.strategy.aimd.is_none() {
            self.batch = [plan.b1, plan.b2];
        }
        let current_heavy = self.hosted(ModelKind::Heavy);
        let (from, to, n) = if target_heavy > current_heavy {
            (ModelKind::Light, ModelKind::Heavy, target_heavy - current_heavy)
        } else {
            (ModelKind::Heavy, ModelKind::Light, current_heavy - target_heavy)
        };
        let flipped: Vec<usize> = (0..self.workers.len())
            .rev()
            .filter(|&i| self.workers[i].model == from)
            .take(n as usize)
            .collect();
        let delay = if initial { 0.0 } else { self.config.switch_delay };
        let mut orphans: Vec<u64> = Vec::new();
        for &i in &flipped {
            let w = &mut self.workers[i];
            w.model = to;
            let free_at = if w.busy { w.busy_until } else { now };
            w.available_at = free_at.max(now) + delay;
            orphans.extend(w.queue.drain(..));
        }
        for id in orphans {
            self.enqueue(q, id, from, false)?;
        }
        Ok(())
    }
}

fn schedule(q: &mut EventQueue, time: f64, kind: EventKind) -> Result<(), ClusterError> {
    q.schedule::<core::convert::Infallible>(time, kind).map(|_| ()).map_err(|e| ClusterError::Engine(alloc::format!("{e}")))
}

/// Runs `config` over `trace` without solver timing.
pub fn simulate(cascade: &CascadeProfile, trace: &Trace, config: ClusterConfig) -> Result<SimOutput, ClusterError> {
    Simulation::new(cascade, trace, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::catalog;
    use proptest::prelude::*;

    fn light_only_cascade(e: f64) -> CascadeProfile {
        let light = ModelProfile::new("l", [(1, e), (4, 4.0 * e)]).unwrap();
        let heavy = ModelProfile::new("h", [(1, 10.0 * e), (4, 40.0 * e)]).unwrap();
        CascadeProfile::new("t", light, heavy, DeferralCurve::empty(), 100.0 * e).unwrap()
    }

    fn check_conservation(out: &SimOutput) {
        let s = &out.summary;
        assert_eq!(s.arrived, s.terminal());
        let arrived: u64 = out.intervals.iter().map(|i| i.arrived).sum();
        let terminal: u64 = out.intervals.iter().map(|i| i.terminal()).sum();
        assert_eq!(arrived, s.arrived);
        assert_eq!(terminal, s.arrived);
        assert_eq!(out.intervals.last().map_or(0, |i| i.in_flight_end), 0);
        for r in &out.records {
            let outcome = r.outcome.expect("terminal");
            assert_eq!(outcome == Outcome::Dropped, r.delivered_quality.is_none());
            if let Some(hs) = r.heavy_start {
                assert!(hs >= r.light_end.unwrap_or(r.arrival));
            }
            if let (Some(a), Some(b)) = (r.light_start, r.light_end) {
                assert!(r.arrival <= a && a <= b);
            }
        }
        for c in &out.curves {
            c.check_invariants().unwrap();
        }
    }

    #[test]
    fn jsq_routing_examples() {
        assert_eq!(route_query(&[3, 1, 2]), Some(1));
        assert_eq!(route_query(&[2, 2]), Some(0));
        assert_eq!(route_query(&[5]), Some(0));
        assert_eq!(route_query(&[]), None);
    }

    #[test]
    fn drop_rule_is_strict() {
        assert!(predicted_late(0.0, 0.1, 0.05));
        assert!(!predicted_late(0.0, 0.1, 5.0));
        assert!(!predicted_late(1.0, 0.5, 1.5));
    }

    #[test]
    fn sixty_seconds_gives_six_ticks() {
        let c = catalog::cascade(1).unwrap();
        let trace = Trace::constant(2.0, 60.0, 1.0).unwrap();
        let out = simulate(&c, &trace, ClusterConfig::default()).unwrap();
        assert_eq!(out.ticks.len(), 6);
        assert_eq!(out.intervals.len(), 6);
        check_conservation(&out);
    }

    #[test]
    fn constant_demand_gives_stable_plans() {
        let c = catalog::cascade(1).unwrap();
        let trace = Trace::constant(4.0, 60.0, 1.0).unwrap();
        let config = ClusterConfig { arrival_mode: ArrivalMode::Uniform, ..ClusterConfig::default() };
        let out = simulate(&c, &trace, config).unwrap();
        assert_eq!(out.ticks[1].plan.t, out.ticks[2].plan.t);
    }

    #[test]
    fn demand_step_lowers_threshold() {
        let c = catalog::cascade(1).unwrap();
        let mut rates = vec![4.0; 60];
        rates.extend(vec![32.0; 60]);
        let trace = Trace::new(1.0, rates).unwrap();
        let out = simulate(&c, &trace, ClusterConfig::default()).unwrap();
        let early = out.ticks[4].plan.t;
        let late = out.ticks[10].plan.t;
        assert!(late <= early, "{early} -> {late}");
        assert!(late < 1.0);
        check_conservation(&out);
    }

    #[test]
    fn threshold_zero_never_defers() {
        let c = catalog::cascade(1).unwrap();
        let trace = Trace::constant(8.0, 60.0, 1.0).unwrap();
        let config = ClusterConfig {
            policy: PolicyKind::AblStaticThreshold,
            policy_params: PolicyParams { static_threshold: 0.0, ..PolicyParams::default() },
            ..ClusterConfig::default()
        };
        let out = simulate(&c, &trace, config).unwrap();
        assert!(out.records.iter().all(|r| r.heavy_start.is_none()));
        check_conservation(&out);
    }

    #[test]
    fn single_query_timeline() {
        // b = 1 only: a lone query starts on arrival and finishes e(1) later
        let c = light_only_cascade(0.1);
        let trace = Trace::new(10.0, vec![0.1]).unwrap();
        let config = ClusterConfig {
            policy: PolicyKind::ClipperLight,
            arrival_mode: ArrivalMode::Uniform,
            servers: 1,
            billing: LatencyBilling::FormedSize,
            ..ClusterConfig::default()
        };
        let out = simulate(&c, &trace, config).unwrap();
        let r = &out.records[0];
        assert_eq!(r.light_start, Some(r.arrival));
        assert!((r.completion.unwrap() - r.arrival - 0.1).abs() < 1e-12);
        assert_eq!(r.outcome, Some(Outcome::ServedLight));
    }

    #[test]
    fn clipper_heavy_never_runs_light() {
        let c = catalog::cascade(1).unwrap();
        let trace = Trace::constant(4.0, 60.0, 1.0).unwrap();
        let config = ClusterConfig { policy: PolicyKind::ClipperHeavy, ..ClusterConfig::default() };
        let out = simulate(&c, &trace, config).unwrap();
        assert!(out.records.iter().all(|r| r.light_start.is_none()));
        assert!(out.ticks.iter().all(|t| t.hosted_heavy == 16));
        check_conservation(&out);
    }

    #[test]
    fn split_routing_is_near_even_at_half_share() {
        let c = catalog::cascade(1).unwrap();
        let trace = Trace::constant(3.0, 3400.0, 100.0).unwrap();
        let config = ClusterConfig {
            policy: PolicyKind::ProteusLike,
            ..ClusterConfig::default()
        };
        let mut sim = Simulation::new(&c, &trace, config).unwrap();
        sim.plan.t = 0.5;
        let n = 10_000;
        let heavy = (0..n).filter(|_| rand::Rng::random::<f64>(&mut sim.routing) < 0.5).count() as f64;
        // 4 binomial standard deviations
        assert!((heavy - 5000.0).abs() < 4.0 * 50.0, "{heavy}");
    }

    #[test]
    fn rehosting_preserves_worker_count() {
        let c = catalog::cascade(1).unwrap();
        let mut rates = vec![2.0; 30];
        rates.extend(vec![30.0; 30]);
        rates.extend(vec![2.0; 30]);
        let trace = Trace::new(1.0, rates).unwrap();
        let config = ClusterConfig { switch_delay: 2.0, ..ClusterConfig::default() };
        let out = simulate(&c, &trace, config).unwrap();
        for t in &out.ticks {
            assert_eq!(t.hosted_light + t.hosted_heavy, 16);
        }
        check_conservation(&out);
    }

    #[test]
    fn replay_is_deterministic() {
        let c = catalog::cascade(2).unwrap();
        let trace = Trace::new(1.0, (0..40).map(|i| 2.0 + (i % 7) as f64).collect()).unwrap();
        let config = ClusterConfig { record_events: true, seed: 11, ..ClusterConfig::default() };
        let a = simulate(&c, &trace, config.clone()).unwrap();
        let b = simulate(&c, &trace, config).unwrap();
        assert_eq!(a.event_log, b.event_log);
        assert_eq!(a.records, b.records);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn every_policy_conserves_queries(
            policy_idx in 0usize..8,
            seed in 0u64..1000,
            rates in prop::collection::vec(0.5f64..30.0, 2..6),
        ) {
            let c = catalog::cascade(1).unwrap();
            let trace = Trace::new(10.0, rates).unwrap();
            let config = ClusterConfig {
                policy: PolicyKind::ALL[policy_idx],
                seed,
                ..ClusterConfig::default()
            };
            let out = simulate(&c, &trace, config).unwrap();
            check_conservation(&out);
            for t in &out.ticks {
                prop_assert_eq!(t.hosted_light + t.hosted_heavy, 16);
            }
        }
    }
}
