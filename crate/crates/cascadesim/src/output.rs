//! CSV run logs.
//!
//! Three files per run, all with a header row. Numbers carry 6 significant
//! digits; an empty cell means "no value".
//!
//! `intervals.csv`, one row per control interval:
//! `interval_start, demand_observed, demand_estimated, threshold, x1, x2, b1,
//! b2, feasible, hosted_light, hosted_heavy, arrived, served_light,
//! served_heavy, dropped, late, forced_light, in_flight_end, quality_sum,
//! mean_quality, violation_ratio`.
//! Outcome counts are attributed to the interval in which they occur.
//!
//! `queries.csv`, one row per query:
//! `id, arrival, deadline, confidence, light_start, light_end, heavy_start,
//! heavy_end, completion, outcome, delivered_quality, forced_light`.
//!
//! `plans.csv`, one row per control tick:
//! `tick, time, demand_estimate, light_queue, light_rate, heavy_queue,
//! heavy_rate, x1, x2, b1, b2, t, feasible, hosted_light, hosted_heavy,
//! candidates, solver_us`. `solver_us` is the solve's wall-clock time in
//! microseconds and is empty unless timing was requested.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cascadesim_core::{
    AllocationPlan, IntervalSnapshot, Outcome, QueryRecord, QueueState, SimOutput, TickLog,
};

pub const INTERVALS_FILE: &str = "intervals.csv";
pub const QUERIES_FILE: &str = "queries.csv";
pub const PLANS_FILE: &str = "plans.csv";

pub const INTERVAL_HEADER: [&str; 21] = [
    "interval_start", "demand_observed", "demand_estimated", "threshold", "x1", "x2", "b1", "b2",
    "feasible", "hosted_light", "hosted_heavy", "arrived", "served_light", "served_heavy",
    "dropped", "late", "forced_light", "in_flight_end", "quality_sum", "mean_quality",
    "violation_ratio",
];

pub const QUERY_HEADER: [&str; 12] = [
    "id", "arrival", "deadline", "confidence", "light_start", "light_end", "heavy_start",
    "heavy_end", "completion", "outcome", "delivered_quality", "forced_light",
];

pub const PLAN_HEADER: [&str; 17] = [
    "tick", "time", "demand_estimate", "light_queue", "light_rate", "heavy_queue", "heavy_rate",
    "x1", "x2", "b1", "b2", "t", "feasible", "hosted_light", "hosted_heavy", "candidates",
    "solver_us",
];

/// `x` with 6 significant digits, no exponent for ordinary magnitudes and no
/// trailing zeros.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&mag) {
        return format!("{x:.5e}");
    }
    let s = format!("{:.*}", (5 - mag).max(0) as usize, x);
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.') } else { &s };
    if s == "-0" { "0".into() } else { s.into() }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn writer(dir: &Path, name: &str) -> Result<(csv::Writer<File>, PathBuf)> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("metrics: creating {}", path.display()))?;
    Ok((csv::Writer::from_writer(file), path))
}

pub fn write_csv(out: &SimOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("metrics: creating {}", dir.display()))?;
    write_intervals(&out.intervals, dir)?;
    write_queries(&out.records, dir)?;
    write_plans(&out.ticks, dir)
}

pub fn write_intervals(rows: &[IntervalSnapshot], dir: &Path) -> Result<()> {
    let (mut w, path) = writer(dir, INTERVALS_FILE)?;
    let ctx = || format!("metrics: writing {}", path.display());
    w.write_record(INTERVAL_HEADER).with_context(ctx)?;
    for s in rows {
        let p = &s.plan;
        w.write_record([
            fmt_num(s.interval_start),
            fmt_num(s.demand_observed),
            fmt_num(s.demand_estimated),
            fmt_num(p.t),
            p.x1.to_string(),
            p.x2.to_string(),
            p.b1.to_string(),
            p.b2.to_string(),
            p.feasible.to_string(),
            s.hosted_light.to_string(),
            s.hosted_heavy.to_string(),
            s.arrived.to_string(),
            s.served_light.to_string(),
            s.served_heavy.to_string(),
            s.dropped.to_string(),
            s.late.to_string(),
            s.forced_light.to_string(),
            s.in_flight_end.to_string(),
            fmt_num(s.quality_sum),
            opt(s.mean_delivered_quality()),
            opt(s.violation_ratio()),
        ])
        .with_context(ctx)?;
    }
    w.flush().with_context(ctx)
}

pub fn write_queries(rows: &[QueryRecord], dir: &Path) -> Result<()> {
    let (mut w, path) = writer(dir, QUERIES_FILE)?;
    let ctx = || format!("metrics: writing {}", path.display());
    w.write_record(QUERY_HEADER).with_context(ctx)?;
    for r in rows {
        w.write_record([
            r.id.to_string(),
            fmt_num(r.arrival),
            fmt_num(r.deadline),
            fmt_num(r.confidence),
            opt(r.light_start),
            opt(r.light_end),
            opt(r.heavy_start),
            opt(r.heavy_end),
            opt(r.completion),
            r.outcome.map(Outcome::name).unwrap_or_default().to_string(),
            opt(r.delivered_quality),
            r.forced_light.to_string(),
        ])
        .with_context(ctx)?;
    }
    w.flush().with_context(ctx)
}

pub fn write_plans(rows: &[TickLog], dir: &Path) -> Result<()> {
    let (mut w, path) = writer(dir, PLANS_FILE)?;
    let ctx = || format!("metrics: writing {}", path.display());
    w.write_record(PLAN_HEADER).with_context(ctx)?;
    for k in rows {
        let p = &k.plan;
        w.write_record([
            k.tick.to_string(),
            fmt_num(k.time),
            fmt_num(k.demand_estimate),
            k.light_queue.queue_length.to_string(),
            fmt_num(k.light_queue.arrival_rate),
            k.heavy_queue.queue_length.to_string(),
            fmt_num(k.heavy_queue.arrival_rate),
            p.x1.to_string(),
            p.x2.to_string(),
            p.b1.to_string(),
            p.b2.to_string(),
            fmt_num(p.t),
            p.feasible.to_string(),
            k.hosted_light.to_string(),
            k.hosted_heavy.to_string(),
            k.candidates.to_string(),
            k.solver_micros.map(|u| u.to_string()).unwrap_or_default(),
        ])
        .with_context(ctx)?;
    }
    w.flush().with_context(ctx)
}

struct Rows {
    path: PathBuf,
    reader: csv::Reader<File>,
}

impl Rows {
    fn open(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let file = File::open(&path).with_context(|| format!("metrics: opening {}", path.display()))?;
        let mut reader = csv::Reader::from_reader(file);
        let found = reader.headers().with_context(|| format!("metrics: reading {}", path.display()))?;
        if found.iter().ne(header.iter().copied()) {
            bail!("metrics: {} has an unexpected header", path.display());
        }
        Ok(Self { path, reader })
    }

    fn each(mut self, mut f: impl FnMut(&Cells) -> Result<()>) -> Result<()> {
        for (i, rec) in self.reader.records().enumerate() {
            let rec = rec.with_context(|| format!("metrics: reading {}", self.path.display()))?;
            f(&Cells(rec)).with_context(|| format!("metrics: {} row {}", self.path.display(), i + 1))?;
        }
        Ok(())
    }
}

struct Cells(csv::StringRecord);

impl Cells {
    fn get<T: std::str::FromStr>(&self, i: usize) -> Result<T> {
        let s = self.0.get(i).ok_or_else(|| anyhow!("missing column {i}"))?;
        s.parse().map_err(|_| anyhow!("column {i}: cannot parse `{s}`"))
    }

    fn opt<T: std::str::FromStr>(&self, i: usize) -> Result<Option<T>> {
        match self.0.get(i) {
            Some("") => Ok(None),
            _ => self.get(i).map(Some),
        }
    }
}

pub fn read_intervals(dir: &Path) -> Result<Vec<IntervalSnapshot>> {
    let mut out = Vec::new();
    Rows::open(dir, INTERVALS_FILE, &INTERVAL_HEADER)?.each(|c| {
        out.push(IntervalSnapshot {
            interval_start: c.get(0)?,
            demand_observed: c.get(1)?,
            demand_estimated: c.get(2)?,
            plan: AllocationPlan {
                t: c.get(3)?,
                x1: c.get(4)?,
                x2: c.get(5)?,
                b1: c.get(6)?,
                b2: c.get(7)?,
                feasible: c.get(8)?,
            },
            hosted_light: c.get(9)?,
            hosted_heavy: c.get(10)?,
            arrived: c.get(11)?,
            served_light: c.get(12)?,
            served_heavy: c.get(13)?,
            dropped: c.get(14)?,
            late: c.get(15)?,
            forced_light: c.get(16)?,
            in_flight_end: c.get(17)?,
            quality_sum: c.get(18)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_queries(dir: &Path) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    Rows::open(dir, QUERIES_FILE, &QUERY_HEADER)?.each(|c| {
        let outcome = match c.0.get(9).unwrap_or("") {
            "" => None,
            "served_light" => Some(Outcome::ServedLight),
            "served_heavy" => Some(Outcome::ServedHeavy),
            "dropped" => Some(Outcome::Dropped),
            "late" => Some(Outcome::Late),
            other => bail!("unknown outcome `{other}`"),
        };
        out.push(QueryRecord {
            id: c.get(0)?,
            arrival: c.get(1)?,
            deadline: c.get(2)?,
            confidence: c.get(3)?,
            light_start: c.opt(4)?,
            light_end: c.opt(5)?,
            heavy_start: c.opt(6)?,
            heavy_end: c.opt(7)?,
            completion: c.opt(8)?,
            outcome,
            delivered_quality: c.opt(10)?,
            forced_light: c.get(11)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_plans(dir: &Path) -> Result<Vec<TickLog>> {
    let mut out = Vec::new();
    Rows::open(dir, PLANS_FILE, &PLAN_HEADER)?.each(|c| {
        out.push(TickLog {
            tick: c.get(0)?,
            time: c.get(1)?,
            demand_estimate: c.get(2)?,
            light_queue: QueueState { queue_length: c.get(3)?, arrival_rate: c.get(4)? },
            heavy_queue: QueueState { queue_length: c.get(5)?, arrival_rate: c.get(6)? },
            plan: AllocationPlan {
                x1: c.get(7)?,
                x2: c.get(8)?,
                b1: c.get(9)?,
                b2: c.get(10)?,
                t: c.get(11)?,
                feasible: c.get(12)?,
            },
            hosted_light: c.get(13)?,
            hosted_heavy: c.get(14)?,
            candidates: c.get(15)?,
            solver_micros: c.opt(16)?,
        });
        Ok(())
    })?;
    Ok(out)
}
