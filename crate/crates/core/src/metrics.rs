//! Per-interval accounting and the two evaluation metrics.

use crate::allocator::AllocationPlan;
use crate::cluster::{Outcome, QueryRecord};

/// System state over one control interval. Outcomes are attributed to the
/// interval in which they happen, not the one in which the query arrived.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSnapshot {
    pub interval_start: f64,
    pub demand_observed: f64,
    pub demand_estimated: f64,
    pub plan: AllocationPlan,
    pub hosted_light: u32,
    pub hosted_heavy: u32,
    pub arrived: u64,
    pub served_light: u64,
    pub served_heavy: u64,
    pub dropped: u64,
    pub late: u64,
    /// Deferrals answered by the light model because no heavy worker existed.
    pub forced_light: u64,
    /// Queries admitted but without a terminal outcome at the interval's end.
    pub in_flight_end: u64,
    pub quality_sum: f64,
}

impl IntervalSnapshot {
    pub fn threshold(&self) -> f64 {
        self.plan.t
    }

    pub fn completed(&self) -> u64 {
        self.served_light + self.served_heavy + self.late
    }

    pub fn terminal(&self) -> u64 {
        self.completed() + self.dropped
    }

    pub fn mean_delivered_quality(&self) -> Option<f64> {
        let n = self.completed();
        (n > 0).then(|| self.quality_sum / n as f64)
    }

    /// Violations over outcomes recorded in this interval.
    pub fn violation_ratio(&self) -> Option<f64> {
        let n = self.terminal();
        (n > 0).then(|| (self.late + self.dropped) as f64 / n as f64)
    }
}

/// Whole-run aggregates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub arrived: u64,
    pub served_light: u64,
    pub served_heavy: u64,
    pub dropped: u64,
    pub late: u64,
    pub forced_light: u64,
    pub violation_ratio: Option<f64>,
    pub mean_quality: Option<f64>,
}

impl RunSummary {
    pub fn from_records(records: &[QueryRecord]) -> Self {
        let mut s = RunSummary {
            arrived: records.len() as u64,
            served_light: 0,
            served_heavy: 0,
            dropped: 0,
            late: 0,
            forced_light: 0,
            violation_ratio: slo_violation_ratio(records, f64::NEG_INFINITY, f64::INFINITY),
            mean_quality: quality_aggregate(records, f64::NEG_INFINITY, f64::INFINITY),
        };
        for r in records {
            match r.outcome {
                Some(Outcome::ServedLight) => s.served_light += 1,
                Some(Outcome::ServedHeavy) => s.served_heavy += 1,
                Some(Outcome::Dropped) => s.dropped += 1,
                Some(Outcome::Late) => s.late += 1,
                None => {}
            }
            s.forced_light += r.forced_light as u64;
        }
        s
    }

    pub fn terminal(&self) -> u64 {
        self.served_light + self.served_heavy + self.dropped + self.late
    }
}

/// `(late + dropped) / arrived` over queries arriving in `[start, end)`;
/// `None` when nothing arrived.
pub fn slo_violation_ratio(records: &[QueryRecord], start: f64, end: f64) -> Option<f64> {
    let mut arrived = 0u64;
    let mut bad = 0u64;
    for r in records.iter().filter(|r| r.arrival >= start && r.arrival < end) {
        arrived += 1;
        bad += matches!(r.outcome, Some(Outcome::Late | Outcome::Dropped)) as u64;
    }
    (arrived > 0).then(|| bad as f64 / arrived as f64)
}

/// Mean delivered quality over completed (served or late) queries arriving in
/// `[start, end)`; `None` when none completed.
pub fn quality_aggregate(records: &[QueryRecord], start: f64, end: f64) -> Option<f64> {
    let mut n = 0u64;
    let mut sum = 0.0;
    for r in records.iter().filter(|r| r.arrival >= start && r.arrival < end) {
        if let Some(q) = r.delivered_quality {
            n += 1;
            sum += q;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn rec(id: u64, outcome: Outcome, quality: Option<f64>) -> QueryRecord {
        QueryRecord {
            outcome: Some(outcome),
            delivered_quality: quality,
            ..QueryRecord::new(id, id as f64, id as f64 + 5.0, 0.5)
        }
    }

    #[test]
    fn violation_ratio_examples() {
        let mut rs: Vec<QueryRecord> =
            (0..7).map(|i| rec(i, Outcome::ServedLight, Some(1.0))).collect();
        rs.push(rec(7, Outcome::Late, Some(1.0)));
        rs.push(rec(8, Outcome::Late, Some(1.0)));
        rs.push(rec(9, Outcome::Dropped, None));
        assert_eq!(slo_violation_ratio(&rs, 0.0, 100.0), Some(0.3));
        assert_eq!(slo_violation_ratio(&rs[..7], 0.0, 100.0), Some(0.0));
        assert_eq!(slo_violation_ratio(&rs, 50.0, 60.0), None);
    }

    #[test]
    fn quality_examples() {
        let rs = [
            rec(0, Outcome::ServedLight, Some(1.0)),
            rec(1, Outcome::Late, Some(0.5)),
            rec(2, Outcome::Dropped, None),
        ];
        assert_eq!(quality_aggregate(&rs, 0.0, 10.0), Some(0.75));
        assert_eq!(quality_aggregate(&rs[2..], 0.0, 10.0), None);
    }

    #[test]
    fn summary_counts() {
        let rs = [
            rec(0, Outcome::ServedLight, Some(1.0)),
            rec(1, Outcome::ServedHeavy, Some(1.0)),
            rec(2, Outcome::Dropped, None),
        ];
        let s = RunSummary::from_records(&rs);
        assert_eq!((s.arrived, s.terminal(), s.dropped), (3, 3, 1));
        assert_eq!(s.violation_ratio, Some(1.0 / 3.0));
    }
}
