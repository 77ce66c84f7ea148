//! Arrival-rate traces, synthetic queries and demand estimation.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("trace has no rates")]
    EmptyTrace,
    #[error("rate {rate} at index {index} is negative or not finite")]
    BadRate { index: usize, rate: f64 },
    #[error("interval length must be positive, got {0}")]
    BadInterval(f64),
    #[error("cannot map a constant trace onto [{new_min}, {new_max}]")]
    ConstantTrace { new_min: f64, new_max: f64 },
    #[error("scaling target min {new_min} exceeds max {new_max}")]
    InvertedRange { new_min: f64, new_max: f64 },
    #[error("demand history is empty")]
    EmptyHistory,
    #[error("smoothing factor {0} is outside (0, 1]")]
    BadAlpha(f64),
    #[error("outcome model parameter `{0}` is out of range")]
    BadOutcomeModel(&'static str),
}

/// Piecewise-constant arrival rate, one value per fixed-length interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    interval_seconds: f64,
    rates: Vec<f64>,
}

impl Trace {
    pub fn new(interval_seconds: f64, rates: Vec<f64>) -> Result<Self, WorkloadError> {
        if !(interval_seconds > 0.0 && interval_seconds.is_finite()) {
            return Err(WorkloadError::BadInterval(interval_seconds));
        }
        if rates.is_empty() {
            return Err(WorkloadError::EmptyTrace);
        }
        if let Some((index, &rate)) =
            rates.iter().enumerate().find(|(_, r)| !(**r >= 0.0 && r.is_finite()))
        {
            return Err(WorkloadError::BadRate { index, rate });
        }
        Ok(Self { interval_seconds, rates })
    }

    /// A single-rate trace lasting `duration` seconds.
    pub fn constant(rate: f64, duration: f64, interval_seconds: f64) -> Result<Self, WorkloadError> {
        let n = libm::ceil(duration / interval_seconds).max(1.0) as usize;
        Self::new(interval_seconds, alloc::vec![rate; n])
    }

    pub fn interval_seconds(&self) -> f64 {
        self.interval_seconds
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn duration(&self) -> f64 {
        self.rates.len() as f64 * self.interval_seconds
    }

    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean rate over `[start, end)`, weighting partial intervals by overlap.
    pub fn mean_rate(&self, start: f64, end: f64) -> f64 {
        if end <= start {
            return 0.0;
        }
        let mut acc = 0.0;
        for (k, r) in self.rates.iter().enumerate() {
            let a = k as f64 * self.interval_seconds;
            let b = a + self.interval_seconds;
            let overlap = b.min(end) - a.max(start);
            if overlap > 0.0 {
                acc += r * overlap;
            }
        }
        acc / (end - start)
    }
}

/// Shape-preserving affine rescale of a trace onto `[new_min, new_max]`.
pub fn scale_trace(trace: &Trace, new_min: f64, new_max: f64) -> Result<Trace, WorkloadError> {
    if new_min > new_max {
        return Err(WorkloadError::InvertedRange { new_min, new_max });
    }
    if new_min < 0.0 {
        return Err(WorkloadError::BadRate { index: 0, rate: new_min });
    }
    let (lo, hi) = (trace.min_rate(), trace.max_rate());
    let rates = if hi > lo {
        let span = hi - lo;
        trace
            .rates
            .iter()
            .map(|&r| {
                if r == lo {
                    new_min
                } else if r == hi {
                    new_max
                } else {
                    new_min + (r - lo) * (new_max - new_min) / span
                }
            })
            .collect()
    } else if new_min == new_max {
        alloc::vec![new_min; trace.rates.len()]
    } else {
        return Err(WorkloadError::ConstantTrace { new_min, new_max });
    };
    Trace::new(trace.interval_seconds, rates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArrivalMode {
    /// Exponential gaps, i.e. a Poisson process with the trace's rate.
    #[default]
    Poisson,
    /// Evenly spaced arrivals at `1 / rate` within each interval.
    Uniform,
}

/// Arrival times for the whole trace. Strictly increasing; deterministic in
/// `seed`.
pub fn generate_arrivals(trace: &Trace, seed: u64, mode: ArrivalMode) -> Vec<f64> {
    match mode {
        ArrivalMode::Uniform => uniform_arrivals(trace),
        ArrivalMode::Poisson => poisson_arrivals(trace, &mut rng::stream_rng(seed, Stream::Arrivals)),
    }
}

fn uniform_arrivals(trace: &Trace) -> Vec<f64> {
    let mut out = Vec::new();
    for (k, &r) in trace.rates.iter().enumerate() {
        if r <= 0.0 {
            continue;
        }
        let start = k as f64 * trace.interval_seconds;
        let end = start + trace.interval_seconds;
        let mut j = 0u64;
        loop {
            let t = start + j as f64 / r;
            if t >= end {
                break;
            }
            push_increasing(&mut out, t);
            j += 1;
        }
    }
    out
}

// Time-rescaling of unit-rate exponential gaps through the piecewise intensity.
fn poisson_arrivals(trace: &Trace, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::new();
    let mut budget: f64 = Exp1.sample(rng);
    for (k, &r) in trace.rates.iter().enumerate() {
        let start = k as f64 * trace.interval_seconds;
        let end = start + trace.interval_seconds;
        if r <= 0.0 {
            continue;
        }
        let mut now = start;
        loop {
            let remaining = r * (end - now);
            if budget >= remaining {
                budget -= remaining;
                break;
            }
            now += budget / r;
            push_increasing(&mut out, now);
            budget = Exp1.sample(rng);
        }
    }
    out
}

fn push_increasing(out: &mut Vec<f64>, t: f64) {
    let t = match out.last() {
        Some(&last) if t <= last => last.next_up(),
        _ => t,
    };
    out.push(t);
}

/// One text-to-image request with its latent ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub id: u64,
    pub arrival_time: f64,
    /// Discriminator confidence on the light model's output.
    pub confidence: f64,
    pub quality_light: f64,
    pub quality_heavy: f64,
    pub deadline: f64,
}

/// Joint model of per-query quality gap and discriminator confidence.
///
/// The gap `Δq = quality_light − quality_heavy` is
/// `quality_gap_scale · (u − (1 − easy_fraction))` with `u ~ U(0, 1)`, so
/// `P(Δq ≥ 0) = easy_fraction`. The heavy model's quality is the unit
/// baseline. Confidence is `clamp(0.5 + confidence_fidelity·Δq + N(0, σ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOutcomeModel {
    pub easy_fraction: f64,
    pub quality_gap_scale: f64,
    pub confidence_fidelity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for QueryOutcomeModel {
    fn default() -> Self {
        Self {
            easy_fraction: 0.3,
            quality_gap_scale: 0.5,
            confidence_fidelity: 1.5,
            noise_sigma: 0.15,
            seed: 0,
        }
    }
}

pub const HEAVY_BASE_QUALITY: f64 = 1.0;

impl QueryOutcomeModel {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(0.0..=1.0).contains(&self.easy_fraction) {
            return Err(WorkloadError::BadOutcomeModel("easy_fraction"));
        }
        if !(self.quality_gap_scale > 0.0 && self.quality_gap_scale.is_finite()) {
            return Err(WorkloadError::BadOutcomeModel("quality_gap_scale"));
        }
        if !(self.confidence_fidelity >= 0.0 && self.confidence_fidelity.is_finite()) {
            return Err(WorkloadError::BadOutcomeModel("confidence_fidelity"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(WorkloadError::BadOutcomeModel("noise_sigma"));
        }
        Ok(())
    }

    /// Draws query `id`. The result depends only on `(seed, id)` and the
    /// model parameters.
    pub fn sample_query(&self, id: u64, arrival_time: f64, slo: f64) -> Query {
        let mut rng = rng::stream_rng(self.seed, Stream::Queries);
        rng.set_stream(id);
        let u: f64 = rng.random();
        let gap = self.quality_gap_scale * (u - (1.0 - self.easy_fraction));
        let z: f64 = StandardNormal.sample(&mut rng);
        let confidence =
            (0.5 + self.confidence_fidelity * gap + self.noise_sigma * z).clamp(0.0, 1.0);
        Query {
            id,
            arrival_time,
            confidence,
            quality_light: HEAVY_BASE_QUALITY + gap,
            quality_heavy: HEAVY_BASE_QUALITY,
            deadline: arrival_time + slo,
        }
    }
}

/// Exponentially weighted moving average with `D_1 = obs_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ewma {
    alpha: f64,
    value: Option<f64>,
}

pub const DEFAULT_EWMA_ALPHA: f64 = 0.3;

impl Ewma {
    pub fn new(alpha: f64) -> Result<Self, WorkloadError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(WorkloadError::BadAlpha(alpha));
        }
        Ok(Self { alpha, value: None })
    }

    /// Starts from a prior estimate instead of the first observation.
    pub fn with_prior(alpha: f64, prior: f64) -> Result<Self, WorkloadError> {
        let mut e = Self::new(alpha)?;
        e.value = Some(prior);
        Ok(e)
    }

    pub fn observe(&mut self, obs: f64) -> f64 {
        let next = match self.value {
            None => obs,
            Some(prev) => self.alpha * obs + (1.0 - self.alpha) * prev,
        };
        self.value = Some(next);
        next
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }
}

pub fn ewma_estimate(history: &[f64], alpha: f64) -> Result<f64, WorkloadError> {
    let mut ewma = Ewma::new(alpha)?;
    history.iter().map(|&obs| ewma.observe(obs)).last().ok_or(WorkloadError::EmptyHistory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scale_examples() {
        let t = Trace::new(1.0, vec![0.0, 5.0, 10.0]).unwrap();
        assert_eq!(scale_trace(&t, 4.0, 32.0).unwrap().rates(), &[4.0, 18.0, 32.0]);
        let t = Trace::new(1.0, vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(scale_trace(&t, 1.0, 4.0).unwrap().rates(), &[1.0, 2.0, 4.0]);
        let t = Trace::new(1.0, vec![3.0, 7.0]).unwrap();
        assert_eq!(scale_trace(&t, 1.0, 8.0).unwrap().rates(), &[1.0, 8.0]);
    }

    #[test]
    fn scale_errors() {
        let flat = Trace::new(1.0, vec![5.0, 5.0]).unwrap();
        assert!(matches!(scale_trace(&flat, 1.0, 2.0), Err(WorkloadError::ConstantTrace { .. })));
        assert_eq!(scale_trace(&flat, 3.0, 3.0).unwrap().rates(), &[3.0, 3.0]);
        assert!(scale_trace(&flat, 4.0, 2.0).is_err());
    }

    #[test]
    fn trace_validation() {
        assert_eq!(Trace::new(1.0, vec![]), Err(WorkloadError::EmptyTrace));
        assert!(matches!(Trace::new(1.0, vec![-1.0]), Err(WorkloadError::BadRate { index: 0, .. })));
        assert!(Trace::new(0.0, vec![1.0]).is_err());
    }

    #[test]
    fn uniform_arrivals_are_evenly_spaced() {
        let t = Trace::new(1.0, vec![2.0]).unwrap();
        assert_eq!(generate_arrivals(&t, 0, ArrivalMode::Uniform), vec![0.0, 0.5]);
        let t = Trace::new(1.0, vec![0.0]).unwrap();
        assert!(generate_arrivals(&t, 0, ArrivalMode::Uniform).is_empty());
        assert!(generate_arrivals(&t, 0, ArrivalMode::Poisson).is_empty());
    }

    #[test]
    fn poisson_count_matches_rate() {
        let t = Trace::new(1.0, vec![10.0; 600]).unwrap();
        let n = generate_arrivals(&t, 42, ArrivalMode::Poisson).len() as f64;
        assert!((n - 6000.0).abs() <= 0.05 * 6000.0, "{n}");
    }

    #[test]
    fn poisson_follows_rate_changes() {
        let t = Trace::new(10.0, vec![1.0, 20.0, 0.0, 5.0]).unwrap();
        let a = generate_arrivals(&t, 3, ArrivalMode::Poisson);
        assert!(a.iter().all(|&x| !(20.0..30.0).contains(&x)));
        let busy = a.iter().filter(|&&x| (10.0..20.0).contains(&x)).count();
        assert!(busy > 120 && busy < 280, "{busy}");
    }

    #[test]
    fn degenerate_outcome_models() {
        let m = QueryOutcomeModel { easy_fraction: 1.0, noise_sigma: 0.0, ..Default::default() };
        for id in 0..1000 {
            let q = m.sample_query(id, 0.0, 5.0);
            assert!(q.quality_light >= q.quality_heavy);
        }
        let m = QueryOutcomeModel { confidence_fidelity: 0.0, noise_sigma: 0.0, ..Default::default() };
        for id in 0..100 {
            assert_eq!(m.sample_query(id, 1.0, 5.0).confidence, 0.5);
        }
    }

    #[test]
    fn easy_fraction_converges() {
        let m = QueryOutcomeModel { easy_fraction: 0.3, seed: 11, ..Default::default() };
        let n = 100_000;
        let easy = (0..n)
            .filter(|&id| {
                let q = m.sample_query(id, 0.0, 5.0);
                q.quality_light >= q.quality_heavy
            })
            .count() as f64
            / n as f64;
        assert!((0.29..=0.31).contains(&easy), "{easy}");
    }

    #[test]
    fn queries_depend_only_on_seed_and_id() {
        let m = QueryOutcomeModel { seed: 5, ..Default::default() };
        let a = m.sample_query(17, 3.0, 5.0);
        let _ = m.sample_query(18, 3.0, 5.0);
        let b = m.sample_query(17, 3.0, 5.0);
        assert_eq!(a, b);
        assert_eq!(a.deadline, 8.0);
    }

    #[test]
    fn ewma_examples() {
        assert_eq!(ewma_estimate(&[10.0], 0.3).unwrap(), 10.0);
        assert_eq!(ewma_estimate(&[10.0, 20.0], 0.5).unwrap(), 15.0);
        assert_eq!(ewma_estimate(&[], 0.5), Err(WorkloadError::EmptyHistory));
        assert!(ewma_estimate(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn ewma_fixed_point(c in 0.0f64..1e4, n in 1usize..50, alpha in 0.01f64..=1.0) {
            let est = ewma_estimate(&vec![c; n], alpha).unwrap();
            prop_assert!((est - c).abs() <= 1e-9 * c.max(1.0));
        }

        #[test]
        fn scale_to_own_extremes_is_identity(rates in prop::collection::vec(0.0f64..100.0, 2..40)) {
            let t = Trace::new(1.0, rates).unwrap();
            prop_assume!(t.max_rate() > t.min_rate());
            let s = scale_trace(&t, t.min_rate(), t.max_rate()).unwrap();
            for (a, b) in s.rates().iter().zip(t.rates()) {
                prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
            }
        }

        #[test]
        fn scaled_extremes_are_exact(rates in prop::collection::vec(0.0f64..100.0, 2..40),
                                     lo in 0.0f64..10.0, span in 0.0f64..50.0) {
            let t = Trace::new(1.0, rates).unwrap();
            prop_assume!(t.max_rate() > t.min_rate());
            let s = scale_trace(&t, lo, lo + span).unwrap();
            prop_assert_eq!(s.min_rate(), lo);
            prop_assert_eq!(s.max_rate(), lo + span);
        }

        #[test]
        fn arrivals_strictly_increase(rates in prop::collection::vec(0.0f64..30.0, 1..20),
                                      seed in any::<u64>(), poisson in any::<bool>()) {
            let t = Trace::new(1.0, rates).unwrap();
            let mode = if poisson { ArrivalMode::Poisson } else { ArrivalMode::Uniform };
            let a = generate_arrivals(&t, seed, mode);
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(a.iter().all(|&x| x >= 0.0 && x < t.duration()));
            prop_assert_eq!(a, generate_arrivals(&t, seed, mode));
        }
    }
}
