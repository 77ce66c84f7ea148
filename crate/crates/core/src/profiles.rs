//! Model execution profiles and the empirical deferral curve.
//!
//! Everything the allocator knows about the models comes from here: the
//! execution latency `e(b)` of each profiled batch size, the per-worker
//! throughput `T(b) = b / e(b)` and the deferral fraction `f(t)`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Number of confidence bins; bin `k` covers `[k/100, (k+1)/100)` and the last
/// bin holds exactly `1.0`.
pub const CURVE_BINS: usize = 101;
const CURVE_RESOLUTION: usize = CURVE_BINS - 1;

/// Default per-observation decay for online deferral-curve updates.
pub const DEFAULT_CURVE_DECAY: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("model `{model}` has no profiled latency for batch size {batch}")]
    UnknownBatch { model: String, batch: u32 },
    #[error("value {value} is outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("decay {0} is outside (0, 1]")]
    BadDecay(f64),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Profiled execution latency of one model variant at each batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    name: String,
    latency: BTreeMap<u32, f64>,
}

impl ModelProfile {
    /// Builds a profile, rejecting empty tables, non-positive latencies,
    /// latency that shrinks with batch size, and throughput that shrinks with
    /// batch size.
    pub fn new(
        name: impl Into<String>,
        table: impl IntoIterator<Item = (u32, f64)>,
    ) -> Result<Self, ProfileError> {
        let name = name.into();
        let mut latency = BTreeMap::new();
        for (b, e) in table {
            if b == 0 {
                return Err(ProfileError::Invariant(alloc::format!(
                    "model `{name}`: batch size must be positive"
                )));
            }
            if !(e > 0.0 && e.is_finite()) {
                return Err(ProfileError::Invariant(alloc::format!(
                    "model `{name}`: latency for batch {b} must be positive, got {e}"
                )));
            }
            if latency.insert(b, e).is_some() {
                return Err(ProfileError::Invariant(alloc::format!(
                    "model `{name}`: batch size {b} listed twice"
                )));
            }
        }
        if latency.is_empty() {
            return Err(ProfileError::Invariant(alloc::format!(
                "model `{name}`: latency table is empty"
            )));
        }
        let entries: Vec<(u32, f64)> = latency.iter().map(|(&b, &e)| (b, e)).collect();
        for pair in entries.windows(2) {
            let (b0, e0) = pair[0];
            let (b1, e1) = pair[1];
            if e1 < e0 {
                return Err(ProfileError::Invariant(alloc::format!(
                    "model `{name}`: latency must be non-decreasing in batch size \
                     (e({b1}) = {e1} < e({b0}) = {e0})"
                )));
            }
            if (b1 as f64) / e1 < (b0 as f64) / e0 {
                return Err(ProfileError::Invariant(alloc::format!(
                    "model `{name}`: throughput must be non-decreasing in batch size \
                     (T({b1}) < T({b0}))"
                )));
            }
        }
        Ok(Self { name, latency })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Profiled latency in seconds. No interpolation between profiled points.
    pub fn exec_latency(&self, b: u32) -> Result<f64, ProfileError> {
        self.latency
            .get(&b)
            .copied()
            .ok_or_else(|| ProfileError::UnknownBatch { model: self.name.clone(), batch: b })
    }

    /// Queries per second a single worker sustains at batch size `b`.
    pub fn throughput(&self, b: u32) -> Result<f64, ProfileError> {
        Ok(b as f64 / self.exec_latency(b)?)
    }

    /// Profiled batch sizes in increasing order.
    pub fn batch_sizes(&self) -> impl DoubleEndedIterator<Item = u32> + '_ {
        self.latency.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.latency.iter().map(|(&b, &e)| (b, e))
    }

    pub fn min_batch(&self) -> u32 {
        *self.latency.keys().next().expect("non-empty by construction")
    }

    pub fn max_batch(&self) -> u32 {
        *self.latency.keys().next_back().expect("non-empty by construction")
    }

    pub fn contains_batch(&self, b: u32) -> bool {
        self.latency.contains_key(&b)
    }
}

/// Empirical distribution of discriminator confidence scores, binned at 0.01.
///
/// `f(t)` is the mass strictly below `t`; a query whose confidence equals the
/// threshold is answered by the light model.
#[derive(Debug, Clone, PartialEq)]
pub struct DeferralCurve {
    mass: Vec<f64>,
    total: f64,
}

impl Default for DeferralCurve {
    fn default() -> Self {
        Self::empty()
    }
}

impl DeferralCurve {
    pub fn empty() -> Self {
        Self { mass: alloc::vec![0.0; CURVE_BINS], total: 0.0 }
    }

    pub fn from_samples(samples: &[f64]) -> Result<Self, ProfileError> {
        let mut curve = Self::empty();
        for &c in samples {
            curve.observe(c, 1.0)?;
        }
        Ok(curve)
    }

    /// Lower edge of every bin (`k / 100`).
    pub fn bin_edges(&self) -> Vec<f64> {
        (0..CURVE_BINS).map(grid_point).collect()
    }

    pub fn bin_mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// Fraction of queries deferred at threshold `t`. Exact on the 0.01 grid;
    /// off-grid thresholds are resolved down to the grid point below them.
    pub fn deferral_fraction(&self, t: f64) -> Result<f64, ProfileError> {
        check_unit(t)?;
        if self.total <= 0.0 {
            return Ok(0.0);
        }
        let below: f64 = self.mass[..bin_index(t)].iter().sum();
        Ok((below / self.total).min(1.0))
    }

    /// Online update: every bin decays by `decay`, then the observation adds
    /// unit mass to its bin.
    pub fn observe(&mut self, c: f64, decay: f64) -> Result<(), ProfileError> {
        check_unit(c)?;
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(ProfileError::BadDecay(decay));
        }
        if decay < 1.0 {
            for m in &mut self.mass {
                *m *= decay;
            }
        }
        self.mass[bin_index(c)] += 1.0;
        self.total = self.total * decay + 1.0;
        Ok(())
    }

    /// Checks `f(0) = 0`, `f(1) ≤ 1`, monotonicity over the grid, and that the
    /// bin masses sum to the total mass.
    pub fn check_invariants(&self) -> Result<(), ProfileError> {
        if self.mass.iter().any(|m| *m < 0.0 || !m.is_finite()) {
            return Err(ProfileError::Invariant("negative or non-finite bin mass".to_string()));
        }
        let sum: f64 = self.mass.iter().sum();
        if (sum - self.total).abs() > 1e-9 * self.total.max(1.0) {
            return Err(ProfileError::Invariant(alloc::format!(
                "bin masses sum to {sum} but total mass is {}",
                self.total
            )));
        }
        let mut prev = self.deferral_fraction(0.0)?;
        if prev != 0.0 {
            return Err(ProfileError::Invariant("f(0) must be 0".to_string()));
        }
        for k in 1..CURVE_BINS {
            let f = self.deferral_fraction(grid_point(k))?;
            if f < prev || f > 1.0 {
                return Err(ProfileError::Invariant(alloc::format!(
                    "deferral fraction not monotone in [0, 1] at t = {}",
                    grid_point(k)
                )));
            }
            prev = f;
        }
        Ok(())
    }
}

fn check_unit(x: f64) -> Result<(), ProfileError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(ProfileError::OutOfRange { value: x })
    }
}

fn grid_point(k: usize) -> f64 {
    k as f64 / CURVE_RESOLUTION as f64
}

/// Largest `k` with `k / 100 <= x`, computed against the same grid values the
/// threshold grid uses so ties resolve identically everywhere.
fn bin_index(x: f64) -> usize {
    let mut k = (libm::floor(x * CURVE_RESOLUTION as f64) as usize).min(CURVE_RESOLUTION);
    while k > 0 && grid_point(k) > x {
        k -= 1;
    }
    while k < CURVE_RESOLUTION && grid_point(k + 1) <= x {
        k += 1;
    }
    k
}

/// A light/heavy model pair with its deferral curve and latency SLO.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeProfile {
    pub name: String,
    pub light: ModelProfile,
    pub heavy: ModelProfile,
    pub deferral: DeferralCurve,
    pub slo_seconds: f64,
}

impl CascadeProfile {
    pub fn new(
        name: impl Into<String>,
        light: ModelProfile,
        heavy: ModelProfile,
        deferral: DeferralCurve,
        slo_seconds: f64,
    ) -> Result<Self, ProfileError> {
        let name = name.into();
        if !(slo_seconds > 0.0 && slo_seconds.is_finite()) {
            return Err(ProfileError::Invariant(alloc::format!(
                "cascade `{name}`: slo_seconds must be positive"
            )));
        }
        let shared = light.batch_sizes().find(|b| heavy.contains_batch(*b)).ok_or_else(|| {
            ProfileError::Invariant(alloc::format!(
                "cascade `{name}`: light and heavy profiles share no batch size"
            ))
        })?;
        if light.exec_latency(shared)? >= heavy.exec_latency(shared)? {
            return Err(ProfileError::Invariant(alloc::format!(
                "cascade `{name}`: light model must be faster than heavy model at batch {shared}"
            )));
        }
        let floor = light.exec_latency(light.min_batch())? + heavy.exec_latency(heavy.min_batch())?;
        if slo_seconds <= floor {
            return Err(ProfileError::Invariant(alloc::format!(
                "cascade `{name}`: slo_seconds {slo_seconds} must exceed e_light + e_heavy = {floor}"
            )));
        }
        deferral.check_invariants()?;
        Ok(Self { name, light, heavy, deferral, slo_seconds })
    }
}

/// Built-in profiles for the three reference cascades.
///
/// Single-image latencies are the A100 figures (SD-Turbo 0.10 s, SDXS 0.05 s,
/// SDv1.5 1.78 s, SDXL-Lightning 0.5 s, SDXL 6 s). Larger batches are
/// synthetic, shaped so that SDXL is 4.6x slower than SDXL-Lightning at batch
/// 16. The same tables ship in `data/profiles.txt`.
pub mod catalog {
    use super::*;

    pub fn sd_turbo() -> ModelProfile {
        ModelProfile::new("sd-turbo", [(1, 0.10), (2, 0.15), (4, 0.25), (8, 0.45), (16, 0.85)])
            .expect("valid built-in profile")
    }

    pub fn sdxs() -> ModelProfile {
        ModelProfile::new("sdxs", [(1, 0.05), (2, 0.08), (4, 0.13), (8, 0.24), (16, 0.45)])
            .expect("valid built-in profile")
    }

    pub fn sd_v15() -> ModelProfile {
        ModelProfile::new("sdv1.5", [(1, 1.78), (2, 3.30), (4, 6.30), (8, 12.30), (16, 24.20)])
            .expect("valid built-in profile")
    }

    pub fn sdxl_lightning() -> ModelProfile {
        ModelProfile::new(
            "sdxl-lightning",
            [(1, 0.50), (2, 0.80), (4, 1.40), (8, 2.60), (16, 4.90)],
        )
        .expect("valid built-in profile")
    }

    pub fn sdxl() -> ModelProfile {
        ModelProfile::new("sdxl", [(1, 6.00), (2, 8.00), (4, 11.50), (8, 16.00), (16, 22.54)])
            .expect("valid built-in profile")
    }

    /// Cascade `1`, `2` or `3` with an empty deferral curve.
    pub fn cascade(index: u8) -> Option<CascadeProfile> {
        let (name, light, heavy, slo) = match index {
            1 => ("cascade1", sd_turbo(), sd_v15(), 5.0),
            2 => ("cascade2", sdxs(), sd_v15(), 5.0),
            3 => ("cascade3", sdxl_lightning(), sdxl(), 15.0),
            _ => return None,
        };
        Some(
            CascadeProfile::new(name, light, heavy, DeferralCurve::empty(), slo)
                .expect("valid built-in cascade"),
        )
    }
}
