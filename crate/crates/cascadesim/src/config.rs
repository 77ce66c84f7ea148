//! Experiment configuration: a TOML file plus command-line overrides.
//!
//! Relative `trace` and `profiles` paths in a config file are resolved
//! against the file's directory. Every field has a default, so an empty file
//! is a valid config once a trace is supplied.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cascadesim_core::policies::{AimdParams, PolicyParams};
use cascadesim_core::{
    profiles, workload, ArrivalMode, CascadeProfile, ClusterConfig, LatencyBilling, PolicyKind,
    QueryOutcomeModel, ThresholdGrid, Trace,
};
use serde::{Deserialize, Serialize};

use crate::profile_file::load_profiles;
use crate::trace_file::load_trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in cascade (`cascade1`..`cascade3`) or a block name in `profiles`.
    pub cascade: String,
    pub profiles: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub trace_interval: f64,
    /// Rescale the trace onto `[scale_min, scale_max]`; both or neither.
    pub scale_min: Option<f64>,
    pub scale_max: Option<f64>,
    pub policy: String,
    pub static_threshold: f64,
    pub aimd_add_step: u32,
    pub aimd_mult_factor: f64,
    pub servers: u32,
    pub seed: u64,
    pub control_interval: f64,
    pub overprovision: f64,
    pub ewma_alpha: f64,
    pub grid_step: f64,
    pub switch_delay: f64,
    /// `configured` or `formed-size`.
    pub billing: String,
    /// `poisson` or `uniform`.
    pub arrival_mode: String,
    pub online_curve: bool,
    pub curve_decay: f64,
    pub profiling_samples: u64,
    /// Fill the solver wall-clock column of `plans.csv`. Off by default so
    /// repeated runs stay byte-identical.
    pub record_solver_time: bool,
    pub outcome: OutcomeConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    pub easy_fraction: f64,
    pub quality_gap_scale: f64,
    pub confidence_fidelity: f64,
    pub noise_sigma: f64,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        let m = QueryOutcomeModel::default();
        Self {
            easy_fraction: m.easy_fraction,
            quality_gap_scale: m.quality_gap_scale,
            confidence_fidelity: m.confidence_fidelity,
            noise_sigma: m.noise_sigma,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let c = ClusterConfig::default();
        let p = PolicyParams::default();
        Self {
            cascade: "cascade1".into(),
            profiles: None,
            trace: None,
            trace_interval: 1.0,
            scale_min: None,
            scale_max: None,
            policy: c.policy.name().into(),
            static_threshold: p.static_threshold,
            aimd_add_step: p.aimd.add_step,
            aimd_mult_factor: p.aimd.mult_factor,
            servers: c.servers,
            seed: c.seed,
            control_interval: c.control_interval,
            overprovision: c.overprovision,
            ewma_alpha: c.ewma_alpha,
            grid_step: 0.01,
            switch_delay: c.switch_delay,
            billing: "configured".into(),
            arrival_mode: "poisson".into(),
            online_curve: c.online_curve,
            curve_decay: c.curve_decay,
            profiling_samples: c.profiling_samples,
            record_solver_time: false,
            outcome: OutcomeConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cli: reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text)
            .with_context(|| format!("cli: parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.trace, &mut cfg.profiles].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Sets one field from `key=value` text, as used by sweeps. Values are
    /// read as TOML and fall back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).context("cli: serializing config")?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.into()));
        let mut slot = &mut table;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                if !slot.contains_key(part) && !matches!(part, "profiles" | "trace" | "scale_min" | "scale_max") {
                    bail!("cli: unknown config field `{key}`");
                }
                slot.insert(part.into(), parsed.clone());
            } else {
                slot = slot
                    .get_mut(part)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| anyhow!("cli: unknown config field `{key}`"))?;
            }
        }
        // Integers are accepted where floats are expected.
        let text = toml::to_string(&table)?;
        let parsed = match toml::from_str(&text) {
            Ok(cfg) => cfg,
            Err(_) => toml::from_str(&coerce_floats(&table, key)?)
                .with_context(|| format!("cli: bad value `{value}` for `{key}`"))?,
        };
        *self = parsed;
        Ok(())
    }

    pub fn policy(&self) -> Result<PolicyKind> {
        self.policy.parse().with_context(|| "policies: field `policy`")
    }

    pub fn cascade_profile(&self) -> Result<CascadeProfile> {
        match &self.profiles {
            Some(path) => load_profiles(path)
                .with_context(|| format!("profiles: field `profiles` ({})", path.display()))?
                .into_iter()
                .find(|p| p.name == self.cascade)
                .ok_or_else(|| {
                    anyhow!("profiles: field `cascade`: no block named `{}` in {}", self.cascade, path.display())
                }),
            None => self
                .cascade
                .strip_prefix("cascade")
                .and_then(|n| n.parse().ok())
                .and_then(profiles::catalog::cascade)
                .ok_or_else(|| anyhow!("profiles: field `cascade`: unknown built-in cascade `{}`", self.cascade)),
        }
    }

    pub fn load_trace(&self) -> Result<Trace> {
        let path = self.trace.as_ref().ok_or_else(|| anyhow!("workload: field `trace` is required"))?;
        let trace = load_trace(path, self.trace_interval)
            .with_context(|| format!("workload: field `trace` ({})", path.display()))?;
        match (self.scale_min, self.scale_max) {
            (None, None) => Ok(trace),
            (Some(lo), Some(hi)) => {
                workload::scale_trace(&trace, lo, hi).context("workload: fields `scale_min`/`scale_max`")
            }
            _ => bail!("workload: `scale_min` and `scale_max` must be given together"),
        }
    }

    pub fn cluster_config(&self) -> Result<ClusterConfig> {
        let field = |name: &str, ok: bool, range: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                bail!("cli: field `{name}` must be {range}")
            }
        };
        field("servers", self.servers > 0, "positive")?;
        field("trace_interval", self.trace_interval > 0.0 && self.trace_interval.is_finite(), "positive")?;
        field("control_interval", self.control_interval > 0.0 && self.control_interval.is_finite(), "positive")?;
        field("overprovision", self.overprovision >= 1.0 && self.overprovision.is_finite(), "at least 1")?;
        field("ewma_alpha", self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0, "in (0, 1]")?;
        field("curve_decay", self.curve_decay > 0.0 && self.curve_decay <= 1.0, "in (0, 1]")?;
        field("switch_delay", self.switch_delay >= 0.0 && self.switch_delay.is_finite(), "non-negative")?;
        field("aimd_mult_factor", self.aimd_mult_factor > 0.0 && self.aimd_mult_factor < 1.0, "in (0, 1)")?;
        let grid = ThresholdGrid::uniform(self.grid_step)
            .map_err(|e| anyhow!("allocator: field `grid_step`: {e}"))?;
        field("static_threshold", grid.contains(self.static_threshold), "a grid point")?;
        let billing = match self.billing.as_str() {
            "configured" => LatencyBilling::Configured,
            "formed-size" => LatencyBilling::FormedSize,
            other => bail!("cli: field `billing`: expected `configured` or `formed-size`, got `{other}`"),
        };
        let arrival_mode = match self.arrival_mode.as_str() {
            "poisson" => ArrivalMode::Poisson,
            "uniform" => ArrivalMode::Uniform,
            other => bail!("cli: field `arrival_mode`: expected `poisson` or `uniform`, got `{other}`"),
        };
        let o = &self.outcome;
        let outcome_model = QueryOutcomeModel {
            easy_fraction: o.easy_fraction,
            quality_gap_scale: o.quality_gap_scale,
            confidence_fidelity: o.confidence_fidelity,
            noise_sigma: o.noise_sigma,
            seed: self.seed,
        };
        outcome_model.validate().context("workload: table `outcome`")?;
        Ok(ClusterConfig {
            servers: self.servers,
            policy: self.policy()?,
            policy_params: PolicyParams {
                static_threshold: self.static_threshold,
                aimd: AimdParams { add_step: self.aimd_add_step, mult_factor: self.aimd_mult_factor },
            },
            control_interval: self.control_interval,
            overprovision: self.overprovision,
            ewma_alpha: self.ewma_alpha,
            grid,
            switch_delay: self.switch_delay,
            billing,
            online_curve: self.online_curve,
            curve_decay: self.curve_decay,
            profiling_samples: self.profiling_samples,
            outcome_model,
            arrival_mode,
            seed: self.seed,
            ..ClusterConfig::default()
        })
    }
}

/// Re-serializes `table` with an integer at `key` turned into a float.
fn coerce_floats(table: &toml::Table, key: &str) -> Result<String> {
    let mut table = table.clone();
    let mut slot = &mut table;
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or(key);
    for p in parts {
        slot = slot.get_mut(p).and_then(toml::Value::as_table_mut).ok_or_else(|| anyhow!("bad key"))?;
    }
    if let Some(toml::Value::Integer(i)) = slot.get(last) {
        let f = *i as f64;
        slot.insert(last.into(), toml::Value::Float(f));
    }
    Ok(toml::to_string(&table)?)
}
