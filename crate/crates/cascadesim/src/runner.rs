//! Single runs and parameter sweeps.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use cascadesim_core::rng::mix64;
use cascadesim_core::{RunSummary, SimOutput, Simulation};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::{fmt_num, write_csv};

#[derive(Debug, Clone)]
pub struct RunReport {
    pub policy: String,
    pub cascade: String,
    pub seed: u64,
    pub summary: RunSummary,
    pub wall: Duration,
    pub out_dir: PathBuf,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.summary;
        write!(
            f,
            "{} {} seed={} arrived={} violation_ratio={} mean_quality={} wall={:.3}s",
            self.cascade,
            self.policy,
            self.seed,
            s.arrived,
            s.violation_ratio.map(fmt_num).unwrap_or_else(|| "-".into()),
            s.mean_quality.map(fmt_num).unwrap_or_else(|| "-".into()),
            self.wall.as_secs_f64(),
        )
    }
}

/// Runs the simulation without touching the file system.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimOutput> {
    let cascade = cfg.cascade_profile()?;
    let trace = cfg.load_trace()?;
    let cluster = cfg.cluster_config()?;
    let sim = Simulation::new(&cascade, &trace, cluster).context("cluster: building simulation")?;
    let out = if cfg.record_solver_time {
        let start = Instant::now();
        sim.run_timed(&mut || Some(start.elapsed().as_micros() as u64))
    } else {
        sim.run()
    };
    out.context("cluster: simulation failed")
}

/// Simulates and writes the three CSV files into `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let out = simulate(cfg)?;
    write_csv(&out, &cfg.out)?;
    Ok(RunReport {
        policy: cfg.policy.clone(),
        cascade: cfg.cascade.clone(),
        seed: cfg.seed,
        summary: out.summary,
        wall: start.elapsed(),
        out_dir: cfg.out.clone(),
    })
}

/// One swept parameter and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = anyhow::Error;

    /// `key=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let Some((key, values)) = s.split_once('=') else {
            bail!("expected `key=v1,v2,...`, got `{s}`");
        };
        let values: Vec<String> =
            values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
        Ok(Self { key: key.trim().into(), values })
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub settings: Vec<(String, String)>,
    pub seed: u64,
    pub result: Result<RunSummary, String>,
}

/// Cartesian product of the axes, in axis order.
pub fn grid_points(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((axis.key.clone(), v.clone()));
                    p
                })
            })
            .collect()
    })
}

/// Canonical point name: settings sorted by key, so the name (and the seed
/// derived from it) does not depend on axis order.
pub fn point_label(settings: &[(String, String)]) -> String {
    let mut s: Vec<String> = settings.iter().map(|(k, v)| format!("{k}={v}")).collect();
    s.sort();
    s.join(",")
}

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    label.bytes().fold(mix64(seed), |h, b| mix64(h ^ u64::from(b)))
}

fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._=-".contains(c) { c } else { '_' })
        .collect()
}

/// Runs every grid point into its own directory under `cfg.out` and writes
/// `sweep.csv` there. Failed points are recorded and do not stop the sweep.
/// Each point's seed is derived from the base seed and the point's label
/// unless `shared_seed` is set or the grid varies `seed` itself.
pub fn sweep(cfg: &ExperimentConfig, axes: &[Axis], shared_seed: bool) -> Result<Vec<SweepPoint>> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        bail!("cli: sweep grid is empty");
    }
    let varies_seed = axes.iter().any(|a| a.key == "seed");
    let points: Vec<SweepPoint> = grid_points(axes)
        .into_par_iter()
        .map(|settings| {
            let label = point_label(&settings);
            let mut point_cfg = cfg.clone();
            point_cfg.out = cfg.out.join(dir_name(&label));
            let applied = settings.iter().try_for_each(|(k, v)| point_cfg.set(k, v));
            if !(shared_seed || varies_seed) {
                point_cfg.seed = derive_seed(cfg.seed, &label);
            }
            let seed = point_cfg.seed;
            let result = applied
                .and_then(|()| run(&point_cfg))
                .map(|r| r.summary)
                .map_err(|e| format!("{e:#}"));
            SweepPoint { label, settings, seed, result }
        })
        .collect();
    write_sweep_csv(&points, &cfg.out)?;
    Ok(points)
}

pub fn write_sweep_csv(points: &[SweepPoint], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cli: creating {}", dir.display()))?;
    let path = dir.join("sweep.csv");
    let ctx = || format!("cli: writing {}", path.display());
    let mut w = csv::Writer::from_path(&path).with_context(ctx)?;
    w.write_record([
        "point", "seed", "status", "arrived", "served_light", "served_heavy", "dropped", "late",
        "violation_ratio", "mean_quality", "error",
    ])
    .with_context(ctx)?;
    for p in points {
        let row = match &p.result {
            Ok(s) => [
                p.label.clone(),
                p.seed.to_string(),
                "ok".into(),
                s.arrived.to_string(),
                s.served_light.to_string(),
                s.served_heavy.to_string(),
                s.dropped.to_string(),
                s.late.to_string(),
                s.violation_ratio.map(fmt_num).unwrap_or_default(),
                s.mean_quality.map(fmt_num).unwrap_or_default(),
                String::new(),
            ],
            Err(e) => {
                let mut row: [String; 11] = Default::default();
                row[0] = p.label.clone();
                row[1] = p.seed.to_string();
                row[2] = "failed".into();
                row[10] = e.clone();
                row
            }
        };
        w.write_record(&row).with_context(ctx)?;
    }
    w.flush().with_context(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_a_cartesian_product() {
        let axes: Vec<Axis> = ["a=1,2", "b=x,y,z"].iter().map(|s| s.parse().unwrap()).collect();
        let pts = grid_points(&axes);
        assert_eq!(pts.len(), 6);
        assert_eq!(point_label(&pts[5]), "a=2,b=z");
    }

    #[test]
    fn labels_and_seeds_ignore_axis_order() {
        let p = vec![("b".to_string(), "1".to_string()), ("a".to_string(), "2".to_string())];
        let q = vec![p[1].clone(), p[0].clone()];
        assert_eq!(point_label(&p), point_label(&q));
        assert_ne!(derive_seed(0, "a=1"), derive_seed(0, "a=2"));
        assert_ne!(derive_seed(0, "a=1"), derive_seed(1, "a=1"));
    }

    #[test]
    fn axis_parsing() {
        let a: Axis = "overprovision=1.0, 1.05,1.1".parse().unwrap();
        assert_eq!(a.values, ["1.0", "1.05", "1.1"]);
        assert!("overprovision".parse::<Axis>().is_err());
        assert!("overprovision=".parse::<Axis>().unwrap().values.is_empty());
    }
}
