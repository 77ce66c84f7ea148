use std::path::{Path, PathBuf};

use cascadesim::config::ExperimentConfig;
use cascadesim::output::{self, read_intervals, read_plans, read_queries, write_csv};
use cascadesim::profile_file::load_profiles;
use cascadesim::runner::{self, Axis};
use cascadesim_core::profiles::catalog;
use cascadesim_core::{RunSummary, SimOutput};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-300)
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

fn small_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        trace: Some(data("traces/trace_4to32qps.txt")),
        out: dir.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn checked_in_profiles_match_the_catalog() {
    let file = load_profiles(&data("profiles.txt")).unwrap();
    let cat: Vec<_> = (1..=3).map(|i| catalog::cascade(i).unwrap()).collect();
    assert_eq!(file, cat);
    assert_eq!(file[0].slo_seconds, 5.0);
    assert_eq!(file[2].slo_seconds, 15.0);
}

#[test]
fn checked_in_configs_run() {
    let tmp = tempfile::tempdir().unwrap();
    for i in 1..=3 {
        let mut cfg = ExperimentConfig::load(&data(&format!("configs/cascade{i}.toml"))).unwrap();
        assert_eq!(cfg.overprovision, 1.05);
        cfg.out = tmp.path().join(format!("c{i}"));
        let slo = cfg.cascade_profile().unwrap().slo_seconds;
        assert_eq!(slo, if i == 3 { 15.0 } else { 5.0 });
        let report = runner::run(&cfg).unwrap();
        assert!(report.summary.arrived > 0);
        for f in ["intervals.csv", "queries.csv", "plans.csv"] {
            assert!(cfg.out.join(f).exists());
        }
    }
}

#[test]
fn csv_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = runner::simulate(&cfg).unwrap();
    write_csv(&out, tmp.path()).unwrap();

    let intervals = read_intervals(tmp.path()).unwrap();
    assert_eq!(intervals.len(), out.intervals.len());
    for (a, b) in intervals.iter().zip(&out.intervals) {
        assert!(close(a.interval_start, b.interval_start) || a.interval_start == b.interval_start);
        assert!(close(a.demand_estimated, b.demand_estimated));
        assert!(close(a.plan.t, b.plan.t) || a.plan.t == b.plan.t);
        assert_eq!((a.plan.x1, a.plan.x2, a.plan.b1, a.plan.b2), (b.plan.x1, b.plan.x2, b.plan.b1, b.plan.b2));
        assert_eq!((a.arrived, a.served_light, a.served_heavy), (b.arrived, b.served_light, b.served_heavy));
        assert_eq!((a.dropped, a.late, a.in_flight_end), (b.dropped, b.late, b.in_flight_end));
        assert!(close(a.quality_sum, b.quality_sum) || a.quality_sum == b.quality_sum);
    }

    let queries = read_queries(tmp.path()).unwrap();
    assert_eq!(queries.len(), out.records.len());
    for (a, b) in queries.iter().zip(&out.records) {
        assert_eq!((a.id, a.outcome, a.forced_light), (b.id, b.outcome, b.forced_light));
        assert!(close(a.arrival, b.arrival));
        assert!(close_opt(a.completion, b.completion));
        assert!(close_opt(a.heavy_start, b.heavy_start));
        assert!(close_opt(a.delivered_quality, b.delivered_quality));
    }

    let plans = read_plans(tmp.path()).unwrap();
    assert_eq!(plans.len(), out.ticks.len());
    for (a, b) in plans.iter().zip(&out.ticks) {
        assert_eq!((a.tick, a.candidates, a.hosted_heavy), (b.tick, b.candidates, b.hosted_heavy));
        assert_eq!(a.light_queue.queue_length, b.light_queue.queue_length);
        assert_eq!(a.plan.feasible, b.plan.feasible);
        assert_eq!(a.solver_micros, None);
    }
}

#[test]
fn sixty_seconds_give_six_plan_rows_and_timing_when_asked() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("t.txt");
    std::fs::write(&trace, "5\n".repeat(60)).unwrap();
    let cfg = ExperimentConfig {
        trace: Some(trace),
        record_solver_time: true,
        out: tmp.path().join("run"),
        ..Default::default()
    };
    runner::run(&cfg).unwrap();
    let plans = read_plans(&cfg.out).unwrap();
    assert_eq!(plans.len(), 6);
    assert!(plans.iter().all(|p| p.solver_micros.is_some()));
}

#[test]
fn empty_run_writes_headers_only() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = SimOutput {
        records: vec![],
        intervals: vec![],
        ticks: vec![],
        curves: vec![],
        event_log: None,
        summary: RunSummary::from_records(&[]),
    };
    write_csv(&empty, tmp.path()).unwrap();
    for (f, header) in [
        (output::INTERVALS_FILE, output::INTERVAL_HEADER.join(",")),
        (output::QUERIES_FILE, output::QUERY_HEADER.join(",")),
        (output::PLANS_FILE, output::PLAN_HEADER.join(",")),
    ] {
        assert_eq!(std::fs::read_to_string(tmp.path().join(f)).unwrap(), header + "\n");
    }
}

fn axes(specs: &[&str]) -> Vec<Axis> {
    specs.iter().map(|s| s.parse().unwrap()).collect()
}

#[test]
fn overprovision_sweep_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let points = runner::sweep(&cfg, &axes(&["overprovision=1.0,1.05,1.1"]), false).unwrap();
    assert_eq!(points.len(), 3);
    assert!(points.iter().all(|p| p.result.is_ok()));
    let text = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(tmp.path().join("overprovision=1.05/queries.csv").exists());
}

#[test]
fn sweep_points_do_not_depend_on_grid_order() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    runner::sweep(&small_config(a.path()), &axes(&["servers=8,16", "policy=query-aware,clipper-light"]), false)
        .unwrap();
    runner::sweep(&small_config(b.path()), &axes(&["policy=clipper-light,query-aware", "servers=16,8"]), false)
        .unwrap();
    for point in ["policy=clipper-light_servers=8", "policy=query-aware_servers=16"] {
        for f in ["intervals.csv", "queries.csv", "plans.csv"] {
            let read = |d: &Path| std::fs::read(d.join(point).join(f)).unwrap();
            assert_eq!(read(a.path()), read(b.path()), "{point}/{f}");
        }
    }
}

#[test]
fn all_policies_sweep_with_shared_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let names: Vec<&str> = cascadesim_core::PolicyKind::ALL.iter().map(|p| p.name()).collect();
    let spec = format!("policy={}", names.join(","));
    let points = runner::sweep(&small_config(tmp.path()), &axes(&[&spec]), true).unwrap();
    assert_eq!(points.len(), 8);
    let arrived: Vec<u64> = points.iter().map(|p| p.result.as_ref().unwrap().arrived).collect();
    assert!(arrived.windows(2).all(|w| w[0] == w[1]), "same arrivals for every policy");
}

#[test]
fn failed_points_are_recorded_and_empty_grids_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let points = runner::sweep(&cfg, &axes(&["policy=query-aware,no-such-policy"]), false).unwrap();
    assert!(points[0].result.is_ok());
    assert!(points[1].result.as_ref().unwrap_err().contains("no-such-policy"));
    let text = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert!(text.contains(",failed,"));
    assert!(runner::sweep(&cfg, &[], false).is_err());
    assert!(runner::sweep(&cfg, &axes(&["seed="]), false).is_err());
}

#[test]
fn missing_trace_names_the_field() {
    let cfg = ExperimentConfig { trace: Some("/no/such/trace.txt".into()), ..Default::default() };
    let msg = format!("{:#}", runner::run(&cfg).unwrap_err());
    assert!(msg.contains("trace") && msg.contains("/no/such/trace.txt"), "{msg}");
}
