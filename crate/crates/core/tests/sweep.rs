//! Sweep cardinality, CSV round trips, summary recomputation and plot data.

use std::collections::BTreeMap;

use milliproxy::harness::{
    emit_plots, plot_points, read_runs_csv, run_sweep, summarize, write_runs_csv, write_sweep,
    SweepGrid,
};
use milliproxy::{RunConfig, Transport};

fn quick_base() -> RunConfig {
    RunConfig {
        ue_speed: 25.0,
        drain_s: 0.2,
        ..RunConfig::default()
    }
}

fn small_grid() -> SweepGrid {
    SweepGrid::new(quick_base())
        .axis("d_rs_ms", vec![1.0, 20.0])
        .unwrap()
        .axis("transport", vec!["newreno", "milliproxy"])
        .unwrap()
        .with_seed_count(5)
}

#[test]
fn grid_produces_one_row_per_cell_and_seed() {
    let out = run_sweep(&small_grid()).unwrap();
    assert_eq!(out.rows.len(), 20);
    assert!(out.failures.is_empty());
    assert_eq!(out.summary.configs.len(), 4);
    assert_eq!(out.summary.gains.len(), 2);
    for row in &out.rows {
        assert!(row.goodput_bps <= row.capacity_bps * (1.0 + 1e-9), "{}", row.config_id);
        assert_eq!(row.invariant_violations, 0);
    }
}

#[test]
fn csv_round_trip_and_summary_recompute() {
    let out = run_sweep(&small_grid()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_sweep(dir.path(), &out).unwrap();
    let back = read_runs_csv(&dir.path().join("runs.csv")).unwrap();
    assert_eq!(back, out.rows);
    for (a, b) in back.iter().zip(&out.rows) {
        assert_eq!(a.metrics(), b.metrics());
    }
    assert_eq!(summarize(&back), out.summary);

    // Means and paired ratios computed directly from the raw rows.
    let mut by_id: BTreeMap<&str, Vec<(u64, f64, f64)>> = BTreeMap::new();
    for r in &back {
        by_id
            .entry(r.config_id.as_str())
            .or_default()
            .push((r.seed, r.goodput_bps, r.ran_latency_mean_us));
    }
    for c in &out.summary.configs {
        let v = &by_id[c.config_id.as_str()];
        let g: f64 = v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
        let l: f64 = v.iter().map(|x| x.2).sum::<f64>() / v.len() as f64;
        assert!((c.goodput_mean_bps - g).abs() <= 1e-9 * g.abs().max(1.0));
        assert!((c.latency_mean_us - l).abs() <= 1e-9 * l.abs().max(1.0));
    }
    for gain in &out.summary.gains {
        let p = &by_id[gain.config_id.as_str()];
        let b = &by_id[gain.baseline_id.as_str()];
        let seeds: Vec<u64> = p.iter().map(|x| x.0).filter(|s| b.iter().any(|y| y.0 == *s)).collect();
        let pick = |v: &Vec<(u64, f64, f64)>, f: fn(&(u64, f64, f64)) -> f64| {
            seeds.iter().map(|s| f(v.iter().find(|x| x.0 == *s).unwrap())).sum::<f64>()
        };
        let gg = pick(p, |x| x.1) / pick(b, |x| x.1);
        let lr = pick(b, |x| x.2) / pick(p, |x| x.2);
        assert!((gain.goodput_gain - gg).abs() < 1e-9 * gg);
        assert!((gain.latency_reduction - lr).abs() < 1e-9 * lr);
        assert_eq!(gain.pairs, seeds.len() as u64);
    }
}

#[test]
fn plot_x_axis_follows_total_one_way_delay() {
    let grid = SweepGrid::new(RunConfig {
        transport: Transport::Udp,
        udp_rate_bps: Some(50_000_000),
        ..quick_base()
    })
    .axis("d_rs_ms", vec![1.0, 5.0, 10.0, 20.0])
    .unwrap()
    .axis("b_rlc_mb", vec![10.0, 20.0])
    .unwrap()
    .with_seed_count(1);
    let out = run_sweep(&grid).unwrap();
    let (goodput, latency) = plot_points(&out.summary);
    let mut xs: Vec<f64> = goodput.iter().map(|p| p.x_ms).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    assert_eq!(xs, vec![2.0, 6.0, 11.0, 21.0]);
    let mut series: Vec<&str> = latency.iter().map(|p| p.series.as_str()).collect();
    series.sort();
    series.dedup();
    assert_eq!(series.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let files = emit_plots(&out.summary, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let text = std::fs::read_to_string(dir.path().join("goodput.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 8);
}

#[test]
fn empty_runs_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    write_runs_csv(&path, &[]).unwrap();
    assert!(read_runs_csv(&path).unwrap().is_empty());
    let summary = summarize(&[]);
    let files = emit_plots(&summary, dir.path()).unwrap();
    for f in files {
        assert_eq!(std::fs::read_to_string(f).unwrap(), "series,x_ms,mean,ci95\n");
    }
}

#[test]
fn invalid_cells_are_reported_without_aborting() {
    let grid = SweepGrid::new(quick_base())
        .axis("mss2", vec![0i64, 20000])
        .unwrap()
        .with_seed_count(1);
    match run_sweep(&grid) {
        Ok(out) => {
            assert_eq!(out.failures.len(), 1);
            assert_eq!(out.rows.len(), 1);
        }
        Err(e) => panic!("sweep aborted: {e}"),
    }
}
