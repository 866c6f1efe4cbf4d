use std::path::Path;

use moe_lab::harness::report::{parse_rate_csv, write_nll_csv, write_rate_csv};
use moe_lab::harness::{aggregate, fit_loglog_slope, run_rate_experiment, ExperimentConfig, NllTrajectory, Replication};
use moe_lab::{GateTransform, Preset};

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(Preset::Regime1, GateTransform::Identity);
    cfg.k_list = vec![2];
    cfg.n_grid = vec![300, 600, 1200];
    cfg.replications = 2;
    cfg.em.max_iter = 30;
    cfg.out_dir = Some(out.to_path_buf());
    cfg
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_rate_experiment(&small_config(a.path())).unwrap();
    let rb = run_rate_experiment(&small_config(b.path())).unwrap();
    assert_eq!(ra, rb);
    let (fa, fb) = (read_dir_sorted(a.path()), read_dir_sorted(b.path()));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert!(names.contains(&"rate_regime1_identity_k2.csv"), "{names:?}");
    assert!(names.contains(&"rate_regime1_identity_k2.svg"));
    // The metadata echoes the output directory, which differs between runs.
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if !na.ends_with("_meta.json") {
            assert!(ba == bb, "{na} differs between runs");
        }
    }
}

#[test]
fn rate_svg_is_well_formed_xml() {
    let dir = tempfile::tempdir().unwrap();
    run_rate_experiment(&small_config(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join("rate_regime1_identity_k2.svg")).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

#[test]
fn nll_csv_has_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nll.csv");
    let trajs = vec![
        NllTrajectory { gate: GateTransform::Identity, nll: vec![3.0, 2.0] },
        NllTrajectory { gate: GateTransform::Cos, nll: vec![3.0, 1.5, 1.0] },
    ];
    write_nll_csv(&trajs, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "gate,iteration,nll");
    assert_eq!(lines.len(), 6);
    assert!(lines.contains(&"cos,2,1"));
}

const GRID: [usize; 4] = [1_000, 3_000, 10_000, 30_000];

fn injected(exponent: f64) -> Vec<Replication> {
    GRID.iter()
        .enumerate()
        .flat_map(|(i, &n)| {
            (0..3).map(move |r| Replication {
                n,
                n_index: i,
                replication: r,
                loss: Some(5.0 * (n as f64).powf(exponent)),
                iterations: 1,
                converged: true,
                error: None,
            })
        })
        .collect()
}

#[test]
fn aggregate_recovers_injected_slopes() {
    let mut cfg = ExperimentConfig::desk(Preset::Regime1, GateTransform::Identity);
    cfg.n_grid = GRID.to_vec();
    for exponent in [-0.5, -0.25] {
        let report = aggregate(&cfg, 3, injected(exponent)).unwrap();
        assert!((report.slope - exponent).abs() < 1e-12, "{}", report.slope);
        assert!((report.r_squared - 1.0).abs() < 1e-12);
    }
    let pts: Vec<(f64, f64)> = [10.0f64, 100.0, 1000.0].iter().map(|&n| (n, n.powf(-0.25))).collect();
    assert!((fit_loglog_slope(&pts).unwrap().slope + 0.25).abs() < 1e-12);
}

#[test]
fn rate_csv_round_trips() {
    let mut cfg = ExperimentConfig::desk(Preset::Regime2, GateTransform::Sigmoid);
    cfg.n_grid = GRID.to_vec();
    let report = aggregate(&cfg, 3, injected(-0.4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rate.csv");
    write_rate_csv(&report.points, &path).unwrap();
    let back = parse_rate_csv(&path).unwrap();
    assert_eq!(back.len(), report.points.len());
    for (p, q) in report.points.iter().zip(&back) {
        assert_eq!(p.n, q.n);
        assert!((p.mean_loss - q.mean_loss).abs() < 1e-12 && (p.std_loss - q.std_loss).abs() < 1e-12);
        assert_eq!((p.replications, p.failed), (q.replications, q.failed));
    }
}
