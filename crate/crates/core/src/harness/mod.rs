//! End-to-end experiments: replicated EM fits over a grid of sample sizes,
//! Voronoi-loss aggregation with a log-log slope, and EM trajectory
//! comparisons across gate transforms.
//!
//! Seeds: every dataset uses `derive_seed(master, [n_index, rep, ROLE_DATA])`
//! and every initialization `derive_seed(master, [n_index, rep, ROLE_INIT, k])`.
//! Results are aggregated by `n` then replication index, so outputs do not
//! depend on how rayon schedules the replications.

pub mod plot;
pub mod report;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, FitConfig};
use crate::error::{Error, Result};
use crate::gates::GateTransform;
use crate::metrics::aligned_voronoi_loss;
use crate::numeric::derive_seed;
use crate::synth::{self, Preset, Scenario};

pub use report::{parse_rate_csv, write_nll_csv, write_rate_csv, write_replications_csv};

const ROLE_DATA: u64 = 1;
const ROLE_INIT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Preset,
    pub gate: GateTransform,
    pub k_list: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    /// EM settings; `k` is overridden per entry of `k_list`.
    pub em: FitConfig,
    /// Standard deviation of the near-truth initialization.
    pub sigma: f64,
    /// Order of the Voronoi loss being tracked.
    pub loss_order: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// `count` sample sizes spaced evenly in `log n` between `lo` and `hi`.
pub fn log_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut grid: Vec<usize> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    grid.dedup();
    grid
}

impl ExperimentConfig {
    /// Eight log-spaced sizes in `[10^3, 3 * 10^4]`, ten replications,
    /// three fitted components.
    pub fn desk(scenario: Preset, gate: GateTransform) -> Self {
        ExperimentConfig {
            scenario,
            gate,
            k_list: vec![3],
            n_grid: log_grid(1_000, 30_000, 8),
            replications: 10,
            master_seed: 20_240_601,
            em: FitConfig::new(3),
            sigma: 0.1,
            loss_order: 2.0,
            out_dir: None,
        }
    }

    /// 200 sizes in `[10^4, 10^5]`, 40 replications, `k` in `{3, 4}`.
    pub fn full_scale(scenario: Preset, gate: GateTransform) -> Self {
        ExperimentConfig {
            k_list: vec![3, 4],
            n_grid: log_grid(10_000, 100_000, 200),
            replications: 40,
            ..ExperimentConfig::desk(scenario, gate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::contract("replications must be at least 1"));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(Error::contract("n_grid must be positive and strictly increasing"));
        }
        if self.k_list.is_empty() {
            return Err(Error::contract("k_list must not be empty"));
        }
        if !(self.loss_order >= 1.0) {
            return Err(Error::contract("loss order must be at least 1"));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        synth::preset(self.scenario, self.gate)
    }
}

/// Outcome of one replicated fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub n: usize,
    pub n_index: usize,
    pub replication: usize,
    pub loss: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    /// Successful replications behind the mean.
    pub replications: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub scenario: Preset,
    pub gate: GateTransform,
    pub k: usize,
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub replications: Vec<Replication>,
}

/// Ordinary least squares of `log value` on `log n`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 2 {
        return Err(Error::contract("log-log fit needs at least two points"));
    }
    if let Some(&(n, v)) = points.iter().find(|&&(n, v)| !(n > 0.0 && v > 0.0)) {
        return Err(Error::contract(format!("log-log fit needs positive data, got ({n}, {v})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("log-log fit needs at least two distinct n"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Aggregates replications by `n` (in grid order) and fits the slope over
/// points with at least one successful replication.
pub fn aggregate(cfg: &ExperimentConfig, k: usize, replications: Vec<Replication>) -> Result<RateReport> {
    let mut points = Vec::with_capacity(cfg.n_grid.len());
    for (idx, &n) in cfg.n_grid.iter().enumerate() {
        let losses: Vec<f64> = replications
            .iter()
            .filter(|r| r.n_index == idx)
            .filter_map(|r| r.loss)
            .collect();
        let failed = replications.iter().filter(|r| r.n_index == idx && r.loss.is_none()).count();
        let (mean_loss, std_loss) = if losses.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&losses) };
        points.push(RatePoint {
            n,
            mean_loss,
            std_loss,
            replications: losses.len(),
            failed,
        });
    }
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.replications > 0)
        .map(|p| (p.n as f64, p.mean_loss))
        .collect();
    if usable.len() < 3 {
        return Err(Error::Range(format!(
            "only {} grid points have successful fits; need 3 for a slope",
            usable.len()
        )));
    }
    let fit = fit_loglog_slope(&usable)?;
    Ok(RateReport {
        scenario: cfg.scenario,
        gate: cfg.gate,
        k,
        points,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        replications,
    })
}

fn run_replication(cfg: &ExperimentConfig, scenario: &Scenario, k: usize, n_index: usize, rep: usize) -> Replication {
    let n = cfg.n_grid[n_index];
    let data_seed = derive_seed(cfg.master_seed, &[n_index as u64, rep as u64, ROLE_DATA]);
    let init_seed = derive_seed(cfg.master_seed, &[n_index as u64, rep as u64, ROLE_INIT, k as u64]);
    let mut em_cfg = cfg.em.clone();
    em_cfg.k = k;
    let outcome = (|| -> Result<(f64, usize, bool)> {
        let data = synth::sample(scenario, n, data_seed)?;
        let init = em::init_near_truth(&scenario.truth, k, init_seed, cfg.sigma)?;
        let report = em::fit(&data, &em_cfg, scenario.gate_transform, &init)?;
        let loss = aligned_voronoi_loss(&report.measure, &scenario.truth, cfg.loss_order)?;
        if !loss.is_finite() {
            return Err(Error::Range("Voronoi loss is not finite".into()));
        }
        Ok((loss, report.iterations, report.converged))
    })();
    match outcome {
        Ok((loss, iterations, converged)) => Replication {
            n,
            n_index,
            replication: rep,
            loss: Some(loss),
            iterations,
            converged,
            error: None,
        },
        Err(e) => Replication {
            n,
            n_index,
            replication: rep,
            loss: None,
            iterations: 0,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every `(k, n, replication)` fit and returns one report per `k`.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<Vec<RateReport>> {
    cfg.validate()?;
    let scenario = cfg.scenario();
    let mut reports = Vec::with_capacity(cfg.k_list.len());
    for &k in &cfg.k_list {
        let jobs: Vec<(usize, usize)> = (0..cfg.n_grid.len())
            .flat_map(|i| (0..cfg.replications).map(move |r| (i, r)))
            .collect();
        let reps: Vec<Replication> = jobs
            .par_iter()
            .map(|&(i, r)| run_replication(cfg, &scenario, k, i, r))
            .collect();
        for rep in reps.iter().filter(|r| r.error.is_some()) {
            log::warn!(
                "k={k} n={} rep={} failed: {}",
                rep.n,
                rep.replication,
                rep.error.as_deref().unwrap_or_default()
            );
        }
        let report = aggregate(cfg, k, reps)?;
        if let Some(dir) = &cfg.out_dir {
            emit_rate_outputs(&report, dir)?;
        }
        reports.push(report);
    }
    if let Some(dir) = &cfg.out_dir {
        write_metadata(cfg, &reports, dir)?;
    }
    Ok(reports)
}

#[derive(Serialize)]
struct RateMetadata<'a> {
    config: &'a ExperimentConfig,
    grid: &'static str,
    slopes: Vec<(usize, f64, f64)>,
}

/// Config echo and fitted slopes as `rate_<scenario>_<gate>_meta.json`.
fn write_metadata(cfg: &ExperimentConfig, reports: &[RateReport], dir: &std::path::Path) -> Result<()> {
    let meta = RateMetadata {
        config: cfg,
        grid: "uniform in log n; the same grid is used for every scenario and k",
        slopes: reports.iter().map(|r| (r.k, r.slope, r.r_squared)).collect(),
    };
    let path = dir.join(format!("rate_{}_{}_meta.json", cfg.scenario, cfg.gate));
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Writes `rate_<scenario>_<gate>_k<k>.{csv,svg}` plus the per-replication
/// CSV into `dir`.
pub fn emit_rate_outputs(report: &RateReport, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("rate_{}_{}_k{}", report.scenario, report.gate, report.k);
    write_rate_csv(&report.points, &dir.join(format!("{stem}.csv")))?;
    write_replications_csv(&report.replications, &dir.join(format!("{stem}_replications.csv")))?;
    plot::write_rate_svg(report, &dir.join(format!("{stem}.svg")))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllComparisonConfig {
    pub scenario: Preset,
    pub gates: Vec<GateTransform>,
    pub n: usize,
    pub k: usize,
    pub iterations: usize,
    pub sigma: f64,
    pub seed: u64,
    pub newton: em::NewtonConfig,
}

impl Default for NllComparisonConfig {
    fn default() -> Self {
        NllComparisonConfig {
            scenario: Preset::Regime2,
            gates: vec![
                GateTransform::Identity,
                GateTransform::Sin,
                GateTransform::Cos,
                GateTransform::LogAbs,
            ],
            n: 10_000,
            k: 3,
            iterations: 200,
            sigma: 0.1,
            seed: 20_240_601,
            newton: em::NewtonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllTrajectory {
    pub gate: GateTransform,
    pub nll: Vec<f64>,
}

impl NllTrajectory {
    /// `nll[0] - nll[last]`.
    pub fn total_drop(&self) -> f64 {
        self.nll.first().copied().unwrap_or(0.0) - self.nll.last().copied().unwrap_or(0.0)
    }
}

/// Fits every gate for exactly `iterations` EM steps on one dataset drawn
/// from the scenario under the standard gate, all from the same
/// near-truth initialization.
pub fn run_nll_comparison(cfg: &NllComparisonConfig) -> Result<Vec<NllTrajectory>> {
    if cfg.gates.is_empty() {
        return Err(Error::contract("NLL comparison needs at least one gate"));
    }
    let scenario = synth::preset(cfg.scenario, GateTransform::Identity);
    let data = synth::sample(&scenario, cfg.n, derive_seed(cfg.seed, &[ROLE_DATA]))?;
    let init = em::init_near_truth(&scenario.truth, cfg.k, derive_seed(cfg.seed, &[ROLE_INIT]), cfg.sigma)?;
    let mut em_cfg = FitConfig::new(cfg.k);
    em_cfg.max_iter = cfg.iterations;
    em_cfg.fixed_iterations = true;
    em_cfg.newton = cfg.newton;
    cfg.gates
        .par_iter()
        .map(|&gate| {
            let report = em::fit(&data, &em_cfg, gate, &init)?;
            Ok(NllTrajectory {
                gate,
                nll: report.nll_trajectory,
            })
        })
        .collect()
}
