//! Command-line front end: `moe-lab synth|fit|rate|nll-compare|check`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use moe_lab::em::{self, FitConfig, InitSpec};
use moe_lab::gates::independence_check;
use moe_lab::harness::{self, plot, ExperimentConfig, NllComparisonConfig};
use moe_lab::numeric::derive_seed;
use moe_lab::theory::{self, adversarial_params, build_adversarial, collapsed_first, dr_closed_form};
use moe_lab::{metrics, synth, Dataset, Error, GateTransform, Preset, Result};

#[derive(Parser)]
#[command(name = "moe-lab", version, about = "Softmax-gated multinomial logistic mixtures of experts")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 20_240_601)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for experiment outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// JSON config with the same field names as the command's config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a preset scenario.
    Synth(SynthArgs),
    /// Fit a mixture to a dataset with EM.
    Fit(FitArgs),
    /// Replicated fits over a sample-size grid with a log-log slope.
    Rate(RateArgs),
    /// NLL trajectories of several gate transforms on one dataset.
    NllCompare(NllArgs),
    /// Structural diagnostics.
    Check(CheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "regime1")]
    scenario: Preset,
    #[arg(long, default_value = "identity")]
    gate: GateTransform,
    #[arg(long)]
    n: usize,
    /// Output CSV; the scenario is written next to it as `<stem>.scenario.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "identity")]
    gate: GateTransform,
    /// Initialize near this scenario's truth; random initialization otherwise.
    #[arg(long)]
    init_scenario: Option<Preset>,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Spread of the random initialization.
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
    /// Number of response classes (default: from the init scenario, else 2).
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Desk,
    Full,
}

#[derive(Args)]
struct RateArgs {
    #[arg(long, default_value = "regime1")]
    scenario: Preset,
    #[arg(long, default_value = "identity")]
    gate: GateTransform,
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    /// Fitted component counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    replications: Option<usize>,
    /// Explicit sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
}

#[derive(Args)]
struct NllArgs {
    #[arg(long)]
    scenario: Option<Preset>,
    /// Gate transforms, comma separated.
    #[arg(long, value_delimiter = ',')]
    gates: Option<Vec<GateTransform>>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum What {
    Pde,
    Regime,
    Adversarial,
    Independence,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, value_enum)]
    what: What,
    #[arg(long, default_value = "regime2")]
    scenario: Preset,
    #[arg(long, default_value = "identity")]
    gate: GateTransform,
    /// Voronoi loss order for the adversarial check.
    #[arg(long, default_value_t = 2.0)]
    r: f64,
    /// Report path (default: `<out-dir>/check_<what>.json`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("moe-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Contract(format!("cannot configure thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Synth(a) => synth_cmd(&cli, a),
        Command::Fit(a) => fit_cmd(&cli, a),
        Command::Rate(a) => rate_cmd(&cli, a),
        Command::NllCompare(a) => nll_cmd(&cli, a),
        Command::Check(a) => check_cmd(&cli, a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(io_err(path))
}

fn synth_cmd(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let scenario = synth::preset(a.scenario, a.gate);
    let data = synth::sample(&scenario, a.n, cli.seed)?;
    data.write_csv(&a.out)?;
    let sidecar = a.out.with_extension("scenario.json");
    write_json(&scenario, &sidecar)?;
    println!("wrote {} rows to {} ({})", data.len(), a.out.display(), sidecar.display());
    Ok(())
}

fn fit_cmd(cli: &Cli, a: &FitArgs) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => load_config::<FitConfig>(path)?,
        None => FitConfig::new(a.k),
    };
    cfg.k = a.k;
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    if let Some(t) = a.tol {
        cfg.tol = t;
    }
    let scenario = a.init_scenario.map(|p| synth::preset(p, a.gate));
    let classes = a.classes.or(scenario.as_ref().map(|s| s.truth.classes)).unwrap_or(2);
    let data = Dataset::read_csv(&a.data, classes)?;
    let init_spec = match &scenario {
        Some(s) => InitSpec::NearTruth {
            sigma: a.sigma,
            truth: s.truth.clone(),
        },
        None => InitSpec::Random { scale: a.init_scale },
    };
    let init = init_spec.build(cfg.k, data.d, classes, a.gate, cli.seed)?;
    let report = em::fit(&data, &cfg, a.gate, &init)?;
    let out = json!({
        "measure": report.measure,
        "nll_trajectory": report.nll_trajectory,
        "iterations": report.iterations,
        "converged": report.converged,
        "mstep_fallbacks": report.mstep_fallbacks,
        "config": {
            "data": a.data,
            "gate": a.gate,
            "init_scenario": a.init_scenario,
            "sigma": a.sigma,
            "seed": cli.seed,
            "fit": cfg,
        },
    });
    write_json(&out, &a.out)?;
    let nll = report.nll_trajectory.last().copied().unwrap_or(f64::NAN);
    println!(
        "{} iterations (converged: {}), final NLL {nll:.6}; wrote {}",
        report.iterations,
        report.converged,
        a.out.display()
    );
    Ok(())
}

fn rate_cmd(cli: &Cli, a: &RateArgs) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => load_config::<ExperimentConfig>(path)?,
        None => {
            let mut cfg = match a.scale {
                Scale::Desk => ExperimentConfig::desk(a.scenario, a.gate),
                Scale::Full => ExperimentConfig::full_scale(a.scenario, a.gate),
            };
            cfg.master_seed = cli.seed;
            cfg
        }
    };
    if let Some(k) = &a.k {
        cfg.k_list = k.clone();
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(grid) = &a.n_grid {
        cfg.n_grid = grid.clone();
    }
    cfg.out_dir = Some(cli.out_dir.clone());
    for report in harness::run_rate_experiment(&cfg)? {
        let failed: usize = report.points.iter().map(|p| p.failed).sum();
        println!(
            "{} / {} / k={}: slope {:.4} (r^2 {:.3}), {failed} failed replications",
            report.scenario, report.gate, report.k, report.slope, report.r_squared
        );
    }
    println!("outputs in {}", cli.out_dir.display());
    Ok(())
}

fn nll_cmd(cli: &Cli, a: &NllArgs) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => load_config::<NllComparisonConfig>(path)?,
        None => NllComparisonConfig {
            seed: cli.seed,
            ..NllComparisonConfig::default()
        },
    };
    if let Some(s) = a.scenario {
        cfg.scenario = s;
    }
    if let Some(g) = &a.gates {
        cfg.gates = g.clone();
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(it) = a.iterations {
        cfg.iterations = it;
    }
    let trajectories = harness::run_nll_comparison(&cfg)?;
    std::fs::create_dir_all(&cli.out_dir).map_err(io_err(&cli.out_dir))?;
    let csv = cli.out_dir.join("nll_comparison.csv");
    harness::write_nll_csv(&trajectories, &csv)?;
    plot::write_nll_svg(&trajectories, &cli.out_dir.join("nll_comparison.svg"))?;
    for t in &trajectories {
        println!(
            "{:>9}: NLL {:.4} -> {:.4} (drop {:.4})",
            t.gate.to_string(),
            t.nll[0],
            t.nll[t.nll.len() - 1],
            t.total_drop()
        );
    }
    println!("wrote {}", csv.display());
    Ok(())
}

const PDE_TOL: f64 = 1e-8;
const PDE_SAMPLES: usize = 100;
const INDEPENDENCE_TOL: f64 = 1e-8;
const ADVERSARIAL_GRID: [u64; 3] = [100, 1_000, 10_000];

fn check_cmd(cli: &Cli, a: &CheckArgs) -> Result<()> {
    let scenario = synth::preset(a.scenario, a.gate);
    let truth = &scenario.truth;
    let body = match a.what {
        What::Regime => json!({
            "regime": theory::classify_regime(truth, synth::REGIME_TOL),
        }),
        What::Pde => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let xs: Vec<Vec<f64>> = (0..PDE_SAMPLES).map(|_| scenario.covariate_box.sample(&mut rng)).collect();
            let per_component: Vec<_> = truth
                .components
                .iter()
                .enumerate()
                .map(|(i, c)| match theory::pde_interaction_check(c, &xs, PDE_TOL) {
                    Ok(rep) => json!({ "component": i + 1, "report": rep }),
                    Err(e) => json!({ "component": i + 1, "error": e.to_string() }),
                })
                .collect();
            json!({ "tol": PDE_TOL, "samples": PDE_SAMPLES, "components": per_component })
        }
        What::Adversarial => {
            let series = theory::collapse_ratio_series(
                truth,
                &scenario.covariate_box,
                &ADVERSARIAL_GRID,
                a.r,
                metrics::DEFAULT_MC_SAMPLES,
                derive_seed(cli.seed, &[1]),
            )?;
            let reordered = collapsed_first(truth, synth::REGIME_TOL)?;
            let closed: Vec<_> = ADVERSARIAL_GRID
                .iter()
                .map(|&n| -> Result<_> {
                    let p = adversarial_params(&reordered, &scenario.covariate_box, n)?;
                    let g_n = build_adversarial(&reordered, &p)?;
                    Ok(json!({
                        "n": n,
                        "params": p,
                        "closed_form": dr_closed_form(&reordered, &p, a.r)?,
                        "voronoi_loss": metrics::voronoi_loss(&g_n, &reordered, a.r)?,
                    }))
                })
                .collect::<Result<_>>()?;
            json!({ "r": a.r, "series": series, "closed_form": closed })
        }
        What::Independence => {
            let d = scenario.covariate_box.dim();
            let m = moe_lab::gates::monomials(d).len();
            let rep = independence_check(a.gate, &scenario.covariate_box, 10 * m, INDEPENDENCE_TOL, cli.seed)?;
            json!(rep)
        }
    };
    let report = json!({
        "what": a.what,
        "scenario": a.scenario,
        "gate": a.gate,
        "seed": cli.seed,
        "result": body,
    });
    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join(format!("check_{}.json", what_tag(a.what))));
    write_json(&report, &out)?;
    println!("{}", serde_json::to_string_pretty(&report["result"])?);
    Ok(())
}

fn what_tag(w: What) -> &'static str {
    match w {
        What::Pde => "pde",
        What::Regime => "regime",
        What::Adversarial => "adversarial",
        What::Independence => "independence",
    }
}
