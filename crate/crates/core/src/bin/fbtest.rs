//! Command-line surface: run the bootstrap test on CSV panels, compute
//! p-values, run Monte Carlo simulations, and inspect factor structure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use factor_bootstrap::data_io::{lag_align, load_panel, read_csv, LoadOptions};
use factor_bootstrap::sim::{Design, SimulationConfig};
use factor_bootstrap::{
    estimate_num_factors, p_value, run_test, Error, KChoice, PValueResult, TestConfig, TestResult,
};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_DEGENERATE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "fbtest",
    about = "Bootstrap test of factor regression against factor-augmented sparse alternatives",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the level-alpha test on a CSV panel.
    Test(TestArgs),
    /// Compute the p-value over a grid of levels.
    Pvalue(PvalueArgs),
    /// Monte Carlo rejection-frequency tables.
    Simulate(SimulateArgs),
    /// Estimated number of factors and the Gram spectrum of a panel.
    Factors(FactorsArgs),
}

#[derive(Args)]
struct CommonTestArgs {
    /// Outcome CSV (one numeric column).
    #[arg(long)]
    y: PathBuf,
    /// Regressor CSV (all numeric columns).
    #[arg(long)]
    x: PathBuf,
    /// Optional extra-regressor CSV; switches to the observed-factor variant.
    #[arg(long)]
    w: Option<PathBuf>,
    /// Penalty grid size M.
    #[arg(long = "grid-size", default_value_t = 200)]
    grid_size: usize,
    /// Number of bootstrap draws L.
    #[arg(long = "bootstrap", default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, env = "FBTEST_SEED", default_value_t = 42)]
    seed: u64,
    /// Number of factors: "auto" (eigenvalue-ratio estimate) or an integer.
    #[arg(long, default_value = "auto")]
    k: String,
    /// Ceiling for the automatic factor-count estimate.
    #[arg(long = "k-max")]
    k_max: Option<usize>,
    /// Treat the first CSV column as date labels.
    #[arg(long = "date-column")]
    date_column: bool,
    /// Z-score every column before testing.
    #[arg(long)]
    standardize: bool,
    /// Pair y_{t+1} with x_t (one-lag forecasting layout).
    #[arg(long)]
    lag: bool,
    /// Worker-thread cap; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    common: CommonTestArgs,
    /// Test level in (0, 1).
    #[arg(long)]
    alpha: f64,
}

#[derive(Args)]
struct PvalueArgs {
    #[command(flatten)]
    common: CommonTestArgs,
    /// Alpha grid step; the grid is step, 2*step, ..., < 1.
    #[arg(long = "alpha-step", default_value_t = 0.001)]
    alpha_step: f64,
    /// Explicit comma-separated alpha grid (overrides --alpha-step).
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Dependency design 1, 2 or 3.
    #[arg(long)]
    design: Option<u32>,
    #[arg(long = "rho-f")]
    rho_f: Option<f64>,
    #[arg(long = "rho-u")]
    rho_u: Option<f64>,
    #[arg(long = "rho-e")]
    rho_e: Option<f64>,
    /// Signal strengths m, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    m: Vec<f64>,
    #[arg(long = "T", default_value_t = 100)]
    t: usize,
    #[arg(long = "p", default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    /// Test levels, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.01")]
    alpha: Vec<f64>,
    #[arg(long = "grid-size", default_value_t = 200)]
    grid_size: usize,
    #[arg(long = "bootstrap", default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, env = "FBTEST_SEED", default_value_t = 42)]
    seed: u64,
    /// Number of factors passed to the test: "auto" or an integer.
    #[arg(long, default_value = "auto")]
    k: String,
    #[arg(long = "k-max")]
    k_max: Option<usize>,
    /// Number of factors in the data-generating process.
    #[arg(long = "dgp-k", default_value_t = 2)]
    dgp_k: usize,
    /// Use the geometric-decay signal variant instead of the 2-sparse one.
    #[arg(long = "beta-decay")]
    beta_decay: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Write the CSV table here (a text table always goes to stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FactorsArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long = "k-max")]
    k_max: Option<usize>,
    #[arg(long = "date-column")]
    date_column: bool,
    #[arg(long)]
    standardize: bool,
    /// Write a plot-ready scree CSV here.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Machine-readable report shared by the test and pvalue subcommands.
#[derive(Serialize)]
struct Report {
    command: &'static str,
    statistic: f64,
    threshold: Option<f64>,
    m_hat: Option<usize>,
    alpha: Option<f64>,
    reject: Option<bool>,
    p_value: Option<f64>,
    k_hat: usize,
    grid_size: usize,
    num_bootstrap: usize,
    seed: u64,
}

impl Report {
    fn from_test(res: &TestResult) -> Self {
        Report {
            command: "test",
            statistic: res.statistic,
            threshold: Some(res.threshold),
            m_hat: res.m_hat,
            alpha: Some(res.alpha),
            reject: Some(res.reject),
            p_value: None,
            k_hat: res.k_hat,
            grid_size: res.grid_size,
            num_bootstrap: res.num_bootstrap,
            seed: res.seed,
        }
    }

    fn from_pvalue(res: &PValueResult) -> Self {
        Report {
            command: "pvalue",
            statistic: res.statistic,
            threshold: None,
            m_hat: None,
            alpha: None,
            reject: None,
            p_value: Some(res.p_value),
            k_hat: res.k_hat,
            grid_size: res.grid_size,
            num_bootstrap: res.num_bootstrap,
            seed: res.seed,
        }
    }
}

fn parse_k(k: &str) -> Result<KChoice, String> {
    if k == "auto" {
        return Ok(KChoice::Auto { k_max: None });
    }
    k.parse::<usize>()
        .map(KChoice::Fixed)
        .map_err(|_| format!("--k must be \"auto\" or a nonnegative integer, got {k:?}"))
}

fn install_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Best effort; a second global pool build is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn load_data(common: &CommonTestArgs) -> Result<factor_bootstrap::PanelData, Error> {
    let options = LoadOptions {
        date_column: common.date_column,
        standardize: common.standardize,
    };
    let data = load_panel(&common.y, &common.x, common.w.as_deref(), options)?;
    if common.lag {
        lag_align(data.y(), data.x(), data.w())
    } else {
        Ok(data)
    }
}

fn test_config(common: &CommonTestArgs) -> Result<TestConfig, String> {
    let k = match parse_k(&common.k)? {
        KChoice::Auto { .. } => KChoice::Auto {
            k_max: common.k_max,
        },
        fixed => fixed,
    };
    Ok(TestConfig {
        grid_size: common.grid_size,
        num_bootstrap: common.bootstrap,
        k,
        seed: common.seed,
    })
}

fn emit(output: Option<&PathBuf>, text: &str) -> std::io::Result<()> {
    match output {
        Some(path) => std::fs::write(path, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn error_exit(err: &Error) -> u8 {
    match err {
        Error::Degenerate(_) => EXIT_DEGENERATE,
        _ => EXIT_USAGE,
    }
}

fn cmd_test(args: &TestArgs) -> u8 {
    install_threads(args.common.threads);
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        eprintln!("error: --alpha must be in (0, 1), got {}", args.alpha);
        return EXIT_USAGE;
    }
    let cfg = match test_config(&args.common) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let data = match load_data(&args.common) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return error_exit(&e);
        }
    };
    match run_test(&data, args.alpha, &cfg) {
        Ok(res) => {
            let report = serde_json::to_string_pretty(&Report::from_test(&res)).unwrap();
            if emit(args.common.output.as_ref(), &report).is_err() {
                return EXIT_USAGE;
            }
            eprintln!(
                "H0 (no sparse signal): {} at level {} (statistic {:.6}, threshold {:.6}, K_hat {})",
                if res.reject { "REJECTED" } else { "not rejected" },
                res.alpha,
                res.statistic,
                res.threshold,
                res.k_hat
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            error_exit(&e)
        }
    }
}

fn cmd_pvalue(args: &PvalueArgs) -> u8 {
    install_threads(args.common.threads);
    let cfg = match test_config(&args.common) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let grid: Vec<f64> = match &args.alphas {
        Some(list) => list.clone(),
        None => {
            if !(args.alpha_step > 0.0 && args.alpha_step < 1.0) {
                eprintln!("error: --alpha-step must be in (0, 1)");
                return EXIT_USAGE;
            }
            let mut g = Vec::new();
            let mut i = 1u64;
            loop {
                let a = i as f64 * args.alpha_step;
                if a >= 1.0 {
                    break;
                }
                g.push(a);
                i += 1;
            }
            g
        }
    };
    let data = match load_data(&args.common) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return error_exit(&e);
        }
    };
    match p_value(&data, &grid, &cfg) {
        Ok(res) => {
            let report = serde_json::to_string_pretty(&Report::from_pvalue(&res)).unwrap();
            if emit(args.common.output.as_ref(), &report).is_err() {
                return EXIT_USAGE;
            }
            eprintln!("p-value: {:.3} (statistic {:.6}, K_hat {})", res.p_value, res.statistic, res.k_hat);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            error_exit(&e)
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> u8 {
    install_threads(args.threads);
    let design = match (args.design, args.rho_f, args.rho_u, args.rho_e) {
        (Some(1), None, None, None) => Design::One,
        (Some(2), None, None, None) => Design::Two,
        (Some(3), None, None, None) => Design::Three,
        (Some(d), ..) => {
            eprintln!("error: --design must be 1, 2 or 3, got {d}");
            return EXIT_USAGE;
        }
        (None, rho_f, rho_u, rho_e) => Design::Custom {
            rho_f: rho_f.unwrap_or(0.0),
            rho_u: rho_u.unwrap_or(0.0),
            rho_e: rho_e.unwrap_or(0.0),
        },
    };
    let k_fixed = match parse_k(&args.k) {
        Ok(KChoice::Fixed(k)) => Some(k),
        Ok(KChoice::Auto { .. }) => None,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let mut tables = Vec::new();
    for &m in &args.m {
        let mut cfg = SimulationConfig::new(args.t, args.p, design, m);
        cfg.k = args.dgp_k;
        cfg.gamma_star = vec![0.5; args.dgp_k];
        cfg.reps = args.reps;
        cfg.seed = args.seed;
        cfg.alphas = args.alpha.clone();
        cfg.grid_size = args.grid_size;
        cfg.num_bootstrap = args.bootstrap;
        cfg.k_fixed = k_fixed;
        cfg.k_max = args.k_max;
        if args.beta_decay {
            cfg.signal_shape = factor_bootstrap::SignalShape::GeometricDecay;
        }
        match factor_bootstrap::run_monte_carlo(&cfg) {
            Ok(t) => tables.push(t),
            Err(e) => {
                eprintln!("error: {e}");
                return error_exit(&e);
            }
        }
    }
    let table = factor_bootstrap::RejectionTable::merge(tables);
    print!("{}", table.to_text());
    if let Some(path) = &args.output {
        if std::fs::write(path, table.to_csv_string()).is_err() {
            eprintln!("error: cannot write {}", path.display());
            return EXIT_USAGE;
        }
    }
    EXIT_OK
}

fn cmd_factors(args: &FactorsArgs) -> u8 {
    let mut panel = match read_csv(&args.x, args.date_column) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return error_exit(&e);
        }
    };
    if args.standardize {
        if let Err(e) = factor_bootstrap::data_io::standardize(&mut panel) {
            eprintln!("error: {e}");
            return error_exit(&e);
        }
    }
    let (t, p) = panel.data.shape();
    let k_max = args.k_max.unwrap_or_else(|| 8.min(t.min(p).saturating_sub(1)));
    let k_hat = match estimate_num_factors(&panel.data, k_max) {
        Ok(k) => k,
        Err(e) => {
            eprintln!("error: {e}");
            return error_exit(&e);
        }
    };
    let est = match factor_bootstrap::estimate_factors(&panel.data, k_hat) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return error_exit(&e);
        }
    };
    // Spectrum of X X' / (T p), as used by the ratio estimator.
    let scale = (t * p) as f64;
    let eigs: Vec<f64> = est.eigenvalues.iter().map(|v| v / scale).collect();
    println!("K_hat: {k_hat}");
    println!("leading eigenvalues of XX'/(Tp):");
    for (i, v) in eigs.iter().take(k_max + 1).enumerate() {
        print!("  mu_{} = {:.6e}", i + 1, v);
        if i < k_max && i + 1 < eigs.len() && eigs[i + 1] > 0.0 {
            print!("  ratio mu_{}/mu_{} = {:.4}", i + 1, i + 2, v / eigs[i + 1]);
        }
        println!();
    }
    if let Some(path) = &args.output {
        let mut out = String::from("k,eigenvalue,ratio\n");
        for (i, v) in eigs.iter().enumerate() {
            let ratio = if i + 1 < eigs.len() && eigs[i + 1] > 0.0 {
                format!("{:.6}", v / eigs[i + 1])
            } else {
                String::new()
            };
            out.push_str(&format!("{},{:.16e},{}\n", i + 1, v, ratio));
        }
        if std::fs::write(path, out).is_err() {
            eprintln!("error: cannot write {}", path.display());
            return EXIT_USAGE;
        }
    }
    EXIT_OK
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match &cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Pvalue(args) => cmd_pvalue(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Factors(args) => cmd_factors(args),
    };
    ExitCode::from(code)
}
