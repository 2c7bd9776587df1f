//! `nbmp` — sparse recovery and Monte Carlo benchmarks from the command line.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nbmp_core::bench::{flag_value, load_config, run_experiment, write_csv, ExperimentConfig};
use nbmp_core::estimator::{recover, RecoverOptions};
use nbmp_core::search::SearchConfig;
use nbmp_core::{CMatrix, Error, C64};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "nbmp", version, about = "Bayesian matching pursuit recovery and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write its CSV table.
    Bench {
        #[command(subcommand)]
        kind: BenchKind,
    },
    /// Image experiments.
    Image {
        #[command(subcommand)]
        action: ImageAction,
    },
    /// Recover one instance read from a JSON file.
    Recover(RecoverArgs),
}

#[derive(Subcommand)]
enum BenchKind {
    /// NMSE against SNR.
    Snr(ConfigArgs),
    /// NMSE against the sparsity rate.
    P(ConfigArgs),
    /// Sensitivity to the initial sparsity estimate.
    Robust(ConfigArgs),
}

#[derive(Subcommand)]
enum ImageAction {
    /// Multiscale recovery of a PGM (or synthetic) image.
    Recover(ConfigArgs),
}

/// Every experiment field can be set here; flags override the config file.
/// Values are JSON (`--p '[0.01,0.02]'`), comma lists (`--snr_db 0,10,inf`)
/// or plain strings.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "M")]
    m: Option<String>,
    #[arg(long = "N")]
    n: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long = "snr_db", alias = "snr-db")]
    snr_db: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Greedy passes D.
    #[arg(long, alias = "D")]
    passes: Option<String>,
    #[arg(long = "tail_prob", alias = "tail-prob")]
    tail_prob: Option<String>,
    #[arg(long = "support_budget", alias = "support-budget")]
    support_budget: Option<String>,
    #[arg(long = "p_init", alias = "p-init")]
    p_init: Option<String>,
    #[arg(long = "max_iter", alias = "max-iter")]
    max_iter: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Signal model as JSON, e.g. '{"kind":"gaussian_iid","mu":10,"var":2}'.
    #[arg(long)]
    signal: Option<String>,
    /// gaussian | orthonormal
    #[arg(long)]
    matrix: Option<String>,
    #[arg(long)]
    omp: Option<String>,
    #[arg(long)]
    timing: Option<String>,
    /// CSV destination (stdout when absent).
    #[arg(long)]
    output: Option<String>,
    #[arg(long = "image_side", alias = "image-side")]
    image_side: Option<String>,
    #[arg(long = "m_per_band", alias = "m-per-band")]
    m_per_band: Option<String>,
    #[arg(long = "keep_fraction", alias = "keep-fraction")]
    keep_fraction: Option<String>,
    /// Source PGM for image experiments.
    #[arg(long)]
    input: Option<String>,
    /// Where to write the reconstructed PGM.
    #[arg(long = "output_image", alias = "output-image")]
    output_image: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self, experiment: &str) -> Map<String, Value> {
        let mut map = Map::new();
        map.insert("experiment".into(), Value::String(experiment.into()));
        let numeric = [
            ("M", &self.m),
            ("N", &self.n),
            ("p", &self.p),
            ("snr_db", &self.snr_db),
            ("trials", &self.trials),
            ("passes", &self.passes),
            ("tail_prob", &self.tail_prob),
            ("support_budget", &self.support_budget),
            ("p_init", &self.p_init),
            ("max_iter", &self.max_iter),
            ("seed", &self.seed),
            ("signal", &self.signal),
            ("matrix", &self.matrix),
            ("omp", &self.omp),
            ("timing", &self.timing),
            ("image_side", &self.image_side),
            ("m_per_band", &self.m_per_band),
            ("keep_fraction", &self.keep_fraction),
        ];
        for (key, value) in numeric {
            if let Some(v) = value {
                map.insert(key.into(), flag_value(v));
            }
        }
        // paths are never reinterpreted as JSON
        for (key, value) in [("output", &self.output), ("input", &self.input), ("output_image", &self.output_image)] {
            if let Some(v) = value {
                map.insert(key.into(), Value::String(v.clone()));
            }
        }
        map
    }
}

#[derive(Args)]
struct RecoverArgs {
    /// JSON file with `phi` (rows of entries) and `y`; an entry is a number
    /// or a `[re, im]` pair.
    #[arg(long)]
    instance: PathBuf,
    /// Result destination (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Known sparsity rate; with --sigma2 skips hyperparameter estimation.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long = "p_init", alias = "p-init", default_value_t = 0.003)]
    p_init: f64,
    #[arg(long = "max_iter", alias = "max-iter", default_value_t = 10)]
    max_iter: usize,
    #[arg(long, alias = "D", default_value_t = 5)]
    passes: usize,
    #[arg(long = "support_budget", alias = "support-budget")]
    support_budget: Option<usize>,
    #[arg(long = "tail_prob", alias = "tail-prob", default_value_t = 1e-3)]
    tail_prob: f64,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Bench { kind } => {
            let (label, args) = match kind {
                BenchKind::Snr(a) => ("snr_sweep", a),
                BenchKind::P(a) => ("p_sweep", a),
                BenchKind::Robust(a) => ("hyper_robustness", a),
            };
            run_bench(label, &args)
        }
        Command::Image {
            action: ImageAction::Recover(mut args),
        } => {
            if args.trials.is_none() {
                args.trials = Some("1".into());
            }
            run_bench("image", &args)
        }
        Command::Recover(args) => run_recover(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run_bench(experiment: &str, args: &ConfigArgs) -> Result<(), Failure> {
    let config: ExperimentConfig = load_config(args.config.as_deref(), &args.overrides(experiment))?;
    let report = run_experiment(&config)?;
    for (i, agree) in report.p_init_agreement.iter().enumerate() {
        eprintln!("grid point {i}: MAP support unchanged by p_init in {:.1}% of trials", agree * 100.0);
    }
    match &config.output {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            write_csv(&report.rows, file)?;
        }
        None => write_csv(&report.rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn entry(v: &Value) -> Option<C64> {
    match v {
        Value::Number(n) => n.as_f64().map(|re| C64::new(re, 0.0)),
        Value::Array(pair) if pair.len() == 2 => Some(C64::new(pair[0].as_f64()?, pair[1].as_f64()?)),
        _ => None,
    }
}

fn entries(v: &Value, what: &str) -> Result<Vec<C64>, Failure> {
    v.as_array()
        .ok_or_else(|| Failure::Config(format!("{what} must be an array")))?
        .iter()
        .enumerate()
        .map(|(i, e)| entry(e).ok_or_else(|| Failure::Config(format!("{what}[{i}] is not a number or [re, im] pair"))))
        .collect()
}

fn read_instance(path: &PathBuf) -> Result<(CMatrix, Vec<C64>), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let rows = doc
        .get("phi")
        .and_then(Value::as_array)
        .ok_or_else(|| Failure::Config("instance needs a `phi` array of rows".into()))?;
    let mut data = Vec::new();
    let mut cols = None;
    for (i, row) in rows.iter().enumerate() {
        let row = entries(row, &format!("phi[{i}]"))?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(Failure::Config(format!("phi[{i}] has {} entries, expected {}", row.len(), cols.unwrap())));
        }
        data.extend(row);
    }
    let phi = CMatrix::from_row_major(rows.len(), cols.unwrap_or(0), &data)?;
    let y = entries(doc.get("y").ok_or_else(|| Failure::Config("instance needs `y`".into()))?, "y")?;
    Ok((phi, y))
}

fn run_recover(args: &RecoverArgs) -> Result<(), Failure> {
    let (phi, y) = read_instance(&args.instance)?;
    let search = SearchConfig {
        support_budget: args.support_budget,
        passes: args.passes,
        tail_prob: args.tail_prob,
        ..Default::default()
    };
    search.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let options = RecoverOptions {
        p: args.p,
        sigma2: args.sigma2,
        p_init: args.p_init,
        max_iter: args.max_iter,
        search,
    };
    let result = recover(&phi, &y, &options)?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| Failure::Runtime(e.to_string()))?;
    match &args.output {
        Some(path) => fs::write(path, json + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{json}").map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}
