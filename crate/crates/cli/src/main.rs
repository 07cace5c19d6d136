use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use lowrank::compress::{compress_model, evaluate, CalibrationPolicy, CompressParams, CompressionMethod};
use lowrank::harness::{run, Scenario, ScenarioConfig};
use lowrank::linalg::io::load_matrix;
use lowrank::mlp::MlpModel;
use lowrank::recover::verify_scalar_lemmas;
use lowrank::Error;

/// Low-rank weight recovery experiments and data-driven MLP compression.
#[derive(Parser)]
#[command(name = "lowrank", version)]
struct Cli {
    /// Run the scenario described by a JSON config (fields override the
    /// scenario preset). Used alone or as the base for `simulate`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scaling sweep (thm1, thm2, thm3) or the compression study.
    Simulate(SimulateArgs),
    /// Compress a saved model using calibration inputs.
    Compress(CompressArgs),
    /// Output MSE between two models on the same inputs.
    Eval {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Numerically check the scalar inequalities behind the censored estimator.
    VerifyLemmas {
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 100_000)]
        grid: usize,
    },
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Comma-separated swept dimensions.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination, one row per trial.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d2: Option<usize>,
}

#[derive(clap::Args)]
struct CompressArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Calibration inputs, one sample per row.
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    ranks: Vec<usize>,
    #[arg(long, default_value = "closed_form")]
    method: CompressionMethod,
    /// Directory receiving model.json, its weights and report.json.
    #[arg(long)]
    out: PathBuf,
    /// Noise level for relu_mle.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Feed the original model's activations to every layer instead of the
    /// compressed prefix's.
    #[arg(long)]
    original_inputs: bool,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    message: String,
}

fn fail(kind: &str, message: impl ToString) -> ExitCode {
    let report = ErrorReport { kind, message: message.to_string() };
    eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
    ExitCode::FAILURE
}

fn print_json(value: &impl Serialize) -> lowrank::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_config(path: &Path) -> lowrank::Result<ScenarioConfig> {
    ScenarioConfig::from_json(&std::fs::read_to_string(path)?)
}

fn simulate(base: Option<ScenarioConfig>, args: SimulateArgs) -> lowrank::Result<()> {
    let mut cfg = match (base, args.scenario) {
        (Some(cfg), None) => cfg,
        (Some(cfg), Some(s)) if cfg.scenario == s => cfg,
        (Some(cfg), Some(s)) => {
            return Err(Error::InvalidArgument(format!(
                "--scenario {} conflicts with config scenario {}",
                s.name(),
                cfg.scenario.name()
            )))
        }
        (None, Some(s)) => ScenarioConfig::preset(s),
        (None, None) => return Err(Error::InvalidArgument("simulate needs --scenario or --config".into())),
    };
    if cfg.scenario == Scenario::Verify {
        return Err(Error::InvalidArgument("use verify-lemmas for the lemma checks".into()));
    }
    macro_rules! apply {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    apply!(sweep, trials, seed, r, sigma, beta, alpha, epsilon, d, d2);
    if args.out.is_some() {
        cfg.out = args.out;
    }
    cfg.validate()?;
    print_json(&run(&cfg)?)
}

fn compress(args: CompressArgs) -> lowrank::Result<()> {
    let model = MlpModel::load(&args.model)?;
    let x0 = load_matrix(&args.calib)?;
    let params = CompressParams {
        alpha: args.alpha,
        sigma: args.sigma,
        policy: if args.original_inputs {
            CalibrationPolicy::Original
        } else {
            CalibrationPolicy::Sequential
        },
        ..CompressParams::default()
    };
    let (compressed, report) = compress_model(&model, &x0, &args.ranks, args.method, &params)?;
    std::fs::create_dir_all(&args.out)?;
    compressed.save(args.out.join("model.json"))?;
    std::fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    print_json(&report)
}

fn dispatch(cli: Cli) -> lowrank::Result<bool> {
    let base = cli.config.as_deref().map(read_config).transpose()?;
    match cli.command {
        None => match base {
            Some(cfg) => {
                print_json(&run(&cfg)?)?;
            }
            None => return Err(Error::InvalidArgument("nothing to do: give a subcommand or --config".into())),
        },
        Some(Command::Simulate(args)) => simulate(base, args)?,
        Some(Command::Compress(args)) => compress(args)?,
        Some(Command::Eval { model_a, model_b, data }) => {
            let a = MlpModel::load(model_a)?;
            let b = MlpModel::load(model_b)?;
            print_json(&evaluate(&a, &b, &load_matrix(data)?)?)?;
        }
        Some(Command::VerifyLemmas { alpha, sigma, grid }) => {
            let report = verify_scalar_lemmas(alpha, sigma, grid)?;
            print_json(&report)?;
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim_end()),
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => fail("check_failed", "one or more lemma checks failed"),
        Err(e) => fail(e.kind(), e),
    }
}
