//! `lvsem` command line.
//!
//! Exit codes: 0 success, 1 usage or data error, 2 identification refusal,
//! 3 non-convergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use lvsem::{
    analyze, build_ram, export_dot, load_scores, parse_model, parse_theta, render_text,
    sample_scores, AnalysisOptions, FitOptions, Identification, IdentificationStatus, ModelSpec,
    SemError, TrueModel,
};

#[derive(Parser)]
#[command(
    name = "lvsem",
    version,
    about = "Fit latent-variable models to benchmark score tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a score table and report estimates and fit indices.
    Fit(FitArgs),
    /// Draw a synthetic score table from a model with known parameters.
    Simulate(SimulateArgs),
    /// Count parameters and moments and report the identification status.
    Identify(IdentifyArgs),
    /// Write the path diagram of a model as Graphviz DOT.
    Dot(IdentifyArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a labelled path diagram here.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Fix latent variances to 1 and free all loadings.
    #[arg(long)]
    std_lv: bool,
    /// z-score each column before computing the covariance.
    #[arg(long)]
    standardize: bool,
    /// Truncate CFI to [0, 1].
    #[arg(long)]
    clamp_cfi: bool,
    /// Extra jittered starting points.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    /// Seed for the jittered starts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Fit even when the model is under-identified.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Parameter values: one number per free parameter, or `label = value` lines.
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    std_lv: bool,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 1,
            error: e.into(),
        }
    }
}

fn read_model(path: &Path) -> Result<ModelSpec> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read model file {}", path.display()))?;
    parse_model(&text).with_context(|| format!("in model file {}", path.display()))
}

fn identification(std_lv: bool) -> Identification {
    if std_lv {
        Identification::StdLv
    } else {
        Identification::Marker
    }
}

fn cmd_fit(args: &FitArgs) -> Result<u8, Failure> {
    let spec = read_model(&args.model)?;
    let table = load_scores(&args.data)
        .with_context(|| format!("in score file {}", args.data.display()))?;
    let options = AnalysisOptions {
        identification: identification(args.std_lv),
        standardize: args.standardize,
        clamp_cfi: args.clamp_cfi,
        force: args.force,
        fit: FitOptions {
            max_iter: args.max_iter,
            tol: args.tol,
            restarts: args.restarts,
            seed: args.seed,
            ..FitOptions::default()
        },
    };
    let report = match analyze(&spec, &table, &options) {
        Ok(r) => r,
        Err(e @ SemError::UnderIdentified(_)) => {
            return Err(Failure {
                code: 2,
                error: anyhow::Error::new(e).context(format!(
                    "refusing to fit {} (use --force to fit anyway)",
                    args.model.display()
                )),
            })
        }
        Err(e @ SemError::MissingColumn(_)) => {
            return Err(anyhow::Error::new(e)
                .context(format!(
                    "score file {} does not cover model {}",
                    args.data.display(),
                    args.model.display()
                ))
                .into())
        }
        Err(e) => return Err(e.into()),
    };

    print!("{}", render_text(&report));
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report.to_json())?;
        fs::write(out, json + "\n").with_context(|| format!("cannot write {}", out.display()))?;
    }
    if let Some(dot) = &args.dot {
        let spec = spec.clone().with_identification(options.identification);
        fs::write(dot, export_dot(&spec, report.fit_result.as_ref()))
            .with_context(|| format!("cannot write {}", dot.display()))?;
    }
    if report.optimizer.converged {
        Ok(0)
    } else {
        eprintln!("error: optimizer did not converge");
        Ok(3)
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, Failure> {
    if args.n == 0 {
        return Err(anyhow!("--n must be at least 1").into());
    }
    let spec = read_model(&args.model)?;
    let ram = build_ram(&spec);
    let text = fs::read_to_string(&args.theta)
        .with_context(|| format!("cannot read theta file {}", args.theta.display()))?;
    let theta = parse_theta(&text, &ram)
        .with_context(|| format!("in theta file {}", args.theta.display()))?;
    let table = sample_scores(&TrueModel::new(&spec, theta, args.n, args.seed)?)?;
    let file = fs::File::create(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    table.write_csv(file)?;
    Ok(0)
}

fn cmd_identify(args: &IdentifyArgs) -> Result<u8, Failure> {
    let spec = read_model(&args.model)?.with_identification(identification(args.std_lv));
    let report = spec.validate_identification();
    println!("status: {:?}", report.status);
    println!("observed: {}", spec.observed.len());
    println!("latents: {}", spec.latents.len());
    println!("moments: {}", report.moments);
    println!("free parameters: {}", report.free_parameters);
    println!("df: {}", report.degrees_of_freedom);
    println!("free parameters in theta order:");
    for p in spec.parameters().iter().filter(|p| p.value.is_free()) {
        println!("  {}", p.label());
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(if report.status == IdentificationStatus::UnderIdentified {
        2
    } else {
        0
    })
}

fn cmd_dot(args: &IdentifyArgs) -> Result<u8, Failure> {
    let spec = read_model(&args.model)?.with_identification(identification(args.std_lv));
    print!("{}", export_dot(&spec, None));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Dot(a) => cmd_dot(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
