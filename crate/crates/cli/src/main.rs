//! Command-line front end: reads a JSON config, runs one workflow, and writes
//! its outputs plus a manifest into the output directory.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use urnlab::branching::{embedding_distribution_test, BranchingState};
use urnlab::config::{emit_config, validate_config, FieldError, RunConfig, Scope};
use urnlab::harness::{
    convergence_verdict, divergence_probe, fit_rate, limit_profile_with, nonhomogeneous_verdict, run_ensemble,
    verify_varpi, EnsembleSummary, Execution, Experiment, Verdict,
};
use urnlab::policies::ReplacementSpec;
use urnlab::seed::replication_rng;
use urnlab::urn::{run_trajectory, write_trajectory_csv, UrnState};

const EXIT_CONFIG: u8 = 64;
const EXIT_RUNTIME: u8 = 70;
/// Embedding reports pass when the chi-square p-value is at least this.
const EMBED_ALPHA: f64 = 0.01;

#[derive(Parser, Debug)]
#[command(name = "urnlab", version, about = "Generalized Friedman urn simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides `master_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for ensembles (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Spectral profile of the mean replacement matrix.
    Analyze,
    /// Urn trajectories at the checkpoints, one file per replication.
    Simulate,
    /// Chi-square comparison of the branching embedding with the exact urn law.
    Embed,
    /// Distance of Y_n/n and N_n/n to the limit set.
    VerifyConvergence,
    /// Limit law of the class weights of a reducible urn.
    VerifyVarpi,
    /// Log-log slope of the distance against the predicted rate.
    VerifyRate,
    /// Growth of Y_n/n for a policy with a possibly infinite mean.
    ProbeDivergence,
    /// Convergence under a drifting mean schedule.
    VerifyDrift,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
            Command::Embed => "embed",
            Command::VerifyConvergence => "verify-convergence",
            Command::VerifyVarpi => "verify-varpi",
            Command::VerifyRate => "verify-rate",
            Command::ProbeDivergence => "probe-divergence",
            Command::VerifyDrift => "verify-drift",
        }
    }

    fn scope(self) -> Scope {
        match self {
            Command::Analyze | Command::Embed => Scope::Policy,
            _ => Scope::Run,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

enum Failure {
    Config(Vec<FieldError>),
    Runtime(String),
}

impl From<urnlab::Error> for Failure {
    fn from(e: urnlab::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(format!("i/o: {e}"))
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Failure {
    Failure::Config(vec![FieldError { field: field.into(), message: message.into() }])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(verdict) => ExitCode::from(verdict.map_or(0, |v| v.exit_code() as u8)),
        Err(Failure::Config(errs)) => {
            for e in &errs {
                eprintln!("config error: {e}");
            }
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn load_config(cli: &Cli) -> Result<(PathBuf, RunConfig), Failure> {
    let path = cli.config.clone().ok_or_else(|| config_error("--config", "required"))?;
    let text = fs::read_to_string(&path).map_err(|e| config_error("--config", format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| config_error("<root>", e.to_string()))?;
    let mut cfg = validate_config(&value, cli.command.scope()).map_err(Failure::Config)?;
    if let (Some(seed), Some(exp)) = (cli.seed, cfg.experiment.as_mut()) {
        exp.master_seed = seed;
    }
    Ok((path, cfg))
}

fn run(cli: &Cli) -> Result<Option<Verdict>, Failure> {
    let (path, cfg) = load_config(cli)?;
    fs::create_dir_all(&cli.out)?;
    let seed = cli.seed.or(cfg.experiment.as_ref().map(|e| e.master_seed)).unwrap_or(0);
    let manifest = json!({
        "command": cli.command.name(),
        "config_path": path.display().to_string(),
        "output_dir": cli.out.display().to_string(),
        "master_seed": seed,
        "threads": cli.threads,
        "format": cli.format,
        "config": emit_config(&cfg),
    });
    write_json(&cli.out.join("manifest.json"), &manifest)?;
    log::info!("{} with seed {seed}", cli.command.name());

    let job = || dispatch(cli, &cfg, seed);
    let verdict = match cli.threads {
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?
            .install(job),
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            log::warn!("--threads ignored: built without the parallel feature");
            job()
        }
        None => job(),
    }?;
    if let Some(v) = verdict {
        println!("{}: {}", cli.command.name(), format!("{v:?}").to_lowercase());
    }
    Ok(verdict)
}

fn experiment(cfg: &RunConfig) -> Result<Experiment, Failure> {
    let exp = Experiment::new(cfg.experiment.clone().expect("run scope always has an experiment"))?;
    Ok(match &cfg.structure {
        Some(s) => exp.with_structure(s),
        None => exp,
    })
}

fn dispatch(cli: &Cli, cfg: &RunConfig, seed: u64) -> Result<Option<Verdict>, Failure> {
    let out = &cli.out;
    let fmt = cli.format;
    let exec = Execution::default();
    match cli.command {
        Command::Analyze => {
            analyze(cfg, out, fmt)?;
            Ok(None)
        }
        Command::Simulate => {
            simulate(cfg, out, fmt)?;
            Ok(None)
        }
        Command::Embed => embed(cfg, seed, out, fmt).map(Some),
        Command::VerifyConvergence => {
            let exp = experiment(cfg)?;
            exp.require_profile()?;
            let summary = run_ensemble(&exp, exec);
            write_summary(&summary, out, fmt)?;
            let report = convergence_verdict(&summary, cfg.options.tolerances);
            write_json(&out.join("report.json"), &report)?;
            Ok(Some(report.verdict))
        }
        Command::VerifyVarpi => {
            let exp = experiment(cfg)?;
            let profile = exp.require_profile()?.clone();
            let summary = run_ensemble(&exp, exec);
            write_summary(&summary, out, fmt)?;
            let report = verify_varpi(&summary, &profile, cfg.options.varpi_reference)?;
            write_json(&out.join("report.json"), &report)?;
            Ok(Some(report.verdict))
        }
        Command::VerifyRate => {
            let exp = experiment(cfg)?;
            let profile = exp.require_profile()?.clone();
            let summary = run_ensemble(&exp, exec);
            write_summary(&summary, out, fmt)?;
            let report = fit_rate(&summary, &profile)?;
            write_json(&out.join("report.json"), &report)?;
            Ok(Some(report.verdict))
        }
        Command::ProbeDivergence => {
            let report = divergence_probe(cfg.experiment.as_ref().expect("run scope"), exec)?;
            write_json(&out.join("report.json"), &report)?;
            if fmt.csv() {
                let mut w = create(&out.join("report.csv"))?;
                writeln!(w, "n,color,median_y_over_n")?;
                for (n, med) in report.points.iter().zip(&report.medians) {
                    for (k, x) in med.iter().enumerate() {
                        writeln!(w, "{n},{},{x:.16e}", k + 1)?;
                    }
                }
                w.flush()?;
            }
            Ok(Some(report.verdict))
        }
        Command::VerifyDrift => {
            let exp = experiment(cfg)?;
            let report = nonhomogeneous_verdict(&exp, exec, cfg.options.tolerances)?;
            write_json(&out.join("report.json"), &report)?;
            if fmt.csv() {
                let mut w = create(&out.join("report.csv"))?;
                writeln!(w, "n,dist_y,cesaro,weighted")?;
                for ((n, d), t) in report.distances.iter().zip(&report.trace) {
                    writeln!(w, "{n},{d:.16e},{:.16e},{:.16e}", t.cesaro, t.weighted)?;
                }
                w.flush()?;
            }
            Ok(Some(report.verdict))
        }
    }
}

fn analyze(cfg: &RunConfig, out: &Path, fmt: Format) -> Result<(), Failure> {
    let policy = ReplacementSpec::from_config(&cfg.policy)?;
    let nu_sec = cfg.experiment.as_ref().and_then(|e| e.nu_sec);
    let profile = limit_profile_with(&policy, cfg.structure.as_ref(), nu_sec)?;
    if fmt.json() {
        let mut v = serde_json::to_value(&profile).expect("serializable");
        v["finite_moments"] = serde_json::to_value(policy.analytic_finite_moments()).expect("serializable");
        write_json(&out.join("profile.json"), &v)?;
    }
    if fmt.csv() {
        let mut w = create(&out.join("profile.csv"))?;
        writeln!(w, "quantity,index,value")?;
        writeln!(w, "lambda_h,,{:.16e}", profile.lambda_h)?;
        match profile.rho {
            Some(r) => writeln!(w, "rho,,{r:.16e}")?,
            None => writeln!(w, "rho,,")?,
        }
        writeln!(w, "nu1,,{}", profile.nu1)?;
        writeln!(w, "nu_sec,,{}", profile.nu_sec)?;
        writeln!(w, "irreducible,,{}", profile.irreducible)?;
        for (j, v) in profile.v_basis.iter().enumerate() {
            for (k, x) in v.iter().enumerate() {
                writeln!(w, "v_{},{},{x:.16e}", j + 1, k + 1)?;
            }
        }
        for (j, u) in profile.u_basis.iter().enumerate() {
            for (k, x) in u.iter().enumerate() {
                writeln!(w, "u_{},{},{x:.16e}", j + 1, k + 1)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path, fmt: Format) -> Result<(), Failure> {
    let exp = experiment(cfg)?;
    let reps = exp.config.replications;
    for r in 0..reps {
        let rng = replication_rng(exp.config.master_seed, r);
        let mut state = UrnState::with_rng(exp.config.y0.clone(), exp.fallback_p.clone(), rng)?;
        let snaps =
            run_trajectory(&mut state, &exp.policy, exp.config.n_max, &exp.checkpoints, cfg.options.diagnostics)?;
        let stem = if reps == 1 { "trajectory".to_string() } else { format!("trajectory_{r:04}") };
        if fmt.csv() {
            let mut w = create(&out.join(format!("{stem}.csv")))?;
            write_trajectory_csv(&mut w, exp.dim(), &snaps)?;
            w.flush()?;
        }
        if fmt.json() {
            write_json(&out.join(format!("{stem}.json")), &snaps)?;
        }
    }
    Ok(())
}

fn embed(cfg: &RunConfig, seed: u64, out: &Path, fmt: Format) -> Result<Verdict, Failure> {
    let policy = ReplacementSpec::from_config(&cfg.policy)?;
    let start: Vec<u64> = match &cfg.experiment {
        None => vec![1; policy.dim()],
        Some(e) => {
            if e.y0.iter().any(|&x| !(x >= 0.0 && x.fract() == 0.0)) {
                return Err(config_error("Y0", "embedding needs nonnegative integer counts"));
            }
            e.y0.iter().map(|&x| x as u64).collect()
        }
    };
    let opts = cfg.options.embed;
    let report = embedding_distribution_test(&policy, &BranchingState::unit(start), opts.n, opts.reps, seed)?;
    let verdict = Verdict::from_bool(report.chi_square.p_value >= EMBED_ALPHA);
    if fmt.json() {
        let mut v = serde_json::to_value(&report).expect("serializable");
        v["verdict"] = serde_json::to_value(verdict).expect("serializable");
        write_json(&out.join("embed.json"), &v)?;
    }
    if fmt.csv() {
        let mut w = create(&out.join("embed.csv"))?;
        writeln!(w, "n,reps,states,statistic,df,p_value")?;
        let c = &report.chi_square;
        writeln!(w, "{},{},{},{:.16e},{},{:.16e}", report.n, report.reps, report.states, c.statistic, c.df, c.p_value)?;
        w.flush()?;
    }
    Ok(verdict)
}

fn write_summary(summary: &EnsembleSummary, out: &Path, fmt: Format) -> Result<(), Failure> {
    if fmt.json() {
        let mut w = create(&out.join("summary.json"))?;
        summary.write_json(&mut w)?;
        w.flush()?;
    }
    if fmt.csv() {
        let mut w = create(&out.join("summary.csv"))?;
        summary.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::other)?;
    writeln!(w)?;
    w.flush()
}
