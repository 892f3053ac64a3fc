use clap::{Parser, Subcommand, ValueEnum};
use pathmeasure::identities::{run_suite, suite_info, verdict, CheckResult, SuiteConfig, SUITES};
use pathmeasure::Error;
use serde::Serialize;
use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "pathmeasure",
    version,
    about = "Verify penalised path-measure identities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more suites ("all" runs every suite) and write a report.
    Verify(VerifyArgs),
    /// List suite ids with descriptions and the identity each checks.
    List,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(required = true)]
    suites: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long = "lattice-n", default_value_t = 10_000)]
    lattice_n: u64,
    /// Horizon for single-horizon suites (each suite defaults to 1).
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75])]
    alpha: Vec<f64>,
    /// Multiple of the standard error allowed in Monte-Carlo checks.
    #[arg(long, default_value_t = 3.0)]
    sigmas: f64,
    /// Relative floor for Monte-Carlo checks, replacing each check's default.
    #[arg(long)]
    rel: Option<f64>,
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Let qualitative checks decide the exit code.
    #[arg(long)]
    strict: bool,
}

/// Everything that determines the report, and nothing else.
#[derive(Serialize)]
struct ConfigEcho<'a> {
    suites: &'a [String],
    seed: u64,
    paths: usize,
    lattice_n: u64,
    t: Option<f64>,
    alpha: &'a [f64],
    sigmas: f64,
    rel: Option<f64>,
    strict: bool,
}

#[derive(Serialize)]
struct CheckRow<'a> {
    suite: &'a str,
    name: &'a str,
    anchor: &'a str,
    lhs: Option<f64>,
    lhs_stderr: Option<f64>,
    rhs: Option<f64>,
    tolerance: String,
    pass: bool,
    qualitative: bool,
}

impl<'a> From<&'a CheckResult> for CheckRow<'a> {
    fn from(c: &'a CheckResult) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        CheckRow {
            suite: &c.suite,
            name: &c.name,
            anchor: &c.anchor,
            lhs: finite(c.lhs),
            lhs_stderr: c.lhs_stderr.and_then(finite),
            rhs: finite(c.rhs),
            tolerance: c.policy.describe(),
            pass: c.pass,
            qualitative: c.qualitative,
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    version: &'static str,
    config: ConfigEcho<'a>,
    checks: Vec<CheckRow<'a>>,
    verdict: &'static str,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for s in SUITES {
                let q = if s.qualitative { " (qualitative)" } else { "" };
                println!(
                    "{}{q}\n    {}\n    anchor: {}",
                    s.id, s.description, s.anchor
                );
            }
            ExitCode::SUCCESS
        }
        Command::Verify(args) => match verify(args) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(match e {
                    Error::Config(_) => 2,
                    Error::Resource { .. } => 3,
                    Error::Numerical(_) => 1,
                })
            }
        },
    }
}

fn verify(args: VerifyArgs) -> Result<ExitCode, Error> {
    let mut suites = Vec::new();
    for s in &args.suites {
        if s == "all" {
            suites.extend(SUITES.iter().map(|i| i.id.to_string()));
        } else if suite_info(s).is_some() {
            suites.push(s.clone());
        } else {
            return Err(Error::Config(format!(
                "unknown suite '{s}' (see `pathmeasure list`)"
            )));
        }
    }
    let cfg = SuiteConfig {
        seed: args.seed,
        paths: args.paths,
        lattice_n: args.lattice_n,
        t: args.t,
        alphas: args.alpha.clone(),
        jobs: args.jobs,
        sigmas: args.sigmas,
        rel: args.rel,
    };
    cfg.validate()?;

    let mut checks = Vec::new();
    for id in &suites {
        let start = Instant::now();
        let got = run_suite(id, &cfg)?;
        let failed = got.iter().filter(|c| !c.pass).count();
        eprintln!(
            "{id}: {} checks, {failed} failing, {:.1}s",
            got.len(),
            start.elapsed().as_secs_f64()
        );
        for c in got.iter().filter(|c| c.control && !c.pass) {
            eprintln!("  CONTROL FAILED: {} (estimator or sampler fault)", c.name);
        }
        checks.extend(got);
    }
    let ok = verdict(&checks, args.strict);
    let report = Report {
        version: env!("CARGO_PKG_VERSION"),
        config: ConfigEcho {
            suites: &suites,
            seed: args.seed,
            paths: args.paths,
            lattice_n: args.lattice_n,
            t: args.t,
            alpha: &args.alpha,
            sigmas: args.sigmas,
            rel: args.rel,
            strict: args.strict,
        },
        checks: checks.iter().map(CheckRow::from).collect(),
        verdict: if ok { "pass" } else { "fail" },
    };
    let bytes = match args.format {
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(&report).expect("report serialises");
            v.push(b'\n');
            v
        }
        Format::Csv => to_csv(&report.checks),
    };
    let written = match &args.out {
        Some(path) => std::fs::write(path, &bytes),
        None => std::io::stdout().write_all(&bytes),
    };
    if let Err(e) = written {
        return Err(Error::Config(format!("cannot write report: {e}")));
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn to_csv(rows: &[CheckRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        "suite",
        "name",
        "anchor",
        "lhs",
        "lhs_stderr",
        "rhs",
        "tolerance",
        "pass",
        "qualitative",
    ])
    .expect("in-memory csv");
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}
