use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use cbcast::checker::{self, Verdict};
use cbcast::scenario::{generate_scenarios, GenerateLimits, Scenario};
use cbcast::simnet::{run_scenario, RunOptions};
use cbcast::trace::Trace;
use clap::{ArgGroup, Parser};

/// Run cbcast scenarios in the simulator, check traces, generate scenarios.
///
/// Exit status: 0 when every hard check passes, 1 on a property failure,
/// 2 on bad input.
#[derive(Parser, Debug)]
#[command(name = "cbcast", version)]
#[command(group(ArgGroup::new("mode").required(true).args(["scenario", "trace", "generate"])))]
struct Cli {
    /// Scenario file to simulate.
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,

    /// Existing trace file to run the checkers on.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,

    /// Write N generated scenarios to --out-dir.
    #[arg(long, value_name = "N")]
    generate: Option<usize>,

    /// Seed override for a run, or the generator seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Tick budget override.
    #[arg(long, value_name = "N")]
    max_ticks: Option<u64>,

    /// Where to write the run's trace.
    #[arg(long, value_name = "PATH")]
    trace_out: Option<PathBuf>,

    /// Run every checker on the trace.
    #[arg(long)]
    check: bool,

    /// Where to write verdicts (default stdout).
    #[arg(long, value_name = "PATH")]
    verdict_out: Option<PathBuf>,

    /// Directory for generated scenarios.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Generate scenarios that open with a join under a broadcast burst.
    #[arg(long)]
    join_burst: bool,
}

/// Property name of the verdict that reports simulator-side violations.
const RUNTIME: &str = "runtime-violations";

enum Failure {
    Input(anyhow::Error),
    Property,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = if let Some(n) = cli.generate {
        generate(&cli, n)
    } else if let Some(path) = &cli.trace {
        check_trace(&cli, path)
    } else {
        simulate(
            &cli,
            cli.scenario.as_deref().expect("mode group is required"),
        )
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate(cli: &Cli, n: usize) -> Result<(), Failure> {
    let limits = if cli.join_burst {
        GenerateLimits::donation()
    } else {
        GenerateLimits::default()
    };
    let dir = &cli.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for s in generate_scenarios(cli.seed.unwrap_or(0), n, limits) {
        write(&dir.join(format!("{}.toml", s.name)), &s.to_toml())?;
    }
    eprintln!("wrote {n} scenarios to {}", dir.display());
    Ok(())
}

fn simulate(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scenario =
        Scenario::parse(&text).with_context(|| format!("invalid scenario {}", path.display()))?;
    let opts = RunOptions {
        seed: cli.seed,
        max_ticks: cli.max_ticks,
    };
    let out = run_scenario(&scenario, opts)
        .with_context(|| format!("invalid scenario {}", path.display()))?;
    eprintln!(
        "{}: {} after {} ticks, {} events, {} violations",
        scenario.name,
        out.status,
        out.ticks,
        out.trace.events.len(),
        out.violations.len()
    );
    if let Some(p) = &cli.trace_out {
        write(p, &out.trace.render())?;
    }
    if !cli.check {
        return Ok(());
    }
    let mut verdicts = checker::run_all(&out.trace);
    verdicts.push(if out.violations.is_empty() {
        Verdict::pass(RUNTIME)
    } else {
        let notes: Vec<String> = out.violations.iter().map(ToString::to_string).collect();
        Verdict::fail(RUNTIME, vec![], notes.join("; "))
    });
    report(cli, &verdicts)
}

fn check_trace(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace =
        Trace::parse(&text).with_context(|| format!("malformed trace {}", path.display()))?;
    report(cli, &checker::run_all(&trace))
}

fn report(cli: &Cli, verdicts: &[Verdict]) -> Result<(), Failure> {
    let mut text = String::new();
    for v in verdicts {
        text.push_str(&v.to_line());
        text.push('\n');
    }
    match &cli.verdict_out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    if verdicts.iter().any(Verdict::is_hard_failure) {
        Err(Failure::Property)
    } else {
        Ok(())
    }
}
