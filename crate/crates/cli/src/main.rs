use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use setspace::adversary::fixtures::{
    footprint_anonymous, full_anonymous, full_repeated, single_register_consensus,
};
use setspace::adversary::{
    build_covering, find_glue_family, splice_and_refute, CoveringOutcome, GlueOutcome,
    SpliceOutcome,
};
use setspace::protocol::{ProtocolKind, ProtocolParams};
use setspace::verify::{find_m_value_witness, WitnessOutcome};
use setspace_cli::config::ExperimentConfig;
use setspace_cli::{exit, report, run_suite, CliError};

#[derive(Parser)]
#[command(
    name = "setspace",
    version,
    about = "Space-bounded k-set agreement experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the suite seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. SETSPACE_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Save full traces.
    #[arg(long, global = true, overrides_with = "no_trace")]
    trace: bool,
    #[arg(long, global = true, overrides_with = "trace")]
    no_trace: bool,
    /// Depth cap for schedule searches.
    #[arg(long, global = true, default_value_t = 10_000)]
    depth_cap: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run a schedule suite and write summary.csv.
    Run,
    /// Print register bounds for one point or a sweep.
    Bounds(BoundsArgs),
    /// Build a covering against a repeated protocol and try to break agreement.
    Refute(RefuteArgs),
    /// Glue clone-extended executions against an anonymous protocol.
    Glue(GlueArgs),
    /// Search for an execution in which m processes output m given values.
    #[command(alias = "lemma1")]
    Witness(WitnessArgs),
}

#[derive(Args)]
struct Point {
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    point: Point,
    /// Every valid point with 2 <= n <= N.
    #[arg(long, value_name = "N")]
    sweep: Option<usize>,
    /// Add registers measured by solo runs.
    #[arg(long)]
    measure: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefuteFixture {
    SingleRegister,
    FullRepeated,
}

#[derive(Args)]
struct RefuteArgs {
    #[arg(long, value_enum)]
    fixture: Option<RefuteFixture>,
    #[command(flatten)]
    point: Point,
}

#[derive(Clone, Copy, ValueEnum)]
enum GlueFixture {
    Footprint,
    FullAnonymous,
}

#[derive(Args)]
struct GlueArgs {
    #[arg(long, value_enum)]
    fixture: Option<GlueFixture>,
    #[command(flatten)]
    point: Point,
}

#[derive(Args)]
struct WitnessArgs {
    #[command(flatten)]
    point: Point,
    /// Processes, comma separated. Defaults to 0..m.
    #[arg(long, value_delimiter = ',')]
    q: Vec<usize>,
    /// Values, comma separated. Defaults to 0..m.
    #[arg(long, value_delimiter = ',')]
    v: Vec<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    let g = &cli.global;
    let config = g
        .config
        .as_deref()
        .map(ExperimentConfig::load)
        .transpose()?;
    let out = out_dir(g, config.as_ref());
    match &cli.command {
        Command::Run => {
            let mut config = config.ok_or_else(|| CliError::Config("run needs --config".into()))?;
            if let Some(seed) = g.seed {
                config.suite.seed = seed;
            }
            let keep = match (g.trace, g.no_trace) {
                (true, _) => true,
                (_, true) => false,
                _ => config.output.traces,
            };
            let summary = run_suite(&config, keep)?;
            summary.save(&out)?;
            println!(
                "{} rows, {} safety failures, {} liveness failures, {} inconclusive -> {}",
                summary.rows.len(),
                summary.safety_failures,
                summary.liveness_failures,
                summary.inconclusive,
                out.join("summary.csv").display()
            );
            Ok(if summary.safety_failures > 0 {
                exit::SAFETY_VIOLATION
            } else {
                exit::OK
            })
        }
        Command::Bounds(a) => {
            let rows = match a.sweep {
                Some(max) => report::sweep(2..=max, a.measure)?,
                None => {
                    let p = &a.point;
                    vec![report::bounds_row(p.n, p.m, p.k, a.measure)?]
                }
            };
            report::write_csv(&rows, std::io::stdout().lock())?;
            if g.out.is_some() || std::env::var_os("SETSPACE_OUT").is_some() {
                std::fs::create_dir_all(&out)?;
                report::write_csv(&rows, std::fs::File::create(out.join("bounds.csv"))?)?;
            }
            Ok(exit::OK)
        }
        Command::Refute(a) => {
            let params = match (a.fixture, config) {
                (Some(RefuteFixture::SingleRegister), _) => single_register_consensus(),
                (Some(RefuteFixture::FullRepeated), _) => {
                    full_repeated_checked(a.point.n, a.point.m, a.point.k)?
                }
                (None, Some(c)) => c.params()?,
                (None, None) => {
                    return Err(CliError::Config(
                        "refute needs --fixture or --config".into(),
                    ))
                }
            };
            refute(&params, g.depth_cap, &out)
        }
        Command::Glue(a) => {
            let params = match (a.fixture, config) {
                (Some(GlueFixture::Footprint), _) => footprint_anonymous(),
                (Some(GlueFixture::FullAnonymous), _) => {
                    let p = &a.point;
                    setspace::bounds::check_params(p.n, p.m, p.k)?;
                    full_anonymous(p.n, p.m, p.k)
                }
                (None, Some(c)) => c.params()?,
                (None, None) => {
                    return Err(CliError::Config("glue needs --fixture or --config".into()))
                }
            };
            glue(&params, g.depth_cap, &out)
        }
        Command::Witness(a) => {
            let params = match config {
                Some(c) => c.params()?,
                None => {
                    let p = &a.point;
                    ProtocolParams::new(ProtocolKind::OneShot, p.n, p.m, p.k)?
                }
            };
            let q = if a.q.is_empty() {
                (0..params.m).collect()
            } else {
                a.q.clone()
            };
            let v = if a.v.is_empty() {
                (0..params.m as u32).collect()
            } else {
                a.v.clone()
            };
            let params = match v.iter().max() {
                Some(&top) if top >= params.domain => params.with_domain(top + 1)?,
                _ => params,
            };
            match find_m_value_witness(&params, &q, &v, g.depth_cap)
                .map_err(|e| CliError::Config(e.to_string()))?
            {
                WitnessOutcome::Witness(trace) => {
                    std::fs::create_dir_all(&out)?;
                    let path = out.join("witness.jsonl");
                    trace.write_jsonl(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
                    println!("witness: {} steps -> {}", trace.steps.len(), path.display());
                    Ok(exit::OK)
                }
                WitnessOutcome::NotFound {
                    depth_cap,
                    exhausted,
                } => {
                    println!("not found (depth cap {depth_cap}, exhausted: {exhausted})");
                    Ok(exit::NOT_FOUND)
                }
            }
        }
    }
}

fn out_dir(g: &Global, config: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(env) = std::env::var_os("SETSPACE_OUT") {
        return PathBuf::from(env);
    }
    g.out
        .clone()
        .or_else(|| config.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn full_repeated_checked(n: usize, m: usize, k: usize) -> Result<ProtocolParams, CliError> {
    setspace::bounds::check_params(n, m, k)?;
    Ok(full_repeated(n, m, k))
}

fn refute(params: &ProtocolParams, depth_cap: usize, out: &Path) -> Result<u8, CliError> {
    let outcome = build_covering(params, depth_cap).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("covering.json"),
        serde_json::to_vec_pretty(&outcome)?,
    )?;
    let covering = match outcome {
        CoveringOutcome::Built(c) => c,
        CoveringOutcome::Stuck { stage, reason } => {
            println!("covering stuck at stage {stage}: {reason}");
            return Ok(exit::NOT_FOUND);
        }
    };
    match splice_and_refute(params, &covering, depth_cap)? {
        SpliceOutcome::Refuted {
            trace,
            instance,
            outputs,
            groups,
        } => {
            let path = out.join("refutation.jsonl");
            trace.write_jsonl(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            let summary = json!({ "instance": instance, "outputs": outputs, "groups": groups });
            std::fs::write(
                out.join("splice.json"),
                serde_json::to_vec_pretty(&summary)?,
            )?;
            println!(
                "refuted: instance {instance} output {outputs:?} -> {}",
                path.display()
            );
            Ok(exit::OK)
        }
        SpliceOutcome::NotFound { reason, groups } => {
            let summary = json!({ "reason": reason, "groups": groups });
            std::fs::write(
                out.join("splice.json"),
                serde_json::to_vec_pretty(&summary)?,
            )?;
            println!("not refuted: {reason}");
            Ok(exit::NOT_FOUND)
        }
    }
}

fn glue(params: &ProtocolParams, depth_cap: usize, out: &Path) -> Result<u8, CliError> {
    let outcome =
        find_glue_family(params, depth_cap).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(out)?;
    match outcome {
        GlueOutcome::BetaChain {
            registers,
            stages,
            trace,
            outputs,
        } => {
            let path = out.join("glued.jsonl");
            trace.write_jsonl(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            let summary = json!({ "registers": registers, "stages": stages, "outputs": outputs });
            std::fs::write(out.join("glue.json"), serde_json::to_vec_pretty(&summary)?)?;
            println!("glued: outputs {outputs:?} -> {}", path.display());
            Ok(exit::OK)
        }
        GlueOutcome::Blocked { j, reason } => {
            let summary = json!({ "blocked_at": j, "reason": reason });
            std::fs::write(out.join("glue.json"), serde_json::to_vec_pretty(&summary)?)?;
            println!("blocked at stage {j}: {reason}");
            Ok(exit::NOT_FOUND)
        }
    }
}
