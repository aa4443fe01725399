use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use sop_core::constraints::{SessionGuarantee, StalenessBound};
use sop_core::generate::{generate, inject_violation, GenError, GenParams, Violation};
use sop_core::history::{build_timeline, parse_history, write_history, HistoryError, Timeline};
use sop_core::levels::{
    availability_upper_bound, constraints_of, session_availability, ConsistencyLevel, UnknownLevel,
    DEFAULT_STALENESS,
};
use sop_core::search::{check, oracle_check, SearchBudget, SearchError, Verdict};

const EXIT_FAIL: u8 = 1;
const EXIT_UNKNOWN: u8 = 2;
const EXIT_INPUT: u8 = 3;

/// Checks key-value operation histories against consistency levels.
#[derive(Parser, Debug)]
#[command(name = "sop-check", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search for an ordering that witnesses each level.
    Check(CheckArgs),
    /// Decide levels by exhaustive enumeration (tiny histories only).
    Oracle(OracleArgs),
    /// Simulate a cluster and write a history that conforms to a level.
    Generate(GenerateArgs),
    /// Print every level's constraints and availability upper bound.
    Levels,
}

#[derive(Args, Debug)]
struct LevelArgs {
    /// Comma-separated level names, or `all`.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "linearizable,sequential,causal+,eventual"
    )]
    levels: Vec<String>,
    /// Bounded staleness: maximum delay in nanoseconds after acknowledgement.
    #[arg(long)]
    staleness_t: Option<i64>,
    /// Bounded staleness: maximum later operations by the writing client.
    #[arg(long)]
    staleness_j: Option<u32>,
    /// Bounded staleness: maximum later updates to the same key.
    #[arg(long)]
    staleness_k: Option<u32>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    history: PathBuf,
    #[command(flatten)]
    levels: LevelArgs,
    /// Worker threads for the partial-order searches.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// States each level's search may visit before giving up.
    #[arg(long, default_value_t = SearchBudget::default().max_states)]
    max_states: u64,
    /// Wall-clock limit for the whole check, in milliseconds.
    #[arg(long, env = "SOP_CHECK_BUDGET_MS", default_value_t = 60_000)]
    budget_ms: u64,
    /// Indeterminate-write branches tried before answering unknown.
    #[arg(long, default_value_t = SearchBudget::default().max_branches)]
    max_branches: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    history: PathBuf,
    #[command(flatten)]
    levels: LevelArgs,
    /// Refuse histories with more operations than this.
    #[arg(long, default_value_t = SearchBudget::default().max_oracle_ops)]
    max_ops: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// One of linearizable, sequential, causal+, pram, eventual.
    #[arg(long, default_value = "linearizable")]
    level: String,
    #[arg(long, default_value_t = 3)]
    clients: usize,
    #[arg(long, default_value_t = 2)]
    keys: usize,
    #[arg(long, default_value_t = 20)]
    ops: usize,
    #[arg(long, default_value_t = 0.5)]
    read_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    cas_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mean replica propagation delay in nanoseconds.
    #[arg(long, default_value_t = 500)]
    delay: i64,
    /// Largest per-client clock offset in nanoseconds.
    #[arg(long, default_value_t = 0)]
    skew: i64,
    /// Perturb the result to break one constraint: RT, CASL, WFR, MW, MR,
    /// RMW or well-formedness.
    #[arg(long)]
    inject: Option<String>,
    /// Output file; standard output if absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed history {path}: {source}")]
    History { path: PathBuf, source: HistoryError },
    #[error(transparent)]
    Level(#[from] UnknownLevel),
    #[error("invalid staleness bound: every limit must be positive")]
    Staleness,
    #[error(transparent)]
    Oracle(#[from] SearchError),
    #[error(transparent)]
    Generate(#[from] GenError),
    #[error("unknown violation {0:?}; valid: RT, CASL, WFR, MW, MR, RMW, well-formedness")]
    Violation(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("sop-check: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Check(args) => run_check(args),
        Command::Oracle(args) => run_oracle(args),
        Command::Generate(args) => run_generate(args),
        Command::Levels => {
            print!("{}", levels_table());
            Ok(0)
        }
    }
}

fn parse_levels(args: &LevelArgs) -> Result<Vec<ConsistencyLevel>, CliError> {
    let bound = if args.staleness_t.is_none()
        && args.staleness_j.is_none()
        && args.staleness_k.is_none()
    {
        DEFAULT_STALENESS
    } else {
        StalenessBound {
            max_writer_ops: args.staleness_j,
            max_key_updates: args.staleness_k,
            max_delay: args.staleness_t,
        }
    };
    if !bound.is_valid() {
        return Err(CliError::Staleness);
    }
    let mut out: Vec<ConsistencyLevel> = Vec::new();
    for name in &args.levels {
        let name = name.trim();
        let parsed = if name == "all" {
            ConsistencyLevel::all(bound).to_vec()
        } else {
            vec![ConsistencyLevel::parse(name, bound)?]
        };
        for level in parsed {
            if !out.contains(&level) {
                out.push(level);
            }
        }
    }
    Ok(out)
}

fn load(path: &PathBuf) -> Result<Timeline, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.clone(),
        source,
    })?;
    let history = |source| CliError::History {
        path: path.clone(),
        source,
    };
    let events = parse_history(&text).map_err(history)?;
    build_timeline(&events).map_err(history)
}

fn exit_code<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> u8 {
    let mut code = 0;
    for v in verdicts {
        match v {
            Verdict::Fail => return EXIT_FAIL,
            Verdict::Unknown => code = EXIT_UNKNOWN,
            Verdict::Pass => {}
        }
    }
    code
}

fn run_check(args: CheckArgs) -> Result<u8, CliError> {
    let levels = parse_levels(&args.levels)?;
    let timeline = load(&args.history)?;
    let budget = SearchBudget {
        max_states: args.max_states,
        wall_timeout: Duration::from_millis(args.budget_ms),
        max_branches: args.max_branches,
        threads: args.threads.max(1),
        ..SearchBudget::default()
    };
    let report = check(&timeline, &levels, &budget);
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("json")),
        Format::Text => {
            if let Some(op) = report.corrupted_read {
                println!(
                    "note: {} reads a value never written to {:?}",
                    op,
                    timeline.key_name(op)
                );
            }
            for r in &report.results {
                match r.implied_by {
                    Some(by) => println!("{}: {} (implied by {by})", r.level, r.verdict),
                    None => println!("{}: {}", r.level, r.verdict),
                }
            }
            let s = &report.stats;
            println!(
                "states explored: {}, chunks drained: {}, elapsed: {:.3} ms",
                s.states_explored,
                s.chunks_drained,
                s.elapsed_ns as f64 / 1e6
            );
        }
    }
    Ok(exit_code(report.results.iter().map(|r| &r.verdict)))
}

fn run_oracle(args: OracleArgs) -> Result<u8, CliError> {
    let levels = parse_levels(&args.levels)?;
    let timeline = load(&args.history)?;
    let verdicts = oracle_check(&timeline, &levels, args.max_ops)?;
    match args.format {
        Format::Json => {
            let doc: serde_json::Map<String, serde_json::Value> = verdicts
                .iter()
                .map(|(l, v)| (l.name().to_string(), serde_json::to_value(v).expect("json")))
                .collect();
            println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
        }
        Format::Text => {
            for (level, verdict) in &verdicts {
                println!("{level}: {verdict}");
            }
        }
    }
    Ok(exit_code(verdicts.iter().map(|(_, v)| v)))
}

fn run_generate(args: GenerateArgs) -> Result<u8, CliError> {
    let level = ConsistencyLevel::parse(&args.level, DEFAULT_STALENESS)?;
    let params = GenParams {
        level,
        clients: args.clients,
        keys: args.keys,
        ops: args.ops,
        read_fraction: args.read_fraction,
        cas_fraction: args.cas_fraction,
        seed: args.seed,
        mean_replication_delay: args.delay,
        clock_skew: args.skew,
    };
    let mut events = generate(&params)?;
    if let Some(name) = &args.inject {
        let violation = Violation::parse(name).ok_or_else(|| CliError::Violation(name.clone()))?;
        events = inject_violation(&events, violation)?;
    }
    let text = write_history(&events);
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn levels_table() -> String {
    let mut rows = vec![[
        "Level".to_string(),
        "Conv".to_string(),
        "Rel".to_string(),
        "Availability".to_string(),
    ]];
    for level in ConsistencyLevel::all(DEFAULT_STALENESS) {
        let (c, r) = constraints_of(level);
        rows.push([
            level.title().to_string(),
            c.to_string(),
            r.to_string(),
            availability_upper_bound(level).to_string(),
        ]);
    }
    for g in SessionGuarantee::ALL {
        rows.push([
            g.title().to_string(),
            "-".to_string(),
            "-".to_string(),
            session_availability(g).to_string(),
        ]);
    }
    rows.iter().map(|r| r.join(" | ") + "\n").collect()
}
