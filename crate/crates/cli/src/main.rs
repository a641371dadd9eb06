use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kbestnet::{Exec, MemoryBudget};

mod commands;
mod output;

/// Exact k-best Bayesian network structure search and model averaging.
#[derive(Parser, Debug)]
#[command(name = "kbestnet", version, about)]
struct Cli {
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true, env = "KBESTNET_THREADS")]
    threads: Option<usize>,

    /// Upper bound on table memory, e.g. 2G, 512M or a byte count.
    #[arg(long, global = true, env = "KBESTNET_MEMORY_BUDGET", value_parser = parse_bytes)]
    memory_budget: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the local score table and write it as a binary cache.
    Scores(ScoresArgs),
    /// Find the k best networks.
    Kbest(KbestArgs),
    /// Feature posteriors averaged over the k best networks.
    Features(FeaturesArgs),
    /// Log predictive probability of held-out rows.
    Predict(PredictArgs),
    /// Draw a random gold network and sample data from it.
    Sample(SampleArgs),
    /// Run a synthetic experiment described by a JSON spec.
    Evaluate(EvaluateArgs),
    /// Exact posteriors by enumerating every DAG (n ≤ 6).
    Oracle(OracleArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Input CSV with one column per variable.
    #[arg(long)]
    data: PathBuf,
    /// The first line is data, not column names.
    #[arg(long)]
    no_header: bool,
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
}

#[derive(Args, Debug, Clone)]
struct ScoreArgs {
    /// BDeu equivalent sample size.
    #[arg(long, default_value_t = 1.0, value_parser = parse_ess)]
    ess: f64,
    /// Maximum in-degree.
    #[arg(long)]
    max_parents: Option<usize>,
    /// Local-score cache: reused if it matches, written otherwise.
    #[arg(long)]
    scores_cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoresArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
    /// Binary cache output.
    #[arg(long)]
    out: PathBuf,
    /// Also write the table as JSON (inadmissible entries as null).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KbestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// JSON output; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Graphviz output with one digraph per network.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Include wall-clock timings in the JSON.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// KIND:U:V with KIND in edge, adj, path, mb and U, V indices or names.
    /// Defaults to every directed edge.
    #[arg(long = "feature")]
    features: Vec<String>,
    /// Exact Δ and bounds: auto computes them when the oracle can (n ≤ 6, no cap).
    #[arg(long, value_enum, default_value = "auto")]
    exact: Exactness,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Exactness {
    Auto,
    Always,
    Never,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Held-out CSV with the same columns.
    #[arg(long)]
    new_data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Number of variables (ignored with --gold).
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    max_in_degree: usize,
    /// Rows to sample.
    #[arg(long)]
    m: usize,
    /// Structure and parameter seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling seed; defaults to --seed.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Sample from this gold network JSON instead of drawing one.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Data CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Write the gold network JSON here.
    #[arg(long)]
    network_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Experiment spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Result CSV output; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score adjacency against the gold skeleton instead of directed edges.
    #[arg(long)]
    undirected: bool,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1.0, value_parser = parse_ess)]
    ess: f64,
    #[arg(long = "feature")]
    features: Vec<String>,
    /// Also list the best networks by exhaustive scoring.
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_bytes(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (digits, scale) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let scale = match c.to_ascii_uppercase() {
                'K' => 1u64 << 10,
                'M' => 1 << 20,
                'G' => 1 << 30,
                'T' => 1 << 40,
                _ => return Err(format!("unknown size suffix in '{s}'")),
            };
            (&s[..i], scale)
        }
        _ => (s, 1),
    };
    let value: f64 = digits
        .parse()
        .map_err(|_| format!("cannot parse size '{s}'"))?;
    if value.is_nan() || value <= 0.0 {
        return Err("memory budget must be positive".into());
    }
    Ok((value * scale as f64) as u64)
}

fn parse_ess(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("ess must be a positive number, got '{s}'")),
    }
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    match s {
        "\\t" | "tab" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!(
            "delimiter must be a single ASCII character, got '{s}'"
        )),
    }
}

/// Settings shared by every subcommand.
pub struct Context {
    pub exec: Exec,
    pub budget: MemoryBudget,
}

fn context(cli: &Cli) -> anyhow::Result<Context> {
    let exec = match cli.threads {
        Some(0) => anyhow::bail!("--threads must be at least 1"),
        Some(1) => Exec::Sequential,
        Some(t) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()?;
            #[cfg(not(feature = "parallel"))]
            let _ = t;
            Exec::Parallel
        }
        None => Exec::Parallel,
    };
    Ok(Context {
        exec,
        budget: cli.memory_budget.map(MemoryBudget).unwrap_or_default(),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(64)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = context(&cli).and_then(|ctx| match cli.command {
        Command::Scores(a) => commands::scores(&ctx, a),
        Command::Kbest(a) => commands::kbest(&ctx, a),
        Command::Features(a) => commands::features(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Sample(a) => commands::sample(a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Oracle(a) => commands::oracle(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => match err.downcast_ref::<kbestnet::Error>() {
            Some(kbestnet::Error::Refused {
                what,
                required,
                limit,
            }) => {
                let reason = serde_json::json!({
                    "status": "refused",
                    "what": what,
                    "required": required,
                    "limit": limit,
                });
                println!("{reason}");
                eprintln!("kbestnet: {err}");
                ExitCode::from(2)
            }
            _ => {
                eprintln!("kbestnet: {err:#}");
                ExitCode::from(1)
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_sizes() {
        assert_eq!(parse_bytes("2G"), Ok(2 << 30));
        assert_eq!(parse_bytes("512m"), Ok(512 << 20));
        assert_eq!(parse_bytes("1000"), Ok(1000));
        assert_eq!(parse_bytes("1.5K"), Ok(1536));
        assert!(parse_bytes("0").is_err());
        assert!(parse_bytes("3Q").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
