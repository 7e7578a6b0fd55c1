//! `sidground` command line. Exit codes: 0 success, 1 usage error, 2 data
//! error.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;
pub mod server;

pub use config::Config;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, bad config, unusable argument combination.
    Usage(String),
    /// Input files missing, malformed or inconsistent.
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl From<sidground_core::Error> for Failure {
    fn from(e: sidground_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sidground", version, about = "Generate-then-match news recommendation over semantic-ID prefixes")]
pub struct Cli {
    /// TOML config file. Flags override it; SIDGROUND_PORT, SIDGROUND_DATA_DIR
    /// and SIDGROUND_SEED override it too.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and apply residual codebooks.
    #[command(subcommand)]
    Codebook(CodebookCmd),
    /// Build, refresh and split article pools.
    #[command(subcommand)]
    Pool(PoolCmd),
    /// Ground SID prefixes against a pool.
    Match(MatchArgs),
    /// Profile-aware context routing.
    #[command(subcommand)]
    Padr(PadrCmd),
    /// Run a prefix generator.
    #[command(subcommand)]
    Gen(GenCmd),
    /// Match then rank for one user.
    Rank(RankArgs),
    /// Run the HTTP recommendation service.
    Serve(ServeArgs),
    /// Measure warm-cache serving latency.
    Bench(BenchArgs),
    /// Offline evaluation and synthetic fixtures.
    #[command(subcommand)]
    Eval(EvalCmd),
}

#[derive(Debug, Subcommand)]
pub enum CodebookCmd {
    /// Train a 4-layer codebook on an embedding JSONL corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Codebook sizes per layer, e.g. 32,64,128,1024.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = sidground_core::codebook::DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign a SID to every embedding; writes `{id, sid}` lines.
    Assign {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Occupancy and reconstruction error per layer.
    Stats {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum PoolCmd {
    /// Validate an article JSONL file and save it as a pool snapshot.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add and remove articles, producing the next pool version.
    Refresh {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        add: Option<PathBuf>,
        /// One article id per line.
        #[arg(long)]
        remove: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split by publication time into train.jsonl and test.jsonl.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        /// RFC 3339 timestamp or YYYY-MM-DD (midnight UTC).
        #[arg(long)]
        cutoff: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Pool snapshot or article JSONL.
    #[arg(long)]
    pub index: PathBuf,
    /// s1,s2,s3. Repeat for several prefixes.
    #[arg(long, required = true)]
    pub prefix: Vec<String>,
    #[arg(long)]
    pub delta: Option<u32>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Grid mode: report empty-match rate and mean candidates per delta.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<u32>>,
}

#[derive(Debug, Subcommand)]
pub enum PadrCmd {
    /// Route one request and print the path and rendered context.
    Route {
        /// UserProfile JSON, or profile JSONL with --user.
        #[arg(long)]
        profile: PathBuf,
        /// BehaviorHistory JSON, or history JSONL with --user. Absent means no history.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        user: Option<String>,
        #[arg(long, default_value = "")]
        query: String,
        #[arg(long)]
        tau: Option<usize>,
        /// Print the full context as JSON (input for `gen run`).
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum GenCmd {
    /// Generate prefixes for one routed context.
    Run {
        /// random, popular, histpop, profile or replay:<path>.
        #[arg(long)]
        generator: String,
        /// UserContext JSON as printed by `padr route --json`.
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Training articles for popular and profile.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long, required = true)]
    pub prefix: Vec<String>,
    #[arg(long)]
    pub delta: Option<u32>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Reference time in Unix seconds; defaults to now.
    #[arg(long)]
    pub now: Option<i64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub histories: Option<PathBuf>,
    /// random, popular, histpop, profile, replay:<path> or sampled (prefixes
    /// drawn from the pool's own distribution).
    #[arg(long, default_value = "histpop")]
    pub generator: String,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub ttl: Option<i64>,
    /// Append-only cache log, replayed at startup.
    #[arg(long)]
    pub cache_log: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Fill the cache with preset queries for every profile before serving.
    #[arg(long)]
    pub warm: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub requests: usize,
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    /// Profiles to route; without them, anonymous contexts are used.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub histories: Option<PathBuf>,
    /// Anonymous contexts when no profiles are given.
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    #[arg(long, default_value = "sampled")]
    pub generator: String,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Evaluate generators against labeled samples.
    Run(EvalRunArgs),
    /// Write a synthetic fixture (and a mock replay file) to a directory.
    Fixture {
        /// FixtureSpec as JSON or TOML; defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Probability that a mock replay record's first prefix is near the target.
        #[arg(long, default_value_t = 0.5)]
        replay_skill: f64,
    },
}

#[derive(Debug, Args)]
pub struct EvalRunArgs {
    /// Fixture directory; supplies any of the files below not given explicitly.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub histories: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Repeat to compare several generators.
    #[arg(long, required = true)]
    pub generator: Vec<String>,
    #[arg(long)]
    pub delta: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub tau: Option<usize>,
    /// Hit@1 negative modes: rand, align, fixed.
    #[arg(long, value_delimiter = ',', default_value = "rand,align")]
    pub hit_modes: Vec<String>,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = Config::load(cli.config.as_deref()).and_then(|cfg| commands::dispatch(cli.command, &cfg));
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
