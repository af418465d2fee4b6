//! `ike`: build isolation-kernel encoders, encode vectors, index, search,
//! tune, evaluate and benchmark.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ike_core::IkeError;

mod commands;
mod report;

#[derive(Parser)]
#[command(name = "ike", version, about = "Isolation-kernel binary embeddings for dense retrieval")]
struct Cli {
    /// Worker threads (default: available parallelism). IKE_THREADS overrides this flag.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Iforest,
    Voronoi,
    Rplsh,
}

#[derive(Args, Debug)]
#[group(multiple = false)]
pub struct Strategy {
    /// Scan every code (default).
    #[arg(long)]
    pub exhaustive: bool,
    /// Search with the HNSW index in this file.
    #[arg(long, value_name = "INDEX")]
    pub hnsw: Option<PathBuf>,
    /// Search with the IVF index in this file.
    #[arg(long, value_name = "INDEX")]
    pub ivf: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Database code file.
    #[arg(long)]
    pub codes: PathBuf,
    /// Query vectors (.fvecs, .dvecs, or raw f32 with a .hdr sidecar).
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub strategy: Strategy,
    /// HNSW candidate pool size.
    #[arg(long, default_value_t = 100)]
    pub ef_search: usize,
    /// IVF lists to probe.
    #[arg(long, default_value_t = 8)]
    pub nprobe: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Build an encoder from a corpus and write the model file.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "iforest")]
        kind: Kind,
        /// Number of partitions (bits for rplsh). Defaults to the corpus dimension.
        #[arg(long)]
        t: Option<usize>,
        /// Sample size per partition, 2..=256.
        #[arg(long, default_value_t = 2)]
        psi: usize,
        /// Subspace size for the voronoi kind (m = d uses all dimensions).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Build from only the first N corpus vectors.
        #[arg(long, value_name = "N")]
        sample_limit: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Map vectors through a model and write packed codes.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Vectors per streaming batch.
        #[arg(long, default_value_t = 65536)]
        chunk: usize,
    },
    /// Search codes and write a TREC run file.
    Search {
        #[command(flatten)]
        search: SearchArgs,
        /// Run file to write.
        #[arg(short, long)]
        out: PathBuf,
        /// Query ids, one per line (default: 0-based row numbers).
        #[arg(long)]
        qids: Option<PathBuf>,
        /// Document ids, one per line (default: 0-based row numbers).
        #[arg(long)]
        docids: Option<PathBuf>,
        #[arg(long, default_value = "ike")]
        tag: String,
        /// Also report per-query latency and QPS.
        #[arg(long)]
        timing: bool,
    },
    /// Build an HNSW graph over a code file.
    IndexHnsw {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long, default_value_t = 32)]
        m: usize,
        #[arg(long, default_value_t = 500)]
        ef_construction: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Build an IVF index: k-means on the float corpus, lists over the codes.
    IndexIvf {
        /// Float vectors the codes were encoded from.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        /// Number of lists (default: sqrt(n)).
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long, default_value_t = 25)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Grid-search psi for the best validation nDCG under exhaustive search.
    TunePsi {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = 2)]
        lo: usize,
        #[arg(long, default_value_t = 16)]
        hi: usize,
        #[arg(long, value_enum, default_value = "iforest")]
        kind: Kind,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        qids: Option<PathBuf>,
        #[arg(long)]
        docids: Option<PathBuf>,
    },
    /// Score a run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        /// Lowest grade counted as relevant for MRR.
        #[arg(long, default_value_t = 1)]
        min_grade: u32,
        /// Reference run (e.g. exact float search) for top-k overlap.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Time query mapping and search separately.
    Bench {
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Float corpus for the built-in f32 dot-product scan baseline.
        #[arg(long, value_name = "VECTORS")]
        float_baseline: Option<PathBuf>,
    },
    /// Statistical checks of the partitioners on uniform synthetic data.
    CheckProperties {
        #[arg(long, value_enum, default_value = "all")]
        check: Check,
        #[arg(long, value_enum, default_value = "iforest")]
        method: Method,
        /// Subspace size for --method voronoi.
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        /// Uniform points used both for sampling and evaluation.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        psi: usize,
        #[arg(long, default_value_t = 500)]
        trees: usize,
        /// Point pairs for the rho estimate.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        /// Partitions per shared sample for the rho estimate.
        #[arg(long, default_value_t = 2000)]
        t: usize,
        /// Independent samples for the rho estimate.
        #[arg(long, default_value_t = 20)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Entropy,
    Bits,
    Rho,
    Variance,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Iforest,
    Voronoi,
    Vdeh,
}

fn thread_count(flag: Option<usize>) -> Result<usize, IkeError> {
    let n = match std::env::var("IKE_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| IkeError::Param(format!("IKE_THREADS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => flag,
    };
    match n {
        Some(0) => Err(IkeError::Param("thread count must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |p| p.get())),
    }
}

fn run(cli: Cli) -> Result<(), IkeError> {
    let threads = thread_count(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| IkeError::Param(format!("cannot start {threads} threads: {e}")))?;
    log::debug!("using {threads} threads");
    use commands as c;
    match cli.command {
        Command::Build { corpus, kind, t, psi, m, seed, sample_limit, out } => {
            c::build(&corpus, kind, t, psi, m, seed, sample_limit, &out)
        }
        Command::Encode { model, vectors, out, chunk } => c::encode(&model, &vectors, &out, chunk),
        Command::Search { search, out, qids, docids, tag, timing } => {
            c::search(&search, &out, qids.as_deref(), docids.as_deref(), &tag, timing, threads)
        }
        Command::IndexHnsw { codes, m, ef_construction, seed, out } => c::index_hnsw(&codes, m, ef_construction, seed, &out),
        Command::IndexIvf { corpus, codes, nlist, iters, seed, out } => c::index_ivf(&corpus, &codes, nlist, iters, seed, &out),
        Command::TunePsi { corpus, queries, qrels, lo, hi, kind, t, m, seed, k, qids, docids } => c::tune_psi(
            &c::TuneArgs { corpus, queries, qrels, lo, hi, kind, t, m, seed, k, qids, docids },
        ),
        Command::Eval { run, qrels, k, min_grade, truth } => c::eval(&run, &qrels, k, min_grade, truth.as_deref()),
        Command::Bench { search, runs, warmup, float_baseline } => {
            c::bench(&search, runs, warmup, float_baseline.as_deref(), threads)
        }
        Command::CheckProperties { check, method, m, d, n, psi, trees, pairs, t, groups, seed } => {
            c::check_properties(&c::PropertyArgs { check, method, m, d, n, psi, trees, pairs, t, groups, seed })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ike: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
