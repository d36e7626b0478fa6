use clap::{Args, Parser, Subcommand, ValueEnum};
use olap_core::datagen::{generate_column, tuples_for_mb};
use olap_core::joins::{JoinAlgorithm, KernelVariant};
use olap_core::mem::AllocMode;
use olap_core::microbench::AccessWidth;
use olap_core::queries::QueryId;
use olap_core::scans::ScanKernel;
use olap_core::sync::QueueKind;
use olapbench::{
    emit_results, parse_radix_bits, run_experiment, write_fk_pair, write_tpch, BenchConfig,
    Experiment, Format, Placement, ResultRecord, ScanOutput,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "olapbench",
    version,
    about = "In-memory join, scan and memory benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Foreign-key join of a build and a probe relation.
    Join(JoinArgs),
    /// Range scan over a uniform byte column.
    Scan(ScanArgs),
    /// Memory and synchronization micro-benchmarks.
    Micro(MicroArgs),
    /// Reduced TPC-H query.
    Query(QueryArgs),
    /// Generate input data into a directory.
    Gen(GenArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_parser = parse::<AllocMode>, default_value = "prealloc")]
    alloc: AllocMode,
    #[arg(long, value_parser = parse::<Placement>, default_value = "none")]
    placement: Placement,
    /// Result file; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    #[arg(long, value_parser = parse::<Format>, default_value = "csv")]
    format: Format,
    /// Check results after timing (default: on for inputs up to 1 GB).
    #[arg(long, overrides_with = "no_verify")]
    verify: bool,
    #[arg(long)]
    no_verify: bool,
}

#[derive(Args)]
struct JoinArgs {
    #[arg(long, value_parser = parse::<JoinAlgorithm>, default_value = "rho")]
    algo: JoinAlgorithm,
    #[arg(long, default_value_t = 100)]
    build_mb: u64,
    #[arg(long, default_value_t = 400)]
    probe_mb: u64,
    /// Exact build cardinality; overrides --build-mb.
    #[arg(long)]
    build_tuples: Option<u64>,
    /// Exact probe cardinality; overrides --probe-mb.
    #[arg(long)]
    probe_tuples: Option<u64>,
    #[arg(long, default_value = "7,7")]
    radix_bits: String,
    #[arg(long, value_parser = parse::<KernelVariant>, default_value = "naive")]
    kernel: KernelVariant,
    #[arg(long, value_parser = parse::<QueueKind>, default_value = "lockfree")]
    queue: QueueKind,
    #[arg(long)]
    materialize: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long, default_value_t = 64)]
    column_mb: u64,
    #[arg(long, default_value_t = 0.5)]
    selectivity: f64,
    #[arg(long, value_parser = parse::<ScanOutput>, default_value = "bitvector")]
    output: ScanOutput,
    #[arg(long, value_parser = parse::<ScanKernel>, default_value = "auto")]
    scan_kernel: ScanKernel,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum MicroKind {
    Chase,
    Writes,
    Read,
    Write,
    Contention,
}

#[derive(Args)]
struct MicroArgs {
    #[arg(value_enum)]
    kind: MicroKind,
    #[arg(long, default_value_t = 64 << 20)]
    array_bytes: u64,
    /// Chase steps, random writes, or queue tasks.
    #[arg(long, default_value_t = 10_000_000)]
    ops: u64,
    #[arg(long, value_parser = parse::<AccessWidth>, default_value = "64")]
    width: AccessWidth,
    /// Restricts random-write slots with this mask (decimal or 0x hex).
    #[arg(long, value_parser = parse_mask)]
    address_mask: Option<u64>,
    #[arg(long, default_value_t = 0)]
    task_cost_ns: u64,
    #[arg(long, value_parser = parse::<QueueKind>, default_value = "lockfree")]
    queue: QueueKind,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct QueryArgs {
    /// 3, 10, 12 or 19.
    #[arg(long, value_parser = parse::<QueryId>)]
    query: QueryId,
    #[arg(long, default_value_t = 0.1)]
    sf: f64,
    #[arg(long, value_parser = parse::<JoinAlgorithm>, default_value = "rho")]
    algo: JoinAlgorithm,
    #[arg(long, value_parser = parse::<KernelVariant>, default_value = "naive")]
    kernel: KernelVariant,
    #[arg(long, value_parser = parse::<QueueKind>, default_value = "lockfree")]
    queue: QueueKind,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Join,
    Column,
    Tpch,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: GenKind,
    /// Target directory (default: $OLAPBENCH_DATA_DIR).
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    build_mb: u64,
    #[arg(long, default_value_t = 400)]
    probe_mb: u64,
    #[arg(long, default_value_t = 64)]
    column_mb: u64,
    #[arg(long, default_value_t = 0.1)]
    sf: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn parse<T: std::str::FromStr<Err = olap_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: olap_core::Error| e.to_string())
}

impl Common {
    fn apply(&self, cfg: &mut BenchConfig) {
        cfg.threads = self.threads;
        cfg.repetitions = self.reps;
        cfg.seed = self.seed;
        cfg.alloc_mode = self.alloc;
        cfg.placement = self.placement;
        cfg.output = Some(self.out.clone());
        cfg.verify = if self.no_verify {
            Some(false)
        } else if self.verify {
            Some(true)
        } else {
            None
        };
    }
}

fn parse_mask(s: &str) -> Result<u64, String> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    }
    .map_err(|e| format!("bad mask `{s}`: {e}"))
}

fn run(cli: Cli) -> olap_core::Result<()> {
    let mut cfg = BenchConfig::default();
    let common = match &cli.command {
        Command::Join(a) => {
            cfg.experiment = Experiment::Join;
            cfg.algo = a.algo;
            cfg.build_tuples = a.build_tuples.unwrap_or_else(|| tuples_for_mb(a.build_mb));
            cfg.probe_tuples = a.probe_tuples.unwrap_or_else(|| tuples_for_mb(a.probe_mb));
            cfg.radix_bits = parse_radix_bits(&a.radix_bits)?;
            cfg.kernel_variant = a.kernel;
            cfg.queue_kind = a.queue;
            cfg.materialize = a.materialize;
            &a.common
        }
        Command::Scan(a) => {
            cfg.experiment = Experiment::Scan;
            cfg.array_bytes = a.column_mb << 20;
            cfg.selectivity = a.selectivity;
            cfg.scan_output = a.output;
            cfg.scan_kernel = a.scan_kernel;
            &a.common
        }
        Command::Micro(a) => {
            cfg.experiment = match a.kind {
                MicroKind::Chase => Experiment::Chase,
                MicroKind::Writes => Experiment::RandomWrites,
                MicroKind::Read => Experiment::LinearRead,
                MicroKind::Write => Experiment::LinearWrite,
                MicroKind::Contention => Experiment::Contention,
            };
            cfg.array_bytes = a.array_bytes;
            cfg.ops = a.ops;
            cfg.access_width = a.width;
            cfg.address_mask = a.address_mask;
            cfg.task_cost_ns = a.task_cost_ns;
            cfg.queue_kind = a.queue;
            &a.common
        }
        Command::Query(a) => {
            cfg.experiment = Experiment::Query;
            cfg.query = a.query;
            cfg.scale_factor = a.sf;
            cfg.algo = a.algo;
            cfg.kernel_variant = a.kernel;
            cfg.queue_kind = a.queue;
            &a.common
        }
        Command::Gen(a) => return generate(a),
    };
    common.apply(&mut cfg);
    let records: Vec<ResultRecord> = run_experiment(&cfg)?;
    emit_results(&records, &common.out, common.format)
}

fn generate(a: &GenArgs) -> olap_core::Result<()> {
    let dir = a
        .dir
        .clone()
        .or_else(|| std::env::var_os("OLAPBENCH_DATA_DIR").map(PathBuf::from))
        .ok_or_else(|| {
            olap_core::Error::InvalidArgument("pass --dir or set OLAPBENCH_DATA_DIR".into())
        })?;
    let cfg = BenchConfig {
        build_tuples: tuples_for_mb(a.build_mb),
        probe_tuples: tuples_for_mb(a.probe_mb),
        scale_factor: a.sf,
        seed: a.seed,
        ..BenchConfig::default()
    };
    match a.kind {
        GenKind::Join => write_fk_pair(&dir, &cfg),
        GenKind::Tpch => write_tpch(&dir, &cfg),
        GenKind::Column => {
            std::fs::create_dir_all(&dir)?;
            let col = generate_column(a.column_mb << 20, a.seed);
            let path = dir.join(format!("column-{}mb-s{}.bin", a.column_mb, a.seed));
            std::fs::write(path, col.values())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("olapbench: {e}");
            ExitCode::FAILURE
        }
    }
}
