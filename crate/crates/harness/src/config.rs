use olap_core::joins::{JoinAlgorithm, JoinOptions, KernelVariant};
use olap_core::mem::AllocMode;
use olap_core::microbench::AccessWidth;
use olap_core::queries::QueryId;
use olap_core::scans::ScanKernel;
use olap_core::sync::QueueKind;
use olap_core::{Error, Result};
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Join,
    Scan,
    Chase,
    RandomWrites,
    LinearRead,
    LinearWrite,
    Contention,
    Query,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Join,
        Experiment::Scan,
        Experiment::Chase,
        Experiment::RandomWrites,
        Experiment::LinearRead,
        Experiment::LinearWrite,
        Experiment::Contention,
        Experiment::Query,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Join => "join",
            Experiment::Scan => "scan",
            Experiment::Chase => "micro-chase",
            Experiment::RandomWrites => "micro-writes",
            Experiment::LinearRead => "micro-read",
            Experiment::LinearWrite => "micro-write",
            Experiment::Contention => "contention",
            Experiment::Query => "query",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment `{s}`")))
    }
}

/// Where worker threads run relative to the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// No pinning; the OS schedules freely.
    #[default]
    None,
    /// Workers on distinct physical cores of the data's node.
    Local,
    /// Workers on the node opposite the data.
    Remote,
    /// Workers alternate between nodes.
    Interleave,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::None => "none",
            Placement::Local => "local",
            Placement::Remote => "remote",
            Placement::Interleave => "interleave",
        }
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Placement::None),
            "local" => Ok(Placement::Local),
            "remote" => Ok(Placement::Remote),
            "interleave" => Ok(Placement::Interleave),
            other => Err(Error::InvalidArgument(format!(
                "unknown placement `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanOutput {
    #[default]
    Bitvector,
    Indexes,
}

impl ScanOutput {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanOutput::Bitvector => "bitvector",
            ScanOutput::Indexes => "indexes",
        }
    }
}

impl FromStr for ScanOutput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bitvector" | "bits" => Ok(ScanOutput::Bitvector),
            "indexes" | "index" => Ok(ScanOutput::Indexes),
            other => Err(Error::InvalidArgument(format!(
                "unknown scan output `{other}`"
            ))),
        }
    }
}

/// One experiment: what to run, on which data, how often. Fields that do
/// not apply to the experiment are still echoed into every result row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub experiment: Experiment,
    pub algo: JoinAlgorithm,
    pub build_tuples: u64,
    pub probe_tuples: u64,
    /// Column or array size for scans and memory benchmarks.
    pub array_bytes: u64,
    pub access_width: AccessWidth,
    /// Steps, writes or tasks, depending on the experiment.
    pub ops: u64,
    pub address_mask: Option<u64>,
    pub task_cost_ns: u64,
    pub selectivity: f64,
    pub scan_output: ScanOutput,
    pub scan_kernel: ScanKernel,
    pub scale_factor: f64,
    pub query: QueryId,
    pub radix_bits: (u32, u32),
    pub threads: usize,
    pub repetitions: usize,
    pub kernel_variant: KernelVariant,
    pub queue_kind: QueueKind,
    pub alloc_mode: AllocMode,
    pub placement: Placement,
    pub seed: u64,
    pub materialize: bool,
    /// `None` verifies when the inputs are at most 1 GB.
    pub verify: Option<bool>,
    pub output: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            experiment: Experiment::Join,
            algo: JoinAlgorithm::Rho,
            build_tuples: 1 << 20,
            probe_tuples: 1 << 22,
            array_bytes: 64 << 20,
            access_width: AccessWidth::W64,
            ops: 10_000_000,
            address_mask: None,
            task_cost_ns: 0,
            selectivity: 0.5,
            scan_output: ScanOutput::Bitvector,
            scan_kernel: ScanKernel::Auto,
            scale_factor: 0.1,
            query: QueryId::Q3,
            radix_bits: (7, 7),
            threads: 1,
            repetitions: 10,
            kernel_variant: KernelVariant::Naive,
            queue_kind: QueueKind::LockFree,
            alloc_mode: AllocMode::PreallocTouch,
            placement: Placement::None,
            seed: 42,
            materialize: false,
            verify: None,
            output: None,
            data_dir: std::env::var_os("OLAPBENCH_DATA_DIR").map(PathBuf::from),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.experiment == Experiment::Join {
            self.join_options().validate()?;
        }
        Ok(())
    }

    pub fn join_options(&self) -> JoinOptions {
        JoinOptions {
            threads: self.threads,
            radix_bits_pass1: self.radix_bits.0,
            radix_bits_pass2: self.radix_bits.1,
            kernel_variant: self.kernel_variant,
            queue_kind: self.queue_kind,
            materialize: self.materialize,
        }
    }

    /// Bytes of input data the experiment reads.
    pub fn input_bytes(&self) -> u64 {
        match self.experiment {
            Experiment::Join => (self.build_tuples + self.probe_tuples) * 8,
            Experiment::Query => (self.scale_factor * 6_000_000.0 * 36.0) as u64,
            Experiment::Contention => 0,
            _ => self.array_bytes,
        }
    }

    pub fn should_verify(&self) -> bool {
        self.verify.unwrap_or(self.input_bytes() <= 1 << 30)
    }
}

/// Parses `b1,b2`.
pub fn parse_radix_bits(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidArgument(format!("radix bits must look like `7,7`, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.as_str().parse::<Experiment>().unwrap(), e);
        }
        for p in ["none", "local", "remote", "interleave"] {
            assert_eq!(p.parse::<Placement>().unwrap().as_str(), p);
        }
        assert!("bogus".parse::<Experiment>().is_err());
    }

    #[test]
    fn radix_bits_parse() {
        assert_eq!(parse_radix_bits("7,7").unwrap(), (7, 7));
        assert_eq!(parse_radix_bits(" 4 , 10").unwrap(), (4, 10));
        assert!(parse_radix_bits("7").is_err());
        assert!(parse_radix_bits("a,b").is_err());
    }

    #[test]
    fn zero_repetitions_rejected() {
        let c = BenchConfig {
            repetitions: 0,
            ..BenchConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn verify_defaults_by_size() {
        let small = BenchConfig::default();
        assert!(small.should_verify());
        let big = BenchConfig {
            build_tuples: 100 << 20,
            probe_tuples: 400 << 20,
            ..BenchConfig::default()
        };
        assert!(!big.should_verify());
        assert!(BenchConfig {
            verify: Some(true),
            ..big
        }
        .should_verify());
    }
}
