use crate::config::{BenchConfig, Experiment, Placement, ScanOutput};
use crate::placement::{pin_threads, PlacementReport};
use crate::record::{ResultRecord, RowKind, PHASE_COLUMNS};
use crate::stats::{mean, stddev};
use olap_core::datagen::{
    generate_column, generate_fk_pair, generate_tpch_lite, read_relation, write_relation, Relation,
    TpchLiteDb,
};
use olap_core::joins::{JoinBuffers, JoinResult};
use olap_core::mem::page_faults;
use olap_core::microbench::{
    chase_chain, linear_read, linear_write, random_writes, read_pattern, LinearOptions,
    WRITE_PATTERN,
};
use olap_core::queries::{reference_count, run_query, QueryOptions};
use olap_core::scans::{
    scan_bitvector_into, scan_indexes_into, BitVector, IndexVector, ScanPredicate,
};
use olap_core::sync::contention_bench;
use olap_core::timing::{timed, Clock};
use olap_core::{team, Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Unit of the throughput column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    RowsPerSec,
    GbPerSec,
    NsPerOp,
    OpsPerSec,
    QueriesPerSec,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::RowsPerSec => "rows/s",
            Unit::GbPerSec => "GB/s",
            Unit::NsPerOp => "ns/op",
            Unit::OpsPerSec => "ops/s",
            Unit::QueriesPerSec => "queries/s",
        }
    }

    /// Throughput of `work` units done in `elapsed_ns`.
    pub fn rate(self, work: f64, elapsed_ns: f64) -> f64 {
        match self {
            Unit::NsPerOp if work > 0.0 => elapsed_ns / work,
            Unit::NsPerOp => 0.0,
            _ if elapsed_ns <= 0.0 => 0.0,
            Unit::GbPerSec => work / elapsed_ns,
            _ => work / (elapsed_ns / 1e9),
        }
    }
}

/// One timed repetition.
#[derive(Debug, Default)]
struct Measurement {
    elapsed_ns: u64,
    work: f64,
    result_count: Option<u64>,
    phases: BTreeMap<String, u64>,
    breakdown: Vec<(String, u64)>,
    page_faults: Option<u64>,
    verified: Option<bool>,
}

fn fault_delta(before: Option<u64>, after: Option<u64>) -> Option<u64> {
    Some(after?.saturating_sub(before?))
}

/// Runs `config.repetitions` timed repetitions and returns one raw row per
/// repetition followed by a mean and a standard-deviation row.
///
/// Inputs are generated (or loaded from the data directory) and work
/// buffers allocated before each timed region; verification runs after it.
pub fn run_experiment(config: &BenchConfig) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let report = pin_threads(config.placement, config.threads)?;
    let outcome = measure(config);
    if config.placement != Placement::None {
        team::set_affinity(None);
    }
    let (unit, ms) = outcome?;
    Ok(records(config, &report, unit, &ms))
}

fn measure(cfg: &BenchConfig) -> Result<(Unit, Vec<Measurement>)> {
    let verify = cfg.should_verify();
    match cfg.experiment {
        Experiment::Join => join(cfg, verify),
        Experiment::Scan => scan(cfg, verify),
        Experiment::Chase => {
            let mut ms = Vec::new();
            for _ in 0..cfg.repetitions {
                let r = chase_chain(cfg.array_bytes as usize, cfg.ops, cfg.seed)?;
                ms.push(Measurement {
                    elapsed_ns: r.result.elapsed_ns,
                    work: r.result.op_count as f64,
                    result_count: Some(r.final_index),
                    ..Measurement::default()
                });
            }
            Ok((Unit::NsPerOp, ms))
        }
        Experiment::RandomWrites => {
            let mut ms = Vec::new();
            for _ in 0..cfg.repetitions {
                let r = random_writes(
                    cfg.array_bytes as usize,
                    cfg.ops,
                    cfg.seed,
                    cfg.address_mask,
                )?;
                // the final write stores `ops`, and nothing overwrites it
                let verified = (verify && cfg.ops > 0).then(|| r.array.contains(&cfg.ops));
                check(verified, "final random write not found in the array")?;
                ms.push(Measurement {
                    elapsed_ns: r.result.elapsed_ns,
                    work: r.result.op_count as f64,
                    verified,
                    ..Measurement::default()
                });
            }
            Ok((Unit::NsPerOp, ms))
        }
        Experiment::LinearRead | Experiment::LinearWrite => {
            let read = cfg.experiment == Experiment::LinearRead;
            let opts = LinearOptions {
                threads: cfg.threads,
                keep_array: verify && !read,
                ..LinearOptions::default()
            };
            let words = cfg.array_bytes / 8;
            let expected_sum = (0..words).fold(0u64, |a, i| a.wrapping_add(read_pattern(i)));
            let mut ms = Vec::new();
            for _ in 0..cfg.repetitions {
                let width = cfg.access_width;
                let r = if read {
                    linear_read(cfg.array_bytes as usize, width, opts)?
                } else {
                    linear_write(cfg.array_bytes as usize, width, opts)?
                };
                let verified = verify.then(|| match &r.array {
                    _ if read => r.checksum == expected_sum,
                    Some(a) => a.iter().all(|&w| w == WRITE_PATTERN),
                    None => false,
                });
                check(verified, "linear pass did not touch every word")?;
                ms.push(Measurement {
                    elapsed_ns: r.result.elapsed_ns,
                    work: r.result.bytes_touched as f64,
                    result_count: Some(r.passes),
                    verified,
                    ..Measurement::default()
                });
            }
            Ok((Unit::GbPerSec, ms))
        }
        Experiment::Contention => {
            let mut ms = Vec::new();
            for _ in 0..cfg.repetitions {
                let r = contention_bench(cfg.queue_kind, cfg.threads, cfg.ops, cfg.task_cost_ns)?;
                let verified = Some(r.lost == 0 && r.duplicated == 0);
                check(verified, "tasks were lost or consumed twice")?;
                ms.push(Measurement {
                    elapsed_ns: r.result.elapsed_ns,
                    work: r.result.op_count as f64,
                    result_count: Some(r.contended),
                    verified,
                    ..Measurement::default()
                });
            }
            Ok((Unit::OpsPerSec, ms))
        }
        Experiment::Query => query(cfg, verify),
    }
}

fn check(verified: Option<bool>, what: &str) -> Result<()> {
    match verified {
        Some(false) => Err(Error::Verification(what.to_string())),
        _ => Ok(()),
    }
}

fn join(cfg: &BenchConfig, verify: bool) -> Result<(Unit, Vec<Measurement>)> {
    let (build, probe) = load_fk_pair(cfg)?;
    let opts = cfg.join_options();
    let mut ms = Vec::new();
    for _ in 0..cfg.repetitions {
        let mut buffers =
            JoinBuffers::for_join(cfg.algo, build.len(), probe.len(), &opts, cfg.alloc_mode)?;
        let f0 = page_faults();
        let res = cfg.algo.run_with(&build, &probe, &opts, &mut buffers)?;
        let f1 = page_faults();
        drop(buffers);
        let verified = verify.then(|| fk_join_ok(&res, probe.len()));
        check(
            verified,
            "join result differs from the foreign-key expectation",
        )?;
        ms.push(Measurement {
            elapsed_ns: res.elapsed_ns,
            work: (build.len() + probe.len()) as f64,
            result_count: Some(res.match_count),
            phases: res.phase_times,
            page_faults: fault_delta(f0, f1),
            verified,
            ..Measurement::default()
        });
    }
    Ok((Unit::RowsPerSec, ms))
}

/// Every probe tuple matches once, and generated payloads equal keys.
fn fk_join_ok(res: &JoinResult, probe_len: usize) -> bool {
    res.match_count == probe_len as u64
        && res.output.as_ref().is_none_or(|out| {
            out.len() == probe_len
                && out
                    .iter()
                    .all(|r| r.left_payload == r.key && r.right_payload == r.key)
        })
}

fn load_fk_pair(cfg: &BenchConfig) -> Result<(Relation, Relation)> {
    let Some(dir) = cfg.data_dir.as_deref() else {
        return generate_fk_pair(cfg.build_tuples, cfg.probe_tuples, cfg.seed);
    };
    let stem = format!(
        "fk-b{}-p{}-s{}",
        cfg.build_tuples, cfg.probe_tuples, cfg.seed
    );
    let (bp, pp) = (
        dir.join(format!("{stem}.build.rel")),
        dir.join(format!("{stem}.probe.rel")),
    );
    if bp.exists() && pp.exists() {
        return Ok((read_relation(&bp)?, read_relation(&pp)?));
    }
    let (b, p) = generate_fk_pair(cfg.build_tuples, cfg.probe_tuples, cfg.seed)?;
    std::fs::create_dir_all(dir)?;
    write_relation(&bp, &b)?;
    write_relation(&pp, &p)?;
    Ok((b, p))
}

fn load_tpch(cfg: &BenchConfig) -> Result<TpchLiteDb> {
    let Some(dir) = cfg.data_dir.as_deref() else {
        return generate_tpch_lite(cfg.scale_factor, cfg.seed);
    };
    let sub = dir.join(format!("tpch-sf{}-s{}", cfg.scale_factor, cfg.seed));
    if sub.join("manifest.json").exists() {
        return TpchLiteDb::read_dir(&sub);
    }
    let db = generate_tpch_lite(cfg.scale_factor, cfg.seed)?;
    db.write_dir(&sub)?;
    Ok(db)
}

fn scan(cfg: &BenchConfig, verify: bool) -> Result<(Unit, Vec<Measurement>)> {
    let column = generate_column(cfg.array_bytes, cfg.seed);
    let pred = ScanPredicate::for_selectivity(cfg.selectivity)?;
    let expected = column.values().iter().filter(|&&v| pred.matches(v)).count() as u64;
    let rows = column.len();
    let mut ms = Vec::new();
    for _ in 0..cfg.repetitions {
        let (count, elapsed, faults) = match cfg.scan_output {
            ScanOutput::Bitvector => {
                let mut out = BitVector::zeroed(rows, cfg.alloc_mode)?;
                let f0 = page_faults();
                let (n, ns) = timed(|| {
                    scan_bitvector_into(&column, pred, cfg.threads, cfg.scan_kernel, &mut out)
                });
                (n?, ns, fault_delta(f0, page_faults()))
            }
            ScanOutput::Indexes => {
                let mut out = IndexVector::with_rows(rows, cfg.alloc_mode)?;
                let f0 = page_faults();
                let (n, ns) = timed(|| {
                    scan_indexes_into(&column, pred, cfg.threads, cfg.scan_kernel, &mut out)
                });
                (n?, ns, fault_delta(f0, page_faults()))
            }
        };
        let verified = verify.then_some(count == expected);
        check(verified, "scan match count differs from a scalar count")?;
        ms.push(Measurement {
            elapsed_ns: elapsed,
            work: rows as f64,
            result_count: Some(count),
            page_faults: faults,
            verified,
            ..Measurement::default()
        });
    }
    Ok((Unit::GbPerSec, ms))
}

fn query(cfg: &BenchConfig, verify: bool) -> Result<(Unit, Vec<Measurement>)> {
    let db = load_tpch(cfg)?;
    let opts = QueryOptions {
        threads: cfg.threads,
        join: cfg.algo,
        kernel_variant: cfg.kernel_variant,
        queue_kind: cfg.queue_kind,
    };
    let mut ms = Vec::new();
    for _ in 0..cfg.repetitions {
        let f0 = page_faults();
        let r = run_query(cfg.query, &db, &opts)?;
        ms.push(Measurement {
            elapsed_ns: r.total_ns,
            work: 1.0,
            result_count: Some(r.count),
            breakdown: r.operator_times,
            page_faults: fault_delta(f0, page_faults()),
            ..Measurement::default()
        });
    }
    if verify {
        // nested loops are only affordable on tiny databases; larger ones
        // are checked against a single-threaded run with another join
        let expected = if cfg.scale_factor <= 0.01 {
            reference_count(cfg.query, &db)
        } else {
            let other = QueryOptions {
                threads: 1,
                join: match cfg.algo {
                    olap_core::joins::JoinAlgorithm::Pht => olap_core::joins::JoinAlgorithm::Rho,
                    _ => olap_core::joins::JoinAlgorithm::Pht,
                },
                ..QueryOptions::default()
            };
            run_query(cfg.query, &db, &other)?.count
        };
        for m in &mut ms {
            m.verified = Some(m.result_count == Some(expected));
            check(m.verified, "query count differs from the reference")?;
        }
    }
    Ok((Unit::QueriesPerSec, ms))
}

fn base_record(cfg: &BenchConfig, report: &PlacementReport, unit: Unit) -> ResultRecord {
    ResultRecord {
        experiment: cfg.experiment.as_str().into(),
        environment: "native".into(),
        row_kind: RowKind::Raw,
        repetition: None,
        algo: cfg.algo.as_str().into(),
        build_tuples: cfg.build_tuples,
        probe_tuples: cfg.probe_tuples,
        array_bytes: cfg.array_bytes,
        access_width: cfg.access_width.bits(),
        ops: cfg.ops,
        selectivity: cfg.selectivity,
        scan_output: cfg.scan_output.as_str().into(),
        scan_kernel: cfg.scan_kernel.as_str().into(),
        scale_factor: cfg.scale_factor,
        query: cfg.query.to_string(),
        radix_bits_pass1: cfg.radix_bits.0,
        radix_bits_pass2: cfg.radix_bits.1,
        threads: cfg.threads as u32,
        repetitions: cfg.repetitions as u32,
        kernel_variant: cfg.kernel_variant.as_str().into(),
        queue_kind: cfg.queue_kind.as_str().into(),
        alloc_mode: cfg.alloc_mode.as_str().into(),
        placement: cfg.placement.as_str().into(),
        cores: report
            .cores
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(";"),
        seed: cfg.seed,
        materialize: cfg.materialize,
        elapsed_ns: 0.0,
        work: 0.0,
        throughput: 0.0,
        unit: unit.as_str().into(),
        result_count: None,
        phase_hist1: None,
        phase_copy1: None,
        phase_hist2: None,
        phase_copy2: None,
        phase_copy: None,
        phase_crack: None,
        phase_build: None,
        phase_probe: None,
        breakdown: String::new(),
        page_faults: None,
        timer: Clock::global().source().as_str().into(),
        verified: None,
    }
}

fn breakdown_string(pairs: &[(String, f64)]) -> String {
    pairs
        .iter()
        .map(|(n, v)| format!("{n}={}", crate::record::format_float(*v)))
        .collect::<Vec<_>>()
        .join(";")
}

/// Column of a per-repetition value, or `None` if any repetition lacks it.
fn column(ms: &[Measurement], f: impl Fn(&Measurement) -> Option<f64>) -> Option<Vec<f64>> {
    ms.iter().map(f).collect()
}

fn records(
    cfg: &BenchConfig,
    report: &PlacementReport,
    unit: Unit,
    ms: &[Measurement],
) -> Vec<ResultRecord> {
    let base = base_record(cfg, report, unit);
    let mut out = Vec::with_capacity(ms.len() + 2);
    for (i, m) in ms.iter().enumerate() {
        let mut r = base.clone();
        r.repetition = Some(i as u32);
        r.elapsed_ns = m.elapsed_ns as f64;
        r.work = m.work;
        r.throughput = unit.rate(m.work, m.elapsed_ns as f64);
        r.result_count = m.result_count.map(|c| c as f64);
        for (name, &ns) in &m.phases {
            if let Some(slot) = r.phase_mut(name) {
                *slot = Some(ns as f64);
            }
        }
        let pairs: Vec<(String, f64)> = m
            .breakdown
            .iter()
            .map(|(n, t)| (n.clone(), *t as f64))
            .collect();
        r.breakdown = breakdown_string(&pairs);
        r.page_faults = m.page_faults.map(|f| f as f64);
        r.verified = m.verified;
        out.push(r);
    }

    let elapsed: Vec<f64> = ms.iter().map(|m| m.elapsed_ns as f64).collect();
    let work: Vec<f64> = ms.iter().map(|m| m.work).collect();
    let rates: Vec<f64> = out.iter().map(|r| r.throughput).collect();
    let counts = column(ms, |m| m.result_count.map(|c| c as f64));
    let faults = column(ms, |m| m.page_faults.map(|c| c as f64));
    let verified = ms
        .iter()
        .map(|m| m.verified)
        .collect::<Option<Vec<bool>>>()
        .map(|v| v.iter().all(|&b| b));
    let names: Vec<String> = ms
        .first()
        .map(|m| m.breakdown.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();

    for kind in [RowKind::Mean, RowKind::Stddev] {
        let stat = |xs: &[f64]| match kind {
            RowKind::Stddev => stddev(xs),
            _ => mean(xs),
        };
        let mut r = base.clone();
        r.row_kind = kind;
        r.elapsed_ns = stat(&elapsed);
        r.work = stat(&work);
        r.throughput = match kind {
            RowKind::Stddev => stddev(&rates),
            _ => unit.rate(mean(&work), mean(&elapsed)),
        };
        r.result_count = counts.as_deref().map(stat);
        for name in PHASE_COLUMNS {
            if let Some(xs) = column(ms, |m| m.phases.get(name).map(|&v| v as f64)) {
                *r.phase_mut(name).expect("phase column") = Some(stat(&xs));
            }
        }
        let pairs: Vec<(String, f64)> = names
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                let xs = column(ms, |m| m.breakdown.get(i).map(|(_, t)| *t as f64))?;
                Some((n.clone(), stat(&xs)))
            })
            .collect();
        r.breakdown = breakdown_string(&pairs);
        r.page_faults = faults.as_deref().map(stat);
        r.verified = verified;
        out.push(r);
    }
    out
}

/// Writes a generated foreign-key pair into `dir` as relation files.
pub fn write_fk_pair(dir: &Path, cfg: &BenchConfig) -> Result<()> {
    let with_dir = BenchConfig {
        data_dir: Some(dir.to_path_buf()),
        ..cfg.clone()
    };
    load_fk_pair(&with_dir).map(|_| ())
}

/// Writes a generated TPC-H-lite database into a subdirectory of `dir`.
pub fn write_tpch(dir: &Path, cfg: &BenchConfig) -> Result<()> {
    let with_dir = BenchConfig {
        data_dir: Some(dir.to_path_buf()),
        ..cfg.clone()
    };
    load_tpch(&with_dir).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units() {
        assert_eq!(Unit::RowsPerSec.rate(10.0, 1e9), 10.0);
        assert_eq!(Unit::GbPerSec.rate(2e9, 1e9), 2.0);
        assert_eq!(Unit::NsPerOp.rate(4.0, 100.0), 25.0);
        assert_eq!(Unit::NsPerOp.rate(0.0, 100.0), 0.0);
        assert_eq!(Unit::OpsPerSec.rate(5.0, 0.0), 0.0);
    }
}
