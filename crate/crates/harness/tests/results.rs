use olap_core::joins::JoinAlgorithm;
use olapbench::{
    emit_results, format_float, read_csv, read_json, run_experiment, BenchConfig, Experiment,
    Format, Placement, ResultRecord, RowKind, Topology, CSV_HEADER,
};
use std::collections::BTreeMap;
use std::process::Command;

const GOLDEN_HEADER: &str = "experiment,environment,row_kind,repetition,algo,build_tuples,\
probe_tuples,array_bytes,access_width,ops,selectivity,scan_output,scan_kernel,scale_factor,query,\
radix_bits_pass1,radix_bits_pass2,threads,repetitions,kernel_variant,queue_kind,alloc_mode,\
placement,cores,seed,materialize,elapsed_ns,work,throughput,unit,result_count,phase_hist1,\
phase_copy1,phase_hist2,phase_copy2,phase_copy,phase_crack,phase_build,phase_probe,breakdown,\
page_faults,timer,verified";

fn small_join(reps: usize) -> BenchConfig {
    BenchConfig {
        experiment: Experiment::Join,
        build_tuples: 4_000,
        probe_tuples: 16_000,
        radix_bits: (3, 3),
        threads: 2,
        repetitions: reps,
        data_dir: None,
        ..BenchConfig::default()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Relative agreement at six significant digits.
fn same_6sig(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 5e-6 * a.abs().max(b.abs())
}

fn num(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row[col]
        .parse()
        .unwrap_or_else(|_| panic!("{col}={:?} is not a number", row[col]))
}

fn write_csv(records: &[ResultRecord]) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    emit_results(records, &path, Format::Csv).unwrap();
    (dir, path)
}

#[test]
fn header_matches_golden() {
    assert_eq!(CSV_HEADER.join(","), GOLDEN_HEADER);
    let (_d, path) = write_csv(&run_experiment(&small_join(2)).unwrap());
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next().unwrap(), GOLDEN_HEADER);
}

#[test]
fn csv_parses_without_schema() {
    let (_d, path) = write_csv(&run_experiment(&small_join(3)).unwrap());
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, CSV_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    let kinds: Vec<&str> = rows.iter().map(|r| &r[2]).collect();
    assert_eq!(kinds, ["raw", "raw", "raw", "mean", "stddev"]);
    for r in &rows {
        assert_eq!(r.len(), CSV_HEADER.len());
        for col in [
            "elapsed_ns",
            "work",
            "throughput",
            "build_tuples",
            "threads",
            "seed",
        ] {
            let i = CSV_HEADER.iter().position(|h| *h == col).unwrap();
            r[i].parse::<f64>().unwrap();
        }
        assert_eq!(&r[0], "join");
        assert_eq!(&r[1], "native");
        assert_eq!(&r[29], "rows/s");
    }
    // repetition index only on raw rows
    assert_eq!(&rows[0][3], "0");
    assert_eq!(&rows[2][3], "2");
    assert_eq!(&rows[3][3], "");
}

#[test]
fn json_round_trips() {
    let records = run_experiment(&small_join(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    emit_results(&records, &path, Format::Json).unwrap();
    assert_eq!(read_json(&path).unwrap(), records);
}

#[test]
fn summary_rows_recompute_from_raw_rows() {
    let (_d, path) = write_csv(&run_experiment(&small_join(10)).unwrap());
    let rows = read_csv(&path).unwrap();
    let raw: Vec<_> = rows.iter().filter(|r| r["row_kind"] == "raw").collect();
    assert_eq!(raw.len(), 10);
    let summary = |kind: &str| rows.iter().find(|r| r["row_kind"] == kind).unwrap();
    let (m, sd) = (summary("mean"), summary("stddev"));
    for col in [
        "elapsed_ns",
        "work",
        "result_count",
        "phase_build",
        "phase_probe",
        "phase_hist1",
    ] {
        let xs: Vec<f64> = raw.iter().map(|r| num(r, col)).collect();
        assert!(same_6sig(num(m, col), mean(&xs)), "{col} mean");
        assert!(same_6sig(num(sd, col), sample_sd(&xs)), "{col} stddev");
    }
    let rates: Vec<f64> = raw.iter().map(|r| num(r, "throughput")).collect();
    assert!(same_6sig(num(sd, "throughput"), sample_sd(&rates)));
}

#[test]
fn throughput_is_tuples_over_mean_elapsed() {
    let cfg = small_join(4);
    let (_d, path) = write_csv(&run_experiment(&cfg).unwrap());
    let rows = read_csv(&path).unwrap();
    let tuples = (cfg.build_tuples + cfg.probe_tuples) as f64;
    for r in &rows {
        if r["row_kind"] == "stddev" {
            continue;
        }
        let expected = tuples / (num(r, "elapsed_ns") / 1e9);
        let got = num(r, "throughput");
        assert!(
            (got - expected).abs() <= 1e-3 * expected,
            "{got} vs {expected}"
        );
    }
}

#[test]
fn every_algorithm_reports_its_phases() {
    let expect = [
        (JoinAlgorithm::Pht, &["phase_build", "phase_probe"][..]),
        (
            JoinAlgorithm::Rho,
            &[
                "phase_hist1",
                "phase_copy1",
                "phase_hist2",
                "phase_copy2",
                "phase_build",
                "phase_probe",
            ][..],
        ),
        (
            JoinAlgorithm::Crk,
            &["phase_copy", "phase_crack", "phase_build", "phase_probe"][..],
        ),
    ];
    for (algo, cols) in expect {
        let recs = run_experiment(&BenchConfig {
            algo,
            ..small_join(1)
        })
        .unwrap();
        let (_d, path) = write_csv(&recs);
        let row = &read_csv(&path).unwrap()[0];
        for c in CSV_HEADER.iter().filter(|c| c.starts_with("phase_")) {
            assert_eq!(!row[*c].is_empty(), cols.contains(c), "{algo} {c}");
        }
        assert_eq!(row["result_count"], "16000");
        assert_eq!(row["verified"], "true");
    }
}

#[test]
fn float_formatting() {
    for (v, s) in [
        (0.0, "0"),
        (1.0, "1"),
        (123456.0, "123456"),
        (1234567.0, "1234567"),
        (1234567.25, "1.23457e+06"),
        (0.5, "0.5"),
        (0.0001234, "0.0001234"),
        (0.00001234, "1.234e-05"),
        (-2.5, "-2.5"),
        (3.0e9, "3000000000"),
        (1e300, "1e+300"),
    ] {
        assert_eq!(format_float(v), s);
    }
}

#[test]
fn other_experiments_emit_summary_rows() {
    let base = BenchConfig {
        repetitions: 2,
        threads: 2,
        array_bytes: 1 << 20,
        ops: 20_000,
        scale_factor: 0.001,
        ..BenchConfig::default()
    };
    for e in Experiment::ALL {
        let recs = run_experiment(&BenchConfig {
            experiment: e,
            ..base.clone()
        })
        .unwrap();
        assert_eq!(recs.len(), 4, "{}", e.as_str());
        assert_eq!(recs[2].row_kind, RowKind::Mean);
        assert_eq!(recs[3].row_kind, RowKind::Stddev);
        assert!(recs.iter().all(|r| r.experiment == e.as_str()));
    }
}

#[test]
fn unavailable_placement_is_an_error() {
    let nodes = Topology::detect().map(|t| t.nodes.len()).unwrap_or(1);
    for p in [Placement::Remote, Placement::Interleave] {
        let res = run_experiment(&BenchConfig {
            placement: p,
            ..small_join(1)
        });
        if nodes < 2 {
            assert!(res.is_err(), "{}", p.as_str());
        }
    }
    let res = run_experiment(&BenchConfig {
        threads: 100_000,
        placement: Placement::Local,
        ..small_join(1)
    });
    assert!(res.is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(run_experiment(&BenchConfig {
        threads: 0,
        ..small_join(1)
    })
    .is_err());
    assert!(run_experiment(&BenchConfig {
        repetitions: 0,
        ..small_join(1)
    })
    .is_err());
    assert!(run_experiment(&BenchConfig {
        radix_bits: (20, 20),
        ..small_join(1)
    })
    .is_err());
}

#[test]
fn cli_writes_csv_and_reports_errors() {
    let bin = env!("CARGO_BIN_EXE_olapbench");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cli.csv");
    let status = Command::new(bin)
        .args([
            "join",
            "--build-tuples",
            "2000",
            "--probe-tuples",
            "8000",
            "--radix-bits",
            "2,2",
        ])
        .args(["--threads", "2", "--reps", "2", "--algo", "crk", "--out"])
        .arg(&out)
        .env_remove("OLAPBENCH_DATA_DIR")
        .status()
        .unwrap();
    assert!(status.success());
    let rows = read_csv(&out).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["algo"], "crk");

    let bad = Command::new(bin)
        .args([
            "join",
            "--build-tuples",
            "10",
            "--probe-tuples",
            "10",
            "--threads",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("olapbench:"));
}
