use olap_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Raw,
    Mean,
    Stddev,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Raw => "raw",
            RowKind::Mean => "mean",
            RowKind::Stddev => "stddev",
        }
    }
}

/// One CSV row: a single repetition, or the mean or standard deviation of
/// all repetitions of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub environment: String,
    pub row_kind: RowKind,
    pub repetition: Option<u32>,
    pub algo: String,
    pub build_tuples: u64,
    pub probe_tuples: u64,
    pub array_bytes: u64,
    pub access_width: u32,
    pub ops: u64,
    pub selectivity: f64,
    pub scan_output: String,
    pub scan_kernel: String,
    pub scale_factor: f64,
    pub query: String,
    pub radix_bits_pass1: u32,
    pub radix_bits_pass2: u32,
    pub threads: u32,
    pub repetitions: u32,
    pub kernel_variant: String,
    pub queue_kind: String,
    pub alloc_mode: String,
    pub placement: String,
    pub cores: String,
    pub seed: u64,
    pub materialize: bool,
    pub elapsed_ns: f64,
    pub work: f64,
    pub throughput: f64,
    pub unit: String,
    pub result_count: Option<f64>,
    pub phase_hist1: Option<f64>,
    pub phase_copy1: Option<f64>,
    pub phase_hist2: Option<f64>,
    pub phase_copy2: Option<f64>,
    pub phase_copy: Option<f64>,
    pub phase_crack: Option<f64>,
    pub phase_build: Option<f64>,
    pub phase_probe: Option<f64>,
    /// `name=ns` pairs separated by `;`, in execution order.
    pub breakdown: String,
    pub page_faults: Option<f64>,
    pub timer: String,
    pub verified: Option<bool>,
}

/// Column order of the CSV output.
pub const CSV_HEADER: &[&str] = &[
    "experiment",
    "environment",
    "row_kind",
    "repetition",
    "algo",
    "build_tuples",
    "probe_tuples",
    "array_bytes",
    "access_width",
    "ops",
    "selectivity",
    "scan_output",
    "scan_kernel",
    "scale_factor",
    "query",
    "radix_bits_pass1",
    "radix_bits_pass2",
    "threads",
    "repetitions",
    "kernel_variant",
    "queue_kind",
    "alloc_mode",
    "placement",
    "cores",
    "seed",
    "materialize",
    "elapsed_ns",
    "work",
    "throughput",
    "unit",
    "result_count",
    "phase_hist1",
    "phase_copy1",
    "phase_hist2",
    "phase_copy2",
    "phase_copy",
    "phase_crack",
    "phase_build",
    "phase_probe",
    "breakdown",
    "page_faults",
    "timer",
    "verified",
];

/// Phase columns in header order, with the phase name they hold.
pub(crate) const PHASE_COLUMNS: [&str; 8] = [
    "hist1", "copy1", "hist2", "copy2", "copy", "crack", "build", "probe",
];

impl ResultRecord {
    pub(crate) fn phase_mut(&mut self, name: &str) -> Option<&mut Option<f64>> {
        Some(match name {
            "hist1" => &mut self.phase_hist1,
            "copy1" => &mut self.phase_copy1,
            "hist2" => &mut self.phase_hist2,
            "copy2" => &mut self.phase_copy2,
            "copy" => &mut self.phase_copy,
            "crack" => &mut self.phase_crack,
            "build" => &mut self.phase_build,
            "probe" => &mut self.phase_probe,
            _ => return None,
        })
    }

    pub fn phase(&self, name: &str) -> Option<f64> {
        match name {
            "hist1" => self.phase_hist1,
            "copy1" => self.phase_copy1,
            "hist2" => self.phase_hist2,
            "copy2" => self.phase_copy2,
            "copy" => self.phase_copy,
            "crack" => self.phase_crack,
            "build" => self.phase_build,
            "probe" => self.phase_probe,
            _ => None,
        }
    }

    fn csv_fields(&self) -> Vec<String> {
        let int = |v: u64| v.to_string();
        let f = |v: f64| format_float(v);
        let of = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        vec![
            self.experiment.clone(),
            self.environment.clone(),
            self.row_kind.as_str().to_string(),
            self.repetition.map(|r| r.to_string()).unwrap_or_default(),
            self.algo.clone(),
            int(self.build_tuples),
            int(self.probe_tuples),
            int(self.array_bytes),
            self.access_width.to_string(),
            int(self.ops),
            f(self.selectivity),
            self.scan_output.clone(),
            self.scan_kernel.clone(),
            f(self.scale_factor),
            self.query.clone(),
            self.radix_bits_pass1.to_string(),
            self.radix_bits_pass2.to_string(),
            self.threads.to_string(),
            self.repetitions.to_string(),
            self.kernel_variant.clone(),
            self.queue_kind.clone(),
            self.alloc_mode.clone(),
            self.placement.clone(),
            self.cores.clone(),
            int(self.seed),
            self.materialize.to_string(),
            f(self.elapsed_ns),
            f(self.work),
            f(self.throughput),
            self.unit.clone(),
            of(self.result_count),
            of(self.phase_hist1),
            of(self.phase_copy1),
            of(self.phase_hist2),
            of(self.phase_copy2),
            of(self.phase_copy),
            of(self.phase_crack),
            of(self.phase_build),
            of(self.phase_probe),
            self.breakdown.clone(),
            of(self.page_faults),
            self.timer.clone(),
            self.verified.map(|v| v.to_string()).unwrap_or_default(),
        ]
    }
}

/// Integral values below 2^53 print exactly. Everything else is formatted
/// like C's `%g`: six significant digits, scientific notation for exponents
/// below -4 or above 5, trailing zeros removed.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v.fract() == 0.0 && v.abs() < (1u64 << 53) as f64 {
        return format!("{}", v as i64);
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

/// Writes `records` to `path`, or to stdout when `path` is `-`.
pub fn emit_results(records: &[ResultRecord], path: &Path, format: Format) -> Result<()> {
    let sink: Box<dyn Write> = if path.as_os_str() == "-" {
        Box::new(std::io::stdout().lock())
    } else {
        Box::new(BufWriter::new(File::create(path)?))
    };
    write_results(records, sink, format)
}

pub(crate) fn write_results(
    records: &[ResultRecord],
    mut sink: impl Write,
    format: Format,
) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in records {
                w.write_record(r.csv_fields()).map_err(csv_err)?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut sink, records)?;
            sink.write_all(b"\n")?;
        }
    }
    sink.flush()?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Vec<ResultRecord>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Reads a CSV written by [`emit_results`] as header-keyed string maps.
pub fn read_csv(path: &Path) -> Result<Vec<std::collections::BTreeMap<String, String>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "{} has an unexpected header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(
            header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (123456.0, "123456"),
            (1234567.0, "1234567"),
            (1234567.5, "1.23457e+06"),
            (999999.6, "1e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (1.23456789, "1.23457"),
            (65536000.0, "65536000"),
            (65536000.5, "6.5536e+07"),
        ];
        for (v, s) in cases {
            assert_eq!(format_float(v), s, "{v}");
        }
    }

    #[test]
    fn header_has_unique_columns() {
        let mut h = CSV_HEADER.to_vec();
        h.sort();
        h.dedup();
        assert_eq!(h.len(), CSV_HEADER.len());
        for p in PHASE_COLUMNS {
            assert!(CSV_HEADER.contains(&format!("phase_{p}").as_str()));
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_results(&[], &mut buf, Format::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
    }
}
