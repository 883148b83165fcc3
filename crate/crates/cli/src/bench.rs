//! Wall-clock benchmarking of execution paths over a list of layers.

use std::io::Write;
use std::time::Instant;

use huge2_core::{count_path, reduction_ratio, AccessReport, PathKind};
use serde::Serialize;

use crate::error::CliError;
use crate::layers::LayerSpec;
use crate::paths::{self, Operands};

/// Relative tolerance for cross-path checksum agreement.
pub const CHECKSUM_RTOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub paths: Vec<String>,
    pub repeat: usize,
    pub warmup: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            paths: paths::SHORT_NAMES.iter().map(|s| s.to_string()).collect(),
            repeat: 11,
            warmup: 1,
            threads: 1,
            seed: 0x4855_4745,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub layer: String,
    pub path: PathKind,
    pub wall_ns_median: u64,
    pub wall_ns_min: u64,
    pub report: AccessReport,
    pub checksum: f64,
    pub threads: usize,
}

/// Speedup and access reduction of one path against the naive path of the
/// same layer.
#[derive(Debug, Clone)]
pub struct Derived {
    pub layer: String,
    pub path: PathKind,
    pub baseline: PathKind,
    pub speedup: f64,
    pub reduction_ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub results: Vec<BenchResult>,
    pub derived: Vec<Derived>,
}

/// One CSV/JSON row. Timing rows fill the first nine columns; derived rows
/// (`<path>_vs_naive`) fill `speedup` and `reduction_ratio`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Row {
    pub layer: String,
    pub path: String,
    pub wall_ns_median: Option<u64>,
    pub wall_ns_min: Option<u64>,
    pub macs: Option<u64>,
    pub input_reads: Option<u64>,
    pub weight_reads: Option<u64>,
    pub output_writes: Option<u64>,
    pub checksum: Option<f64>,
    pub threads: Option<usize>,
    pub speedup: Option<f64>,
    pub reduction_ratio: Option<f64>,
}

impl BenchReport {
    pub fn rows(&self) -> Vec<Row> {
        let timing = self.results.iter().map(|r| Row {
            layer: r.layer.clone(),
            path: r.path.name().to_owned(),
            wall_ns_median: Some(r.wall_ns_median),
            wall_ns_min: Some(r.wall_ns_min),
            macs: Some(r.report.macs),
            input_reads: Some(r.report.input_reads),
            weight_reads: Some(r.report.weight_reads),
            output_writes: Some(r.report.output_writes),
            checksum: Some(r.checksum),
            threads: Some(r.threads),
            speedup: None,
            reduction_ratio: None,
        });
        let derived = self.derived.iter().map(|d| Row {
            layer: d.layer.clone(),
            path: format!("{}_vs_naive", d.path.name()),
            wall_ns_median: None,
            wall_ns_min: None,
            macs: None,
            input_reads: None,
            weight_reads: None,
            output_writes: None,
            checksum: None,
            threads: None,
            speedup: Some(d.speedup),
            reduction_ratio: Some(d.reduction_ratio),
        });
        timing.chain(derived).collect()
    }

    pub fn write(&self, format: OutputFormat, out: impl Write) -> Result<(), CliError> {
        let rows = self.rows();
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(out);
                for row in &rows {
                    w.serialize(row)?;
                }
                w.flush().map_err(csv::Error::from)?;
            }
            OutputFormat::Json => {
                let mut out = out;
                serde_json::to_writer_pretty(&mut out, &rows)?;
                writeln!(out).map_err(serde_json::Error::io)?;
            }
        }
        Ok(())
    }
}

fn median(sorted: &[u64]) -> u64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

fn checksums_agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= CHECKSUM_RTOL * a.abs().max(b.abs())
}

/// Benchmarks every applicable path on every layer. Paths with no variant
/// for a layer's kind (`decomposed` on dilated or gradient layers) are
/// skipped for that layer.
pub fn run_bench(layers: &[LayerSpec], opts: &BenchOptions) -> Result<BenchReport, CliError> {
    if opts.paths.is_empty() {
        return Err(CliError::Usage("at least one path is required".into()));
    }
    if opts.repeat < 3 {
        return Err(CliError::Usage(format!(
            "repeat must be at least 3, got {}",
            opts.repeat
        )));
    }
    if opts.threads == 0 {
        return Err(CliError::Usage("threads must be at least 1".into()));
    }
    for name in &opts.paths {
        paths::check_name(name)?;
    }
    let mut report = BenchReport::default();
    for (index, layer) in layers.iter().enumerate() {
        let ops = Operands::random(layer, opts.seed ^ index as u64)?;
        let geometry = ops.geometry();
        let mut kinds: Vec<PathKind> = Vec::new();
        for name in &opts.paths {
            if let Some(p) = paths::resolve(name, layer.kind)? {
                if !kinds.contains(&p) {
                    kinds.push(p);
                }
            }
        }
        let first = report.results.len();
        for &path in &kinds {
            for _ in 0..opts.warmup {
                std::hint::black_box(paths::execute(path, &ops, opts.threads)?);
            }
            let mut times = Vec::with_capacity(opts.repeat);
            let mut checksum = 0.0;
            for _ in 0..opts.repeat {
                let start = Instant::now();
                let out = std::hint::black_box(paths::execute(path, &ops, opts.threads)?);
                times.push(start.elapsed().as_nanos() as u64);
                checksum = out.data().iter().map(|&v| v as f64).sum();
            }
            times.sort_unstable();
            let result = BenchResult {
                layer: layer.name.clone(),
                path,
                wall_ns_median: median(&times),
                wall_ns_min: times[0],
                report: count_path(path, &geometry)?,
                checksum,
                threads: opts.threads,
            };
            if let Some(base) = report.results.get(first) {
                if !checksums_agree(base.checksum, checksum) {
                    return Err(CliError::Verification(format!(
                        "layer {}: checksum of {} ({}) disagrees with {} ({})",
                        layer.name, path, checksum, base.path, base.checksum
                    )));
                }
            }
            report.results.push(result);
        }
        let layer_results = &report.results[first..];
        let naive = layer_results.iter().find(|r| {
            matches!(
                r.path,
                PathKind::NaiveZeroInsert | PathKind::DilatedNaive | PathKind::GradNaive
            )
        });
        if let Some(naive) = naive {
            for r in layer_results.iter().filter(|r| r.path != naive.path) {
                report.derived.push(Derived {
                    layer: layer.name.clone(),
                    path: r.path,
                    baseline: naive.path,
                    speedup: naive.wall_ns_median as f64 / r.wall_ns_median.max(1) as f64,
                    reduction_ratio: reduction_ratio(&naive.report, &r.report)?,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::preset;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[1, 5, 9]), 5);
        assert_eq!(median(&[1, 3, 5, 9]), 4);
    }

    #[test]
    fn option_validation() {
        let layers = preset("cgan_desk").unwrap();
        let opts = BenchOptions {
            repeat: 2,
            ..BenchOptions::default()
        };
        assert!(run_bench(&layers, &opts)
            .unwrap_err()
            .to_string()
            .contains("repeat"));
        let opts = BenchOptions {
            paths: vec!["naive".into(), "turbo".into()],
            ..BenchOptions::default()
        };
        let err = run_bench(&layers, &opts).unwrap_err().to_string();
        assert!(err.contains("valid paths"), "{err}");
    }

    #[test]
    fn rows_and_derived_speedup() {
        let layers = preset("cgan_desk").unwrap();
        let opts = BenchOptions {
            repeat: 3,
            warmup: 0,
            ..BenchOptions::default()
        };
        let report = run_bench(&layers, &opts).unwrap();
        assert_eq!(report.results.len(), 6);
        assert_eq!(report.derived.len(), 4);
        for d in &report.derived {
            let get = |p: PathKind| {
                report
                    .results
                    .iter()
                    .find(|r| r.layer == d.layer && r.path == p)
                    .unwrap()
                    .wall_ns_median as f64
            };
            let expected = get(d.baseline) / get(d.path);
            assert!((d.speedup - expected).abs() <= 1e-12 * expected);
        }
        let mut csv = Vec::new();
        report.write(OutputFormat::Csv, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(
            "layer,path,wall_ns_median,wall_ns_min,macs,input_reads,weight_reads,output_writes,checksum,"
        ));
        assert_eq!(text.lines().count(), 11);
    }
}
