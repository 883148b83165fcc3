//! Command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use huge2_core::{count_path, AccessReport, DeconvConfig, DilationConfig, PathKind};
use serde::Serialize;

use crate::bench::{run_bench, BenchOptions, OutputFormat};
use crate::error::CliError;
use crate::format::{self, Stored};
use crate::layers::{self, LayerKind};
use crate::paths::{self, Operands};
use crate::verify::{self, Kernels};

#[derive(Debug, Parser)]
#[command(
    name = "huge2",
    version,
    about = "Transposed and dilated convolution kernels: verify, benchmark, run"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the randomized equivalence, partition, gradient and counter checks.
    Verify {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        trials: usize,
    },
    /// Time execution paths on a preset or a layer file.
    Bench(BenchArgs),
    /// Execute one path on tensors stored in HUG2 files.
    Run(RunArgs),
    /// Compare two HUG2 files elementwise.
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        atol: f64,
        #[arg(long, default_value_t = 1e-5)]
        rtol: f64,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Preset name (dcgan, cgan, dcgan_desk, cgan_desk) or layer file path.
    pub target: String,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "naive,decomposed,untangled"
    )]
    pub paths: Vec<String>,
    #[arg(long, default_value_t = 11)]
    pub repeat: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Output file; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = BenchOptions::default().seed)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunKind {
    Transpose,
    Dilated,
    Grad,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Kernel file (transpose and dilated).
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Upstream gradient file (grad).
    #[arg(long)]
    pub upstream: Option<PathBuf>,
    /// Kernel rows and columns `R,S` of the gradient to compute (grad).
    #[arg(long, value_parser = parse_pair)]
    pub kernel_size: Option<(usize, usize)>,
    #[arg(long, value_enum)]
    pub kind: RunKind,
    #[arg(long, value_parser = parse_pair, default_value = "1,1")]
    pub stride: (usize, usize),
    #[arg(long, value_parser = parse_pair, default_value = "0,0")]
    pub pad: (usize, usize),
    #[arg(long, value_parser = parse_pair, default_value = "0,0")]
    pub out_pad: (usize, usize),
    #[arg(long, value_parser = parse_pair, default_value = "1,1")]
    pub dilation: (usize, usize),
    #[arg(long, default_value = "untangled")]
    pub path: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

/// Parses `a,b`, or a single `a` meaning `a,a`.
pub fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("'{t}' is not a non-negative integer"))
    };
    match s.split_once(',') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => parse(s).map(|v| (v, v)),
    }
}

/// JSON form of an [`AccessReport`].
#[derive(Debug, Serialize)]
pub struct ReportJson {
    pub path: &'static str,
    pub input: [usize; 3],
    pub kernel: [usize; 4],
    pub stride: [usize; 2],
    pub pad: [usize; 2],
    pub out_pad: [usize; 2],
    pub dilation: [usize; 2],
    pub macs: u64,
    pub input_reads: u64,
    pub weight_reads: u64,
    pub output_writes: u64,
    pub total_accesses: u64,
    pub peak_live_floats: u64,
}

impl From<&AccessReport> for ReportJson {
    fn from(r: &AccessReport) -> Self {
        let g = &r.geometry;
        Self {
            path: r.path_name(),
            input: g.input,
            kernel: g.kernel,
            stride: [g.stride.0, g.stride.1],
            pad: [g.pad.0, g.pad.1],
            out_pad: [g.out_pad.0, g.out_pad.1],
            dilation: [g.dilation.0, g.dilation.1],
            macs: r.macs,
            input_reads: r.input_reads,
            weight_reads: r.weight_reads,
            output_writes: r.output_writes,
            total_accesses: r.total_accesses(),
            peak_live_floats: r.peak_live_floats,
        }
    }
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Write {
        path: path.to_owned(),
        source,
    }
}

pub fn cmd_verify(
    seed: u64,
    trials: usize,
    kernels: &Kernels,
    out: &mut impl Write,
) -> Result<(), CliError> {
    let outcomes = verify::run_verify(seed, trials, kernels)?;
    for o in &outcomes {
        writeln!(out, "{o}").map_err(write_err(Path::new("<stdout>")))?;
    }
    match outcomes.iter().find(|o| !o.passed) {
        Some(failed) => Err(CliError::Verification(format!(
            "property '{}' failed",
            failed.name
        ))),
        None => Ok(()),
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let layers = if layers::PRESETS.contains(&args.target.as_str()) {
        layers::preset(&args.target)?
    } else if Path::new(&args.target).exists() {
        let text = std::fs::read_to_string(&args.target).map_err(|source| format::IoError::Io {
            path: PathBuf::from(&args.target),
            source,
        })?;
        layers::parse_layer_file(&text)?
    } else {
        return Err(CliError::Usage(format!(
            "'{}' is neither a preset ({}) nor an existing layer file",
            args.target,
            layers::PRESETS.join(", ")
        )));
    };
    let opts = BenchOptions {
        paths: args.paths.clone(),
        repeat: args.repeat,
        warmup: args.warmup,
        threads: args.threads,
        seed: args.seed,
    };
    let report = run_bench(&layers, &opts)?;
    match &args.out {
        Some(path) => {
            let file = File::create(path).map_err(write_err(path))?;
            let mut w = BufWriter::new(file);
            report.write(args.format, &mut w)?;
            w.flush().map_err(write_err(path))?;
            for d in &report.derived {
                println!(
                    "{:<8} {:<20} speedup {:>6.2}x  access reduction {:.3}",
                    d.layer, d.path, d.speedup, d.reduction_ratio
                );
            }
        }
        None => report.write(args.format, io::stdout().lock())?,
    }
    Ok(())
}

/// Loads the operands, runs the path once, writes the result and returns the
/// access report.
pub fn cmd_run(args: &RunArgs) -> Result<AccessReport, CliError> {
    if args.threads == 0 {
        return Err(CliError::Usage("threads must be at least 1".into()));
    }
    let kind = match args.kind {
        RunKind::Transpose => LayerKind::Transpose,
        RunKind::Dilated => LayerKind::Dilated,
        RunKind::Grad => LayerKind::WeightGrad,
    };
    let path: PathKind = paths::resolve(&args.path, kind)?
        .ok_or_else(|| CliError::Usage(format!("path '{}' has no {kind} variant", args.path)))?;
    let required = |p: &Option<PathBuf>, flag: &str| {
        p.clone().ok_or_else(|| {
            CliError::Usage(format!("--{flag} is required for --kind {}", kind.name()))
        })
    };
    let input = format::load_tensor(&args.input)?;
    let ops = match kind {
        LayerKind::Transpose => {
            let kernel = format::load_kernel(required(&args.kernel, "kernel")?)?;
            let cfg = DeconvConfig::new(args.stride, args.pad, args.out_pad)?;
            cfg.output_dims(input.dims(), kernel.dims())?;
            Operands::Transpose { input, kernel, cfg }
        }
        LayerKind::Dilated => {
            let kernel = format::load_kernel(required(&args.kernel, "kernel")?)?;
            let cfg = DilationConfig::new(args.dilation, args.stride)?;
            Operands::Dilated {
                input,
                kernel,
                cfg,
                pad: args.pad,
            }
        }
        LayerKind::WeightGrad => {
            let upstream = format::load_tensor(required(&args.upstream, "upstream")?)?;
            let (r, s) = args.kernel_size.ok_or_else(|| {
                CliError::Usage("--kernel-size is required for --kind grad".into())
            })?;
            let kernel_dims = [r, s, input.channels(), upstream.channels()];
            Operands::Grad {
                input,
                upstream,
                stride: args.stride,
                pad: args.pad,
                kernel_dims,
            }
        }
    };
    let report = count_path(path, &ops.geometry())?;
    match paths::execute(path, &ops, args.threads)? {
        Stored::Tensor(t) => format::save_tensor(&t, &args.out)?,
        Stored::Kernel(k) => format::save_kernel(&k, &args.out)?,
    }
    Ok(report)
}

/// Compares two files; `Ok(message)` when they match within tolerance.
pub fn cmd_diff(a: &Path, b: &Path, atol: f64, rtol: f64) -> Result<String, CliError> {
    let x = format::load_any(a)?;
    let y = format::load_any(b)?;
    if x.dims() != y.dims() {
        return Err(CliError::Verification(format!(
            "shape mismatch: {:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    let (worst, ok) = verify::compare(x.data(), y.data(), atol, rtol);
    let summary = format!("{} elements, max abs diff {worst:.3e}", x.data().len());
    if ok {
        Ok(format!("{summary}: within atol {atol:e} + rtol {rtol:e}"))
    } else {
        Err(CliError::Verification(format!(
            "{summary}: exceeds atol {atol:e} + rtol {rtol:e}"
        )))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Verify { seed, trials } => {
            cmd_verify(seed, trials, &Kernels::default(), &mut io::stdout().lock())
        }
        Command::Bench(args) => cmd_bench(&args),
        Command::Run(args) => {
            let report = cmd_run(&args)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&ReportJson::from(&report))?
            );
            Ok(())
        }
        Command::Diff { a, b, atol, rtol } => {
            println!("{}", cmd_diff(&a, &b, atol, rtol)?);
            Ok(())
        }
    }
}

/// Parses arguments and runs the command, mapping errors to exit codes:
/// 0 success, 1 verification or benchmark failure, 2 usage or I/O error.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("huge2: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("2,3"), Ok((2, 3)));
        assert_eq!(parse_pair("4"), Ok((4, 4)));
        assert!(parse_pair("a,1").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
