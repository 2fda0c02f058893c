//! `mic`: build, validate and inspect interleaved in-context corpora.
//!
//! Exit codes: 0 success, 1 invariant or layout violations, 2 manifest
//! error, 3 I/O error.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mic_core::layout::DEFAULT_VISUAL_SLOTS;
use mic_core::manifest::{Overrides, PipelineManifest};
use mic_core::pipeline;
use mic_core::Error;

const EXIT_VIOLATIONS: u8 = 1;
const EXIT_MANIFEST: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "mic", version, about = "Compile annotated vision-language datasets into interleaved in-context corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a corpus from a pipeline manifest.
    Build {
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        budget: Option<u64>,
        /// Exemplars per instance for datasets that take them.
        #[arg(long)]
        shots: Option<u32>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Check every line of a corpus against the instance invariants.
    Validate { corpus: PathBuf },
    /// Print the mix plan a manifest resolves to.
    Stats {
        manifest: PathBuf,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate token layout of every instance and check alignment.
    LayoutCheck {
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VISUAL_SLOTS)]
        slots: u32,
        /// Per-instance reports; defaults to `<corpus>.layout.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build {
            manifest,
            seed,
            out,
            budget,
            shots,
            workers,
        } => build(
            &manifest,
            Overrides {
                seed,
                out,
                budget,
                shots,
                workers,
            },
        ),
        Command::Validate { corpus } => validate(&corpus),
        Command::Stats { manifest, budget, seed } => stats(
            &manifest,
            Overrides {
                seed,
                budget,
                ..Default::default()
            },
        ),
        Command::LayoutCheck { corpus, slots, out } => layout_check(&corpus, slots, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Manifest(_)
        | Error::UnknownTask(_)
        | Error::EmptyPlan
        | Error::ZeroCount(_)
        | Error::EmptyDataset(_)
        | Error::EmptyBank(_)
        | Error::Template(_) => EXIT_MANIFEST,
        _ => EXIT_VIOLATIONS,
    }
}

fn load_manifest(path: &Path, overrides: &Overrides) -> Result<PipelineManifest, Error> {
    let mut manifest = match PipelineManifest::load(path) {
        // an unreadable manifest is a manifest problem, not a corpus I/O one
        Err(Error::Io { path, source }) => return Err(Error::Manifest(format!("{}: {source}", path.display()))),
        other => other?,
    };
    manifest.apply(overrides)?;
    Ok(manifest)
}

fn build(manifest: &Path, overrides: Overrides) -> Result<u8, Error> {
    let manifest = load_manifest(manifest, &overrides)?;
    let report = pipeline::build(&manifest)?;
    let out = manifest.output.as_deref().unwrap_or(Path::new(""));
    eprintln!("wrote {} instance(s) to {}", report.instances, out.display());
    for d in &report.datasets {
        eprintln!(
            "  {:<20} N_d={:<8} p_d={:.6} expected={:<8} drawn={:<8} rejected={}",
            d.name, d.n_d, d.p_d, d.expected, d.drawn, d.rejected_lines
        );
    }
    for (w, n) in &report.warnings {
        eprintln!("  warning {w}: {n}");
    }
    eprintln!(
        "  {:.0} records/s; report at {}",
        report.throughput.records_per_second,
        pipeline::report_path(out).display()
    );
    Ok(0)
}

fn validate(corpus: &Path) -> Result<u8, Error> {
    let report = pipeline::validate_corpus(corpus)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    eprintln!(
        "{} line(s), {} with violations",
        report.lines,
        report.violations.len()
    );
    Ok(if report.is_clean() { 0 } else { EXIT_VIOLATIONS })
}

fn stats(manifest: &Path, overrides: Overrides) -> Result<u8, Error> {
    let manifest = load_manifest(manifest, &overrides)?;
    let datasets = pipeline::load_datasets(&manifest).map_err(|e| match e {
        Error::Io { path, source } => Error::Manifest(format!("{}: {source}", path.display())),
        e => e,
    })?;
    let plan = pipeline::plan_for(&manifest, &datasets)?;
    print!("{}", pipeline::format_stats(&plan));
    Ok(0)
}

fn layout_check(corpus: &Path, slots: u32, out: Option<PathBuf>) -> Result<u8, Error> {
    if slots == 0 {
        return Err(Error::Manifest("slots must be positive".into()));
    }
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| Error::Io { path: p, source }
    };
    let out = out.unwrap_or_else(|| {
        let mut s = corpus.as_os_str().to_owned();
        s.push(".layout.jsonl");
        PathBuf::from(s)
    });
    let reader = BufReader::new(File::open(corpus).map_err(io(corpus))?);
    let sink = BufWriter::new(File::create(&out).map_err(io(&out))?);
    let summary = pipeline::layout_check(reader, slots, sink, corpus)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    eprintln!(
        "{} instance(s), {} with layout violations, {} unreadable; details in {}",
        summary.instances,
        summary.with_violations,
        summary.unreadable,
        out.display()
    );
    Ok(if summary.is_clean() { 0 } else { EXIT_VIOLATIONS })
}
