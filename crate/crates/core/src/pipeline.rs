//! End-to-end corpus build, validation, mix statistics and layout checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::{deserialize, serialize_into};
use crate::declaration::{declare_images, push_declaration, DeclarationStyle, Placement, DECLARATION_SEPARATOR, IMAGE_SLOT};
use crate::error::{Error, Result};
use crate::icl::{assemble_instance, sample_exemplar_positions, Exemplar};
use crate::ingest::{ingest, route, AdapterKind, DatasetDescriptor, IngestReport, Rejection, Route};
use crate::interconnect::{crop_entities, video_frames, EntityMap, ReferenceTable};
use crate::layout::{check_alignment, simulate_layout, AlignmentViolation, LayoutReport, WhitespaceTokenizer};
use crate::manifest::{BudgetSpec, PipelineManifest};
use crate::mixer::{budget_from_fraction, sample_stream, Draw, MixEntry, MixPlan};
use crate::model::{Draft, InterleavedInstance, SourceRecord};
use crate::seed::{substream, Rng};
use crate::template::{fill_template, RecordShape, TemplateLibrary};

/// Draws compiled per parallel batch.
const BATCH: usize = 4096;

/// Rejections kept per dataset in the build report.
const MAX_REPORTED_REJECTIONS: usize = 100;

pub const WARN_TEMPLATE_FALLBACK: &str = "template_fallback";
pub const WARN_PLACEMENT_FALLBACK: &str = "placement_fallback";
pub const WARN_EXEMPLARS_CLAMPED: &str = "exemplars_clamped";
pub const WARN_UNUSED_ENTITIES: &str = "unused_entities";
pub const WARN_REJECTED_LINES: &str = "rejected_lines";

/// One dataset, fully ingested.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub descriptor: DatasetDescriptor,
    pub records: Vec<SourceRecord>,
    pub report: IngestReport,
}

pub fn load_dataset(descriptor: &DatasetDescriptor) -> Result<LoadedDataset> {
    let mut it = ingest(descriptor)?.reject_duplicate_ids();
    let records: Vec<SourceRecord> = it.by_ref().collect();
    let report = it.into_report()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(descriptor.name.clone()));
    }
    Ok(LoadedDataset {
        descriptor: descriptor.clone(),
        records,
        report,
    })
}

pub fn load_datasets(manifest: &PipelineManifest) -> Result<Vec<LoadedDataset>> {
    manifest.datasets.iter().map(load_dataset).collect()
}

/// The mix plan for `datasets` under the manifest's budget and seed.
pub fn plan_for(manifest: &PipelineManifest, datasets: &[LoadedDataset]) -> Result<MixPlan> {
    let entries: Vec<MixEntry> = datasets
        .iter()
        .map(|d| MixEntry {
            name: d.descriptor.name.clone(),
            count: d.records.len() as u64,
            no_exemplars: d.descriptor.no_exemplars,
            n_shots: d.descriptor.n_shots,
        })
        .collect();
    let budget = match manifest.mix.budget {
        BudgetSpec::Absolute(b) => b,
        BudgetSpec::Fraction(f) => budget_from_fraction(entries.iter().map(|e| e.count).sum(), f),
    };
    MixPlan::new(entries, budget, manifest.mix.seed)
}

/// Human-readable plan: one line per dataset with `N_d`, `p_d` and the
/// expected number of draws.
pub fn format_stats(plan: &MixPlan) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "budget {} seed {}", plan.budget, plan.seed);
    let _ = writeln!(out, "{:<24} {:>12} {:>10} {:>12}", "dataset", "N_d", "p_d", "expected");
    for ((d, p), e) in plan.datasets.iter().zip(&plan.probabilities).zip(plan.expected_counts()) {
        let _ = writeln!(out, "{:<24} {:>12} {:>10.6} {:>12}", d.name, d.count, p, e);
    }
    out
}

/// Per-record compilation settings.
#[derive(Debug, Clone)]
pub struct Compiler {
    pub library: TemplateLibrary,
    pub style: DeclarationStyle,
    pub placement: Placement,
    pub include_parent: bool,
    pub frames_per_video: u32,
}

/// A compiled query plus what went into it.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub instance: InterleavedInstance,
    /// `task#index` of the query template, or `fallback:<placement>`.
    pub template: String,
    pub warnings: Vec<&'static str>,
}

struct Part {
    draft: Draft,
    template: String,
}

impl Compiler {
    pub fn from_manifest(manifest: &PipelineManifest) -> Result<Self> {
        let library = match &manifest.templates {
            Some(path) => TemplateLibrary::load(path)?,
            None => TemplateLibrary::builtin(),
        };
        for d in &manifest.datasets {
            if library.get(&d.task).is_none() {
                return Err(Error::UnknownTask(d.task.clone()));
            }
        }
        Ok(Compiler {
            library,
            style: manifest.style,
            placement: manifest.placement,
            include_parent: manifest.include_parent,
            frames_per_video: manifest.frames_per_video,
        })
    }

    /// Compiles record `pos` of `dataset` as the query of one instance,
    /// with exemplars drawn from the same dataset.
    pub fn compile(&self, dataset: &LoadedDataset, pos: usize, cycle: u64, seed: u64) -> Result<Compiled> {
        let desc = &dataset.descriptor;
        let record = &dataset.records[pos];
        let mut rng = substream(
            seed,
            &[b"instance", desc.name.as_bytes(), record.id.as_bytes(), &cycle.to_le_bytes()],
        );
        let mut warnings = Vec::new();
        let query = self.compile_part(desc, record, &mut rng, &mut warnings)?;

        let mut exemplars = Vec::new();
        if !desc.no_exemplars && desc.n_shots > 0 {
            let sample = sample_exemplar_positions(dataset.records.len(), Some(pos), desc.n_shots as usize, &mut rng);
            if sample.clamped {
                warnings.push(WARN_EXEMPLARS_CLAMPED);
            }
            for p in sample.picked {
                let part = self.compile_part(desc, &dataset.records[p], &mut rng, &mut warnings)?;
                exemplars.push(Exemplar::from(part.draft));
            }
        }
        let instance = assemble_instance(&exemplars, query.draft)?;
        Ok(Compiled {
            instance,
            template: query.template,
            warnings,
        })
    }

    fn compile_part(
        &self,
        desc: &DatasetDescriptor,
        record: &SourceRecord,
        rng: &mut Rng,
        warnings: &mut Vec<&'static str>,
    ) -> Result<Part> {
        match route(record, desc) {
            Route::Plain => self.templated(desc, record, false, rng, warnings),
            Route::Video => {
                let video = record
                    .images
                    .first()
                    .ok_or_else(|| Error::MissingField("video".into()))?;
                let frame_count = record
                    .video_frame_count
                    .ok_or_else(|| Error::MissingField("video_frame_count".into()))?;
                let framed = SourceRecord {
                    images: video_frames(video, frame_count, self.frames_per_video),
                    ..record.clone()
                };
                self.templated(desc, &framed, false, rng, warnings)
            }
            Route::Entity => {
                let resolved = self.resolve_entities(record, warnings)?;
                self.templated(desc, &resolved, true, rng, warnings)
            }
        }
    }

    /// Replaces entity mentions with proxy tokens and lays out the images to
    /// declare: the parent scene (optionally) then one crop per mentioned
    /// entity, in first-mention order.
    fn resolve_entities(&self, record: &SourceRecord, warnings: &mut Vec<&'static str>) -> Result<SourceRecord> {
        let parent = record
            .images
            .first()
            .ok_or_else(|| Error::MissingField("image".into()))?;
        let entities: EntityMap = record.entity_boxes.iter().flatten().collect();
        let crops = crop_entities(parent, &entities)?;
        let mut table = ReferenceTable::new(&crops);
        let offset = u32::from(self.include_parent);
        let question = record.question.as_deref().map(|q| table.rewrite(q, &crops, offset));
        let options = record
            .options
            .as_ref()
            .map(|opts| opts.iter().map(|o| table.rewrite(o, &crops, offset)).collect());
        let answer = table.rewrite(&record.answer, &crops, offset);
        if !table.unused().is_empty() {
            warnings.push(WARN_UNUSED_ENTITIES);
        }
        let mut images = Vec::with_capacity(table.mentioned().len() + 1);
        if self.include_parent {
            images.push(parent.clone());
        }
        images.extend(table.mentioned().iter().map(|&i| crops[i].1.clone()));
        Ok(SourceRecord {
            images,
            question,
            options,
            answer,
            entity_boxes: None,
            ..record.clone()
        })
    }

    fn templated(
        &self,
        desc: &DatasetDescriptor,
        record: &SourceRecord,
        has_references: bool,
        rng: &mut Rng,
        warnings: &mut Vec<&'static str>,
    ) -> Result<Part> {
        let inline_text = record.question.as_deref().is_some_and(|q| q.contains(IMAGE_SLOT));
        if !(self.placement == Placement::Inline && inline_text) {
            let bank = self
                .library
                .get(&desc.task)
                .ok_or_else(|| Error::UnknownTask(desc.task.clone()))?;
            let shape = RecordShape::of(record, has_references);
            if let Some((i, template)) = bank.choose_compatible(&shape, rng) {
                return Ok(Part {
                    draft: fill_template(template, record, self.style)?,
                    template: format!("{}#{i}", desc.task),
                });
            }
            warnings.push(WARN_TEMPLATE_FALLBACK);
        }
        if has_references {
            return Ok(Part {
                draft: declare_referenced(record, self.style),
                template: "fallback:prefix".into(),
            });
        }
        match declare_images(record, self.style, self.placement) {
            Ok(draft) => Ok(Part {
                draft,
                template: format!("fallback:{}", placement_name(self.placement)),
            }),
            Err(Error::Placement(_)) => {
                warnings.push(WARN_PLACEMENT_FALLBACK);
                Ok(Part {
                    draft: declare_images(record, self.style, Placement::Prefix)?,
                    template: "fallback:prefix".into(),
                })
            }
            Err(e) => Err(e),
        }
    }
}

/// Prefix declarations for a record whose text already names its images.
fn declare_referenced(record: &SourceRecord, style: DeclarationStyle) -> Draft {
    let mut draft = Draft::new(record.id.clone(), record.dataset.clone());
    for (j, asset) in record.images.iter().enumerate() {
        push_declaration(&mut draft, j as u32, style, asset.clone());
        draft.push_text(DECLARATION_SEPARATOR);
    }
    draft.push_text(record.question.as_deref().unwrap_or(""));
    if let Some(options) = &record.options {
        draft.push_text(" Options: ");
        draft.push_text(&options.join(crate::template::OPTIONS_SEPARATOR));
    }
    draft.target = record.answer.clone();
    draft
}

fn placement_name(p: Placement) -> &'static str {
    match p {
        Placement::Prefix => "prefix",
        Placement::Inline => "inline",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetReport {
    pub name: String,
    pub adapter: AdapterKind,
    pub task: String,
    pub n_d: u64,
    pub p_d: f64,
    pub expected: u64,
    pub drawn: u64,
    pub rejected_lines: u64,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Throughput {
    pub records: u64,
    pub seconds: f64,
    pub records_per_second: f64,
}

/// Written next to the corpus as `<output>.report.json`. Everything except
/// `throughput` is a pure function of the manifest and the inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    pub seed: u64,
    pub budget: u64,
    pub instances: u64,
    pub datasets: Vec<DatasetReport>,
    pub templates: BTreeMap<String, u64>,
    pub warnings: BTreeMap<String, u64>,
    pub throughput: Throughput,
}

/// Path of the build report for corpus `output`.
pub fn report_path(output: &Path) -> PathBuf {
    with_suffix(output, ".report.json")
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Builds the corpus described by `manifest`: exactly `budget` instances in
/// mixer draw order, independent of the worker count. The corpus and its
/// report appear atomically; nothing is left behind on failure.
pub fn build(manifest: &PipelineManifest) -> Result<BuildReport> {
    let started = Instant::now();
    let output = manifest
        .output
        .clone()
        .ok_or_else(|| Error::Manifest("no output path; set `output` or pass --out".into()))?;
    let compiler = Compiler::from_manifest(manifest)?;
    let datasets = load_datasets(manifest)?;
    let plan = plan_for(manifest, &datasets)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.workers)
        .build()
        .map_err(|e| Error::Manifest(format!("worker pool: {e}")))?;

    let partial = with_suffix(&output, ".partial");
    let file = File::create(&partial).map_err(|e| Error::io(&partial, e))?;
    let written = write_corpus(&compiler, &datasets, &plan, &pool, file, &partial);
    let (drawn, templates, mut warnings) = match written {
        Ok(v) => v,
        Err(e) => {
            let _ = std::fs::remove_file(&partial);
            return Err(e);
        }
    };
    if let Err(e) = std::fs::rename(&partial, &output) {
        let _ = std::fs::remove_file(&partial);
        return Err(Error::io(&output, e));
    }

    let rejected: u64 = datasets.iter().map(|d| d.report.rejected).sum();
    if rejected > 0 {
        warnings.insert(WARN_REJECTED_LINES.to_string(), rejected);
    }
    let expected = plan.expected_counts();
    let seconds = started.elapsed().as_secs_f64();
    let report = BuildReport {
        seed: plan.seed,
        budget: plan.budget,
        instances: plan.budget,
        datasets: datasets
            .iter()
            .enumerate()
            .map(|(i, d)| DatasetReport {
                name: d.descriptor.name.clone(),
                adapter: d.descriptor.adapter,
                task: d.descriptor.task.clone(),
                n_d: d.records.len() as u64,
                p_d: plan.probabilities[i],
                expected: expected[i],
                drawn: drawn[i],
                rejected_lines: d.report.rejected,
                rejections: d.report.rejections.iter().take(MAX_REPORTED_REJECTIONS).cloned().collect(),
            })
            .collect(),
        templates,
        warnings,
        throughput: Throughput {
            records: plan.budget,
            seconds,
            records_per_second: plan.budget as f64 / seconds.max(1e-9),
        },
    };
    let report_file = report_path(&output);
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    std::fs::write(&report_file, bytes).map_err(|e| Error::io(&report_file, e))?;
    Ok(report)
}

type Tallies = (Vec<u64>, BTreeMap<String, u64>, BTreeMap<String, u64>);

fn write_corpus(
    compiler: &Compiler,
    datasets: &[LoadedDataset],
    plan: &MixPlan,
    pool: &rayon::ThreadPool,
    file: File,
    path: &Path,
) -> Result<Tallies> {
    let mut out = BufWriter::with_capacity(1 << 20, file);
    let mut drawn = vec![0u64; datasets.len()];
    let mut templates = BTreeMap::new();
    let mut warnings: BTreeMap<String, u64> = BTreeMap::new();
    let mut line = Vec::with_capacity(4096);
    let mut stream = sample_stream(plan);
    let mut batch: Vec<Draw> = Vec::with_capacity(BATCH);
    loop {
        batch.clear();
        batch.extend(stream.by_ref().take(BATCH));
        if batch.is_empty() {
            break;
        }
        let compiled: Vec<Result<Compiled>> = pool.install(|| {
            batch
                .par_iter()
                .map(|d| compiler.compile(&datasets[d.dataset], d.record, d.cycle, plan.seed))
                .collect()
        });
        for (draw, result) in batch.iter().zip(compiled) {
            let c = result?;
            drawn[draw.dataset] += 1;
            *templates.entry(c.template).or_insert(0) += 1;
            for w in c.warnings {
                *warnings.entry(w.to_string()).or_insert(0) += 1;
            }
            line.clear();
            serialize_into(&c.instance, &mut line)?;
            out.write_all(&line).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok((drawn, templates, warnings))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineViolation {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub lines: u64,
    pub violations: Vec<LineViolation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every line of a corpus file. One entry per bad line.
pub fn validate_corpus(path: &Path) -> Result<ValidationReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    validate_reader(BufReader::new(file), path)
}

pub fn validate_reader<R: BufRead>(mut reader: R, path: &Path) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))? == 0 {
            break;
        }
        report.lines += 1;
        let message = if buf.iter().all(u8::is_ascii_whitespace) {
            Some("empty line".to_string())
        } else {
            deserialize(&buf).err().map(|e| e.to_string())
        };
        if let Some(message) = message {
            report.violations.push(LineViolation {
                line: report.lines,
                message,
            });
        }
    }
    Ok(report)
}

/// Layout of one corpus line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceLayout {
    pub line: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutReport>,
    pub violations: Vec<AlignmentViolation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct LayoutSummary {
    pub instances: u64,
    pub unreadable: u64,
    pub with_violations: u64,
    pub violation_counts: BTreeMap<String, u64>,
}

impl LayoutSummary {
    pub fn is_clean(&self) -> bool {
        self.unreadable == 0 && self.with_violations == 0
    }
}

/// Simulates and checks the layout of every instance in `reader`, writing
/// one JSON line per instance to `sink`.
pub fn layout_check<R: BufRead, W: Write>(mut reader: R, slots: u32, mut sink: W, path: &Path) -> Result<LayoutSummary> {
    let mut summary = LayoutSummary::default();
    let mut buf = Vec::new();
    let mut line = 0u64;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))? == 0 {
            break;
        }
        line += 1;
        if buf.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let entry = match deserialize(&buf) {
            Ok(inst) => {
                summary.instances += 1;
                let layout = simulate_layout(&inst, slots, &WhitespaceTokenizer);
                let violations = check_alignment(&layout, &inst);
                if !violations.is_empty() {
                    summary.with_violations += 1;
                }
                for v in &violations {
                    *summary.violation_counts.entry(v.kind().to_string()).or_insert(0) += 1;
                }
                InstanceLayout {
                    line,
                    id: Some(inst.id),
                    layout: Some(layout),
                    violations,
                    error: None,
                }
            }
            Err(e) => {
                summary.unreadable += 1;
                InstanceLayout {
                    line,
                    id: None,
                    layout: None,
                    violations: Vec::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        let mut bytes = serde_json::to_vec(&entry).expect("layout serializes");
        bytes.push(b'\n');
        sink.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    sink.flush().map_err(|e| Error::io(path, e))?;
    Ok(summary)
}
