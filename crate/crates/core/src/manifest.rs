//! Declarative pipeline manifest (TOML).
//!
//! ```toml
//! output = "corpus.jsonl"
//! style = "is_form"            # or "colon_form"
//! placement = "prefix"         # or "inline"
//! slots = 32
//! workers = 4
//! frames_per_video = 8
//! include_parent = true
//! # templates = "my_templates.json"
//!
//! [mix]
//! seed = 7
//! budget = 1000                # or: fraction = 0.1
//!
//! [[datasets]]
//! name = "vqa"
//! adapter = "vqa"              # generic | vqa | video | entity_boxes
//! path = "vqa.jsonl"
//! task = "vqav2"
//! n_shots = 4
//! no_exemplars = false
//! ```
//!
//! Relative paths resolve against the manifest's directory. Command-line
//! overrides replace the matching manifest field.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::declaration::{DeclarationStyle, Placement};
use crate::error::{Error, Result};
use crate::icl::DEFAULT_SHOTS;
use crate::ingest::{AdapterKind, DatasetDescriptor};
use crate::interconnect::DEFAULT_FRAMES_PER_VIDEO;
use crate::layout::DEFAULT_VISUAL_SLOTS;

/// How the corpus size is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetSpec {
    Absolute(u64),
    /// Share of all accepted source records.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub seed: u64,
    pub budget: BudgetSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineManifest {
    pub datasets: Vec<DatasetDescriptor>,
    pub style: DeclarationStyle,
    pub placement: Placement,
    pub mix: MixSpec,
    pub slots: u32,
    pub output: Option<PathBuf>,
    pub workers: usize,
    pub templates: Option<PathBuf>,
    pub include_parent: bool,
    pub frames_per_video: u32,
}

/// Command-line replacements for manifest fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub budget: Option<u64>,
    /// Applies to every dataset that takes exemplars.
    pub shots: Option<u32>,
    pub workers: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(default)]
    datasets: Vec<DatasetFile>,
    #[serde(default)]
    style: DeclarationStyle,
    #[serde(default)]
    placement: Placement,
    mix: Option<MixFile>,
    slots: Option<u32>,
    output: Option<PathBuf>,
    workers: Option<usize>,
    templates: Option<PathBuf>,
    include_parent: Option<bool>,
    frames_per_video: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixFile {
    seed: Option<u64>,
    budget: Option<u64>,
    fraction: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    name: String,
    #[serde(default)]
    adapter: AdapterKind,
    path: PathBuf,
    task: String,
    no_exemplars: Option<bool>,
    n_shots: Option<u32>,
}

impl PipelineManifest {
    /// Parses manifest text; relative paths are joined onto `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        let resolve = |p: PathBuf| if p.is_relative() { base_dir.join(p) } else { p };

        if file.datasets.is_empty() {
            return Err(Error::Manifest("at least one dataset is required".into()));
        }
        let mut names = std::collections::HashSet::new();
        let mut datasets = Vec::with_capacity(file.datasets.len());
        for d in file.datasets {
            if d.name.is_empty() {
                return Err(Error::Manifest("dataset with empty name".into()));
            }
            if !names.insert(d.name.clone()) {
                return Err(Error::Manifest(format!("duplicate dataset name {:?}", d.name)));
            }
            let no_exemplars = d
                .no_exemplars
                .unwrap_or(matches!(d.adapter, AdapterKind::Video | AdapterKind::EntityBoxes));
            datasets.push(DatasetDescriptor {
                name: d.name,
                adapter: d.adapter,
                path: resolve(d.path),
                task: d.task,
                no_exemplars,
                n_shots: d.n_shots.unwrap_or(DEFAULT_SHOTS),
            });
        }

        let mix = file.mix.ok_or_else(|| Error::Manifest("missing [mix] table".into()))?;
        let seed = mix
            .seed
            .ok_or_else(|| Error::Manifest("mix.seed is required".into()))?;
        let budget = match (mix.budget, mix.fraction) {
            (Some(_), Some(_)) => return Err(Error::Manifest("set mix.budget or mix.fraction, not both".into())),
            (Some(0), None) => return Err(Error::Manifest("mix.budget must be positive".into())),
            (Some(b), None) => BudgetSpec::Absolute(b),
            (None, Some(f)) if f > 0.0 && f.is_finite() => BudgetSpec::Fraction(f),
            (None, Some(f)) => return Err(Error::Manifest(format!("mix.fraction {f} must be positive"))),
            (None, None) => return Err(Error::Manifest("mix.budget or mix.fraction is required".into())),
        };

        let slots = file.slots.unwrap_or(DEFAULT_VISUAL_SLOTS);
        if slots == 0 {
            return Err(Error::Manifest("slots must be positive".into()));
        }
        let frames_per_video = file.frames_per_video.unwrap_or(DEFAULT_FRAMES_PER_VIDEO);
        if frames_per_video == 0 {
            return Err(Error::Manifest("frames_per_video must be positive".into()));
        }
        let workers = file.workers.unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(Error::Manifest("workers must be positive".into()));
        }

        Ok(PipelineManifest {
            datasets,
            style: file.style,
            placement: file.placement,
            mix: MixSpec { seed, budget },
            slots,
            output: file.output.map(resolve),
            workers,
            templates: file.templates.map(resolve),
            include_parent: file.include_parent.unwrap_or(true),
            frames_per_video,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn apply(&mut self, overrides: &Overrides) -> Result<()> {
        if let Some(seed) = overrides.seed {
            self.mix.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.output = Some(out.clone());
        }
        if let Some(budget) = overrides.budget {
            if budget == 0 {
                return Err(Error::Manifest("budget must be positive".into()));
            }
            self.mix.budget = BudgetSpec::Absolute(budget);
        }
        if let Some(shots) = overrides.shots {
            for d in &mut self.datasets {
                d.n_shots = shots;
            }
        }
        if let Some(workers) = overrides.workers {
            if workers == 0 {
                return Err(Error::Manifest("workers must be positive".into()));
            }
            self.workers = workers;
        }
        Ok(())
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}
