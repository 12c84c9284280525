//! Dataset manifests, image loading, the response cache, and synthetic
//! fixture generation.
//!
//! A manifest is a line-delimited JSON file: the first record carries the
//! dataset-level fields, every following record is one sample. Image paths
//! are relative to the manifest's directory. All invariants are checked
//! eagerly at load time.

pub mod cache;
pub mod synth;

use crate::engine::ChanceSpec;
use crate::metrics;
use crate::types::{Sample, SyntheticScene, TaskType};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("duplicate sample id '{id}' in dataset '{dataset_id}'")]
    DuplicateSampleId { dataset_id: String, id: String },
    #[error("image not found: {path}")]
    MissingImage { path: PathBuf },
    #[error("cannot decode image {path}: {detail}")]
    ImageDecode { path: PathBuf, detail: String },
    #[error("unknown metric '{id}' (registered: exact_match, token_f1, sentence_bleu)")]
    UnknownMetric { id: String },
    #[error("invalid chance spec for dataset '{dataset_id}': {detail}")]
    InvalidChanceSpec { dataset_id: String, detail: String },
    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dataset-level fields carried by the manifest's first record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub dataset_id: String,
    pub task: TaskType,
    pub metric: String,
    pub chance: ChanceSpec,
}

/// One sample record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub image_path: String,
    pub query: String,
    pub ground_truth: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    /// Present only in generated fixtures; lets synthetic adapters answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SyntheticScene>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub task: TaskType,
    pub metric: String,
    pub chance: ChanceSpec,
    pub samples: Vec<ManifestSample>,
}

/// A manifest plus its decoded images, ready for the pipeline.
#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Decoded rasters aligned with `manifest.samples`.
    pub images: Vec<RgbImage>,
    /// Directory image paths were resolved against.
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let manifest = parse_manifest(path)?;
        let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let mut images = Vec::with_capacity(manifest.samples.len());
        for sample in &manifest.samples {
            images.push(load_image(&root.join(&sample.image_path))?);
        }
        Ok(Self { manifest, images, root })
    }

    /// Materialize the core sample type for one record.
    pub fn sample(&self, ix: usize) -> Sample {
        let record = &self.manifest.samples[ix];
        Sample {
            id: record.id.clone(),
            image: self.images[ix].clone(),
            query: record.query.clone(),
            ground_truth: record.ground_truth.clone(),
            task: self.manifest.task,
            choices: record.choices.clone(),
        }
    }
}

/// Load and validate a manifest, including decoding every referenced image.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    Dataset::load(path).map(|d| d.manifest)
}

fn parse_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: "manifest file not found".to_string(),
        },
        _ => IngestError::Io(e),
    })?;
    let reader = BufReader::new(file);

    let mut header: Option<ManifestHeader> = None;
    let mut samples: Vec<ManifestSample> = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();

    for (ix, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = ix + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |detail: String| IngestError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            detail,
        };
        match &header {
            None => {
                let h: ManifestHeader =
                    serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
                header = Some(h);
            }
            Some(h) => {
                let sample: ManifestSample =
                    serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
                if sample.ground_truth.is_empty() {
                    return Err(parse_err(format!(
                        "sample '{}' has no ground-truth answers",
                        sample.id
                    )));
                }
                let wants_choices = h.task == TaskType::MultipleChoice;
                if wants_choices != sample.choices.is_some() {
                    return Err(parse_err(format!(
                        "sample '{}': choices must be present iff the task is multiple_choice",
                        sample.id
                    )));
                }
                if !seen_ids.insert(sample.id.clone()) {
                    return Err(IngestError::DuplicateSampleId {
                        dataset_id: h.dataset_id.clone(),
                        id: sample.id,
                    });
                }
                samples.push(sample);
            }
        }
    }

    let header = header.ok_or_else(|| IngestError::Parse {
        path: path.to_path_buf(),
        line: 0,
        detail: "manifest is empty (expected a header record)".to_string(),
    })?;

    if metrics::metric_by_id(&header.metric).is_none() {
        return Err(IngestError::UnknownMetric { id: header.metric });
    }
    validate_chance(&header)?;

    Ok(DatasetManifest {
        dataset_id: header.dataset_id,
        task: header.task,
        metric: header.metric,
        chance: header.chance,
        samples,
    })
}

fn validate_chance(header: &ManifestHeader) -> Result<(), IngestError> {
    let fail = |detail: &str| {
        Err(IngestError::InvalidChanceSpec {
            dataset_id: header.dataset_id.clone(),
            detail: detail.to_string(),
        })
    };
    match &header.chance {
        ChanceSpec::Balanced { classes } => {
            if *classes < 2 {
                return fail("balanced classification needs at least 2 classes");
            }
            if header.task == TaskType::YesNo && *classes != 2 {
                return fail("yes/no tasks have exactly 2 balanced classes");
            }
        }
        ChanceSpec::ClassPrior { priors } => {
            if priors.is_empty() {
                return fail("class priors must be non-empty");
            }
            if priors.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return fail("class priors must lie in [0, 1]");
            }
            let sum: f64 = priors.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return fail("class priors must sum to 1");
            }
            if priors.iter().cloned().fold(0.0, f64::max) >= 1.0 {
                return fail("majority prior must stay below 1 for the floor to be meaningful");
            }
            if header.task == TaskType::YesNo && priors.len() != 2 {
                return fail("yes/no tasks take exactly 2 class priors");
            }
        }
        ChanceSpec::Retrieval { k, n } => {
            if *k == 0 || k >= n {
                return fail("retrieval floor needs 1 <= k < n");
            }
        }
        ChanceSpec::Shuffle => {}
    }
    Ok(())
}

fn load_image(path: &Path) -> Result<RgbImage, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingImage { path: path.to_path_buf() });
    }
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| IngestError::ImageDecode { path: path.to_path_buf(), detail: e.to_string() })
}

/// Write a manifest in the line-delimited format `load_manifest` reads.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), IngestError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    let header = ManifestHeader {
        dataset_id: manifest.dataset_id.clone(),
        task: manifest.task,
        metric: manifest.metric.clone(),
        chance: manifest.chance.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(io_from_json)?;
    out.write_all(b"\n")?;
    for sample in &manifest.samples {
        serde_json::to_writer(&mut out, sample).map_err(io_from_json)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn io_from_json(e: serde_json::Error) -> IngestError {
    IngestError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
