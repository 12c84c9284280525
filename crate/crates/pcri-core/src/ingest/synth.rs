//! Synthetic fixture datasets with analytically known outcomes.
//!
//! Each generated image is a flat background with a red target glyph placed
//! strictly inside one designated grid tile, plus optional blue distractor
//! glyphs in the other tiles. Scene geometry rides along in the manifest, so
//! the synthetic model adapters can answer each view deterministically and
//! the expected P_whole / P_patch / PCRI follow in closed form.

use super::{write_manifest, DatasetManifest, IngestError, ManifestSample};
use crate::adapters::{infer_synthetic, SyntheticModelSpec};
use crate::engine::{compute_pcri, ChanceSpec};
use crate::patcher::plan_grid;
use crate::types::{GridSpec, Pcri, PixelRect, SyntheticScene, TaskType, View};
use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

const BACKGROUND: Rgb<u8> = Rgb([216, 216, 216]);
const TARGET_COLOR: Rgb<u8> = Rgb([200, 30, 30]);
const DISTRACTOR_COLOR: Rgb<u8> = Rgb([40, 60, 180]);

/// Where distractor glyphs go, per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistractorLayout {
    /// No distractors anywhere.
    None,
    /// One distractor inside every tile except the target tile.
    OutsideTarget,
    /// The first `clean_samples` samples are distractor-free; the rest get
    /// the `OutsideTarget` layout.
    Mixed { clean_samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub dataset_id: String,
    pub n_samples: usize,
    pub image_height: u32,
    pub image_width: u32,
    /// Grid side the target cell is addressed in.
    pub target_grid: u32,
    pub target_row: u32,
    pub target_col: u32,
    pub distractor_layout: DistractorLayout,
    pub seed: u64,
    /// Patch grids (n >= 2) to precompute expectations for.
    pub grids: Vec<u32>,
}

impl SyntheticDatasetSpec {
    pub fn new(dataset_id: impl Into<String>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            n_samples: 20,
            image_height: 64,
            image_width: 64,
            target_grid: 2,
            target_row: 0,
            target_col: 0,
            distractor_layout: DistractorLayout::None,
            seed: 0,
            grids: vec![2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridExpectation {
    pub n: u32,
    pub p_patch: f64,
    pub pcri: Pcri,
}

/// Expected quantities for one built-in synthetic model on this dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleExpectation {
    pub oracle: SyntheticModelSpec,
    pub p_whole: f64,
    pub per_grid: Vec<GridExpectation>,
}

#[derive(Debug)]
pub struct GeneratedDataset {
    pub manifest_path: PathBuf,
    pub manifest: DatasetManifest,
    pub expectations: Vec<OracleExpectation>,
}

/// The oracles expectations are computed for.
pub fn builtin_oracles() -> Vec<SyntheticModelSpec> {
    vec![
        SyntheticModelSpec::LocalSolver,
        SyntheticModelSpec::Distractible { threshold: 0 },
        SyntheticModelSpec::GlobalIntegrator { coverage_fraction: 1.0 },
    ]
}

/// Generate images, a manifest, and closed-form expectations under `out_dir`.
pub fn generate_synthetic_dataset(
    spec: &SyntheticDatasetSpec,
    out_dir: &Path,
) -> Result<GeneratedDataset, IngestError> {
    validate_spec(spec)?;

    let grid = GridSpec::new(spec.target_grid).expect("validated above");
    let plan = plan_grid("spec", spec.image_height, spec.image_width, grid)
        .map_err(|e| IngestError::InvalidSpec(e.to_string()))?;
    let tiles: Vec<PixelRect> = plan.views.iter().map(|v| v.pixel_bounds()).collect();
    for tile in &tiles {
        if tile.height < 4 || tile.width < 4 {
            return Err(IngestError::InvalidSpec(format!(
                "tiles of the {0}x{0} grid must be at least 4x4 px to hold a glyph; got {1}x{2}",
                spec.target_grid, tile.height, tile.width
            )));
        }
    }
    let target_tile_ix = (spec.target_row * spec.target_grid + spec.target_col) as usize;

    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir)?;

    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(i as u64));
        let target = glyph_in_tile(&tiles[target_tile_ix], &mut rng);
        let distractors: Vec<PixelRect> = if sample_has_distractors(spec, i) {
            tiles
                .iter()
                .enumerate()
                .filter(|(ix, _)| *ix != target_tile_ix)
                .map(|(_, tile)| glyph_in_tile(tile, &mut rng))
                .collect()
        } else {
            Vec::new()
        };

        let id = format!("s{i:03}");
        let answer = format!("glyph-{i:03}");
        let scene = SyntheticScene {
            image_height: spec.image_height,
            image_width: spec.image_width,
            target,
            answer: answer.clone(),
            distractors: distractors.clone(),
        };

        let mut img =
            RgbImage::from_pixel(spec.image_width, spec.image_height, BACKGROUND);
        fill_rect(&mut img, &target, TARGET_COLOR);
        for d in &distractors {
            fill_rect(&mut img, d, DISTRACTOR_COLOR);
        }
        let image_rel = format!("images/{id}.png");
        img.save(out_dir.join(&image_rel))
            .map_err(|e| IngestError::InvalidSpec(format!("cannot write fixture image: {e}")))?;

        samples.push(ManifestSample {
            id,
            image_path: image_rel,
            query: "What is the id written on the red marker?".to_string(),
            ground_truth: vec![answer],
            choices: None,
            scene: Some(scene),
        });
    }

    let manifest = DatasetManifest {
        dataset_id: spec.dataset_id.clone(),
        task: TaskType::OpenVqa,
        metric: "exact_match".to_string(),
        // Uniform guessing over the dataset's answer vocabulary.
        chance: ChanceSpec::Balanced { classes: spec.n_samples as u32 },
        samples,
    };
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &manifest_path)?;

    let expectations = compute_expectations(spec, &manifest);
    Ok(GeneratedDataset { manifest_path, manifest, expectations })
}

fn validate_spec(spec: &SyntheticDatasetSpec) -> Result<(), IngestError> {
    let fail = |msg: String| Err(IngestError::InvalidSpec(msg));
    if spec.n_samples < 2 {
        return fail("need at least 2 samples".to_string());
    }
    if spec.target_grid == 0 || spec.target_grid > 5 {
        return fail(format!("target grid {} outside 1..=5", spec.target_grid));
    }
    if spec.target_row >= spec.target_grid || spec.target_col >= spec.target_grid {
        return fail(format!(
            "target cell ({}, {}) outside the {n}x{n} grid",
            spec.target_row,
            spec.target_col,
            n = spec.target_grid
        ));
    }
    if spec.grids.is_empty() || spec.grids.iter().any(|&n| !(2..=5).contains(&n)) {
        return fail("expectation grids must be within 2..=5".to_string());
    }
    if let DistractorLayout::Mixed { clean_samples } = spec.distractor_layout {
        if clean_samples > spec.n_samples {
            return fail(format!(
                "clean_samples {clean_samples} exceeds n_samples {}",
                spec.n_samples
            ));
        }
    }
    Ok(())
}

fn sample_has_distractors(spec: &SyntheticDatasetSpec, i: usize) -> bool {
    match spec.distractor_layout {
        DistractorLayout::None => false,
        DistractorLayout::OutsideTarget => true,
        DistractorLayout::Mixed { clean_samples } => i >= clean_samples,
    }
}

/// Place a glyph strictly inside `tile`: at least 1 px of margin on every
/// side, position jittered by the per-sample RNG.
fn glyph_in_tile(tile: &PixelRect, rng: &mut ChaCha8Rng) -> PixelRect {
    let height = (tile.height / 3).max(2);
    let width = (tile.width / 3).max(2);
    let top_slack = tile.height - height - 2;
    let left_slack = tile.width - width - 2;
    let top = tile.top + 1 + rng.random_range(0..=top_slack);
    let left = tile.left + 1 + rng.random_range(0..=left_slack);
    PixelRect::new(top, left, height, width)
}

fn fill_rect(img: &mut RgbImage, rect: &PixelRect, color: Rgb<u8>) {
    for y in rect.top..rect.bottom() {
        for x in rect.left..rect.right() {
            img.put_pixel(x, y, color);
        }
    }
}

/// Enumerate every view against every built-in oracle to derive the expected
/// P_whole, P_patch, and PCRI for this dataset.
fn compute_expectations(
    spec: &SyntheticDatasetSpec,
    manifest: &DatasetManifest,
) -> Vec<OracleExpectation> {
    let scenes: Vec<&SyntheticScene> =
        manifest.samples.iter().map(|s| s.scene.as_ref().expect("generated")).collect();
    let n_samples = scenes.len() as f64;

    builtin_oracles()
        .into_iter()
        .map(|oracle| {
            let full_correct = scenes
                .iter()
                .zip(&manifest.samples)
                .filter(|(scene, sample)| {
                    let view = View::full(&sample.id, spec.image_height, spec.image_width);
                    infer_synthetic(&oracle, scene, &view) == scene.answer
                })
                .count();
            let p_whole = full_correct as f64 / n_samples;

            let per_grid = spec
                .grids
                .iter()
                .map(|&n| {
                    let grid = GridSpec::new(n).expect("validated");
                    let plan =
                        plan_grid("spec", spec.image_height, spec.image_width, grid).expect("validated");
                    let best_sum: usize = scenes
                        .iter()
                        .map(|scene| {
                            usize::from(plan.views.iter().any(|view| {
                                infer_synthetic(&oracle, scene, view) == scene.answer
                            }))
                        })
                        .sum();
                    let p_patch = best_sum as f64 / n_samples;
                    GridExpectation { n, p_patch, pcri: compute_pcri(p_patch, p_whole) }
                })
                .collect();

            OracleExpectation { oracle, p_whole, per_grid }
        })
        .collect()
}
