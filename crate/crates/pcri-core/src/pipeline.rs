//! End-to-end run orchestration: load manifests, plan views, obtain responses
//! through the configured adapter, score, aggregate, gate, and write the
//! cache, scored records, and report bundle.
//!
//! Everything downstream of inference is deterministic: samples are processed
//! in sorted id order, views in (full, grid, row, col) order, and all
//! randomness (bootstrap, shuffle floors) flows from the one run seed.

use crate::adapters::{
    infer_replay, infer_synthetic, prompt_sha, render_prompt, AdapterError, LiveClient,
    ModelEndpointConfig, SyntheticModelSpec,
};
use crate::engine::{
    self, bootstrap_se, chance_floor, compute_p_patch, compute_p_whole, compute_pcri, interpret,
    validity_gate, ChanceSpec, EngineError, SampleViewScores, ShuffleInputs,
};
use crate::ingest::cache::{now_unix_seconds, CacheKey, CacheRecord, CacheWriter, ResponseCache};
use crate::ingest::{Dataset, IngestError};
use crate::metrics::{self, Metric};
use crate::patcher::{crop, plan_grid, PatchError};
use crate::report::{
    render, GatedPair, GranularityDeltaRow, ReportBundle, ReportFlags, ReportFormat, RunHeader,
    UndefinedPcri,
};
use crate::types::{
    normalize_answer, GridSpec, PcriResult, ScoredRecord, View,
};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Where responses come from. Exactly one source per run.
pub enum AdapterSource {
    Endpoint(ModelEndpointConfig),
    Replay(PathBuf),
    Synthetic(SyntheticModelSpec),
}

pub struct RunConfig {
    pub manifests: Vec<PathBuf>,
    pub source: AdapterSource,
    /// Model column in cache keys and reports; defaults to the endpoint's
    /// model name, the synthetic oracle id, or the replay cache's model.
    pub model_id: Option<String>,
    /// Grid sides; 1 (the full image) is always included.
    pub grids: BTreeSet<u32>,
    pub seed: u64,
    pub delta: f64,
    pub bootstrap_b: u32,
    pub epsilon_band: f64,
    pub out_dir: PathBuf,
    pub max_parallel: usize,
}

impl RunConfig {
    pub fn new(manifests: Vec<PathBuf>, source: AdapterSource, out_dir: PathBuf) -> Self {
        Self {
            manifests,
            source,
            model_id: None,
            grids: BTreeSet::from([1, 2, 3]),
            seed: 0,
            delta: engine::DEFAULT_DELTA,
            bootstrap_b: engine::DEFAULT_BOOTSTRAP_B,
            epsilon_band: engine::DEFAULT_EPSILON_BAND,
            out_dir,
            max_parallel: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{context}: {source}")]
    Patch { context: String, source: PatchError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("endpoint probe failed: {0}")]
    Probe(AdapterError),
    #[error("replay cache is missing {} key(s):\n{}", .0.len(), format_keys(.0))]
    CacheMisses(Vec<CacheKey>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_keys(keys: &[CacheKey]) -> String {
    keys.iter().map(|k| format!("  {k}")).collect::<Vec<_>>().join("\n")
}

pub struct RunOutcome {
    pub bundle: ReportBundle,
    pub adapter_calls: u64,
    pub gated_datasets: usize,
    pub failed_views: usize,
    pub warnings: Vec<String>,
}

struct ViewTask {
    dataset_ix: usize,
    sample_ix: usize,
    view: View,
    prompt: String,
    key: CacheKey,
}

#[derive(Serialize)]
struct ScoredLine<'a> {
    dataset: &'a str,
    #[serde(flatten)]
    record: &'a ScoredRecord,
}

/// Execute a full run. Replay sources recompute scores without touching the
/// cache file; endpoint and synthetic sources write `cache.jsonl` as they go.
pub fn run(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let grids = validated_grids(config)?;
    if config.manifests.is_empty() {
        return Err(PipelineError::Config("at least one manifest is required".to_string()));
    }

    let mut warnings = Vec::new();
    let datasets: Vec<Dataset> =
        config.manifests.iter().map(|p| Dataset::load(p)).collect::<Result<_, _>>()?;
    for dataset in &datasets {
        if dataset.manifest.samples.is_empty() {
            return Err(PipelineError::Config(format!(
                "dataset '{}' has no samples",
                dataset.manifest.dataset_id
            )));
        }
    }

    // Samples are processed in sorted id order regardless of manifest order.
    let sample_order: Vec<Vec<usize>> = datasets
        .iter()
        .map(|d| {
            let mut order: Vec<usize> = (0..d.manifest.samples.len()).collect();
            order.sort_by(|&a, &b| d.manifest.samples[a].id.cmp(&d.manifest.samples[b].id));
            order
        })
        .collect();

    let dataset_metrics: Vec<std::sync::Arc<dyn Metric>> = datasets
        .iter()
        .map(|d| {
            metrics::metric_by_id(&d.manifest.metric).ok_or_else(|| {
                PipelineError::Config(format!("unregistered metric '{}'", d.manifest.metric))
            })
        })
        .collect::<Result<_, _>>()?;

    // Resolve the adapter and the model id.
    let mut replay_cache: Option<ResponseCache> = None;
    let (model_id, live_client, synthetic_spec) = match &config.source {
        AdapterSource::Endpoint(endpoint) => {
            let mut endpoint = endpoint.clone();
            endpoint.max_parallel_requests = config.max_parallel.max(1);
            let model_id =
                config.model_id.clone().unwrap_or_else(|| endpoint.model_name.clone());
            let client = LiveClient::new(endpoint);
            client.probe().map_err(PipelineError::Probe)?;
            (model_id, Some(client), None)
        }
        AdapterSource::Synthetic(spec) => {
            for dataset in &datasets {
                for sample in &dataset.manifest.samples {
                    if sample.scene.is_none() {
                        return Err(PipelineError::Config(format!(
                            "synthetic adapter needs scene metadata; dataset '{}' sample '{}' has none",
                            dataset.manifest.dataset_id, sample.id
                        )));
                    }
                }
            }
            let model_id = config.model_id.clone().unwrap_or_else(|| spec.model_id());
            (model_id, None, Some(spec.clone()))
        }
        AdapterSource::Replay(path) => {
            let cache = ResponseCache::load(path)?;
            warnings.extend(cache.warnings().iter().cloned());
            let model_id = match &config.model_id {
                Some(m) => m.clone(),
                None => {
                    let models = cache.models();
                    match models.as_slice() {
                        [one] => one.clone(),
                        _ => {
                            return Err(PipelineError::Config(format!(
                                "cache contains {} models; pass --model to disambiguate",
                                models.len()
                            )))
                        }
                    }
                }
            };
            replay_cache = Some(cache);
            (model_id, None, None)
        }
    };

    let prompt_template = match &config.source {
        AdapterSource::Endpoint(e) => e.prompt_template.clone(),
        _ => "{query}".to_string(),
    };

    // Plan every view up front: the full image once per sample, then each
    // configured patch grid.
    let mut tasks: Vec<ViewTask> = Vec::new();
    for (dataset_ix, dataset) in datasets.iter().enumerate() {
        for &sample_ix in &sample_order[dataset_ix] {
            let sample = &dataset.manifest.samples[sample_ix];
            let (width, height) = dataset.images[sample_ix].dimensions();
            let prompt = render_prompt(&prompt_template, &sample.query);
            let sha = prompt_sha(&prompt);
            let mut views = vec![View::full(&sample.id, height, width)];
            for &n in grids.iter().filter(|&&n| n > 1) {
                let grid = GridSpec::new(n).expect("validated");
                let plan = plan_grid(&sample.id, height, width, grid).map_err(|source| {
                    PipelineError::Patch {
                        context: format!(
                            "dataset '{}' sample '{}'",
                            dataset.manifest.dataset_id, sample.id
                        ),
                        source,
                    }
                })?;
                views.extend(plan.views);
            }
            for view in views {
                let key = CacheKey {
                    model: model_id.clone(),
                    dataset: dataset.manifest.dataset_id.clone(),
                    sample: sample.id.clone(),
                    view: view.descriptor(),
                    prompt_sha: sha.clone(),
                };
                tasks.push(ViewTask { dataset_ix, sample_ix, view, prompt: prompt.clone(), key });
            }
        }
    }

    // Replay runs must be fully covered before any work starts.
    if let Some(cache) = &replay_cache {
        let missing: Vec<CacheKey> =
            tasks.iter().filter(|t| !cache.contains(&t.key)).map(|t| t.key.clone()).collect();
        if !missing.is_empty() {
            return Err(PipelineError::CacheMisses(missing));
        }
    }

    std::fs::create_dir_all(&config.out_dir)?;
    let adapter_calls = tasks.len() as u64;

    // Inference.
    let outcomes: Vec<Result<String, AdapterError>> = if let Some(client) = &live_client {
        infer_live_bounded(config, &datasets, &tasks, client)?
    } else if let Some(spec) = &synthetic_spec {
        let mut writer = CacheWriter::create(&config.out_dir.join("cache.jsonl"))?;
        let timestamp = now_unix_seconds();
        tasks
            .iter()
            .map(|task| {
                let scene = datasets[task.dataset_ix].manifest.samples[task.sample_ix]
                    .scene
                    .as_ref()
                    .expect("validated above");
                let text = infer_synthetic(spec, scene, &task.view);
                writer
                    .append(&CacheRecord {
                        key: task.key.clone(),
                        response: text.clone(),
                        timestamp,
                        attempts: 1,
                    })
                    .map(|()| text)
                    .map_err(|e| AdapterError::Transport { detail: e.to_string(), attempts: 1 })
            })
            .collect()
    } else {
        let cache = replay_cache.as_ref().expect("replay source");
        tasks.iter().map(|task| infer_replay(cache, &task.key).map(str::to_string)).collect()
    };

    // Scoring.
    let mut scored: Vec<(usize, ScoredRecord)> = Vec::with_capacity(tasks.len());
    let mut failures: BTreeMap<(usize, Option<u32>), usize> = BTreeMap::new();
    for (task, outcome) in tasks.iter().zip(outcomes) {
        let dataset = &datasets[task.dataset_ix];
        let sample = &dataset.manifest.samples[task.sample_ix];
        let task_type = dataset.manifest.task;
        let record = match outcome {
            Ok(raw) => {
                let normalized = normalize_answer(&raw, task_type);
                let refs: Vec<String> = sample
                    .ground_truth
                    .iter()
                    .map(|r| normalize_answer(r, task_type))
                    .collect();
                let score = dataset_metrics[task.dataset_ix]
                    .per_sample(&normalized, &refs, sample.choices.as_deref())
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                ScoredRecord {
                    view: task.view.clone(),
                    raw_response: raw,
                    normalized_answer: normalized,
                    score,
                }
            }
            Err(err) => {
                let slot = match &task.view.kind {
                    crate::types::ViewKind::Full { .. } => None,
                    crate::types::ViewKind::Patch { grid, .. } => Some(grid.n()),
                };
                *failures.entry((task.dataset_ix, slot)).or_insert(0) += 1;
                warnings.push(format!("view {} ({}) failed: {err}", task.key, task.view.descriptor()));
                ScoredRecord {
                    view: task.view.clone(),
                    raw_response: String::new(),
                    normalized_answer: String::new(),
                    score: 0.0,
                }
            }
        };
        scored.push((task.dataset_ix, record));
    }

    // Persist scored records.
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(
            config.out_dir.join("scored.jsonl"),
        )?);
        for (dataset_ix, record) in &scored {
            let line = ScoredLine {
                dataset: &datasets[*dataset_ix].manifest.dataset_id,
                record,
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }

    // Aggregate into per-sample score tables.
    let per_sample = assemble_sample_scores(&datasets, &sample_order, &tasks, &scored)?;

    // Engine stage, one dataset at a time.
    let mut results: Vec<PcriResult> = Vec::new();
    let mut gated_pairs: Vec<GatedPair> = Vec::new();
    let mut undefined: Vec<UndefinedPcri> = Vec::new();
    let mut gated_datasets = 0usize;

    for (dataset_ix, dataset) in datasets.iter().enumerate() {
        let metric = dataset_metrics[dataset_ix].as_ref();
        let records = &per_sample[dataset_ix];
        let full_scores: Vec<f64> = records.iter().map(|r| r.full_score).collect();

        let p_whole = compute_p_whole(records, metric)?;
        let se = bootstrap_se(&full_scores, config.bootstrap_b, config.seed)?;

        let floor = match &dataset.manifest.chance {
            ChanceSpec::Shuffle => {
                let (predictions, references) =
                    shuffle_inputs_for(dataset, &sample_order[dataset_ix], &tasks, &scored, dataset_ix);
                chance_floor(
                    &dataset.manifest.dataset_id,
                    &ChanceSpec::Shuffle,
                    Some(&ShuffleInputs {
                        metric,
                        predictions: &predictions,
                        references: &references,
                        seed: config.seed,
                    }),
                )?
            }
            other => chance_floor(&dataset.manifest.dataset_id, other, None)?,
        };

        let (gate, delta_min) = validity_gate(p_whole, se, floor.value, config.delta);
        let failed_full = failures.get(&(dataset_ix, None)).copied().unwrap_or(0);

        let mut p_patch_by_n = BTreeMap::new();
        for &n in grids.iter().filter(|&&n| n > 1) {
            let p_patch = compute_p_patch(records, n, metric)?;
            let pcri = compute_pcri(p_patch, p_whole);
            let label = interpret(pcri, gate, config.epsilon_band);
            if !pcri.is_defined() {
                undefined.push(UndefinedPcri {
                    model_id: model_id.clone(),
                    dataset_id: dataset.manifest.dataset_id.clone(),
                    n,
                });
            }
            let failed_n = failures.get(&(dataset_ix, Some(n))).copied().unwrap_or(0);
            p_patch_by_n.insert(n, p_patch);
            results.push(PcriResult {
                model_id: model_id.clone(),
                dataset_id: dataset.manifest.dataset_id.clone(),
                task: dataset.manifest.task,
                n,
                p_whole,
                p_patch,
                pcri,
                se_whole: se,
                chance_floor: floor.value,
                delta_min,
                gate,
                label,
                sample_count: records.len(),
                failed_views: failed_full + failed_n,
            });
        }

        if gate == crate::types::GateVerdict::NearChanceUnstable {
            gated_datasets += 1;
            gated_pairs.push(GatedPair {
                model_id: model_id.clone(),
                dataset_id: dataset.manifest.dataset_id.clone(),
                p_whole,
                p_patch_by_n,
            });
        }
    }

    results.sort_by(|a, b| {
        (&a.model_id, &a.dataset_id, a.n).cmp(&(&b.model_id, &b.dataset_id, b.n))
    });

    let deltas = granularity_deltas(&results);
    let rollups = crate::report::rollup_by_task(&results);

    let failed_views_by_dataset: BTreeMap<String, usize> = {
        let mut map: BTreeMap<String, usize> = BTreeMap::new();
        for ((dataset_ix, _), count) in &failures {
            *map.entry(datasets[*dataset_ix].manifest.dataset_id.clone()).or_insert(0) += count;
        }
        map
    };
    let failed_views: usize = failed_views_by_dataset.values().sum();

    let bundle = ReportBundle {
        header: RunHeader {
            model_id: model_id.clone(),
            seed: config.seed,
            delta: config.delta,
            bootstrap_b: config.bootstrap_b,
            epsilon_band: config.epsilon_band,
            grids: grids.iter().copied().collect(),
        },
        results,
        rollups,
        deltas,
        flags: ReportFlags {
            adapter_calls,
            failed_views: failed_views_by_dataset,
            gated: gated_pairs,
            undefined_pcri: undefined,
        },
    };

    for (name, format) in [
        ("report.csv", ReportFormat::Csv),
        ("report.json", ReportFormat::Structured),
        ("report.md", ReportFormat::Markdown),
    ] {
        std::fs::write(config.out_dir.join(name), render(&bundle, format))?;
    }

    Ok(RunOutcome { bundle, adapter_calls, gated_datasets, failed_views, warnings })
}

fn validated_grids(config: &RunConfig) -> Result<BTreeSet<u32>, PipelineError> {
    let mut grids = config.grids.clone();
    grids.insert(1);
    if let Some(&bad) = grids.iter().find(|&&n| n == 0 || n > 5) {
        return Err(PipelineError::Config(format!(
            "grid side {bad} outside the supported set 1..=5"
        )));
    }
    Ok(grids)
}

/// Bounded-parallel live inference. Workers pull tasks off a shared cursor;
/// successful responses are appended to the cache through one serialized
/// writer. Result order is by task index, so completion order never matters.
fn infer_live_bounded(
    config: &RunConfig,
    datasets: &[Dataset],
    tasks: &[ViewTask],
    client: &LiveClient,
) -> Result<Vec<Result<String, AdapterError>>, PipelineError> {
    let writer = Mutex::new(CacheWriter::create(&config.out_dir.join("cache.jsonl"))?);
    let io_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
    let slots: Vec<Mutex<Option<Result<String, AdapterError>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    let workers = client.config().max_parallel_requests.max(1);
    let timestamp = now_unix_seconds();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let ix = cursor.fetch_add(1, Ordering::SeqCst);
                if ix >= tasks.len() {
                    break;
                }
                let task = &tasks[ix];
                let image = &datasets[task.dataset_ix].images[task.sample_ix];
                let view_image = crop(image, &task.view).expect("planned views lie in bounds");
                let outcome = client.infer(&view_image, &task.prompt);
                if let Ok(response) = &outcome {
                    let record = CacheRecord {
                        key: task.key.clone(),
                        response: response.text.clone(),
                        timestamp,
                        attempts: response.attempts,
                    };
                    let mut writer = writer.lock().expect("cache writer lock");
                    if let Err(e) = writer.append(&record) {
                        io_error.lock().expect("io flag lock").get_or_insert(e);
                    }
                }
                *slots[ix].lock().expect("slot lock") = Some(outcome.map(|r| r.text));
            });
        }
    });

    if let Some(e) = io_error.into_inner().expect("io flag") {
        return Err(PipelineError::Io(e));
    }
    Ok(slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot").expect("every task ran"))
        .collect())
}

/// Fold scored records into one `SampleViewScores` per sample, in sorted
/// sample order per dataset.
fn assemble_sample_scores(
    datasets: &[Dataset],
    sample_order: &[Vec<usize>],
    tasks: &[ViewTask],
    scored: &[(usize, ScoredRecord)],
) -> Result<Vec<Vec<SampleViewScores>>, PipelineError> {
    type Accum = (Option<f64>, BTreeMap<u32, Vec<f64>>);
    let mut accum: BTreeMap<(usize, usize), Accum> = BTreeMap::new();
    for (task, (_, record)) in tasks.iter().zip(scored) {
        let entry = accum.entry((task.dataset_ix, task.sample_ix)).or_default();
        match &task.view.kind {
            crate::types::ViewKind::Full { .. } => entry.0 = Some(record.score),
            crate::types::ViewKind::Patch { grid, .. } => {
                entry.1.entry(grid.n()).or_default().push(record.score);
            }
        }
    }

    let mut out = Vec::with_capacity(datasets.len());
    for (dataset_ix, dataset) in datasets.iter().enumerate() {
        let mut records = Vec::with_capacity(dataset.manifest.samples.len());
        for &sample_ix in &sample_order[dataset_ix] {
            let sample = &dataset.manifest.samples[sample_ix];
            let (full, patches) = accum.remove(&(dataset_ix, sample_ix)).ok_or_else(|| {
                PipelineError::Config(format!("no scores assembled for sample '{}'", sample.id))
            })?;
            let full = full.ok_or_else(|| {
                PipelineError::Config(format!("no full-view score for sample '{}'", sample.id))
            })?;
            records.push(SampleViewScores::new(sample.id.clone(), full, patches)?);
        }
        out.push(records);
    }
    Ok(out)
}

/// Normalized full-image predictions and references for shuffle floors, in
/// sorted sample order.
fn shuffle_inputs_for(
    dataset: &Dataset,
    order: &[usize],
    tasks: &[ViewTask],
    scored: &[(usize, ScoredRecord)],
    dataset_ix: usize,
) -> (Vec<String>, Vec<Vec<String>>) {
    let mut by_sample: BTreeMap<usize, String> = BTreeMap::new();
    for (task, (_, record)) in tasks.iter().zip(scored) {
        if task.dataset_ix == dataset_ix && task.view.is_full() {
            by_sample.insert(task.sample_ix, record.normalized_answer.clone());
        }
    }
    let predictions: Vec<String> =
        order.iter().map(|ix| by_sample.get(ix).cloned().unwrap_or_default()).collect();
    let references: Vec<Vec<String>> = order
        .iter()
        .map(|&ix| {
            dataset.manifest.samples[ix]
                .ground_truth
                .iter()
                .map(|r| normalize_answer(r, dataset.manifest.task))
                .collect()
        })
        .collect();
    (predictions, references)
}

/// Deltas between the 2x2 and 3x3 rows of each dataset, where both are valid,
/// defined, and the baseline is nonzero.
fn granularity_deltas(results: &[PcriResult]) -> Vec<GranularityDeltaRow> {
    let mut by_pair: BTreeMap<(&str, &str), BTreeMap<u32, &PcriResult>> = BTreeMap::new();
    for r in results {
        by_pair
            .entry((r.model_id.as_str(), r.dataset_id.as_str()))
            .or_default()
            .insert(r.n, r);
    }
    let mut deltas = Vec::new();
    for ((model, dataset), rows) in by_pair {
        let (Some(from), Some(to)) = (rows.get(&2), rows.get(&3)) else { continue };
        if from.gate != crate::types::GateVerdict::Valid
            || to.gate != crate::types::GateVerdict::Valid
        {
            continue;
        }
        if let Ok(percent) = engine::granularity_delta(from.pcri, to.pcri) {
            deltas.push(GranularityDeltaRow {
                model_id: model.to_string(),
                dataset_id: dataset.to_string(),
                from_n: 2,
                to_n: 3,
                pcri_from: from.pcri.value().expect("checked defined"),
                pcri_to: to.pcri.value().expect("checked defined"),
                percent,
            });
        }
    }
    deltas
}
