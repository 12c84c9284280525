//! Report rendering: per (model, dataset, n) result rows, task-type rollups,
//! granularity deltas, and flags, in CSV, JSON, and Markdown.
//!
//! Rendering is byte-deterministic for a given bundle: stable column order,
//! floats at 4 decimals (round half to even), undefined PCRI as `NA`.

use crate::types::{GateVerdict, PcriResult, TaskType};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Configuration echo carried in the JSON and Markdown outputs. The bootstrap
/// seed lives here so a differing SE column can always be traced to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub model_id: String,
    pub seed: u64,
    pub delta: f64,
    pub bootstrap_b: u32,
    pub epsilon_band: f64,
    pub grids: Vec<u32>,
}

/// Mean PCRI over the valid, defined results of one (task type, n) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRollup {
    pub task: TaskType,
    pub n: u32,
    pub mean_pcri: f64,
    pub dataset_count: usize,
}

/// Percentage change in PCRI between two grids for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityDeltaRow {
    pub model_id: String,
    pub dataset_id: String,
    pub from_n: u32,
    pub to_n: u32,
    pub pcri_from: f64,
    pub pcri_to: f64,
    pub percent: f64,
}

/// A dataset that failed the validity gate, listed with its underlying task
/// metrics so nothing is silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedPair {
    pub model_id: String,
    pub dataset_id: String,
    pub p_whole: f64,
    pub p_patch_by_n: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndefinedPcri {
    pub model_id: String,
    pub dataset_id: String,
    pub n: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportFlags {
    /// Total inference calls issued by the adapter.
    pub adapter_calls: u64,
    /// Failed views per dataset (they scored 0 and are counted per row too).
    pub failed_views: BTreeMap<String, usize>,
    pub gated: Vec<GatedPair>,
    pub undefined_pcri: Vec<UndefinedPcri>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub header: RunHeader,
    pub results: Vec<PcriResult>,
    pub rollups: Vec<TaskRollup>,
    pub deltas: Vec<GranularityDeltaRow>,
    pub flags: ReportFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Structured,
    Markdown,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "model",
    "dataset",
    "n",
    "p_whole",
    "p_patch",
    "pcri",
    "se",
    "floor",
    "gate",
    "label",
    "samples",
    "failed_views",
];

/// Four decimals, rounded half to even on the exact decimal expansion of the
/// value. Negative zero renders as zero.
fn fmt4(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.4}")
}

fn pcri_cell(result: &PcriResult) -> String {
    match result.pcri.value() {
        Some(v) => fmt4(v),
        None => "NA".to_string(),
    }
}

/// Unweighted mean of defined, gate-valid PCRI per (task type, n); groups
/// without any eligible result are omitted.
pub fn rollup_by_task(results: &[PcriResult]) -> Vec<TaskRollup> {
    let mut groups: BTreeMap<(TaskType, u32), Vec<f64>> = BTreeMap::new();
    for r in results {
        if r.gate != GateVerdict::Valid {
            continue;
        }
        if let Some(v) = r.pcri.value() {
            groups.entry((r.task, r.n)).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|((task, n), values)| TaskRollup {
            task,
            n,
            mean_pcri: values.iter().sum::<f64>() / values.len() as f64,
            dataset_count: values.len(),
        })
        .collect()
}

pub fn render(bundle: &ReportBundle, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => render_csv(bundle),
        ReportFormat::Structured => render_json(bundle),
        ReportFormat::Markdown => render_markdown(bundle),
    }
}

fn result_row(r: &PcriResult) -> [String; 12] {
    [
        r.model_id.clone(),
        r.dataset_id.clone(),
        r.n.to_string(),
        fmt4(r.p_whole),
        fmt4(r.p_patch),
        pcri_cell(r),
        fmt4(r.se_whole),
        fmt4(r.chance_floor),
        r.gate.to_string(),
        r.label.to_string(),
        r.sample_count.to_string(),
        r.failed_views.to_string(),
    ]
}

fn render_csv(bundle: &ReportBundle) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_COLUMNS).expect("csv write to memory");
    for r in &bundle.results {
        writer.write_record(result_row(r)).expect("csv write to memory");
    }
    writer.into_inner().expect("csv flush to memory")
}

fn render_json(bundle: &ReportBundle) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(bundle).expect("bundle serializes");
    out.push(b'\n');
    out
}

fn render_markdown(bundle: &ReportBundle) -> Vec<u8> {
    use std::fmt::Write;
    let mut md = String::new();
    let h = &bundle.header;
    md.push_str("# Patch context robustness report\n\n");
    md.push_str("## Run configuration\n\n");
    let _ = writeln!(md, "- model: {}", h.model_id);
    let _ = writeln!(md, "- seed: {}", h.seed);
    let _ = writeln!(md, "- gate delta: {}", fmt4(h.delta));
    let _ = writeln!(md, "- bootstrap resamples: {}", h.bootstrap_b);
    let _ = writeln!(md, "- epsilon band: {}", fmt4(h.epsilon_band));
    let grids: Vec<String> = h.grids.iter().map(|n| n.to_string()).collect();
    let _ = writeln!(md, "- grids: {}", grids.join(", "));

    md.push_str("\n## Results\n\n");
    let _ = writeln!(md, "| {} |", CSV_COLUMNS.join(" | "));
    let _ = writeln!(md, "|{}", "---|".repeat(CSV_COLUMNS.len()));
    for r in &bundle.results {
        let _ = writeln!(md, "| {} |", result_row(r).join(" | "));
    }

    md.push_str("\n## Task rollups (valid, defined results only)\n\n");
    if bundle.rollups.is_empty() {
        md.push_str("none\n");
    } else {
        md.push_str("| task | n | mean_pcri | datasets |\n|---|---|---|---|\n");
        for r in &bundle.rollups {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                r.task,
                r.n,
                fmt4(r.mean_pcri),
                r.dataset_count
            );
        }
    }

    md.push_str("\n## Granularity deltas\n\n");
    if bundle.deltas.is_empty() {
        md.push_str("none\n");
    } else {
        md.push_str(
            "| model | dataset | from_n | to_n | pcri_from | pcri_to | percent |\n|---|---|---|---|---|---|---|\n",
        );
        for d in &bundle.deltas {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                d.model_id,
                d.dataset_id,
                d.from_n,
                d.to_n,
                fmt4(d.pcri_from),
                fmt4(d.pcri_to),
                fmt4(d.percent)
            );
        }
    }

    md.push_str("\n## Flags\n\n");
    let _ = writeln!(md, "- adapter calls: {}", bundle.flags.adapter_calls);
    if bundle.flags.failed_views.is_empty() {
        md.push_str("- failed views: none\n");
    } else {
        for (dataset, count) in &bundle.flags.failed_views {
            let _ = writeln!(md, "- failed views in {dataset}: {count}");
        }
    }
    if bundle.flags.gated.is_empty() {
        md.push_str("- gated datasets: none\n");
    } else {
        for g in &bundle.flags.gated {
            let patches: Vec<String> =
                g.p_patch_by_n.iter().map(|(n, p)| format!("n={n}: {}", fmt4(*p))).collect();
            let _ = writeln!(
                md,
                "- gated (near-chance/unstable): {} on {} — P_whole {}, P_patch {}",
                g.model_id,
                g.dataset_id,
                fmt4(g.p_whole),
                patches.join(", ")
            );
        }
    }
    if !bundle.flags.undefined_pcri.is_empty() {
        for u in &bundle.flags.undefined_pcri {
            let _ = writeln!(
                md,
                "- undefined PCRI (P_whole = 0): {} on {} at n={}",
                u.model_id, u.dataset_id, u.n
            );
        }
    }
    md.into_bytes()
}
