//! Command implementations behind the `pcri` binary. Exposed as a library so
//! tests can drive the exact code paths the CLI runs.
//!
//! Exit codes: 0 on success, 2 when at least one dataset failed the validity
//! gate (reported, not fatal), 1 on any fatal error.

use pcri_core::ingest::synth::{generate_synthetic_dataset, SyntheticDatasetSpec};
use pcri_core::pipeline::{run, AdapterSource, RunConfig, RunOutcome};
use pcri_core::types::GateVerdict;
use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_GATED: i32 = 2;

/// Execute the full pipeline and write cache, scored records, and reports.
pub fn cmd_run(config: RunConfig) -> i32 {
    match run(&config) {
        Ok(outcome) => finish(&config, outcome),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    }
}

/// Recompute scores and reports from a replay cache; byte-identical to the
/// run that produced the cache, given the same configuration.
pub fn cmd_score(config: RunConfig) -> i32 {
    if !matches!(config.source, AdapterSource::Replay(_)) {
        eprintln!("error: score requires a replay cache (--replay)");
        return EXIT_FATAL;
    }
    cmd_run(config)
}

/// Generate a synthetic fixture dataset with analytically known outcomes.
pub fn cmd_gen(spec: SyntheticDatasetSpec, out_dir: &Path) -> i32 {
    match generate_synthetic_dataset(&spec, out_dir) {
        Ok(generated) => {
            println!(
                "generated {} samples under {}",
                generated.manifest.samples.len(),
                out_dir.display()
            );
            println!("manifest: {}", generated.manifest_path.display());
            for exp in &generated.expectations {
                let grids: Vec<String> = exp
                    .per_grid
                    .iter()
                    .map(|g| {
                        let pcri = g
                            .pcri
                            .value()
                            .map(|v| format!("{v:.4}"))
                            .unwrap_or_else(|| "NA".to_string());
                        format!("n={}: P_patch={:.4} PCRI={}", g.n, g.p_patch, pcri)
                    })
                    .collect();
                println!(
                    "expected for {}: P_whole={:.4} {}",
                    exp.oracle.model_id(),
                    exp.p_whole,
                    grids.join(" ")
                );
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    }
}

fn finish(config: &RunConfig, outcome: RunOutcome) -> i32 {
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    for row in &outcome.bundle.results {
        let pcri = match row.pcri.value() {
            Some(v) => format!("{v:.4}"),
            None => "NA".to_string(),
        };
        let gate_note = match row.gate {
            GateVerdict::Valid => String::new(),
            GateVerdict::NearChanceUnstable => " [near-chance/unstable]".to_string(),
        };
        println!(
            "{} {} n={}: P_whole={:.4} P_patch={:.4} PCRI={} label={}{}",
            row.model_id,
            row.dataset_id,
            row.n,
            row.p_whole,
            row.p_patch,
            pcri,
            row.label,
            gate_note
        );
    }
    println!(
        "adapter calls: {}; failed views: {}; reports in {}",
        outcome.adapter_calls,
        outcome.failed_views,
        config.out_dir.display()
    );
    if outcome.gated_datasets > 0 {
        println!(
            "{} dataset(s) near chance: PCRI flagged non-interpretable",
            outcome.gated_datasets
        );
        EXIT_GATED
    } else {
        EXIT_OK
    }
}
