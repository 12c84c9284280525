//! Deterministic synthetic models for analytic end-to-end tests.
//!
//! Each oracle answers a view as a pure function of the scene geometry,
//! mimicking a distinct context-sensitivity profile: a solver that only needs
//! the target in frame, one that clutter derails, and one that refuses to
//! answer without (nearly) the whole image.

use crate::types::{SyntheticScene, View};
use serde::{Deserialize, Serialize};

/// Fixed wrong token emitted whenever an oracle cannot answer; never matches
/// a generated ground truth.
pub const WRONG_ANSWER: &str = "unanswerable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticModelSpec {
    /// Answers correctly iff the target region lies inside the view,
    /// regardless of distractors.
    LocalSolver,
    /// Answers correctly iff the target is in view and at most `threshold`
    /// distractors are visible.
    Distractible { threshold: u32 },
    /// Answers correctly iff the view covers at least `coverage_fraction` of
    /// the image area and contains the target.
    GlobalIntegrator { coverage_fraction: f64 },
}

impl SyntheticModelSpec {
    /// Stable id used as the model column in caches and reports.
    pub fn model_id(&self) -> String {
        match self {
            SyntheticModelSpec::LocalSolver => "synthetic:local_solver".to_string(),
            SyntheticModelSpec::Distractible { threshold } => {
                format!("synthetic:distractible_{threshold}")
            }
            SyntheticModelSpec::GlobalIntegrator { coverage_fraction } => {
                format!("synthetic:global_integrator_{coverage_fraction}")
            }
        }
    }

    /// Parse a CLI spec: `local_solver`, `distractible:<threshold>`, or
    /// `global_integrator:<coverage>`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("local_solver", None) => Ok(SyntheticModelSpec::LocalSolver),
            ("distractible", Some(a)) => a
                .parse::<u32>()
                .map(|threshold| SyntheticModelSpec::Distractible { threshold })
                .map_err(|_| format!("invalid distractible threshold '{a}'")),
            ("global_integrator", Some(a)) => a
                .parse::<f64>()
                .ok()
                .filter(|c| (0.0..=1.0).contains(c))
                .map(|coverage_fraction| SyntheticModelSpec::GlobalIntegrator { coverage_fraction })
                .ok_or_else(|| format!("invalid coverage fraction '{a}' (expected 0..=1)")),
            _ => Err(format!(
                "unknown synthetic model '{s}' (expected local_solver, distractible:<k>, or global_integrator:<f>)"
            )),
        }
    }
}

/// Answer a view per the oracle's rule.
pub fn infer_synthetic(spec: &SyntheticModelSpec, scene: &SyntheticScene, view: &View) -> String {
    let bounds = view.pixel_bounds();
    let sees_target = bounds.contains(&scene.target);
    let correct = match spec {
        SyntheticModelSpec::LocalSolver => sees_target,
        SyntheticModelSpec::Distractible { threshold } => {
            sees_target && scene.visible_distractors(&bounds) <= *threshold as usize
        }
        SyntheticModelSpec::GlobalIntegrator { coverage_fraction } => {
            sees_target && scene.coverage(&bounds) >= *coverage_fraction
        }
    };
    if correct {
        scene.answer.clone()
    } else {
        WRONG_ANSWER.to_string()
    }
}
