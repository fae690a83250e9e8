//! Stage orchestration: configuration, caching, ingestion and the runner.

mod cache;
mod config;
mod ingest;
mod stages;

use std::collections::BTreeMap;
use std::path::Path;

pub use cache::{RunStats, StageCache, StageStats};
pub use config::{
    validate_stage_order, BackendConfig, DetectorChoice, EmbedderSpec, InpainterChoice, PipelineConfig,
    SegmenterChoice, SideClassifierChoice, StageName,
};
pub use ingest::{ingest_dataset, DatasetLayout};
pub use stages::{run_condition, run_pipeline, run_stages, ConditionOutput, PipelineOutput, RunContext};

use crate::error::{Error, Result};
use crate::reporting::{ComparisonCell, ComparisonGrid, ModelKey};
use crate::verification::{load_results, InputCondition, VerificationResult};

fn index_by_key(
    results: &[VerificationResult],
    expected: InputCondition,
) -> Result<BTreeMap<(String, u32, String), &VerificationResult>> {
    let mut map = BTreeMap::new();
    for r in results {
        if r.input_condition != expected {
            return Err(Error::Comparison(format!(
                "{} {} is labelled {} but was given as {}",
                r.dataset,
                r.backend.tag(),
                r.input_condition.as_str(),
                expected.as_str()
            )));
        }
        let key = (r.backend.family.as_str().to_string(), r.backend.patch_size, r.dataset.clone());
        if map.insert(key, r).is_some() {
            return Err(Error::Comparison(format!(
                "{} {} appears twice in the {} results",
                r.dataset,
                r.backend.tag(),
                expected.as_str()
            )));
        }
    }
    Ok(map)
}

/// Joins baseline and inpainted results on (backend, patch, dataset) and
/// classifies every cell. Both sides must cover exactly the same keys.
pub fn compare_results(baseline: &[VerificationResult], inpainted: &[VerificationResult]) -> Result<ComparisonGrid> {
    let b = index_by_key(baseline, InputCondition::Baseline)?;
    let i = index_by_key(inpainted, InputCondition::Inpainted)?;
    let fmt = |k: &(String, u32, String)| format!("{}_p{}/{}", k.0, k.1, k.2);
    let only_b: Vec<String> = b.keys().filter(|k| !i.contains_key(*k)).map(fmt).collect();
    let only_i: Vec<String> = i.keys().filter(|k| !b.contains_key(*k)).map(fmt).collect();
    if !only_b.is_empty() || !only_i.is_empty() {
        return Err(Error::Comparison(format!(
            "result sets do not match; missing inpainted: [{}]; missing baseline: [{}]",
            only_b.join(", "),
            only_i.join(", ")
        )));
    }
    let mut grid = ComparisonGrid::new();
    // rows and columns follow the baseline file's order
    for r in baseline {
        let key = (r.backend.family.as_str().to_string(), r.backend.patch_size, r.dataset.clone());
        let cell = ComparisonCell::new(r.summary(), i[&key].summary())?;
        grid.insert(
            ModelKey {
                model: key.0,
                patch: key.1,
            },
            &r.dataset,
            cell,
        );
    }
    Ok(grid)
}

pub fn compare_conditions(baseline: &Path, inpainted: &Path) -> Result<ComparisonGrid> {
    compare_results(&load_results(baseline)?, &load_results(inpainted)?)
}
