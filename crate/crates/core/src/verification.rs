//! Verification protocol: all genuine and impostor pairs, cosine scores,
//! ROC/AUC and aggregation over repeated trials.
//!
//! For identities `1..N` with `M_i` images each there are
//! `sum_i C(M_i, 2)` genuine pairs and `sum_{i<j} M_i * M_j` impostor pairs.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{splitmix64, EmbedderDescriptor, EmbeddingTable};
use crate::error::{Error, Result};
use crate::io;
use crate::manifest::DatasetManifest;
use crate::types::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub genuine: u64,
    pub impostor: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Genuine,
    Impostor,
}

/// Identity groups in canonical order; each group lists record keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPlan {
    groups: Vec<(String, Vec<String>)>,
}

impl PairPlan {
    pub fn from_groups(groups: Vec<(String, Vec<String>)>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::Protocol(format!(
                "verification requires N ≥ 2 identities, got {}",
                groups.len()
            )));
        }
        if let Some((k, _)) = groups.iter().find(|(_, r)| r.is_empty()) {
            return Err(Error::Protocol(format!("identity {k} has no records")));
        }
        Ok(Self { groups })
    }

    /// Synthetic plan with `sizes[i]` records for identity `i` (keys `i/j`).
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        Self::from_groups(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &m)| (i.to_string(), (0..m).map(|j| format!("{i}/{j}")).collect()))
                .collect(),
        )
    }

    pub fn groups(&self) -> &[(String, Vec<String>)] {
        &self.groups
    }

    pub fn counts(&self) -> PairCounts {
        let sizes: Vec<u64> = self.groups.iter().map(|(_, r)| r.len() as u64).collect();
        let genuine = sizes.iter().map(|m| m * m.saturating_sub(1) / 2).sum();
        let total: u64 = sizes.iter().sum();
        // sum_{i<j} M_i M_j = ((sum M)^2 - sum M^2) / 2
        let sq: u64 = sizes.iter().map(|m| m * m).sum();
        PairCounts {
            genuine,
            impostor: (total * total - sq) / 2,
        }
    }

    pub fn genuine_pairs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.groups.iter().flat_map(|(_, recs)| {
            (0..recs.len()).flat_map(move |a| (a + 1..recs.len()).map(move |b| (recs[a].as_str(), recs[b].as_str())))
        })
    }

    pub fn impostor_pairs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        let n = self.groups.len();
        (0..n).flat_map(move |i| {
            (i + 1..n).flat_map(move |j| {
                let (a, b) = (&self.groups[i].1, &self.groups[j].1);
                a.iter().flat_map(move |x| b.iter().map(move |y| (x.as_str(), y.as_str())))
            })
        })
    }

    /// Every genuine pair, then every impostor pair, in canonical order.
    pub fn pairs(&self) -> impl Iterator<Item = (PairKind, &str, &str)> + '_ {
        self.genuine_pairs()
            .map(|(a, b)| (PairKind::Genuine, a, b))
            .chain(self.impostor_pairs().map(|(a, b)| (PairKind::Impostor, a, b)))
    }
}

/// Pair plan over the manifest's verification identities.
pub fn enumerate_pairs(manifest: &DatasetManifest) -> Result<PairPlan> {
    PairPlan::from_groups(
        manifest
            .identity_groups()
            .into_iter()
            .map(|(k, recs)| (k, recs.into_iter().map(|r| r.key()).collect()))
            .collect(),
    )
}

fn dot_and_norms(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    (d, na.sqrt(), nb.sqrt())
}

fn cosine_raw(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Scoring(format!("dimension mismatch {} vs {}", a.len(), b.len())));
    }
    let (d, na, nb) = dot_and_norms(a, b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Scoring("zero-norm vector".into()));
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_raw(a.vector(), b.vector())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

/// Keeps each impostor pair independently with probability `rate`, decided by
/// hashing the pair's canonical index with `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpostorSubsample {
    pub rate: f64,
    pub seed: u64,
}

impl ImpostorSubsample {
    fn keeps(&self, index: u64) -> bool {
        let h = splitmix64(self.seed ^ splitmix64(index));
        ((h >> 11) as f64 / (1u64 << 53) as f64) < self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringOptions {
    pub subsample: Option<ImpostorSubsample>,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self { subsample: None }
    }
}

/// Scores all pairs of `plan` in canonical order. Impostor scores are computed
/// in per-identity blocks, in parallel, and concatenated in order.
pub fn score_all_pairs(embeddings: &EmbeddingTable, plan: &PairPlan, opts: &ScoringOptions) -> Result<ScoreSet> {
    let groups: Vec<Vec<&[f32]>> = plan
        .groups()
        .iter()
        .map(|(_, recs)| {
            recs.iter()
                .map(|k| {
                    embeddings
                        .get(k)
                        .map(|e| e.vector())
                        .ok_or_else(|| Error::Scoring(format!("missing embedding for record {k}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut genuine = Vec::with_capacity(plan.counts().genuine as usize);
    for g in &groups {
        for a in 0..g.len() {
            for b in a + 1..g.len() {
                genuine.push(cosine_raw(g[a], g[b])?);
            }
        }
    }

    let n = groups.len();
    let sizes: Vec<u64> = groups.iter().map(|g| g.len() as u64).collect();
    // canonical index of the first impostor pair in row i
    let mut offsets = vec![0u64; n];
    let mut remaining: u64 = sizes.iter().sum();
    let mut acc = 0u64;
    for i in 0..n {
        remaining -= sizes[i];
        offsets[i] = acc;
        acc += sizes[i] * remaining;
    }

    let blocks: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            let mut idx = offsets[i];
            for j in i + 1..n {
                for a in &groups[i] {
                    for b in &groups[j] {
                        if opts.subsample.map_or(true, |s| s.keeps(idx)) {
                            out.push(cosine_raw(a, b)?);
                        }
                        idx += 1;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(ScoreSet {
        genuine,
        impostor: blocks.concat(),
    })
}

/// P(genuine > impostor) + P(tie)/2, from mid-ranks of the pooled scores.
pub fn compute_auc(scores: &ScoreSet) -> Result<f64> {
    let g = scores.genuine.len();
    let i = scores.impostor.len();
    if g == 0 || i == 0 {
        return Err(Error::Protocol(format!(
            "AUC needs genuine and impostor scores (got {g} and {i})"
        )));
    }
    if scores.genuine.iter().chain(&scores.impostor).any(|s| s.is_nan()) {
        return Err(Error::Protocol("NaN score".into()));
    }
    let mut pooled: Vec<(f64, bool)> = scores
        .genuine
        .iter()
        .map(|&s| (s, true))
        .chain(scores.impostor.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut genuine_rank_sum = 0.0f64;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        // ranks start..end (1-based: start+1 ..= end) share their mean
        let mid = (start + 1 + end) as f64 / 2.0;
        let in_tie = pooled[start..end].iter().filter(|p| p.1).count();
        genuine_rank_sum += mid * in_tie as f64;
        start = end;
    }
    let u = genuine_rank_sum - (g as f64) * (g as f64 + 1.0) / 2.0;
    Ok(u / (g as f64 * i as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC vertices from (0,0) to (1,1), one per distinct score threshold
/// (descending).
pub fn roc_curve(scores: &ScoreSet) -> Result<Vec<RocPoint>> {
    let (g, i) = (scores.genuine.len() as f64, scores.impostor.len() as f64);
    if g == 0.0 || i == 0.0 {
        return Err(Error::Protocol("ROC needs genuine and impostor scores".into()));
    }
    let mut pooled: Vec<(f64, bool)> = scores
        .genuine
        .iter()
        .map(|&s| (s, true))
        .chain(scores.impostor.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pts = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut k = 0;
    while k < pooled.len() {
        let s = pooled[k].0;
        while k < pooled.len() && pooled[k].0 == s {
            if pooled[k].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        pts.push(RocPoint { fpr: fp / i, tpr: tp / g });
    }
    Ok(pts)
}

/// Trapezoidal area under ROC vertices.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub auc_per_trial: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
    pub trials: usize,
}

impl TrialSummary {
    /// A single trial has no spread estimate.
    pub fn is_degenerate(&self) -> bool {
        self.trials < 2
    }
}

impl fmt::Display for TrialSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

pub fn aggregate_trials(aucs: &[f64]) -> Result<TrialSummary> {
    if aucs.is_empty() {
        return Err(Error::Protocol("no trials to aggregate".into()));
    }
    let n = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let std = if aucs.len() < 2 {
        0.0
    } else {
        (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(TrialSummary {
        auc_per_trial: aucs.to_vec(),
        mean,
        std,
        trials: aucs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputCondition {
    Baseline,
    Inpainted,
}

impl InputCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            InputCondition::Baseline => "baseline",
            InputCondition::Inpainted => "inpainted",
        }
    }
}

impl std::str::FromStr for InputCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "inpainted" => Ok(Self::Inpainted),
            other => Err(Error::Config(format!("unknown condition {other:?}"))),
        }
    }
}

/// One (dataset, backend, condition) evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub dataset: String,
    pub backend: EmbedderDescriptor,
    pub input_condition: InputCondition,
    /// Per-trial AUCs; may be empty for imported summary-only results.
    #[serde(default)]
    pub trials: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    #[serde(default)]
    pub pair_counts: PairCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<ImpostorSubsample>,
}

impl VerificationResult {
    pub fn summary(&self) -> TrialSummary {
        TrialSummary {
            auc_per_trial: self.trials.clone(),
            mean: self.mean,
            std: self.std,
            trials: self.trials.len(),
        }
    }

    pub fn check_consistency(&self) -> Result<()> {
        if self.trials.is_empty() {
            return Ok(());
        }
        let s = aggregate_trials(&self.trials)?;
        if (s.mean - self.mean).abs() > 1e-9 || (s.std - self.std).abs() > 1e-9 {
            return Err(Error::Comparison(format!(
                "{} {} {}: mean/std disagree with trial list",
                self.dataset,
                self.backend.tag(),
                self.input_condition.as_str()
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Box<VerificationResult>),
    Many(Vec<VerificationResult>),
}

/// Reads a results file holding one result object or an array of them.
pub fn load_results(path: &Path) -> Result<Vec<VerificationResult>> {
    let parsed: OneOrMany = io::read_json(path)?;
    let results = match parsed {
        OneOrMany::One(r) => vec![*r],
        OneOrMany::Many(v) => v,
    };
    for r in &results {
        r.check_consistency()?;
    }
    Ok(results)
}

pub fn save_results(results: &[VerificationResult], path: &Path) -> Result<()> {
    io::write_json(results, path)
}
