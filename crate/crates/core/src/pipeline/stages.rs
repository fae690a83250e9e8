use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::cache::{RunStats, StageCache};
use super::config::{DetectorChoice, PipelineConfig, StageName};
use crate::alignment::{align_image, AlignmentSidecar};
use crate::detection::{detect_accessories, DetectionDump, DetectorBackend, NoopDetector};
use crate::embedding::{embed_manifest_par, split_by_side, EmbeddingCache, EmbeddingTable, MockEmbedder, MockSideClassifier, SideClassifierBackend};
use crate::error::{Error, Result};
use crate::io;
use crate::manifest::{validate_manifest, DatasetManifest, ImageRecord};
use crate::masking::{build_accessory_mask, dilate_mask};
use crate::mock::{MockEllipseSegmenter, MockFixedBoxDetector, MockReplayDetector};
use crate::reporting::{emit_roc_plot, render_comparison_table, RenderedTable};
use crate::restoration::{restore, BoundaryAverageInpainter};
use crate::types::{BoundingBox, DetectorSource, Side, Stage};
use crate::verification::{
    aggregate_trials, compute_auc, enumerate_pairs, save_results, score_all_pairs, InputCondition, ScoringOptions,
    VerificationResult,
};

use super::compare_results;

/// Shared state of one pipeline invocation.
pub struct RunContext<'a> {
    pub config: &'a PipelineConfig,
    pub cache: &'a StageCache,
    pub stats: RunStats,
}

/// What one condition produced.
#[derive(Debug, Clone)]
pub struct ConditionOutput {
    pub condition: InputCondition,
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub results: Vec<VerificationResult>,
    pub results_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub baseline: ConditionOutput,
    pub inpainted: Option<ConditionOutput>,
    pub report: Option<RenderedTable>,
    pub stats: RunStats,
}

/// A file a per-record stage leaves in its cache entry. When `subdir` is set
/// the file is also published as `<out>/<subdir>/<subject>/<stem><suffix>`.
struct Output {
    entry_file: &'static str,
    subdir: Option<&'static str>,
    suffix: &'static str,
}

const fn published(entry_file: &'static str, subdir: &'static str, suffix: &'static str) -> Output {
    Output {
        entry_file,
        subdir: Some(subdir),
        suffix,
    }
}

const fn internal(entry_file: &'static str) -> Output {
    Output {
        entry_file,
        subdir: None,
        suffix: "",
    }
}

/// Runs a per-record stage over `records` in parallel, each worker owning the
/// state built by `init`. Returns, per record, the location of every output
/// (`None` when the stage did not write it).
#[allow(clippy::too_many_arguments)]
fn run_records<W, I, P>(
    ctx: &mut RunContext<'_>,
    stage: StageName,
    config: &str,
    records: &[&ImageRecord],
    out_dir: &Path,
    outputs: &[Output],
    inputs: I,
    init: impl Fn() -> W + Sync + Send,
    produce: P,
) -> Result<Vec<Vec<Option<PathBuf>>>>
where
    I: Fn(&ImageRecord) -> Result<Vec<Option<PathBuf>>> + Sync,
    P: Fn(&mut W, &ImageRecord, &Path) -> Result<()> + Sync,
{
    let cache = ctx.cache;
    let name = stage.as_str();
    let done: Vec<(Vec<Option<PathBuf>>, bool)> = records
        .par_iter()
        .map_init(&init, |worker, r| {
            let key = r.key();
            let wrap = |e: Error| e.in_stage(name, &key);
            let hashes = inputs(r)
                .map_err(wrap)?
                .iter()
                .map(|p| match p {
                    Some(p) => io::hash_file(p),
                    None => Ok("none".to_string()),
                })
                .collect::<Result<Vec<_>>>()
                .map_err(wrap)?;
            let ckey = StageCache::key(name, config, &hashes);
            let (entry, hit) = cache.get_or_fill(name, &ckey, |dir| produce(worker, r, dir)).map_err(wrap)?;
            let mut located = Vec::with_capacity(outputs.len());
            for o in outputs {
                let src = entry.join(o.entry_file);
                if !src.is_file() {
                    located.push(None);
                    continue;
                }
                let dest = match o.subdir {
                    Some(sub) => {
                        let dest = out_dir
                            .join(sub)
                            .join(&r.subject_id)
                            .join(format!("{}{}", r.base_stem(), o.suffix));
                        io::ensure_parent(&dest).map_err(wrap)?;
                        std::fs::copy(&src, &dest).map_err(|e| wrap(Error::io(&dest, e)))?;
                        dest
                    }
                    None => src,
                };
                located.push(Some(dest));
            }
            Ok((located, hit))
        })
        .collect::<Result<_>>()?;
    let hits = done.iter().filter(|(_, h)| *h).count();
    ctx.stats.record(name, done.len() - hits, hits);
    Ok(done.into_iter().map(|(l, _)| l).collect())
}

fn section<T: Serialize>(v: &T) -> String {
    PipelineConfig::section_json(v)
}

fn stage_ingest(manifest: &DatasetManifest) -> Result<()> {
    let violations = validate_manifest(manifest);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Ingestion(format!(
            "manifest {} is not usable: {}",
            manifest.name,
            list.join("; ")
        ))
        .in_stage("ingest", &manifest.name));
    }
    for w in manifest.warnings() {
        log::warn!("{w}");
    }
    Ok(())
}

fn stage_side_split(ctx: &mut RunContext<'_>, manifest: &mut DatasetManifest, out_dir: &Path) -> Result<()> {
    let config = section(&ctx.config.backends.side_classifier);
    let unknown: Vec<&ImageRecord> = manifest.records.iter().filter(|r| r.side == Side::Unknown).collect();
    let located = run_records(
        ctx,
        StageName::SideSplit,
        &config,
        &unknown,
        out_dir,
        &[internal("side.json")],
        |r| Ok(vec![Some(r.path.clone())]),
        || MockSideClassifier,
        |classifier, r, dir| {
            // classify through split_by_side so its checks apply
            let single = DatasetManifest::new("", true, vec![(*r).clone()]);
            let labeled = split_by_side(&single, classifier as &mut dyn SideClassifierBackend)?;
            io::write_json(&labeled.records[0].side, &dir.join("side.json"))
        },
    )?;
    let sides: Vec<Side> = located
        .into_iter()
        .map(|l| io::read_json(l[0].as_ref().expect("side written")))
        .collect::<Result<_>>()?;
    let mut sides = sides.into_iter();
    for r in manifest.records.iter_mut().filter(|r| r.side == Side::Unknown) {
        r.side = sides.next().expect("one side per unknown record");
    }
    manifest.side_split = true;
    for w in manifest.warnings() {
        log::warn!("{w}");
    }
    Ok(())
}

fn map_dump(sidecar: &AlignmentSidecar, path: &Path) -> Result<DetectionDump> {
    let mut dump: DetectionDump = io::read_json(path)?;
    dump.detections = dump
        .detections
        .into_iter()
        .filter_map(|mut d| {
            d.bbox = sidecar.map_box(&d.bbox)?;
            Some(d)
        })
        .collect();
    Ok(dump)
}

fn stage_align(ctx: &mut RunContext<'_>, manifest: &mut DatasetManifest, out_dir: &Path) -> Result<()> {
    let cfg = ctx.config.alignment.clone();
    let config = section(&cfg);
    let records: Vec<&ImageRecord> = manifest.records.iter().collect();
    let located = run_records(
        ctx,
        StageName::Align,
        &config,
        &records,
        out_dir,
        &[
            published("image.png", "aligned", ".png"),
            published("ear.png", "aligned", ".ear.png"),
            published("align.json", "aligned", ".align.json"),
            published("annotation.json", "aligned", ".ann.json"),
            published("det.json", "aligned", ".det.json"),
            published("mask.png", "aligned", ".mask.png"),
        ],
        |r| {
            if r.ear_mask.is_none() {
                return Err(Error::Alignment(format!("record {} has no ear mask", r.key())));
            }
            Ok(vec![
                Some(r.path.clone()),
                r.ear_mask.clone(),
                r.annotation.clone(),
                r.detections.clone(),
                r.mask.clone(),
            ])
        },
        || (),
        |_, r, dir| {
            let image = io::load_image(&r.path)?;
            let ear = io::load_mask(r.ear_mask.as_ref().expect("checked above"))?;
            let aligned = align_image(&image, &ear, &cfg)?;
            let sc = &aligned.sidecar;
            io::save_image(&aligned.image, &dir.join("image.png"))?;
            io::save_mask(&sc.map_mask(&ear), &dir.join("ear.png"))?;
            io::write_json(sc, &dir.join("align.json"))?;
            if let Some(p) = &r.annotation {
                io::write_json(&map_dump(sc, p)?, &dir.join("annotation.json"))?;
            }
            if let Some(p) = &r.detections {
                io::write_json(&map_dump(sc, p)?, &dir.join("det.json"))?;
            }
            if let Some(p) = &r.mask {
                io::save_mask(&sc.map_mask(&io::load_mask(p)?), &dir.join("mask.png"))?;
            }
            Ok(())
        },
    )?;
    for (r, l) in manifest.records.iter_mut().zip(located) {
        let [image, ear, _, annotation, detections, mask]: [Option<PathBuf>; 6] =
            l.try_into().expect("six outputs");
        r.path = image.expect("aligned image written");
        r.ear_mask = ear;
        r.annotation = annotation;
        r.detections = detections;
        r.mask = mask;
        if r.stage == Stage::Raw {
            r.stage = Stage::Aligned;
        }
    }
    Ok(())
}

type BoxedDetector = Box<dyn DetectorBackend + Send>;

fn make_detector(
    cfg: &PipelineConfig,
    choice: DetectorChoice,
    source: DetectorSource,
    table: &Arc<HashMap<String, Vec<BoundingBox>>>,
) -> BoxedDetector {
    let b = &cfg.backends;
    match choice {
        DetectorChoice::MockReplay => {
            Box::new(MockReplayDetector::new(source, Arc::clone(table)).with_jitter(b.detector_jitter, b.seed))
        }
        DetectorChoice::MockFixedBox => Box::new(MockFixedBoxDetector {
            bbox: BoundingBox::from(b.fixed_box.expect("validated")),
            source,
        }),
        DetectorChoice::Noop => Box::new(NoopDetector),
    }
}

fn stage_detect(ctx: &mut RunContext<'_>, manifest: &mut DatasetManifest, out_dir: &Path) -> Result<()> {
    let cfg = ctx.config;
    let b = &cfg.backends;
    let config = json!({
        "detector": cfg.detector,
        "supervised": b.supervised_detector,
        "zero_shot": b.zero_shot_detector,
        "fixed_box": b.fixed_box,
        "jitter": b.detector_jitter,
        "seed": b.seed,
    })
    .to_string();
    let table = if [b.supervised_detector, b.zero_shot_detector].contains(&DetectorChoice::MockReplay) {
        MockReplayDetector::table_from_manifest(manifest).map_err(|e| e.in_stage("detect", &manifest.name))?
    } else {
        HashMap::new()
    };
    let table = Arc::new(table);
    let records: Vec<&ImageRecord> = manifest.records.iter().collect();
    let located = run_records(
        ctx,
        StageName::Detect,
        &config,
        &records,
        out_dir,
        &[published("det.json", "detections", ".det.json")],
        |r| Ok(vec![Some(r.path.clone()), r.annotation.clone()]),
        || {
            (
                make_detector(cfg, b.supervised_detector, DetectorSource::Supervised, &table),
                make_detector(cfg, b.zero_shot_detector, DetectorSource::ZeroShot, &table),
            )
        },
        |(sup, zs), r, dir| {
            let image = io::load_image(&r.path)?;
            let detections = detect_accessories(&image, sup.as_mut(), zs.as_mut(), &cfg.detector)?;
            let dump = DetectionDump {
                image: r.key(),
                detections,
            };
            io::write_json(&dump, &dir.join("det.json"))
        },
    )?;
    for (r, mut l) in manifest.records.iter_mut().zip(located) {
        r.detections = l.remove(0);
    }
    Ok(())
}

fn stage_mask(ctx: &mut RunContext<'_>, manifest: &mut DatasetManifest, out_dir: &Path) -> Result<()> {
    let cfg = ctx.config;
    let config = json!({"masking": cfg.masking, "segmenter": cfg.backends.segmenter}).to_string();
    let records: Vec<&ImageRecord> = manifest.records.iter().collect();
    let located = run_records(
        ctx,
        StageName::Mask,
        &config,
        &records,
        out_dir,
        &[published("mask.png", "masks", ".mask.png")],
        |r| match &r.detections {
            Some(d) => Ok(vec![Some(r.path.clone()), Some(d.clone())]),
            None => Err(Error::Masking(format!("record {} has no detections; run detect first", r.key()))),
        },
        || MockEllipseSegmenter,
        |seg, r, dir| {
            let image = io::load_image(&r.path)?;
            let dump: DetectionDump = io::read_json(r.detections.as_ref().expect("checked above"))?;
            let m = &cfg.masking;
            let mut mask = build_accessory_mask(&image, &dump.detections, seg, m.binarize_threshold, m.min_quality)?;
            if m.dilation_radius > 0 {
                mask = dilate_mask(&mask, m.dilation_radius);
            }
            io::save_mask(&mask, &dir.join("mask.png"))
        },
    )?;
    for (r, mut l) in manifest.records.iter_mut().zip(located) {
        r.mask = l.remove(0);
    }
    Ok(())
}

fn stage_inpaint(ctx: &mut RunContext<'_>, manifest: &mut DatasetManifest, out_dir: &Path) -> Result<()> {
    let b = &ctx.config.backends;
    let inpainter = BoundaryAverageInpainter {
        max_sweeps: b.inpainter_max_sweeps,
        tolerance: b.inpainter_tolerance,
    };
    let config = json!({
        "inpainter": b.inpainter,
        "max_sweeps": b.inpainter_max_sweeps,
        "tolerance": b.inpainter_tolerance,
    })
    .to_string();
    let records: Vec<&ImageRecord> = manifest.records.iter().collect();
    let located = run_records(
        ctx,
        StageName::Inpaint,
        &config,
        &records,
        out_dir,
        &[published("image.png", "inpainted", ".inpainted.png")],
        |r| match &r.mask {
            Some(m) => Ok(vec![Some(r.path.clone()), Some(m.clone())]),
            None => Err(Error::Restoration(format!("record {} has no mask; run mask first", r.key()))),
        },
        || inpainter,
        |inp, r, dir| {
            let image = io::load_image(&r.path)?;
            let mask = io::load_mask(r.mask.as_ref().expect("checked above"))?;
            io::save_image(&restore(&image, &mask, inp)?, &dir.join("image.png"))
        },
    )?;
    for (r, mut l) in manifest.records.iter_mut().zip(located) {
        r.path = l.remove(0).expect("inpainted image written");
        r.stage = Stage::Inpainted;
    }
    Ok(())
}

/// Embedding tables per configured embedder, one per trial.
type TrialTables = Vec<Vec<EmbeddingTable>>;

/// Vectors are cached per condition: both conditions use the same record keys
/// for different pixels, and a record-keyed store holds one version per key.
fn stage_embed(ctx: &mut RunContext<'_>, manifest: &DatasetManifest, condition: InputCondition) -> Result<TrialTables> {
    let cfg = ctx.config;
    let mut all = Vec::new();
    let (mut executed, mut cached) = (0, 0);
    for spec in &cfg.backends.embedders {
        let mut per_trial = Vec::new();
        for t in 0..cfg.trials {
            let seed = spec.seed + t as u64;
            let wrap = |e: Error| e.in_stage("embed", &format!("{}_p{} trial {t}", spec.family, spec.patch_size));
            let proto = MockEmbedder::new(spec.patch_size, seed).map_err(wrap)?;
            let fp = crate::embedding::EmbedderBackend::fingerprint(&proto);
            let dir = ctx
                .cache
                .root()
                .join("embed")
                .join(condition.as_str())
                .join(&io::hash_bytes(fp.as_bytes())[..16]);
            let mut store = EmbeddingCache::open(&dir, &proto).map_err(wrap)?;
            let (table, ran) = embed_manifest_par(manifest, || proto.clone(), Some(&mut store))?;
            store.save(spec.descriptor()?).map_err(wrap)?;
            executed += ran;
            cached += store.hits();
            per_trial.push(table);
        }
        all.push(per_trial);
    }
    ctx.stats.record("embed", executed, cached);
    Ok(all)
}

fn table_hash(table: &EmbeddingTable) -> String {
    let mut bytes = Vec::new();
    for (k, e) in table {
        bytes.extend_from_slice(k.as_bytes());
        bytes.push(0);
        for v in e.vector() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    io::hash_bytes(&bytes)
}

fn stage_evaluate(
    ctx: &mut RunContext<'_>,
    manifest: &DatasetManifest,
    tables: &TrialTables,
    condition: InputCondition,
    out_dir: &Path,
) -> Result<(Vec<VerificationResult>, PathBuf)> {
    let cfg = ctx.config;
    let wrap = |e: Error| e.in_stage("evaluate", &manifest.name);
    let plan = enumerate_pairs(manifest).map_err(wrap)?;
    let plan_text = format!("{:?}", plan.groups());
    let opts = ScoringOptions {
        subsample: cfg.subsample,
    };
    let (mut executed, mut cached) = (0, 0);
    let mut results = Vec::new();
    for (spec, per_trial) in cfg.backends.embedders.iter().zip(tables) {
        let descriptor = spec.descriptor()?;
        let config = json!({
            "dataset": manifest.name,
            "backend": descriptor,
            "condition": condition,
            "subsample": cfg.subsample,
        })
        .to_string();
        let mut inputs = vec![io::hash_bytes(plan_text.as_bytes())];
        inputs.extend(per_trial.iter().map(table_hash));
        let key = StageCache::key("evaluate", &config, &inputs);
        let title = format!("{} {} ({})", manifest.name, descriptor.tag(), condition.as_str());
        let (entry, hit) = ctx
            .cache
            .get_or_fill("evaluate", &key, |dir| {
                let mut aucs = Vec::with_capacity(per_trial.len());
                for (t, table) in per_trial.iter().enumerate() {
                    let scores = score_all_pairs(table, &plan, &opts)?;
                    aucs.push(compute_auc(&scores)?);
                    if t == 0 {
                        emit_roc_plot(&scores, &dir.join("roc.svg"), &title)?;
                    }
                }
                let s = aggregate_trials(&aucs)?;
                let result = VerificationResult {
                    dataset: manifest.name.clone(),
                    backend: descriptor,
                    input_condition: condition,
                    trials: s.auc_per_trial,
                    mean: s.mean,
                    std: s.std,
                    pair_counts: plan.counts(),
                    subsample: cfg.subsample,
                };
                io::write_json(&result, &dir.join("result.json"))
            })
            .map_err(wrap)?;
        if hit {
            cached += 1;
        } else {
            executed += 1;
        }
        let roc = out_dir.join("roc").join(format!("{}.svg", descriptor.tag()));
        io::ensure_parent(&roc)?;
        std::fs::copy(entry.join("roc.svg"), &roc).map_err(|e| Error::io(&roc, e))?;
        results.push(io::read_json(&entry.join("result.json"))?);
    }
    ctx.stats.record("evaluate", executed, cached);
    let path = out_dir.join("results.json");
    save_results(&results, &path)?;
    Ok((results, path))
}

/// Runs `stages` for one input condition, writing under `out_dir`.
pub fn run_condition(
    ctx: &mut RunContext<'_>,
    manifest: &DatasetManifest,
    condition: InputCondition,
    stages: &[StageName],
    out_dir: &Path,
) -> Result<ConditionOutput> {
    if stages.contains(&StageName::Evaluate) && !stages.contains(&StageName::Embed) {
        return Err(Error::Config("evaluate needs the embed stage in the same run".into()));
    }
    let mut manifest = manifest.clone();
    let mut tables = None;
    let mut results = Vec::new();
    let mut results_path = None;
    for stage in stages {
        log::info!("{}: {}", condition.as_str(), stage.as_str());
        match stage {
            StageName::Ingest => stage_ingest(&manifest)?,
            StageName::SideSplit => stage_side_split(ctx, &mut manifest, out_dir)?,
            StageName::Align => stage_align(ctx, &mut manifest, out_dir)?,
            StageName::Detect => stage_detect(ctx, &mut manifest, out_dir)?,
            StageName::Mask => stage_mask(ctx, &mut manifest, out_dir)?,
            StageName::Inpaint => stage_inpaint(ctx, &mut manifest, out_dir)?,
            StageName::Embed => tables = Some(stage_embed(ctx, &manifest, condition)?),
            StageName::Evaluate => {
                let t = tables.as_ref().expect("embed ran before evaluate");
                let (r, p) = stage_evaluate(ctx, &manifest, t, condition, out_dir)?;
                results = r;
                results_path = Some(p);
            }
            StageName::Report => {
                return Err(Error::Config("report combines both conditions; use run_pipeline".into()))
            }
        }
    }
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(ConditionOutput {
        condition,
        manifest,
        manifest_path,
        results,
        results_path,
    })
}

fn stage_report(
    ctx: &mut RunContext<'_>,
    baseline: &[VerificationResult],
    inpainted: &[VerificationResult],
    dataset: &str,
    out: &Path,
) -> Result<RenderedTable> {
    let wrap = |e: Error| e.in_stage("report", dataset);
    let inputs = [baseline, inpainted].map(|r| io::hash_bytes(serde_json::to_string(r).expect("results serialize").as_bytes()));
    let key = StageCache::key("report", "", &inputs);
    let (entry, hit) = ctx
        .cache
        .get_or_fill("report", &key, |dir| {
            let grid = compare_results(baseline, inpainted)?;
            render_comparison_table(&grid).write_to(dir)
        })
        .map_err(wrap)?;
    let read = |name: &str| {
        let p = entry.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let table = RenderedTable {
        csv: read("report.csv")?,
        html: read("report.html")?,
        text: read("report.txt")?,
    };
    table.write_to(out)?;
    ctx.stats.record("report", usize::from(!hit), usize::from(hit));
    Ok(table)
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs the configured stages on both conditions and, when requested, the
/// comparison report. Baseline skips the restoration stages.
pub fn run_pipeline(config: &PipelineConfig, manifest: &DatasetManifest, out: &Path) -> Result<PipelineOutput> {
    config.validate()?;
    let cache = StageCache::new(config.cache_dir.clone().unwrap_or_else(|| out.join("cache")));
    let pool = build_pool(config.workers)?;
    pool.install(|| {
        let mut ctx = RunContext {
            config,
            cache: &cache,
            stats: RunStats::default(),
        };
        let base_stages: Vec<StageName> = config
            .stages
            .iter()
            .copied()
            .filter(|s| !s.is_restoration() && *s != StageName::Report)
            .collect();
        let baseline = run_condition(
            &mut ctx,
            manifest,
            InputCondition::Baseline,
            &base_stages,
            &out.join(InputCondition::Baseline.as_str()),
        )?;
        let inpainted = if config.stages.iter().any(|s| s.is_restoration()) {
            let stages: Vec<StageName> = config.stages.iter().copied().filter(|s| *s != StageName::Report).collect();
            Some(run_condition(
                &mut ctx,
                manifest,
                InputCondition::Inpainted,
                &stages,
                &out.join(InputCondition::Inpainted.as_str()),
            )?)
        } else {
            None
        };
        let report = if config.stages.contains(&StageName::Report) {
            let inp = inpainted
                .as_ref()
                .ok_or_else(|| Error::Config("report needs the inpainted condition (detect, mask, inpaint)".into()))?;
            if baseline.results.is_empty() {
                return Err(Error::Config("report needs the evaluate stage".into()));
            }
            Some(stage_report(&mut ctx, &baseline.results, &inp.results, &manifest.name, out)?)
        } else {
            None
        };
        Ok(PipelineOutput {
            baseline,
            inpainted,
            report,
            stats: ctx.stats,
        })
    })
}

/// Runs a single stage (or stage list) for one condition, as the CLI
/// subcommands do.
pub fn run_stages(
    config: &PipelineConfig,
    manifest: &DatasetManifest,
    condition: InputCondition,
    stages: &[StageName],
    out: &Path,
) -> Result<(ConditionOutput, RunStats)> {
    let cache = StageCache::new(config.cache_dir.clone().unwrap_or_else(|| out.join("cache")));
    let pool = build_pool(config.workers)?;
    pool.install(|| {
        let mut ctx = RunContext {
            config,
            cache: &cache,
            stats: RunStats::default(),
        };
        let o = run_condition(&mut ctx, manifest, condition, stages, out)?;
        Ok((o, ctx.stats))
    })
}
