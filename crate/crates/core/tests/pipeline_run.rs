use std::path::Path;

use earpipe_core::io;
use earpipe_core::mock::synth_dataset;
use earpipe_core::pipeline::{compare_conditions, run_pipeline, run_stages, PipelineConfig, StageName};
use earpipe_core::restoration::normalize_input;
use earpipe_core::verification::{load_results, InputCondition};
use earpipe_core::Error;

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn double_run_is_byte_identical_and_warm_rerun_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&dir.path().join("data"), 4, 5, 0.5, 7).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.trials = 2;

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_pipeline(&cfg, &ds.manifest, &a).unwrap();
    let cold = run_pipeline(&cfg, &ds.manifest, &b).unwrap();
    assert!(cold.stats.total_executed() > 0);
    for f in ["report.csv", "report.html", "report.txt", "baseline/results.json", "inpainted/results.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs between runs");
    }

    let warm = run_pipeline(&cfg, &ds.manifest, &b).unwrap();
    assert_eq!(warm.stats.total_executed(), 0, "{:?}", warm.stats);
    assert_eq!(read(&a.join("report.csv")), read(&b.join("report.csv")));
}

#[test]
fn editing_an_image_invalidates_only_its_entries() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&dir.path().join("data"), 2, 2, 0.0, 3).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.trials = 1;
    cfg.stages = vec![StageName::Ingest, StageName::Align];
    let out = dir.path().join("out");
    run_stages(&cfg, &ds.manifest, InputCondition::Baseline, &cfg.stages, &out).unwrap();

    let victim = &ds.manifest.records[0].path;
    let mut img = io::load_image(victim).unwrap();
    img.set(60, 75, 0, img.get(60, 75, 0).wrapping_add(40));
    io::save_image(&img, victim).unwrap();

    let (_, stats) = run_stages(&cfg, &ds.manifest, InputCondition::Baseline, &cfg.stages, &out).unwrap();
    let align = stats.stages["align"];
    assert_eq!((align.executed, align.cached), (1, 3));
}

#[test]
fn without_restoration_stages_only_baseline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&dir.path().join("data"), 3, 2, 0.0, 1).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.trials = 1;
    cfg.stages = vec![StageName::Ingest, StageName::Align, StageName::Embed, StageName::Evaluate];
    let out = run_pipeline(&cfg, &ds.manifest, &dir.path().join("out")).unwrap();
    assert!(out.inpainted.is_none());
    assert!(out.report.is_none());
    assert_eq!(out.baseline.results.len(), 3);
    assert!(!dir.path().join("out/inpainted").exists());
}

/// Frozen regression values: the mock embedder separates clean synthetic
/// identities perfectly.
#[test]
fn clean_synthetic_auc_is_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&dir.path().join("data"), 4, 5, 0.0, 7).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.stages.retain(|s| !s.is_restoration() && *s != StageName::Report);
    let out = run_pipeline(&cfg, &ds.manifest, &dir.path().join("out")).unwrap();
    assert_eq!(out.baseline.results.len(), 3);
    for r in &out.baseline.results {
        assert!(r.mean > 0.95, "{} {}", r.backend.tag(), r.mean);
        assert_eq!(r.mean, 1.0, "{}", r.backend.tag());
        assert_eq!(r.trials.len(), 5);
        assert_eq!((r.pair_counts.genuine, r.pair_counts.impostor), (40, 150));
    }
}

#[test]
fn inpainting_changes_exactly_the_drawn_accessories() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&dir.path().join("data"), 4, 5, 0.5, 7).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.stages = vec![StageName::Ingest, StageName::Detect, StageName::Mask, StageName::Inpaint];
    let (out, _) = run_stages(&cfg, &ds.manifest, InputCondition::Inpainted, &cfg.stages, &dir.path().join("out")).unwrap();

    let mut changed_images = 0;
    for (before, after) in ds.manifest.records.iter().zip(&out.manifest.records) {
        let key = before.key();
        let input = normalize_input(&io::load_image(&before.path).unwrap()).unwrap();
        let output = io::load_image(&after.path).unwrap();
        let predicted = io::load_mask(after.mask.as_ref().unwrap()).unwrap();
        let gt = io::load_mask(&ds.ground_truth[&key]).unwrap();
        assert_eq!(gt.is_empty(), !ds.occluded.contains(&key));
        let mut any = false;
        for y in 0..input.height() {
            for x in 0..input.width() {
                let differs = input.pixel(x, y) != output.pixel(x, y);
                any |= differs;
                if differs {
                    assert!(predicted.get(x, y), "{key}: ({x},{y}) changed outside the mask");
                }
                if gt.get(x, y) {
                    assert!(differs, "{key}: accessory pixel ({x},{y}) left unchanged");
                }
            }
        }
        changed_images += usize::from(any);
    }
    assert_eq!(changed_images, 10);
}

#[test]
fn occlusions_hurt_baseline_and_inpainting_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&dir.path().join("data"), 4, 5, 0.5, 7).unwrap();
    let out = run_pipeline(&PipelineConfig::default(), &ds.manifest, &dir.path().join("out")).unwrap();
    let inpainted = out.inpainted.unwrap();
    for (b, i) in out.baseline.results.iter().zip(&inpainted.results) {
        assert_eq!(b.backend, i.backend);
        assert!(b.mean < i.mean, "{}: {} vs {}", b.backend.tag(), b.mean, i.mean);
    }
    let grid = compare_conditions(
        out.baseline.results_path.as_ref().unwrap(),
        inpainted.results_path.as_ref().unwrap(),
    )
    .unwrap();
    assert_eq!(grid.len(), 3);
    assert!(out.report.unwrap().html.contains("#C6EFCE"));
}

#[test]
fn stage_failures_name_stage_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = synth_dataset(&dir.path().join("data"), 2, 2, 0.0, 1).unwrap();
    ds.manifest.records[1].ear_mask = None;
    let mut cfg = PipelineConfig::default();
    cfg.stages = vec![StageName::Align];
    let err = run_stages(&cfg, &ds.manifest, InputCondition::Baseline, &cfg.stages, &dir.path().join("out")).unwrap_err();
    match &err {
        Error::Stage { stage, record, .. } => {
            assert_eq!(stage, "align");
            assert_eq!(record, &ds.manifest.records[1].key());
        }
        other => panic!("unexpected {other}"),
    }

    std::fs::remove_file(&ds.manifest.records[0].path).unwrap();
    cfg.stages = vec![StageName::Ingest];
    let err = run_stages(&cfg, &ds.manifest, InputCondition::Baseline, &cfg.stages, &dir.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("stage ingest"), "{err}");
}

#[test]
fn mismatched_grids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&dir.path().join("data"), 2, 2, 0.0, 1).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.trials = 1;
    cfg.stages = vec![StageName::Align, StageName::Embed, StageName::Evaluate];
    let (base, _) = run_stages(&cfg, &ds.manifest, InputCondition::Baseline, &cfg.stages, &dir.path().join("b")).unwrap();
    cfg.backends.embedders.truncate(1);
    let (inp, _) = run_stages(&cfg, &ds.manifest, InputCondition::Inpainted, &cfg.stages, &dir.path().join("i")).unwrap();
    let b = base.results_path.unwrap();
    let i = inp.results_path.unwrap();
    let err = compare_conditions(&b, &i).unwrap_err().to_string();
    assert!(err.contains("mock_p28/synthetic") && err.contains("mock_p56/synthetic"), "{err}");
    // swapped files carry the wrong condition labels
    assert!(compare_conditions(&i, &b).is_err());
    assert_eq!(load_results(&b).unwrap().len(), 3);
}
