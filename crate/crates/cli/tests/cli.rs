use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use earpipe_core::pipeline::compare_conditions;
use earpipe_core::reporting::{classify_cell_with_tolerance, ModelKey};

fn earpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_earpipe")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The published colouring is reproduced exactly by a 2.5% relative cutoff.
#[test]
fn reference_colours_follow_a_two_and_a_half_percent_cutoff() {
    let grid = compare_conditions(&fixture("reference_baseline.json"), &fixture("reference_inpainted.json")).unwrap();
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("reference_colors.json")).unwrap()).unwrap();
    for c in expected.as_array().unwrap() {
        let key = ModelKey {
            model: c["model"].as_str().unwrap().into(),
            patch: c["patch"].as_u64().unwrap() as u32,
        };
        let dataset = c["dataset"].as_str().unwrap();
        let cell = grid.get(&key, dataset).unwrap();
        let got = classify_cell_with_tolerance(cell.baseline.mean, cell.inpainted.mean, 0.025).unwrap();
        assert_eq!(got.as_str(), c["class"].as_str().unwrap(), "{} {dataset}", key.label());
    }
}

#[test]
fn report_subcommand_renders_the_reference_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = earpipe(&[
        "report",
        "--baseline",
        &s(&fixture("reference_baseline.json")),
        "--inpainted",
        &s(&fixture("reference_inpainted.json")),
        "--out",
        &s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let html = std::fs::read_to_string(dir.path().join("report.html")).unwrap();
    assert_eq!(html.matches("#C6EFCE").count(), 15);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 48);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.9832 ± 0.0013"));
}

#[test]
fn stage_subcommands_chain_through_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let p = |x: &str| s(&dir.path().join(x));
    let ok = |o: Output| assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    ok(earpipe(&["synth", "--out", &p("data"), "--identities", "3", "--per-identity", "2", "--occlusion", "0.5"]));
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "trials = 2\n").unwrap();
    let cfg = s(&cfg);
    let mut manifest = p("data/manifest.json");
    for (stage, out) in [("align", "s1"), ("detect", "s2"), ("mask", "s3"), ("inpaint", "s4")] {
        ok(earpipe(&[stage, "--config", &cfg, "--manifest", &manifest, "--out", &p(out)]));
        manifest = p(&format!("{out}/manifest.json"));
    }
    let out = earpipe(&["evaluate", "--config", &cfg, "--manifest", &manifest, "--out", &p("eval")]);
    ok(out.clone());
    assert!(String::from_utf8_lossy(&out.stdout).contains("mock_p16"));
    assert!(dir.path().join("eval/results.json").is_file());
    assert!(dir.path().join("eval/roc/mock_p28.svg").is_file());
}

#[test]
fn failures_exit_nonzero_with_the_stage_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = |x: &str| s(&dir.path().join(x));
    assert!(earpipe(&["synth", "--out", &p("data"), "--identities", "2", "--per-identity", "2"]).status.success());
    std::fs::remove_file(dir.path().join("data/annotations/s001/s001_01.ear.png")).unwrap();
    let out = earpipe(&["align", "--manifest", &p("data/manifest.json"), "--out", &p("o")]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage align") && err.contains("s001/s001_01"), "{err}");

    let out = earpipe(&["mask", "--manifest", &p("data/manifest.json"), "--out", &p("o2")]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage mask"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "stages = [\"embed\", \"align\"]\n").unwrap();
    let out = earpipe(&["run", "--config", &s(&bad), "--manifest", &p("data/manifest.json"), "--out", &p("o3")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn ingest_and_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("raw");
    for sub in ["a", "b"] {
        std::fs::create_dir_all(root.join(sub)).unwrap();
        for i in 0..3 {
            let img = earpipe_core::RasterImage::filled(4, 4, 3, 9).unwrap();
            earpipe_core::io::save_image(&img, &root.join(sub).join(format!("{i}.png"))).unwrap();
        }
    }
    let out = earpipe(&["ingest", "--root", &s(&root), "--out", &s(dir.path())]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("6 records, 2 identities"));
    let m = earpipe_core::manifest::DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.records.len(), 6);

    let out = earpipe(&["config"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(earpipe_core::PipelineConfig::from_toml_str(&text).is_ok());
}
