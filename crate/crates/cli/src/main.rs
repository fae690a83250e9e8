use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};

use earpipe_core::manifest::DatasetManifest;
use earpipe_core::mock::synth_dataset;
use earpipe_core::pipeline::{
    compare_conditions, ingest_dataset, run_pipeline, run_stages, DatasetLayout, PipelineConfig, RunStats, StageName,
};
use earpipe_core::reporting::render_comparison_table;
use earpipe_core::verification::InputCondition;

#[derive(Parser)]
#[command(name = "earpipe", version, about = "Ear accessory removal and verification pipeline")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a manifest from a dataset directory.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "subject_folders")]
        layout: String,
        /// Directory receiving manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rotate upright, crop to the ear and resize.
    Align(StageArgs),
    /// Detect accessories with the configured detectors.
    Detect(StageArgs),
    /// Turn detections into refined accessory masks.
    Mask(StageArgs),
    /// Inpaint the masked regions.
    Inpaint(StageArgs),
    /// Embed every record with every configured embedder and trial.
    Embed(StageArgs),
    /// Embed (cached) and score all verification pairs.
    Evaluate(StageArgs),
    /// Join baseline and inpainted results into the comparison table.
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        inpainted: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured stage for both conditions and write the report.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with optional accessories.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        identities: usize,
        #[arg(long, default_value_t = 5)]
        per_identity: usize,
        #[arg(long, default_value_t = 0.5)]
        occlusion: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print the default configuration.
    Config,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "inpainted")]
    condition: String,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn print_stats(stats: &RunStats) {
    for (stage, s) in &stats.stages {
        println!("  {stage:<10} executed {:>5}  cached {:>5}", s.executed, s.cached);
    }
}

fn stage_command(stage: StageName, args: &StageArgs) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let condition: InputCondition = args.condition.parse()?;
    if stage.is_restoration() && condition == InputCondition::Baseline {
        bail!("stage {}: only the inpainted condition runs restoration stages", stage.as_str());
    }
    let manifest = DatasetManifest::load(&args.manifest)?;
    let stages = match stage {
        StageName::Evaluate => vec![StageName::Embed, StageName::Evaluate],
        s => vec![s],
    };
    let (out, stats) = run_stages(&cfg, &manifest, condition, &stages, &args.out)?;
    println!("{}: wrote {}", stage.as_str(), out.manifest_path.display());
    if let Some(p) = &out.results_path {
        for r in &out.results {
            println!("  {} {}", r.backend.tag(), r.summary());
        }
        println!("results: {}", p.display());
    }
    print_stats(&stats);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { root, layout, out } => {
            let layout: DatasetLayout = layout.parse()?;
            let (manifest, warnings) = ingest_dataset(&root, layout)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let path = out.join("manifest.json");
            manifest.save(&path)?;
            println!(
                "ingest: {} records, {} identities -> {}",
                manifest.records.len(),
                manifest.identities().len(),
                path.display()
            );
        }
        Command::Align(a) => stage_command(StageName::Align, &a)?,
        Command::Detect(a) => stage_command(StageName::Detect, &a)?,
        Command::Mask(a) => stage_command(StageName::Mask, &a)?,
        Command::Inpaint(a) => stage_command(StageName::Inpaint, &a)?,
        Command::Embed(a) => stage_command(StageName::Embed, &a)?,
        Command::Evaluate(a) => stage_command(StageName::Evaluate, &a)?,
        Command::Report { baseline, inpainted, out } => {
            let grid = compare_conditions(&baseline, &inpainted).map_err(|e| e.in_stage("report", "results"))?;
            let table = render_comparison_table(&grid);
            table.write_to(&out)?;
            print!("{}", table.text);
        }
        Command::Run { config, manifest, out } => {
            let cfg = load_config(config.as_deref())?;
            let manifest = DatasetManifest::load(&manifest)?;
            let result = run_pipeline(&cfg, &manifest, &out)?;
            match &result.report {
                Some(t) => print!("{}", t.text),
                None => {
                    for r in &result.baseline.results {
                        println!("{} baseline {}", r.backend.tag(), r.summary());
                    }
                }
            }
            print_stats(&result.stats);
        }
        Command::Synth {
            out,
            identities,
            per_identity,
            occlusion,
            seed,
        } => {
            let ds = synth_dataset(&out, identities, per_identity, occlusion, seed)?;
            println!(
                "synth: {} images, {} occluded -> {}",
                ds.manifest.records.len(),
                ds.occluded.len(),
                ds.manifest_path.display()
            );
        }
        Command::Config => print!("{}", PipelineConfig::default().to_toml_string()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // pipeline errors already spell out their causes
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
