use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use harmonize_core::pipeline::{ablation_conditions, harmonize, AblationAxis, PipelineConfig};
use harmonize_core::selftest::{all_passed, run_selftest, SelftestOptions};
use harmonize_core::{BinaryMask, Image};

mod config;
mod manifest;

use config::{ConfigArgs, BACKEND_ENV};
use manifest::{write_json, AblationManifest, ConditionEntry, InputFile, Inputs, RunManifest};

#[derive(Parser)]
#[command(
    name = "harmonize",
    version,
    about = "Texture-aware geometry transfer with harmonizing attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct InputArgs {
    /// Source RGB PNG containing the geometry to transfer
    #[arg(long)]
    src: PathBuf,

    /// Single-channel PNG mask of the source region (binarized at 128)
    #[arg(long)]
    mask: PathBuf,

    /// Target RGB PNG whose texture is adopted
    #[arg(long)]
    tar: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Transfer the masked source geometry onto the target
    Harmonize {
        #[command(flatten)]
        inputs: InputArgs,

        /// Output PNG; the pasted image and manifest are written beside it
        #[arg(long)]
        out: PathBuf,

        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the ablation grid and write one output per condition
    Ablate {
        #[command(flatten)]
        inputs: InputArgs,

        /// color, ta, gp or all
        #[arg(long, default_value = "all")]
        axis: String,

        #[arg(long)]
        out_dir: PathBuf,

        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the built-in numerical checks
    Selftest {
        /// Skip the fixed-point inversion statistics
        #[arg(long)]
        quick: bool,

        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

enum Failure {
    Selftest,
    Validation(anyhow::Error),
    Pipeline(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Selftest => 1,
            Failure::Validation(_) => 2,
            Failure::Pipeline(_) => 3,
        }
    }
}

fn validation<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Validation(e.into())
}

fn io<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Pipeline(e.into())
}

/// Stage errors are pipeline failures; everything raised before a stage runs is validation.
fn classify(e: harmonize_core::Error) -> Failure {
    match e.stage() {
        Some(_) => Failure::Pipeline(e.into()),
        None => Failure::Validation(e.into()),
    }
}

struct LoadedInputs {
    src: Image,
    mask: BinaryMask,
    tar: Image,
    files: Inputs,
}

fn load_inputs(args: &InputArgs) -> Result<LoadedInputs, Failure> {
    let src = Image::load_png(&args.src)
        .with_context(|| format!("reading source {}", args.src.display()))
        .map_err(validation)?;
    let mask = BinaryMask::load_png(&args.mask)
        .with_context(|| format!("reading mask {}", args.mask.display()))
        .map_err(validation)?;
    let tar = Image::load_png(&args.tar)
        .with_context(|| format!("reading target {}", args.tar.display()))
        .map_err(validation)?;
    let files = Inputs {
        src: InputFile::hash(&args.src).map_err(validation)?,
        mask: InputFile::hash(&args.mask).map_err(validation)?,
        tar: InputFile::hash(&args.tar).map_err(validation)?,
    };
    Ok(LoadedInputs {
        src,
        mask,
        tar,
        files,
    })
}

fn resolve_config(args: &ConfigArgs) -> Result<PipelineConfig, Failure> {
    let env = std::env::var(BACKEND_ENV).ok().filter(|v| !v.is_empty());
    args.resolve(env.as_deref()).map_err(validation)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_harmonize(inputs: &InputArgs, out: &Path, config: &ConfigArgs) -> Result<(), Failure> {
    let config = resolve_config(config)?;
    let loaded = load_inputs(inputs)?;
    let run = harmonize(&loaded.src, &loaded.mask, &loaded.tar, &config).map_err(classify)?;

    let pasted = sibling(out, ".pasted.png");
    let manifest_path = sibling(out, ".manifest.json");
    run.output_image.save_png(out).map_err(io)?;
    run.pasted_image.save_png(&pasted).map_err(io)?;
    let manifest = RunManifest {
        version: harmonize_core::VERSION,
        config,
        inputs: loaded.files,
        outputs: BTreeMap::from([
            ("image", out.display().to_string()),
            ("pasted", pasted.display().to_string()),
            ("manifest", manifest_path.display().to_string()),
        ]),
        timings_ms: run.timings.as_millis(),
    };
    write_json(&manifest_path, &manifest).map_err(io)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_ablate(
    inputs: &InputArgs,
    axis: &str,
    out_dir: &Path,
    config: &ConfigArgs,
) -> Result<(), Failure> {
    let axis: AblationAxis = axis.parse().map_err(validation)?;
    let base = resolve_config(config)?;
    let loaded = load_inputs(inputs)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(io)?;
    let mut conditions = Vec::new();
    for cond in ablation_conditions(&base, axis) {
        let run = harmonize(&loaded.src, &loaded.mask, &loaded.tar, &cond.config)
            .map_err(classify)
            .map_err(|f| match f {
                Failure::Pipeline(e) => {
                    Failure::Pipeline(e.context(format!("condition {}", cond.name)))
                }
                Failure::Validation(e) => {
                    Failure::Validation(e.context(format!("condition {}", cond.name)))
                }
                other => other,
            })?;
        let image = out_dir.join(format!("{}.png", cond.name));
        run.output_image.save_png(&image).map_err(io)?;
        println!("{}: wrote {}", cond.name, image.display());
        conditions.push(ConditionEntry::new(&cond.name, cond.axis, &run, &image));
    }
    let manifest = AblationManifest {
        version: harmonize_core::VERSION,
        axis,
        config: base,
        inputs: loaded.files,
        conditions,
    };
    write_json(&out_dir.join("manifest.json"), &manifest).map_err(io)
}

fn cmd_selftest(quick: bool, inject_fault: bool) -> Result<(), Failure> {
    let results = run_selftest(SelftestOptions {
        quick,
        inject_fault,
    });
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let status = match (r.skipped, r.passed) {
            (true, _) => "SKIP",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        };
        println!("{status}  {:width$}  {}", r.name, r.detail);
    }
    if all_passed(&results) {
        Ok(())
    } else {
        Err(Failure::Selftest)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Harmonize {
            inputs,
            out,
            config,
        } => cmd_harmonize(inputs, out, config),
        Command::Ablate {
            inputs,
            axis,
            out_dir,
            config,
        } => cmd_ablate(inputs, axis, out_dir, config),
        Command::Selftest {
            quick,
            inject_fault,
        } => cmd_selftest(*quick, *inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Selftest => eprintln!("error: selftest failed"),
                Failure::Validation(e) => eprintln!("error: {e:#}"),
                Failure::Pipeline(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(failure.code())
        }
    }
}
