use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rf_annotate::io::{read_annotation, read_sequence, write_annotation, write_sequence, SimulationConfig, SuiteSpec};
use rf_annotate::pipeline::{self, EvaluationReport, PipelineConfig, RunMetrics};
use rf_annotate::simulator::simulate;

const EXIT_INPUT: u8 = 2;
const EXIT_PIPELINE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "rf-annotate",
    version,
    about = "Pixelwise annotation of RFID-tagged objects from depth, pose and phase sequences",
    after_help = "Exit codes:\n  0  success\n  2  invalid input: bad arguments, schema or parse errors, unreadable files, \
                  trajectory too fast to unwrap\n  3  pipeline failure, e.g. no instance survived registration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sequence, with ground truth, from a simulation config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the config's top-level seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Register instances, match them to tags and write per-frame EPC masks.
    Annotate {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Give every sample weight 1 when scoring instance/tag pairs.
        #[arg(long)]
        no_weighting: bool,
        /// Pipeline config JSON; defaults apply to omitted keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the differential profiles and weights as CSV.
        #[arg(long)]
        dump_profiles: Option<PathBuf>,
    },
    /// Score an annotation directory against a sequence with ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a seeded suite with and without weighting and compare the means.
    Ablate {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_pipeline_config(path: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn summary_row(label: &str, m: &RunMetrics) -> String {
    let recall: Vec<String> = m.recall_at.iter().map(|(k, v)| format!("R@{k} {v:.3}")).collect();
    format!(
        "{label:<12} inst.recall {:.3}  match.prec {:.3}  mask F {:.3}  boundary F {:.3}  {}",
        m.instance_recall,
        m.matching_precision,
        m.mask_f,
        m.boundary_f,
        recall.join("  ")
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = SimulationConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let inputs = cfg.resolve()?;
            let seq = simulate(&inputs.scene, &inputs.trajectory, &inputs.noise, &inputs.rig)?;
            write_sequence(&seq, &out)?;
            eprintln!("wrote {} frames to {}", seq.len(), out.display());
        }
        Command::Annotate {
            seq,
            out,
            no_weighting,
            config,
            dump_profiles,
        } => {
            let cfg = load_pipeline_config(config.as_deref())?;
            let sequence = read_sequence(&seq)?;
            let (annotation, matched) = pipeline::annotate(&sequence, &cfg, !no_weighting)?;
            write_annotation(&annotation, &out)?;
            if let Some(path) = dump_profiles {
                fs::write(&path, pipeline::profiles_csv(&matched))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let a = &annotation.assignment;
            eprintln!(
                "{} instances, {} pairs, {} unmatched instances, {} unmatched tags",
                annotation.scene.instances.len(),
                a.pairs.len(),
                a.unmatched_instances.len(),
                a.unmatched_tags.len()
            );
        }
        Command::Evaluate {
            pred,
            gt,
            report,
            config,
        } => {
            let cfg = load_pipeline_config(config.as_deref())?;
            let annotation = read_annotation(&pred)?;
            let truth = read_sequence(&gt)?;
            let view = pipeline::ground_truth_view(&truth, &cfg)?;
            let result: EvaluationReport = pipeline::evaluate(&annotation, &view, &cfg)?;
            println!("{}", summary_row("prediction", &RunMetrics::from(&result)));
            match report {
                Some(path) => write_json(&path, &result)?,
                None => println!("{}", serde_json::to_string_pretty(&result)?),
            }
        }
        Command::Ablate { suite, out } => {
            let spec = SuiteSpec::load(&suite)?;
            let result = pipeline::ablate(&spec)?;
            println!("{} ({} runs)", result.name, result.runs);
            println!("{}", summary_row("with w(t)", &result.with_weighting));
            println!("{}", summary_row("without", &result.without_weighting));
            println!("{}", summary_row("difference", &result.difference));
            write_json(&out, &result)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<rf_annotate::Error>() {
        Some(rf_annotate::Error::Pipeline(_)) => EXIT_PIPELINE,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
