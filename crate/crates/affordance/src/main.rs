use std::path::PathBuf;
use std::process::ExitCode;

use affordance::formats::{self, LabelsFile};
use affordance::pipeline;
use affordance::session::{load_session, save_session};
use affordance::{synth, Error, PipelineConfig, Stage};
use affordance_core::detection::synthetic::SyntheticSpec;
use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "affordance", version, about = "Refine open-vocabulary detections into affordance labels")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the projection (and for `synth`, the data generator).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Session directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the detections for the goal's prompt and open a session.
    Ingest,
    /// Write a synthetic office-door workspace (inputs plus config).
    Synth {
        /// JSON synthetic spec; the office-door preset when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Lay the session's embeddings out in 2D.
    Project,
    /// Apply human labels and relabel every object.
    Relabel {
        /// Labels file; defaults to the config's labels_path.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Check openers against door geometry.
    Verify,
    /// Score detector, relabeled and verified output against ground truth.
    Evaluate,
    /// Run every stage and write all artifacts.
    Run,
    /// Serve the session over HTTP for the labeling UI.
    Serve,
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let path = cli.config.as_deref().context("--config is required for this command")?;
    let config = PipelineConfig::load(path)?
        .with_seed(cli.seed)
        .with_output(cli.output.clone());
    config.validate()?;
    Ok(config)
}

fn open(config: &PipelineConfig, at_least: Stage) -> anyhow::Result<affordance::SessionState> {
    let state = load_session(&config.output_dir)?;
    state.require(at_least)?;
    Ok(state)
}

fn print_json<T: serde::Serialize>(value: &T) {
    print!("{}", String::from_utf8_lossy(&formats::to_json_bytes(value)));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth { spec } => {
            let dir = cli.output.clone().unwrap_or_else(|| PathBuf::from("."));
            let seed = cli.seed.unwrap_or(42);
            let (spec, exemplars): (SyntheticSpec, Vec<(String, usize)>) = match spec {
                Some(path) => {
                    let spec: SyntheticSpec = formats::read_json(path)?;
                    let per_class = spec.classes.iter().map(|c| (c.label.clone(), 1)).collect();
                    (spec, per_class)
                }
                None => (
                    SyntheticSpec::office_doors(),
                    synth::OFFICE_EXEMPLARS.iter().map(|(l, n)| (l.to_string(), *n)).collect(),
                ),
            };
            let exemplars: Vec<(&str, usize)> = exemplars.iter().map(|(l, n)| (l.as_str(), *n)).collect();
            let ws = synth::write_workspace(&dir, &spec, seed, &exemplars)?;
            println!(
                "wrote {} objects, session {}, config {}",
                ws.dataset.detections.len(),
                ws.session_id,
                ws.config_path.display()
            );
        }
        Command::Ingest => {
            let config = load_config(&cli)?;
            let graph = formats::read_graph(&config.knowledge_graph_path).map_err(|e| e.at(Stage::Ingested))?;
            let state = pipeline::ingest(&config, &graph)?;
            save_session(&state, &config.output_dir)?;
            println!(
                "session {}: {} objects, prompt \"{}\"",
                state.session_id,
                state.detection_set.len(),
                state.prompt
            );
        }
        Command::Project => {
            let config = load_config(&cli)?;
            let mut state = open(&config, Stage::Ingested)?;
            pipeline::project(&mut state, &config.tsne)?;
            save_session(&state, &config.output_dir)?;
            if let Some(t) = &state.trace {
                println!(
                    "projected {} objects, perplexity {}, KL {} -> {}",
                    state.detection_set.len(),
                    t.effective_perplexity,
                    t.post_exaggeration_kl,
                    t.final_kl
                );
            }
        }
        Command::Relabel { labels } => {
            let config = load_config(&cli)?;
            let mut state = open(&config, Stage::Projected)?;
            let path = labels
                .as_deref()
                .or(config.labels_path.as_deref())
                .context("no labels file: pass --labels or set labels_path")?;
            let labels: LabelsFile = formats::read_labels(path)?;
            pipeline::apply_labels(&mut state, &labels)?;
            pipeline::relabel(&mut state)?;
            save_session(&state, &config.output_dir)?;
            let changed = state
                .relabeled
                .iter()
                .flatten()
                .filter(|r| r.new_label != r.original_label)
                .count();
            println!(
                "relabeled {} objects from {} exemplars ({changed} labels changed)",
                state.detection_set.len(),
                state.assignments.len()
            );
        }
        Command::Verify => {
            let config = load_config(&cli)?;
            let mut state = open(&config, Stage::Relabeled)?;
            let graph = formats::read_graph(&config.knowledge_graph_path)?;
            let rule = formats::read_rule(&config.spatial_rule_path)?;
            pipeline::verify_stage(&mut state, &rule, &graph, &config.goal)?;
            save_session(&state, &config.output_dir)?;
            let verdicts = state.verdicts.as_deref().unwrap_or_default();
            let kept = verdicts.iter().filter(|v| v.kept).count();
            println!("verified {} openers, kept {kept}", verdicts.len());
        }
        Command::Evaluate => {
            let config = load_config(&cli)?;
            let mut state = open(&config, Stage::Verified)?;
            let path = config
                .ground_truth_path
                .as_deref()
                .context("config has no ground_truth_path")?;
            let gt = formats::read_ground_truth(path)?;
            pipeline::evaluate_stage(&mut state, &gt, config.iou_threshold)?;
            save_session(&state, &config.output_dir)?;
            print!("{}", state.comparison.as_ref().map(|c| c.to_csv()).unwrap_or_default());
        }
        Command::Run => {
            let config = load_config(&cli)?;
            let report = affordance::run_batch(&config)?;
            print_json(&report);
        }
        Command::Serve => {
            let config = load_config(&cli)?;
            tokio::runtime::Runtime::new()?.block_on(affordance::service::serve(config))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<Error>().map(Error::kind);
            match kind {
                Some(kind) => eprintln!("error [{kind}]: {e:#}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
