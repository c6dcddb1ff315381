//! Thin operator CLI over the pipeline stages. All logic lives in the
//! library; this binary parses flags, wires stages, and maps errors to
//! the stable exit-code taxonomy (0 ok, 2 config/input, 3 external
//! service, 4 training/runtime).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clinfuse::cohort::Task;
use clinfuse::pipeline::{
    cmd_ablate, cmd_datagen, cmd_evaluate, cmd_ingest, cmd_kg, cmd_m1, cmd_train,
    effective_config, ConfigOverrides, PipelineError,
};

#[derive(Parser)]
#[command(name = "clinfuse", version, about = "Two-stage clinical outcome prediction pipeline")]
struct Cli {
    /// Run configuration file (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,

    /// Task override.
    #[arg(long, global = true, value_parser = parse_task)]
    task: Option<Task>,

    /// Model override: logreg | brf | mlp.
    #[arg(long, global = true)]
    model: Option<String>,

    /// Force the deterministic mock completion backend.
    #[arg(long, global = true)]
    mock_llm: bool,

    /// HTTP completion endpoint; CLINFUSE_LLM_ENDPOINT is honored when
    /// this flag is absent.
    #[arg(long, global = true)]
    llm_endpoint: Option<String>,

    #[command(subcommand)]
    command: Command,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and knowledge triples.
    Datagen,
    /// Parse, validate, and canonicalize visit and triple files.
    Ingest,
    /// Build the concept graph, partition it, and summarize communities.
    Kg,
    /// Run stage-one inference and write the M1 handoff file.
    M1,
    /// Fit features on the train split and train the configured model.
    Train,
    /// Evaluate the trained model on the test split.
    Evaluate,
    /// Re-train with feature blocks dropped and tabulate the comparison.
    Ablate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let overrides = ConfigOverrides {
        task: cli.task,
        seed: cli.seed,
        model: cli.model.clone(),
        mock_llm: cli.mock_llm,
        llm_endpoint: cli.llm_endpoint.clone(),
    };
    let config = match effective_config(cli.config.as_deref(), &overrides) {
        Ok(config) => config,
        Err(e) => return fail(e),
    };

    let result = match cli.command {
        Command::Datagen => cmd_datagen(&config, &cli.out),
        Command::Ingest => cmd_ingest(&config, &cli.out),
        Command::Kg => cmd_kg(&config, &cli.out),
        Command::M1 => cmd_m1(&config, &cli.out),
        Command::Train => cmd_train(&config, &cli.out),
        Command::Evaluate => cmd_evaluate(&config, &cli.out),
        Command::Ablate => cmd_ablate(&config, &cli.out),
    };
    match result {
        Ok(manifest) => {
            println!("{} ok; artifacts in {}", manifest.command, cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fail(e: PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
