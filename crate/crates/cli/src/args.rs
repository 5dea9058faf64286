use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "farmlight",
    version,
    about = "Edge-cloud crop monitoring: synthetic data, distillation, evaluation and node processes"
)]
pub struct Cli {
    /// Canonical JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Print the summary report to stdout as canonical JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic farm data.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Train the teacher and distill the student, all stages or one.
    Distill(DistillArgs),
    /// Compare analytic and finite-difference gradients for each stage loss.
    Gradcheck(GradcheckArgs),
    /// Score a model on the VQA benchmark, or replay dialogues against a running edge.
    Eval(EvalArgs),
    /// Run a live node.
    Run {
        #[command(subcommand)]
        node: RunCommand,
    },
    /// Deterministic simulations.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Write train, val and test splits with their manifests.
    Gen(SynthGenArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Output directory (default: data_dir from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 250)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub test_per_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    All,
    Teacher,
    Dpt,
    Sft,
    Dft,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long, value_enum, default_value_t = StageArg::All)]
    pub stage: StageArg,
    /// Dataset directory written by `synth gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Where artifacts are read from and written to.
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random coordinates checked per stage.
    #[arg(long, default_value_t = 50)]
    pub coords: usize,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["model", "edge"])))]
pub struct EvalArgs {
    /// Model artifact (.flsm) to score on the test split.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Base URL of a running edge API for the dialogue check.
    #[arg(long)]
    pub edge: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Write the full report here as canonical JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Number of scripted dialogue sessions.
    #[arg(long, default_value_t = 50)]
    pub sessions: usize,
}

#[derive(Debug, Subcommand)]
pub enum RunCommand {
    /// Model registry and telemetry store.
    Cloud {
        #[arg(long)]
        listen: Option<String>,
        /// Persistence directory.
        #[arg(long, default_value = "cloud-data")]
        dir: PathBuf,
        /// Artifacts to publish at startup, in order.
        #[arg(long)]
        publish: Vec<PathBuf>,
    },
    /// Relay between edges and the cloud.
    Gateway {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        cloud: Option<String>,
    },
    /// Edge node: inference worker, sync session and HTTP API.
    Edge {
        /// edge.json; when absent the node is configured from the global config.
        #[arg(long, value_name = "PATH")]
        edge_config: Option<PathBuf>,
        /// Artifact to load before serving (otherwise model.flsm in the data dir, if any).
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Cloud, gateway and N edges on simulated lossy links.
    E2e(SimArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 3)]
    pub edges: usize,
    /// Frame loss on each edge's link to the gateway.
    #[arg(long, default_value_t = 0.2)]
    pub loss: f64,
    /// Frame loss between gateway and cloud.
    #[arg(long, default_value_t = 0.0)]
    pub backhaul_loss: f64,
    /// Model the edges start with. Requires --update.
    #[arg(long, requires = "update")]
    pub initial: Option<PathBuf>,
    /// Model published during the run. Requires --initial.
    #[arg(long, requires = "initial")]
    pub update: Option<PathBuf>,
    /// Use student-sft.flsm and student-dft.flsm from this directory.
    #[arg(long, conflicts_with_all = ["initial", "update"])]
    pub artifacts: Option<PathBuf>,
}
