use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

const CONFIG_HELP: &str = "\
CONFIG FILE
  JSON object; every key is optional and unknown keys are rejected.
  `scopekit config` prints the full default config.

  seed                      run seed for initialisation and shuffling
  plan.future_steps         planning horizon T (default 80, divisible by 2^wavelet_levels)
  plan.history_steps        ego history length H (default 21)
  plan.mode_count           trajectory modes M (default 3)
  plan.wavelet_levels       decomposition levels N (default 3)
  plan.ds_horizon           decision-scope horizon h in steps (default 20)
  plan.dt                   step length in seconds (default 0.1)
  network.hidden            trunk widths (default [64, 64])
  network.output_scale      per-channel output scale (default [10, 10, 1, 1, 5, 5])
  scenario.*                episode_steps, v_ref, lane_half_width, event_probability,
                            max_obstacles, obstacle_radius, obstacle_lateral, popup_lead,
                            signal_trigger, signal_gap, red_hold, min_event_gap, world
  rollout.replan_interval   steps executed per plan (default 10)
  rollout.history_steps     must equal plan.history_steps
  train.batch_size          (default 32)
  train.epochs              (default 25)
  train.learning_rate       (default 1e-3, linear warm-up over train.warmup_epochs = 3)
  train.beta1/beta2/adam_eps  Adam moments (0.9, 0.999, 1e-8)
  train.max_grad_norm       optional gradient clipping norm
  train.dataset_stride      steps between samples (default 10)
  train.loss.truncation     {\"t_cut\": 20}
  train.loss.timedecay      {\"l\": 2.718281828459045, \"p\": 1}
  train.loss.timenorm       true | {\"eps_guard\": 1e-6}
  train.loss.detail         {\"decoder\": \"mdd\"|\"idd\", \"target\": \"dwt\"|\"dwh\"}
  train.loss.terms          coefficients {\"reg\", \"cls\", \"col\", \"ds\"}; null disables a term
  train.loss.collision_tolerance  hinge tolerance in metres (default 0)

  At most one of truncation, timedecay and timenorm may be set.

EXIT CODES
  0 success, 2 usage or configuration error, 3 runtime failure";

/// Decision-scope experiments: expert data, decomposition, training, closed-loop evaluation.
#[derive(Debug, Parser)]
#[command(name = "scopekit", version, after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate expert episodes on seeded scenarios.
    Gen(GenArgs),
    /// Decompose the positions of a trajectory CSV into components.
    Decompose(DecomposeArgs),
    /// Train a policy on expert episodes.
    #[command(after_long_help = CONFIG_HELP)]
    Train(TrainArgs),
    /// Closed-loop evaluation of a checkpoint on fresh scenarios.
    Eval(EvalArgs),
    /// Compare evaluation runs on the same scenario set.
    Compare(CompareArgs),
    /// Print the default experiment config.
    Config,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of scenarios.
    #[arg(long)]
    pub scenarios: usize,
    /// Run seed; scenario seeds are derived from it.
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Experiment config (JSON); only the scenario and plan sections are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads; output is identical for any value.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecomposeMode {
    Dwt,
    Dwh,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Trajectory CSV with header t,px,py,cos_h,sin_h,vx,vy.
    #[arg(long)]
    pub input: PathBuf,
    /// Decomposition levels.
    #[arg(long)]
    pub levels: usize,
    #[arg(long, value_enum, default_value_t = DecomposeMode::Dwt)]
    pub mode: DecomposeMode,
    /// Samples kept per level (dwh only).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Reconstruct from the written files and print the max abs error.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory written by `scopekit gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.json, training_log.csv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `scopekit train`.
    #[arg(long, required_unless_present = "expert", conflicts_with = "expert")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the scripted expert instead of a checkpoint.
    #[arg(long)]
    pub expert: bool,
    /// Experiment config for `--expert` runs.
    #[arg(long, requires = "expert")]
    pub config: Option<PathBuf>,
    /// Number of scenarios.
    #[arg(long, default_value_t = 50)]
    pub scenarios: usize,
    /// Scenario seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; output is identical for any value.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write every closed-loop episode under OUT/episodes.
    #[arg(long)]
    pub write_logs: bool,
    /// Label used in reports (defaults to the loss configuration).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directories written by `scopekit eval`.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Config => {
            println!("{}", scopekit::experiment::ExperimentConfig::default().to_json());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
