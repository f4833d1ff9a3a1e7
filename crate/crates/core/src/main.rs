use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use stm_skills::commands::{self, EvalRequest, RolloutRequest, TrackRequest};
use stm_skills::config::ExperimentConfig;
use stm_skills::stm::{GoalChange, ScheduleConfig, Variant};
use stm_skills::task::TaskKind;
use stm_skills::trajopt::GoalTerm;
use stm_skills::Result;

/// Learn planar-arm skills from demonstrations with auto-conditioned
/// recurrent mixture-density state transition models.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Experiment configuration (TOML). Flags override its values.
    #[arg(long, short, global = true, env = "STM_CONFIG")]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations.
    GenDemos {
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a state transition model.
    TrainStm {
        #[arg(long)]
        dataset: PathBuf,
        /// lstm, ac-lstm, lstm-mdn or ac-lstm-mdn.
        #[arg(long, default_value = "ac-lstm-mdn")]
        variant: Variant,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Cosine-decay the learning rate to this value by the last iteration.
        #[arg(long)]
        final_learning_rate: Option<f64>,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long)]
        out: PathBuf,
        /// Loss CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Roll a trained model out from a start configuration.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Goal `X,Y` (reaching tasks) or radius (circle).
        #[arg(long)]
        psi: Option<String>,
        /// Start joint angles `Q1,Q2,...`.
        #[arg(long)]
        q0: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Goal switch `STEP:X,Y`; repeatable.
        #[arg(long = "goal-at")]
        goal_at: Vec<String>,
        /// Sample the mixture instead of taking the most likely mean.
        #[arg(long)]
        stochastic: bool,
        #[arg(long)]
        out: PathBuf,
        /// End-effector CSV; defaults to `<out>.ee.csv`.
        #[arg(long)]
        ee_csv: Option<PathBuf>,
    },
    /// Smooth trajectories in joint space.
    Smooth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Let the final point move.
        #[arg(long)]
        free_end: bool,
        /// Re-anchor the closeness term to the previous iterate.
        #[arg(long)]
        reanchor: bool,
        /// Add a goal term pulling the final end-effector to `X,Y`.
        #[arg(long)]
        goal: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Cost CSV; defaults to `<out>.cost.csv`.
        #[arg(long)]
        cost_csv: Option<PathBuf>,
    },
    /// Seeded success-rate evaluation.
    Eval {
        /// Trained checkpoint.
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        checkpoint: Option<PathBuf>,
        /// Score a dataset's trajectories directly instead.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Switch to a second goal midway through longer rollouts.
        #[arg(long)]
        goal_change: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the inverse dynamics model on exploration transitions.
    TrainIdm {
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        transitions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Loss CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Track a reacher rollout with torque control.
    Track {
        #[arg(long)]
        stm: PathBuf,
        /// Learned IDM checkpoint.
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        idm: Option<PathBuf>,
        /// Use the analytic inverse dynamics.
        #[arg(long)]
        oracle: bool,
        /// Goal `X,Y`.
        #[arg(long, default_value = "0.4,0.5")]
        goal: String,
        #[arg(long)]
        q0: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time STM circle synthesis against IK.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

#[derive(Args)]
struct ScheduleArgs {
    /// Ground-truth steps per auto-conditioning period.
    #[arg(long)]
    u: Option<usize>,
    /// Self-fed steps per auto-conditioning period.
    #[arg(long)]
    v: Option<usize>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn point(text: &str) -> Result<[f64; 2]> {
    match commands::parse_vector(text)?.as_slice() {
        [x, y] => Ok([*x, *y]),
        _ => Err(stm_skills::Error::Invalid(format!("expected X,Y, got `{text}`"))),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Runs the command; returns the files it writes so they can be removed
/// if it fails.
fn run(cli: Cli, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenDemos { task, count, out } => {
            if let Some(kind) = task {
                cfg.task.kind = kind;
            }
            cfg.task.count = count.or(cfg.task.count);
            cfg.validate()?;
            outputs.push(out.clone());
            print_json(&commands::gen_demos(&cfg, &out)?)
        }
        Command::TrainStm {
            dataset,
            variant,
            iterations,
            learning_rate,
            final_learning_rate,
            schedule,
            out,
            loss_csv,
        } => {
            cfg.stm.iterations = iterations.or(cfg.stm.iterations);
            cfg.stm.learning_rate = learning_rate.or(cfg.stm.learning_rate);
            cfg.stm.final_learning_rate = final_learning_rate.or(cfg.stm.final_learning_rate);
            let current = cfg.stm_config().schedule;
            cfg.schedule = Some(ScheduleConfig {
                u: schedule.u.unwrap_or(current.u),
                v: schedule.v.unwrap_or(current.v),
            });
            cfg.validate()?;
            let loss_csv = loss_csv.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
            outputs.extend([out.clone(), loss_csv.clone()]);
            let ckpt = commands::train_stm(&cfg, &dataset, variant, &out, &loss_csv)?;
            info!("final loss {:.6}", ckpt.loss_curve.last().copied().unwrap_or(f64::NAN));
            Ok(())
        }
        Command::Rollout {
            checkpoint,
            psi,
            q0,
            steps,
            goal_at,
            stochastic,
            out,
            ee_csv,
        } => {
            let req = RolloutRequest {
                psi: psi.as_deref().map(commands::parse_vector).transpose()?,
                q0: q0.as_deref().map(commands::parse_vector).transpose()?,
                steps,
                goal_changes: goal_at
                    .iter()
                    .map(|g| commands::parse_goal_change(g))
                    .collect::<Result<Vec<GoalChange>>>()?,
                stochastic,
            };
            let ee_csv = ee_csv.unwrap_or_else(|| with_suffix(&out, ".ee.csv"));
            outputs.extend([out.clone(), ee_csv.clone()]);
            let traj = commands::rollout_cmd(&cfg, &checkpoint, &req, &out, &ee_csv)?;
            info!("rolled out {} states", traj.len());
            Ok(())
        }
        Command::Smooth {
            input,
            gamma,
            step_size,
            iterations,
            free_end,
            reanchor,
            goal,
            out,
            cost_csv,
        } => {
            let t = &mut cfg.trajopt;
            t.gamma = gamma.unwrap_or(t.gamma);
            t.step_size = step_size.unwrap_or(t.step_size);
            t.iterations = iterations.unwrap_or(t.iterations);
            t.fixed_endpoints &= !free_end;
            t.reanchor |= reanchor;
            if let Some(g) = goal {
                t.goal = Some(GoalTerm::new(point(&g)?));
            }
            cfg.validate()?;
            let cost_csv = cost_csv.unwrap_or_else(|| with_suffix(&out, ".cost.csv"));
            outputs.extend([out.clone(), cost_csv.clone()]);
            print_json(&commands::smooth_cmd(&cfg, &input, &out, &cost_csv)?)
        }
        Command::Eval {
            checkpoint,
            dataset,
            rollouts,
            steps,
            goal_change,
            out,
        } => {
            cfg.eval.rollouts = rollouts.unwrap_or(cfg.eval.rollouts);
            cfg.eval.steps = steps.or(cfg.eval.steps);
            cfg.validate()?;
            outputs.push(out.clone());
            let report = match (checkpoint, dataset) {
                (Some(ckpt), _) => {
                    let req = EvalRequest {
                        rollouts: cfg.eval.rollouts,
                        seed: commands::eval_seed(cfg.seed),
                        goal_change,
                        steps: cfg.eval.steps,
                    };
                    commands::eval_cmd(&cfg, &ckpt, &req, &out)?
                }
                (None, Some(ds)) => commands::eval_dataset(&cfg, &ds, &out)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            print_json(&report)
        }
        Command::TrainIdm {
            iterations,
            transitions,
            out,
            loss_csv,
        } => {
            cfg.idm.iterations = iterations.unwrap_or(cfg.idm.iterations);
            cfg.idm.transitions = transitions.unwrap_or(cfg.idm.transitions);
            cfg.validate()?;
            let loss_csv = loss_csv.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
            outputs.extend([out.clone(), loss_csv.clone()]);
            print_json(&commands::train_idm_cmd(&cfg, &out, &loss_csv)?)
        }
        Command::Track {
            stm,
            idm,
            oracle: _,
            goal,
            q0,
            steps,
            out,
        } => {
            let req = TrackRequest {
                idm,
                goal: point(&goal)?,
                q0: q0.as_deref().map(commands::parse_vector).transpose()?,
                steps,
            };
            outputs.push(out.clone());
            print_json(&commands::track_cmd(&cfg, &stm, &req, &out)?)
        }
        Command::Bench { checkpoint, repeats } => print_json(&commands::bench_cmd(&cfg, &checkpoint, repeats)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut outputs = Vec::new();
    match run(cli, &mut outputs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            for path in outputs {
                if path.exists() {
                    let _ = std::fs::remove_file(&path);
                }
            }
            ExitCode::FAILURE
        }
    }
}
