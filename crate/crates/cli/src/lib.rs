//! The `farmlight` command. Each subcommand is a thin layer over the core,
//! net and edge crates; the functions here are public so tests can drive
//! them without a subprocess.

pub mod args;
pub mod cmd;
pub mod config;
pub mod error;

use std::fmt::Write as _;

use farmlight_core::domain::to_canonical_string;
use farmlight_edge::live::EdgeFileConfig;
use farmlight_edge::sim::SimConfig;
use serde::Serialize;

use args::{Cli, Command, RunCommand, SimCommand, SynthCommand};
use config::GlobalConfig;
pub use error::CliError;

/// Share of anomalies that must alert with their class in `sim e2e`; the
/// same bar the closed-loop check uses.
pub const SIM_ALERT_RECALL: f64 = 0.95;

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", to_canonical_string(value).expect("reports serialize"));
    } else {
        println!("{}", text().trim_end());
    }
}

fn write_report<T: Serialize>(path: &std::path::Path, value: &T) -> Result<(), CliError> {
    let mut s = to_canonical_string(value).expect("reports serialize");
    s.push('\n');
    std::fs::write(path, s).map_err(CliError::io(path))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = GlobalConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let json = cli.json;
    let seed = cfg.seed;
    match cli.command {
        Command::Synth {
            command: SynthCommand::Gen(a),
        } => {
            let out = a.out.unwrap_or(cfg.data_dir);
            let manifests = cmd::synth::gen(&out, [a.train_per_class, a.val_per_class, a.test_per_class], seed)?;
            emit(json, &manifests, || {
                manifests.iter().fold(String::new(), |mut s, m| {
                    let _ = writeln!(s, "{:>5}  {:>5} samples  {}", m.split.as_str(), m.total(), m.file_digest);
                    s
                })
            });
        }
        Command::Distill(a) => {
            let data = cmd::distill::load_data(&a.data.unwrap_or(cfg.data_dir.clone()))?;
            let dir = a.artifacts.unwrap_or(cfg.artifact_dir.clone());
            let stages = cmd::distill::distill(a.stage, &data, &cfg.pipeline_config(), &dir)?;
            emit(json, &stages, || {
                stages.iter().fold(String::new(), |mut s, st| {
                    let _ = writeln!(
                        s,
                        "{:<16} loss {:<10} val acc {:<6} {}",
                        st.stage,
                        st.final_loss.map_or("-".into(), |l| format!("{l:.5}")),
                        st.val_accuracy.map_or("-".into(), |a| format!("{a:.3}")),
                        st.artifact.display()
                    );
                    s
                })
            });
            if let Some(st) = stages.iter().find(|s| !s.frozen_unchanged) {
                return Err(CliError::Check(format!("{} modified frozen tensors", st.stage)));
            }
        }
        Command::Gradcheck(a) => {
            let r = cmd::gradcheck::run(&cfg.pipeline_config(), a.coords, seed)?;
            emit(json, &r, || {
                r.stages.iter().fold(String::new(), |mut s, st| {
                    let verdict = if st.passed { "ok" } else { "FAIL" };
                    let _ = writeln!(s, "{:<16} {} coords  max rel err {:.3e}  {verdict}", st.stage.as_str(), st.coords, st.max_rel_err);
                    s
                })
            });
            if !r.passed {
                return Err(CliError::Check(format!("gradient mismatch above {}", r.tolerance)));
            }
        }
        Command::Eval(a) => {
            let data = a.data.unwrap_or(cfg.data_dir.clone());
            if let Some(url) = a.edge {
                let r = cmd::eval::eval_edge(&url, &data, a.sessions, seed)?;
                if let Some(path) = &a.report {
                    write_report(path, &r)?;
                }
                emit(json, &r, || {
                    format!(
                        "{} of {} sessions passed ({:.3}); {} transport failures",
                        r.passed,
                        r.sessions.len(),
                        r.pass_rate,
                        r.transport_failures
                    )
                });
                if let Some(why) = cmd::eval::dialogue_verdict(&r) {
                    return Err(CliError::Check(why));
                }
            } else {
                let model = a.model.expect("clap enforces --model or --edge");
                let r = cmd::eval::eval_model(&model, &data, seed)?;
                if let Some(path) = &a.report {
                    write_report(path, &r)?;
                }
                emit(json, &r, || {
                    format!(
                        "model {}\nclosed accuracy {:.4}\nopen F1 {:.4}\nclass accuracy {:.4} over {} samples",
                        r.model_version, r.closed_accuracy, r.open_f1, r.class_accuracy, r.n_samples
                    )
                });
            }
        }
        Command::Run { node } => match node {
            RunCommand::Cloud { listen, dir, publish } => {
                cmd::run::cloud(&listen.unwrap_or(cfg.cloud_addr), &dir, &publish)?
            }
            RunCommand::Gateway { listen, cloud } => {
                cmd::run::gateway(&listen.unwrap_or(cfg.gateway_addr), &cloud.unwrap_or(cfg.cloud_addr))?
            }
            RunCommand::Edge { edge_config, model } => {
                let ec = match edge_config {
                    Some(path) => {
                        let bytes = std::fs::read(&path).map_err(CliError::io(&path))?;
                        serde_json::from_slice(&bytes)
                            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
                    }
                    None => EdgeFileConfig {
                        gateway_addr: cfg.gateway_addr.clone(),
                        api_addr: cfg.edge_api_addr.clone(),
                        data_dir: cfg.data_dir.join("edge"),
                        seed,
                        policy: cfg.policy.clone(),
                        ..EdgeFileConfig::default()
                    },
                };
                ec.policy.validate().map_err(|e| CliError::Config(e.to_string()))?;
                cmd::run::edge(&ec, model.as_deref())?
            }
        },
        Command::Sim {
            command: SimCommand::E2e(a),
        } => {
            let pc = cfg.pipeline_config();
            let models = match (&a.initial, &a.update, &a.artifacts) {
                (Some(i), Some(u), _) => cmd::sim::Models::Files(i, u),
                (_, _, Some(d)) => cmd::sim::Models::Artifacts(d),
                _ => cmd::sim::Models::Train(&pc),
            };
            let (initial, update) = cmd::sim::resolve(models, seed)?;
            let sc = SimConfig {
                seed,
                edges: a.edges,
                loss: a.loss,
                backhaul_loss: a.backhaul_loss,
                alert_recall_floor: SIM_ALERT_RECALL,
                ..SimConfig::default()
            };
            let s = cmd::sim::e2e(&sc, &initial, &update)?;
            emit(json, &s, || {
                let mut t = format!(
                    "{} edges, seed {}, loss {}: published {} at {} ms, run ended at {} ms\n",
                    s.edges.len(),
                    s.seed,
                    s.loss,
                    s.published_version,
                    s.published_at_ms,
                    s.end_ms
                );
                for e in &s.edges {
                    let _ = writeln!(
                        t,
                        "  {}: {} observations, {} alerts ({} anomalies), converged after {} intervals, {} batches",
                        e.edge_id,
                        e.observations,
                        e.alerts,
                        e.anomalies,
                        e.intervals_to_converge.map_or("-".into(), |k| format!("{k:.2}")),
                        e.batches_opened
                    );
                }
                let _ = writeln!(
                    t,
                    "  alert recall {:.3}; store: {}/{} batches, {} records; {} frames sent, {} dropped",
                    s.alert_recall, s.stored_batches, s.generated_batches, s.stored_records, s.frames_sent, s.frames_dropped
                );
                for f in &s.failures {
                    let _ = writeln!(t, "  FAIL {f}");
                }
                t
            });
            if !s.ok {
                return Err(CliError::Check(s.failures.join("; ")));
            }
        }
    }
    Ok(())
}
