use std::path::Path;

use farmlight_core::domain::Rng;
use farmlight_core::evalbench::{evaluate, EvalReport};
use farmlight_core::model::load;
use farmlight_core::synthgen::{default_world, gen_vqa_pairs, load_split, Split};
use farmlight_core::Observation;
use farmlight_edge::dialogue::{eval_dialogue, DialogueReport, Http};

use crate::error::CliError;

/// Share of scripted sessions that must pass every structural check.
pub const DIALOGUE_PASS_RATE: f64 = 0.9;

fn test_split(data: &Path) -> Result<Vec<Observation>, CliError> {
    let (obs, m) = load_split(data, Split::Test)?;
    if m.catalog_digest != default_world().catalog.digest_hex() {
        return Err(CliError::Check("test split uses a different class catalog".into()));
    }
    Ok(obs)
}

pub fn eval_model(model: &Path, data: &Path, seed: u64) -> Result<EvalReport, CliError> {
    let bytes = std::fs::read(model).map_err(CliError::io(model))?;
    let loaded = load(&bytes)?;
    let catalog = default_world().catalog;
    if loaded.meta.catalog_digest != catalog.digest_hex() {
        return Err(CliError::Check(format!(
            "{} was trained for a different class catalog",
            model.display()
        )));
    }
    let obs = test_split(data)?;
    let records = gen_vqa_pairs(&obs, &catalog, &mut Rng::seeded(seed))?;
    Ok(evaluate(&loaded.params, &obs, &records, &catalog, &loaded.meta.version_id, seed)?)
}

/// `sessions` anomalous test observations in seeded order.
pub fn dialogue_script(obs: Vec<Observation>, sessions: usize, seed: u64) -> Vec<Observation> {
    let catalog = default_world().catalog;
    let mut script: Vec<Observation> = obs
        .into_iter()
        .filter(|o| o.label.and_then(|l| catalog.get(l)).is_some_and(|c| !c.is_healthy))
        .collect();
    Rng::seeded(seed).shuffle(&mut script);
    script.truncate(sessions);
    script
}

pub fn eval_edge(url: &str, data: &Path, sessions: usize, seed: u64) -> Result<DialogueReport, CliError> {
    let script = dialogue_script(test_split(data)?, sessions, seed);
    Ok(eval_dialogue(&Http::new(url), &default_world().catalog, &script))
}

/// Failure reason for a dialogue run that does not meet the bar.
pub fn dialogue_verdict(r: &DialogueReport) -> Option<String> {
    if r.sessions.is_empty() {
        Some("no sessions were run".into())
    } else if r.transport_failures > 0 {
        Some(format!("{} of {} sessions hit transport failures", r.transport_failures, r.sessions.len()))
    } else if r.pass_rate < DIALOGUE_PASS_RATE {
        Some(format!("pass rate {:.3} below {DIALOGUE_PASS_RATE}", r.pass_rate))
    } else {
        None
    }
}
