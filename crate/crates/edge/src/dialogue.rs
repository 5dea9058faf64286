//! Scripted two-round operator sessions against an edge: ingest an
//! observation, ask about it, then ask a follow-up about the same
//! observation. Checks are structural: the answer names the class that
//! generated the observation, carries one of its treatment keywords (or the
//! healthy template), and the follow-up stays on the same observation.

use std::sync::Arc;
use std::time::Duration;

use farmlight_core::domain::HEALTHY_RECOMMENDATION;
use farmlight_core::{ClassCatalog, Observation};
use serde::{Deserialize, Serialize};

use crate::runtime::EdgeRuntime;

pub const FIRST_QUESTION: &str = "Is something wrong with the crop in this image?";
pub const FOLLOW_UP: &str = "What should I do about it?";

/// The answer fields the checks need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub obs_id: String,
    pub class_name: String,
    pub answer: String,
}

pub trait DialogueClient {
    fn ingest(&self, obs: &Observation) -> Result<(), String>;
    fn query(&self, obs_id: Option<&str>, text: &str) -> Result<Reply, String>;
}

pub struct InProcess(pub Arc<EdgeRuntime>);

impl DialogueClient for InProcess {
    fn ingest(&self, obs: &Observation) -> Result<(), String> {
        self.0.ingest(obs.clone()).map(|_| ()).map_err(|e| e.to_string())
    }

    fn query(&self, obs_id: Option<&str>, text: &str) -> Result<Reply, String> {
        let a = self.0.query(obs_id, text).map_err(|e| e.to_string())?;
        Ok(Reply {
            obs_id: a.obs_id,
            class_name: a.class_name,
            answer: a.answer,
        })
    }
}

/// Talks to a running edge over its HTTP API.
pub struct Http {
    base: String,
    client: reqwest::blocking::Client,
}

impl Http {
    pub fn new(base_url: impl Into<String>) -> Self {
        Http {
            base: base_url.into().trim_end_matches('/').to_string(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(5))
                .build()
                .expect("http client builds"),
        }
    }

    fn post<T: Serialize>(&self, path: &str, body: &T) -> Result<reqwest::blocking::Response, String> {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| format!("transport: {e}"))?;
        if resp.status().is_success() {
            Ok(resp)
        } else {
            let status = resp.status();
            Err(format!("{status}: {}", resp.text().unwrap_or_default()))
        }
    }
}

impl DialogueClient for Http {
    fn ingest(&self, obs: &Observation) -> Result<(), String> {
        self.post("/v1/observations", obs).map(|_| ())
    }

    fn query(&self, obs_id: Option<&str>, text: &str) -> Result<Reply, String> {
        let body = serde_json::json!({ "obs_id": obs_id, "text": text });
        self.post("/v1/query", &body)?
            .json()
            .map_err(|e| format!("bad response body: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Round {
    pub question: String,
    pub obs_id: Option<String>,
    pub reply: Option<Reply>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionResult {
    pub obs_id: String,
    pub gold_class: Option<String>,
    pub rounds: Vec<Round>,
    pub names_class: bool,
    pub has_treatment: bool,
    pub keeps_context: bool,
}

impl SessionResult {
    pub fn passed(&self) -> bool {
        self.names_class && self.has_treatment && self.keeps_context
    }

    pub fn transport_failed(&self) -> bool {
        self.rounds.iter().any(|r| r.error.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DialogueReport {
    pub sessions: Vec<SessionResult>,
    pub passed: usize,
    pub pass_rate: f64,
    pub transport_failures: usize,
}

pub fn run_session(
    client: &dyn DialogueClient,
    catalog: &ClassCatalog,
    obs: &Observation,
) -> SessionResult {
    let gold = obs.label.and_then(|l| catalog.get(l));
    let mut rounds = Vec::new();
    let ingest_err = client.ingest(obs).err();

    let first = match &ingest_err {
        Some(e) => Err(e.clone()),
        None => client.query(None, FIRST_QUESTION),
    };
    let context = first.as_ref().ok().map(|r| r.obs_id.clone());
    rounds.push(round(FIRST_QUESTION, None, first));
    let second = match (&ingest_err, &context) {
        (Some(e), _) => Err(e.clone()),
        (None, Some(id)) => client.query(Some(id), FOLLOW_UP),
        (None, None) => Err("no context from the first round".into()),
    };
    rounds.push(round(FOLLOW_UP, context.clone(), second));

    let replies: Vec<&Reply> = rounds.iter().filter_map(|r| r.reply.as_ref()).collect();
    let complete = replies.len() == 2;
    let names_class = complete
        && gold.is_some_and(|g| replies.iter().all(|r| r.class_name == g.name && r.answer.contains(&g.name)));
    let has_treatment = complete
        && gold.is_some_and(|g| {
            replies.iter().all(|r| {
                if g.is_healthy {
                    r.answer.contains(HEALTHY_RECOMMENDATION)
                } else {
                    g.treatment.iter().any(|t| r.answer.contains(t.as_str()))
                }
            })
        });
    let keeps_context = complete
        && replies[0].obs_id == obs.obs_id
        && replies[1].obs_id == obs.obs_id
        && replies[1].answer.contains(&obs.obs_id);
    SessionResult {
        obs_id: obs.obs_id.clone(),
        gold_class: gold.map(|g| g.name.clone()),
        rounds,
        names_class,
        has_treatment,
        keeps_context,
    }
}

fn round(question: &str, obs_id: Option<String>, r: Result<Reply, String>) -> Round {
    let (reply, error) = match r {
        Ok(x) => (Some(x), None),
        Err(e) => (None, Some(e)),
    };
    Round {
        question: question.to_string(),
        obs_id,
        reply,
        error,
    }
}

pub fn eval_dialogue(
    client: &dyn DialogueClient,
    catalog: &ClassCatalog,
    script: &[Observation],
) -> DialogueReport {
    let sessions: Vec<SessionResult> = script
        .iter()
        .map(|o| run_session(client, catalog, o))
        .collect();
    let passed = sessions.iter().filter(|s| s.passed()).count();
    DialogueReport {
        pass_rate: if sessions.is_empty() {
            0.0
        } else {
            passed as f64 / sessions.len() as f64
        },
        transport_failures: sessions.iter().filter(|s| s.transport_failed()).count(),
        passed,
        sessions,
    }
}
