//! Decision-side records: alerts, actuation commands and telemetry entries.

use serde::{Deserialize, Serialize};

use super::{Diagnosis, DomainError, Location, Observation, Urgency};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub obs_id: String,
    pub sensor_id: String,
    pub location: Location,
    pub class_id: usize,
    pub class_name: String,
    pub confidence: f64,
    pub recommendation: String,
    pub urgency: Urgency,
    pub created_ms: i64,
    pub acked: bool,
    /// Path of the observation (with its image) on the edge API.
    pub image_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Spray,
    Irrigate,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandState {
    Pending,
    Approved,
    Rejected,
    Executed,
}

impl CommandState {
    /// pending→approved→executed and pending→rejected; nothing else.
    pub fn can_transition(self, to: CommandState) -> bool {
        use CommandState::*;
        matches!(
            (self, to),
            (Pending, Approved) | (Approved, Executed) | (Pending, Rejected)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CommandState::Pending => "pending",
            CommandState::Approved => "approved",
            CommandState::Rejected => "rejected",
            CommandState::Executed => "executed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationCommand {
    pub command_id: String,
    pub alert_id: String,
    pub action: Action,
    pub target_sensor_id: String,
    pub requires_approval: bool,
    pub state: CommandState,
}

impl ActuationCommand {
    pub fn transition(&mut self, to: CommandState) -> Result<(), DomainError> {
        if !self.state.can_transition(to) {
            return Err(DomainError::invalid(format!(
                "command {} cannot go from {} to {}",
                self.command_id,
                self.state.as_str(),
                to.as_str()
            )));
        }
        self.state = to;
        Ok(())
    }
}

/// What the decision policy did with one diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTaken {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_id: Option<String>,
    pub action: Action,
}

/// One processed observation as buffered on the edge and stored in the cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub edge_id: String,
    pub seq: u64,
    pub observation: Observation,
    pub diagnosis: Diagnosis,
    pub action: ActionTaken,
}

impl TelemetryRecord {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.observation.obs_id != self.diagnosis.obs_id {
            return Err(DomainError::invalid(format!(
                "record {} pairs observation {} with diagnosis {}",
                self.seq, self.observation.obs_id, self.diagnosis.obs_id
            )));
        }
        let d = &self.diagnosis;
        if d.probs.is_empty() || d.predicted >= d.probs.len() {
            return Err(DomainError::invalid("diagnosis class out of range"));
        }
        let sum: f64 = d.probs.iter().sum();
        if d.probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(DomainError::invalid(
                "diagnosis probabilities are not a distribution",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use CommandState::*;

    #[test]
    fn only_declared_transitions_allowed() {
        let all = [Pending, Approved, Rejected, Executed];
        let mut allowed = Vec::new();
        for a in all {
            for b in all {
                if a.can_transition(b) {
                    allowed.push((a, b));
                }
            }
        }
        assert_eq!(
            allowed,
            vec![
                (Pending, Approved),
                (Pending, Rejected),
                (Approved, Executed)
            ]
        );
    }

    #[test]
    fn rejected_command_stays_rejected() {
        let mut c = ActuationCommand {
            command_id: "c1".into(),
            alert_id: "a1".into(),
            action: Action::Spray,
            target_sensor_id: "sensor-01".into(),
            requires_approval: true,
            state: Pending,
        };
        c.transition(Rejected).unwrap();
        assert!(c.transition(Approved).is_err());
        assert_eq!(c.state, Rejected);
    }

    #[test]
    fn action_serializes_lowercase() {
        assert_eq!(
            serde_json::to_string(&Action::Irrigate).unwrap(),
            "\"irrigate\""
        );
        assert_eq!(serde_json::to_string(&Executed).unwrap(), "\"executed\"");
    }
}
