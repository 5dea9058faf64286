use farmlight_core::{Action, ClassCatalog, Diagnosis, Urgency};
use serde::{Deserialize, Serialize};

use crate::EdgeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgePolicy {
    pub alert_threshold: f64,
    pub auto_actuate: bool,
    pub idle_secs: f64,
    pub batch_max: usize,
    pub model_check_interval_secs: f64,
}

impl Default for EdgePolicy {
    fn default() -> Self {
        EdgePolicy {
            alert_threshold: 0.7,
            auto_actuate: false,
            idle_secs: 5.0,
            batch_max: 256,
            model_check_interval_secs: 30.0,
        }
    }
}

impl EdgePolicy {
    pub fn validate(&self) -> Result<(), EdgeError> {
        let bad = |m: &str| Err(EdgeError::InvalidPolicy(m.to_string()));
        if !(self.alert_threshold > 0.0 && self.alert_threshold <= 1.0) {
            return bad("alert_threshold must be in (0, 1]");
        }
        if !(self.idle_secs.is_finite() && self.idle_secs >= 0.0) {
            return bad("idle_secs must be a non-negative number");
        }
        if self.batch_max == 0 {
            return bad("batch_max must be positive");
        }
        if !(self.model_check_interval_secs.is_finite() && self.model_check_interval_secs > 0.0) {
            return bad("model_check_interval_secs must be positive");
        }
        Ok(())
    }

    pub fn idle_ms(&self) -> u64 {
        (self.idle_secs * 1000.0).round() as u64
    }

    pub fn model_check_ms(&self) -> u64 {
        (self.model_check_interval_secs * 1000.0).round() as u64
    }
}

/// Outcome of the decision rule for one diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    None,
    Alert,
    AlertAndCommand(Action),
}

/// Healthy or below threshold: nothing. Otherwise an alert, plus an
/// actuation command when the class is high urgency.
pub fn decide(diagnosis: &Diagnosis, catalog: &ClassCatalog, policy: &EdgePolicy) -> Decision {
    let Some(class) = catalog.get(diagnosis.predicted) else {
        return Decision::None;
    };
    if class.is_healthy || diagnosis.confidence < policy.alert_threshold {
        return Decision::None;
    }
    if class.urgency != Urgency::High {
        return Decision::Alert;
    }
    let irrigate = class.treatment.iter().any(|t| t.contains("irrigation"));
    Decision::AlertAndCommand(if irrigate { Action::Irrigate } else { Action::Spray })
}

#[cfg(test)]
mod tests {
    use super::*;
    use farmlight_core::synthgen::default_catalog;

    fn diag(class: usize, conf: f64) -> Diagnosis {
        let mut probs = vec![(1.0 - conf) / 7.0; 8];
        probs[class] = conf;
        Diagnosis {
            obs_id: "o".into(),
            probs,
            predicted: class,
            confidence: conf,
            recommendation: String::new(),
            model_version: "v".into(),
        }
    }

    fn class_with(urgency: Urgency) -> usize {
        default_catalog()
            .classes()
            .iter()
            .position(|c| !c.is_healthy && c.urgency == urgency)
            .unwrap()
    }

    #[test]
    fn rule_table() {
        let cat = default_catalog();
        let p = EdgePolicy::default();
        assert_eq!(decide(&diag(class_with(Urgency::Medium), 0.69), &cat, &p), Decision::None);
        assert_eq!(decide(&diag(class_with(Urgency::Medium), 0.7), &cat, &p), Decision::Alert);
        assert_eq!(decide(&diag(0, 0.99), &cat, &p), Decision::None);
        assert_eq!(
            decide(&diag(class_with(Urgency::High), 0.9), &cat, &p),
            Decision::AlertAndCommand(Action::Spray)
        );
        let drought = cat
            .classes()
            .iter()
            .position(|c| c.treatment.iter().any(|t| t.contains("irrigation")))
            .unwrap();
        assert_eq!(
            decide(&diag(drought, 0.9), &cat, &p),
            Decision::AlertAndCommand(Action::Irrigate)
        );
    }

    #[test]
    fn policy_validation() {
        assert!(EdgePolicy::default().validate().is_ok());
        for p in [
            EdgePolicy { alert_threshold: 0.0, ..Default::default() },
            EdgePolicy { alert_threshold: 1.01, ..Default::default() },
            EdgePolicy { batch_max: 0, ..Default::default() },
            EdgePolicy { model_check_interval_secs: 0.0, ..Default::default() },
            EdgePolicy { idle_secs: -1.0, ..Default::default() },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }
}
