use serde::{Deserialize, Serialize};

use crate::model::{log_softmax, softmax, ForwardTrace};

use super::{DistillError, Stage};

pub const PROB_FLOOR: f64 = 1e-12;
const DIST_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KlDirection {
    /// KL(teacher ‖ student).
    #[default]
    Forward,
    /// KL(student ‖ teacher).
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Response-distribution KL.
    pub alpha: f64,
    /// Visual-distribution KL.
    pub beta: f64,
    /// Autocorrelation alignment.
    pub gamma: f64,
    /// Ground-truth cross-entropy.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
        }
    }
}

/// Unweighted loss terms; unused terms for a stage are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub resp_kl: f64,
    pub vis_kl: f64,
    pub corr: f64,
    pub ce: f64,
}

impl LossComponents {
    pub fn add(&mut self, other: &LossComponents) {
        self.resp_kl += other.resp_kl;
        self.vis_kl += other.vis_kl;
        self.corr += other.corr;
        self.ce += other.ce;
    }

    pub fn scale(&mut self, f: f64) {
        self.resp_kl *= f;
        self.vis_kl *= f;
        self.corr *= f;
        self.ce *= f;
    }
}

/// The parts of a teacher forward pass the distillation losses compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTarget {
    pub p_resp: Vec<f64>,
    pub p_vis: Vec<f64>,
    pub a: Vec<f64>,
}

impl TeacherTarget {
    /// Response distribution is recomputed at the distillation temperature.
    pub fn from_trace(trace: &ForwardTrace, temperature: f64) -> Self {
        let scaled: Vec<f64> = trace.logits.iter().map(|l| l / temperature).collect();
        TeacherTarget {
            p_resp: softmax(&scaled),
            p_vis: trace.p_vis.clone(),
            a: trace.a.clone(),
        }
    }
}

fn check_distribution(name: &str, p: &[f64]) -> Result<(), DistillError> {
    if p.is_empty() {
        return Err(DistillError::contract(format!("{name} is empty")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(DistillError::contract(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > DIST_TOLERANCE {
        return Err(DistillError::contract(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// KL(p ‖ q) = Σ p_i ln(p_i / max(q_i, 1e-12)); zero-probability terms of
/// `p` contribute nothing.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64, DistillError> {
    if p.len() != q.len() {
        return Err(DistillError::contract(format!(
            "kl_div length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    Ok(kl_unchecked(p, q))
}

pub(crate) fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(PROB_FLOOR)).ln())
        .sum()
}

/// 1 − cos(vec(A_s), vec(A_t)); the norm product is floored at 1e-12.
pub fn corr_loss(a_s: &[f64], a_t: &[f64]) -> Result<f64, DistillError> {
    if a_s.len() != a_t.len() {
        return Err(DistillError::contract(format!(
            "corr_loss shape mismatch: {} vs {} entries",
            a_s.len(),
            a_t.len()
        )));
    }
    let side = (a_s.len() as f64).sqrt().round() as usize;
    if side * side != a_s.len() || a_s.is_empty() {
        return Err(DistillError::contract(format!(
            "corr_loss expects square matrices, got {} entries",
            a_s.len()
        )));
    }
    Ok(corr_unchecked(a_s, a_t))
}

/// (⟨A_s, A_t⟩, ‖A_s‖², ‖A_t‖²)
pub(crate) fn corr_parts(a_s: &[f64], a_t: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a_s.iter().zip(a_t).map(|(x, y)| x * y).sum();
    let ss = a_s.iter().map(|x| x * x).sum::<f64>();
    let tt = a_t.iter().map(|x| x * x).sum::<f64>();
    (dot, ss, tt)
}

pub(crate) fn corr_unchecked(a_s: &[f64], a_t: &[f64]) -> f64 {
    let (dot, ss, tt) = corr_parts(a_s, a_t);
    // sqrt of the product keeps corr(A, A) exactly 0.
    let c = dot / (ss * tt).sqrt().max(PROB_FLOOR);
    // Rounding can push |c| a hair past 1.
    (1.0 - c).clamp(0.0, 2.0)
}

/// −ln softmax(logits)[label] at temperature 1.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64, DistillError> {
    if label >= logits.len() {
        return Err(DistillError::contract(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(-log_softmax(logits)[label])
}

fn directed_kl(teacher: &[f64], student: &[f64], direction: KlDirection) -> f64 {
    match direction {
        KlDirection::Forward => kl_unchecked(teacher, student),
        KlDirection::Reverse => kl_unchecked(student, teacher),
    }
}

/// Per-sample stage loss. Returns the weighted total and the unweighted terms.
pub fn stage_loss(
    stage: Stage,
    student: &ForwardTrace,
    teacher: Option<&TeacherTarget>,
    label: Option<usize>,
    weights: &LossWeights,
    direction: KlDirection,
) -> Result<(f64, LossComponents), DistillError> {
    let mut c = LossComponents::default();
    if stage.uses_teacher() {
        let t = teacher
            .ok_or_else(|| DistillError::contract(format!("{stage} needs a teacher target")))?;
        if t.p_vis.len() != student.p_vis.len() || t.p_resp.len() != student.p_resp.len() {
            return Err(DistillError::contract(
                "teacher and student traces have different token or class counts",
            ));
        }
        c.resp_kl = directed_kl(&t.p_resp, &student.p_resp, direction);
        c.vis_kl = directed_kl(&t.p_vis, &student.p_vis, direction);
        c.corr = corr_loss(&student.a, &t.a)?;
    }
    if stage.uses_labels() {
        let y = label.ok_or_else(|| DistillError::contract(format!("{stage} needs labels")))?;
        c.ce = cross_entropy(&student.logits, y)?;
    }
    let total = weights.alpha * c.resp_kl
        + weights.beta * c.vis_kl
        + weights.gamma * c.corr
        + weights.delta * c.ce;
    Ok((total, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Rng;
    use proptest::prelude::*;

    #[test]
    fn kl_identity_is_zero() {
        let p = [0.25; 4];
        assert_eq!(kl_div(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_value() {
        let v = kl_div(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_non_distributions() {
        assert!(kl_div(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(kl_div(&[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(kl_div(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn corr_hand_value() {
        let identity = [1.0, 0.0, 0.0, 1.0];
        let ones = [1.0; 4];
        let v = corr_loss(&identity, &ones).unwrap();
        assert!((v - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(corr_loss(&identity, &identity).unwrap(), 0.0);
    }

    #[test]
    fn corr_rejects_shape_mismatch() {
        assert!(corr_loss(&[1.0; 4], &[1.0; 9]).is_err());
        assert!(corr_loss(&[1.0; 3], &[1.0; 3]).is_err());
    }

    #[test]
    fn cross_entropy_of_confident_logit() {
        let mut logits = vec![-800.0; 8];
        logits[3] = 800.0;
        assert_eq!(cross_entropy(&logits, 3).unwrap(), 0.0);
        assert!(cross_entropy(&logits, 8).is_err());
    }

    fn random_dist(rng: &mut Rng, n: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.next_f64().powi(3)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn gibbs_inequality_on_random_pairs() {
        let mut rng = Rng::seeded(77);
        for _ in 0..1000 {
            let n = 2 + rng.below(15) as usize;
            let p = random_dist(&mut rng, n);
            let q = random_dist(&mut rng, n);
            assert!(kl_div(&p, &q).unwrap() >= -1e-9);
        }
    }

    proptest! {
        #[test]
        fn corr_in_range(a in proptest::collection::vec(-3.0f64..3.0, 16),
                         b in proptest::collection::vec(-3.0f64..3.0, 16)) {
            let v = corr_loss(&a, &b).unwrap();
            prop_assert!((0.0..=2.0).contains(&v));
        }
    }
}
