use super::*;
use crate::model::{ForwardTrace, ModelConfig};
use crate::synthgen::{default_world, generate_split, Split};

fn data(per_class: usize, seed: u64) -> Vec<Observation> {
    generate_split(&default_world(), &vec![per_class; 8], seed, Split::Train).unwrap()
}

fn models() -> (ModelParams, ModelParams) {
    (
        ModelParams::init(ModelConfig::student(), 101).unwrap(),
        ModelParams::init(ModelConfig::teacher(), 202).unwrap(),
    )
}

// Scalar oracles written independently of the loss module.
fn naive_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] != 0.0 {
            s += p[i] * p[i].ln() - p[i] * q[i].max(1e-12).ln();
        }
    }
    s
}

fn naive_corr(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

fn naive_ce(logits: &[f64], y: usize) -> f64 {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[y].exp() / z).ln()
}

fn student_trace(s: &ModelParams, sample: &Sample) -> ForwardTrace {
    forward_encoded(s, &sample.z, &sample.features).unwrap()
}

#[test]
fn dft_loss_matches_scalar_oracle() {
    let (s, t) = models();
    let obs = data(1, 3);
    let samples = prepare_samples(&s, Some(&t), &obs).unwrap();
    for sample in &samples {
        let tr = student_trace(&s, sample);
        let tt = sample.teacher.as_ref().unwrap();
        let (total, c) = stage_loss(
            Stage::Dft,
            &tr,
            Some(tt),
            sample.label,
            &LossWeights::default(),
            KlDirection::Forward,
        )
        .unwrap();
        let expect = naive_kl(&tt.p_resp, &tr.p_resp)
            + naive_kl(&tt.p_vis, &tr.p_vis)
            + naive_corr(&tr.a, &tt.a)
            + naive_ce(&tr.logits, sample.label.unwrap());
        assert!((total - expect).abs() < 1e-12, "{total} vs {expect}");
        assert!(c.resp_kl >= 0.0 && c.vis_kl >= 0.0 && c.corr >= 0.0 && c.ce >= 0.0);
    }
}

#[test]
fn self_distillation_is_zero() {
    let (s, _) = models();
    let obs = data(4, 4);
    let samples = prepare_samples(&s, Some(&s), &obs).unwrap();
    let batch: Vec<&Sample> = samples.iter().collect();
    let (g, loss, comps) = batch_grad(
        Stage::Dpt,
        &s,
        &batch,
        &LossWeights::default(),
        KlDirection::Forward,
    )
    .unwrap();
    assert!(loss <= 1e-9, "loss {loss}");
    assert!(comps.resp_kl.abs() <= 1e-12 && comps.vis_kl.abs() <= 1e-12);
    assert!(g.norm() <= 1e-8, "grad norm {}", g.norm());
}

#[test]
fn sft_perfect_prediction_has_zero_loss() {
    let (s, _) = models();
    let obs = data(1, 5);
    let samples = prepare_samples(&s, None, &obs).unwrap();
    let mut tr = student_trace(&s, &samples[0]);
    let y = samples[0].label.unwrap();
    tr.logits = (0..8)
        .map(|k| if k == y { 1000.0 } else { -1000.0 })
        .collect();
    let (loss, _) = stage_loss(
        Stage::Sft,
        &tr,
        None,
        Some(y),
        &LossWeights::default(),
        KlDirection::Forward,
    )
    .unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn missing_label_or_teacher_is_contract_violation() {
    let (s, _) = models();
    let obs = data(1, 6);
    let samples = prepare_samples(&s, None, &obs).unwrap();
    let tr = student_trace(&s, &samples[0]);
    let w = LossWeights::default();
    assert!(matches!(
        stage_loss(Stage::Sft, &tr, None, None, &w, KlDirection::Forward),
        Err(DistillError::Contract(_))
    ));
    assert!(matches!(
        stage_loss(Stage::Dpt, &tr, None, None, &w, KlDirection::Forward),
        Err(DistillError::Contract(_))
    ));
}

#[test]
fn dpt_gradients_cover_projector_only() {
    let (s, t) = models();
    let obs = data(1, 7);
    let samples = prepare_samples(&s, Some(&t), &obs).unwrap();
    let batch: Vec<&Sample> = samples.iter().collect();
    let (g, _, _) = batch_grad(
        Stage::Dpt,
        &s,
        &batch,
        &LossWeights::default(),
        KlDirection::Forward,
    )
    .unwrap();
    let ids: Vec<TensorId> = g.ids().collect();
    assert_eq!(ids, vec![TensorId::ProjW, TensorId::ProjB]);
    let (g, _, _) = batch_grad(
        Stage::Sft,
        &s,
        &batch,
        &LossWeights::default(),
        KlDirection::Forward,
    )
    .unwrap();
    assert!(g.get(TensorId::EncW).is_none() && g.get(TensorId::EncB).is_none());
    assert_eq!(g.ids().count(), 8);
}

#[test]
fn batch_gradient_is_mean_of_singles() {
    let (s, t) = models();
    let obs = data(1, 8);
    let samples = prepare_samples(&s, Some(&t), &obs[..2]).unwrap();
    let w = LossWeights::default();
    let dir = KlDirection::Forward;
    let (pair, _, _) = batch_grad(Stage::Dft, &s, &[&samples[0], &samples[1]], &w, dir).unwrap();
    let (a, _, _) = batch_grad(Stage::Dft, &s, &[&samples[0]], &w, dir).unwrap();
    let (b, _, _) = batch_grad(Stage::Dft, &s, &[&samples[1]], &w, dir).unwrap();
    for (id, g) in pair.iter() {
        let ga = a.get(id).unwrap();
        let gb = b.get(id).unwrap();
        for i in 0..g.len() {
            assert!((g[i] - 0.5 * (ga[i] + gb[i])).abs() <= 1e-12);
        }
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let (s, t) = models();
    let obs = data(1, 9);
    for stage in Stage::ALL {
        let teacher = stage.uses_teacher().then_some(&t);
        let params = if stage == Stage::TeacherPretrain {
            &t
        } else {
            &s
        };
        let samples = prepare_samples(params, teacher, &obs).unwrap();
        let batch: Vec<&Sample> = samples.iter().collect();
        for direction in [KlDirection::Forward, KlDirection::Reverse] {
            let report = gradcheck(
                stage,
                params,
                &batch,
                &LossWeights::default(),
                direction,
                50,
                17,
            )
            .unwrap();
            assert!(
                report.passed(GRADCHECK_TOLERANCE),
                "{stage} {direction:?}: max rel err {}",
                report.max_rel_err
            );
        }
    }
}

#[test]
fn stage_config_validation() {
    let mut c = StageConfig::default_for(Stage::Sft, 1);
    c.epochs = 0;
    assert!(c.validate().is_err());
    let mut c = StageConfig::default_for(Stage::Sft, 1);
    c.lr = 0.0;
    assert!(c.validate().is_err());
    let mut c = StageConfig::default_for(Stage::Sft, 1);
    c.weights.beta = -1.0;
    assert!(c.validate().is_err());
    assert!(StageConfig::default_for(Stage::Dft, 1).validate().is_ok());
}

#[test]
fn teacher_presence_enforced() {
    let (s, t) = models();
    let obs = data(2, 10);
    let cfg = |stage| {
        let mut c = StageConfig::default_for(stage, 1);
        c.epochs = 1;
        c
    };
    assert!(train_stage(&s, None, &obs, None, &cfg(Stage::Dpt)).is_err());
    assert!(train_stage(&s, Some(&t), &obs, None, &cfg(Stage::Sft)).is_err());
    let mut zero = cfg(Stage::Sft);
    zero.epochs = 0;
    assert!(train_stage(&s, None, &obs, None, &zero).is_err());
}

#[test]
fn training_is_deterministic_and_respects_freezing() {
    let (s, t) = models();
    let obs = data(4, 11);
    let mut cfg = StageConfig::default_for(Stage::Dpt, 3);
    cfg.epochs = 2;
    let (a, ra) = train_stage(&s, Some(&t), &obs, Some(&obs), &cfg).unwrap();
    let (b, _) = train_stage(&s, Some(&t), &obs, Some(&obs), &cfg).unwrap();
    assert_eq!(a, b);
    assert!(ra.frozen_unchanged());
    assert_eq!(a.encoder_digest(), s.encoder_digest());
    assert_eq!(a.language_digest(), s.language_digest());
    assert_ne!(a.tensor(TensorId::ProjW), s.tensor(TensorId::ProjW));
    assert!(ra.val_accuracy.is_some());

    let mut cfg = StageConfig::default_for(Stage::Sft, 3);
    cfg.epochs = 1;
    let (c, rc) = train_stage(&s, None, &obs, None, &cfg).unwrap();
    assert!(rc.frozen_unchanged());
    assert_eq!(c.encoder_digest(), s.encoder_digest());
    assert_ne!(c.language_digest(), s.language_digest());
}
