//! Contrastive pre-training with message passing.
//!
//! Each step draws `L` source samples, makes `A` augmented copies of each,
//! encodes both sets, refines the stacked embeddings over their batch graph,
//! and scores two prototypical contrastive losses: one on the raw encoder
//! embeddings and one on the refined embeddings. The augmented copy at row
//! `(a−1)·L + i` targets source `i`.

use serde::{Deserialize, Serialize};

use crate::encoder::encode_on_tape;
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::model::{Model, ModelVars, Parameterized};
use crate::numcore::{grad_check, GradCheckReport, Matrix, Rng, Tape, Var};
use crate::samp::samp_forward_on_tape;

/// Vector-data augmentations: multiplicative scale, additive jitter and coordinate masking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Standard deviation of the additive noise, as a multiple of each
    /// dimension's `feature_std` (or absolute when `feature_std` is unset).
    pub jitter_sigma: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    /// Fraction of coordinates zeroed per augmented row.
    pub mask_fraction: f64,
    #[serde(default)]
    pub feature_std: Option<Vec<f64>>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { jitter_sigma: 0.1, scale_lo: 0.9, scale_hi: 1.1, mask_fraction: 0.1, feature_std: None }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self { jitter_sigma: 0.0, scale_lo: 1.0, scale_hi: 1.0, mask_fraction: 0.0, feature_std: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0) || !self.jitter_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("jitter_sigma {} must be >= 0", self.jitter_sigma)));
        }
        if !(self.scale_lo <= self.scale_hi) || !self.scale_lo.is_finite() || !self.scale_hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scale range [{}, {}] is invalid",
                self.scale_lo, self.scale_hi
            )));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::InvalidArgument(format!("mask_fraction {} must be in [0, 1)", self.mask_fraction)));
        }
        Ok(())
    }
}

/// `A` augmented copies of each row of `x`; copy `a` of source `i` is row `a·L + i`.
pub fn augment(spec: &AugmentationSpec, x: &Matrix, a_count: usize, rng: &mut Rng) -> Result<Matrix> {
    spec.validate()?;
    if a_count == 0 {
        return Err(Error::InvalidArgument("need at least one augmentation".into()));
    }
    let (l, dim) = x.shape();
    if let Some(std) = &spec.feature_std {
        if std.len() != dim {
            return Err(Error::Shape(format!("feature_std of length {} for {dim} features", std.len())));
        }
    }
    let masked = (spec.mask_fraction * dim as f64).floor() as usize;
    let mut out = Matrix::zeros(l * a_count, dim);
    for a in 0..a_count {
        for i in 0..l {
            let row = out.row_mut(a * l + i);
            let scale = rng.uniform(spec.scale_lo, spec.scale_hi);
            for (c, (o, &v)) in row.iter_mut().zip(x.row(i)).enumerate() {
                let sigma = spec.jitter_sigma * spec.feature_std.as_ref().map_or(1.0, |s| s[c]);
                let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
                *o = scale * v + noise;
            }
            if masked > 0 {
                for c in rng.choose_distinct(dim, masked) {
                    row[c] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// Mean over augmented rows of `−log softmax(−‖z̄ − z_k‖²)[i]`, on the tape.
pub fn proto_contrastive_on_tape(tape: &mut Tape, queries: Var, prototypes: Var) -> Result<Var> {
    let n_q = tape.value(queries).rows();
    let l = tape.value(prototypes).rows();
    if l == 0 || n_q == 0 || !n_q.is_multiple_of(l) {
        return Err(Error::Shape(format!("{n_q} augmented rows is not a multiple of {l} sources")));
    }
    let d = tape.pairwise_sq_dist(queries, prototypes)?;
    let logits = tape.scale(d, -1.0)?;
    let targets: Vec<usize> = (0..n_q).map(|r| r % l).collect();
    tape.cross_entropy(logits, &targets)
}

pub fn proto_contrastive_loss(queries: &Matrix, prototypes: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.constant(queries.clone());
    let p = tape.constant(prototypes.clone());
    let loss = proto_contrastive_on_tape(&mut tape, q, p)?;
    tape.scalar(loss)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Source samples per batch (`L`).
    pub sources: usize,
    /// Augmentations per source (`A`).
    pub augmentations: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub augmentation: AugmentationSpec,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            sources: 16,
            augmentations: 3,
            beta: 0.7,
            learning_rate: 1e-3,
            gamma: 0.0,
            epochs: 50,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            augmentation: AugmentationSpec::default(),
        }
    }
}

impl PretrainConfig {
    pub fn batch_size(&self) -> usize {
        (self.augmentations + 1) * self.sources
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources < 2 {
            return Err(Error::InvalidArgument("sources per batch must be at least 2".into()));
        }
        if self.augmentations < 1 {
            return Err(Error::InvalidArgument("augmentations must be at least 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta {} must be >= 0", self.beta)));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        self.augmentation.validate()
    }
}

/// Loss handles produced by [`clr_loss_on_tape`].
#[derive(Clone, Copy, Debug)]
pub struct ClrLoss {
    pub total: Var,
    pub raw: Var,
    pub refined: Var,
}

/// `β·raw + refined` contrastive loss for a source batch and its augmentations.
pub fn clr_loss_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    sources: &Matrix,
    augmented: &Matrix,
    beta: f64,
    gamma: f64,
) -> Result<ClrLoss> {
    let l = sources.rows();
    let x = tape.constant(sources.clone());
    let x_aug = tape.constant(augmented.clone());
    let z = encode_on_tape(tape, &vars.encoder, x)?;
    let z_aug = encode_on_tape(tape, &vars.encoder, x_aug)?;
    let v = tape.concat_rows(&[z, z_aug])?;
    let graph = build_graph(tape.value(v), gamma)?;
    let refined = samp_forward_on_tape(tape, &vars.samp, &graph, v, None)?;
    let b = tape.value(refined).rows();
    let z_ref = tape.slice_rows(refined, 0, l)?;
    let z_aug_ref = tape.slice_rows(refined, l, b)?;
    let raw = proto_contrastive_on_tape(tape, z_aug, z)?;
    let refined_loss = proto_contrastive_on_tape(tape, z_aug_ref, z_ref)?;
    let scaled = tape.scale(raw, beta)?;
    let total = tape.add(scaled, refined_loss)?;
    Ok(ClrLoss { total, raw, refined: refined_loss })
}

/// Loss values and one gradient per model parameter (in `named_params` order).
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub raw_loss: f64,
    pub refined_loss: f64,
    pub gradients: Vec<Matrix>,
}

/// Value and gradient of the loss for already augmented data.
pub fn clr_loss_and_gradients(
    model: &Model,
    sources: &Matrix,
    augmented: &Matrix,
    beta: f64,
    gamma: f64,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let losses = clr_loss_on_tape(&mut tape, &vars, sources, augmented, beta, gamma)?;
    let grads = tape.backward(losses.total)?;
    Ok(StepOutput {
        loss: tape.scalar(losses.total)?,
        raw_loss: tape.scalar(losses.raw)?,
        refined_loss: tape.scalar(losses.refined)?,
        gradients: vars.vars().into_iter().map(|v| grads.get_or_zeros(v)).collect(),
    })
}

/// Finite-difference check of [`clr_loss_and_gradients`] over every model parameter.
pub fn check_step_gradients(
    model: &Model,
    sources: &Matrix,
    augmented: &Matrix,
    beta: f64,
    gamma: f64,
    h: f64,
) -> Result<GradCheckReport> {
    let params: Vec<(String, Matrix)> = model.named_params().into_iter().map(|(n, m)| (n, m.clone())).collect();
    grad_check(&params, h, |t, v| {
        let vars = model.vars_from_flat(v)?;
        Ok(clr_loss_on_tape(t, &vars, sources, augmented, beta, gamma)?.total)
    })
}

/// One pre-training step on `batch` (`L` source rows): augment, then loss and gradients.
pub fn samp_clr_step(model: &Model, cfg: &PretrainConfig, batch: &Matrix, rng: &mut Rng) -> Result<StepOutput> {
    if batch.rows() != cfg.sources {
        return Err(Error::Shape(format!("batch has {} rows, config wants {}", batch.rows(), cfg.sources)));
    }
    let augmented = augment(&cfg.augmentation, batch, cfg.augmentations, rng)?;
    clr_loss_and_gradients(model, batch, &augmented, cfg.beta, cfg.gamma)
}

/// First-order update rule over a fixed list of parameter matrices.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, t: u64, m: Vec<Matrix>, v: Vec<Matrix> },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd { lr },
            OptimizerKind::Adam => {
                Self::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
            }
        }
    }

    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &[Matrix]) -> Result<()> {
        let mut targets = params.params_mut();
        if targets.len() != grads.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), targets.len())));
        }
        match self {
            Self::Sgd { lr } => {
                for (p, g) in targets.iter_mut().zip(grads) {
                    **p = p.sub(&g.scale(*lr))?;
                }
            }
            Self::Adam { lr, beta1, beta2, eps, t, m, v } => {
                if m.is_empty() {
                    *m = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
                    *v = m.clone();
                }
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t as i32);
                let c2 = 1.0 - beta2.powi(*t as i32);
                for (k, (p, g)) in targets.iter_mut().zip(grads).enumerate() {
                    let (mk, vk) = (m[k].data_mut(), v[k].data_mut());
                    let pd = p.data_mut();
                    for (j, &gj) in g.data().iter().enumerate() {
                        mk[j] = *beta1 * mk[j] + (1.0 - *beta1) * gj;
                        vk[j] = *beta2 * vk[j] + (1.0 - *beta2) * gj * gj;
                        pd[j] -= *lr * (mk[j] / c1) / ((vk[j] / c2).sqrt() + *eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One loss-history record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "L")]
    pub loss: f64,
    #[serde(rename = "L1")]
    pub raw_loss: f64,
    #[serde(rename = "L2")]
    pub refined_loss: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: Model,
    pub history: Vec<LossRecord>,
}

impl PretrainOutcome {
    /// Mean total loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_means(&self.history)
    }
}

pub fn epoch_means(history: &[LossRecord]) -> Vec<f64> {
    let epochs = history.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    let mut sums = vec![(0.0, 0usize); epochs];
    for r in history {
        sums[r.epoch].0 += r.loss;
        sums[r.epoch].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

/// Per-dimension standard deviation of the rows of `x`.
pub fn feature_std(x: &Matrix) -> Vec<f64> {
    let mean = x.col_means();
    let n = x.rows().max(1) as f64;
    let mut var = vec![0.0; x.cols()];
    for r in x.iter_rows() {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(r) {
            *v += (x - m) * (x - m);
        }
    }
    var.into_iter().map(|v| (v / n).sqrt()).collect()
}

/// Train `model` on the rows of `samples` (labels are never used).
///
/// Each epoch shuffles the samples and walks them in batches of `L`, dropping
/// an incomplete final batch. `on_epoch` runs after every epoch.
pub fn pretrain_run(
    samples: &Matrix,
    mut model: Model,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, &Model, &[LossRecord]) -> Result<()>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if samples.rows() < cfg.sources {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot fill a batch of {}",
            samples.rows(),
            cfg.sources
        )));
    }
    let mut cfg = cfg.clone();
    if cfg.augmentation.feature_std.is_none() {
        cfg.augmentation.feature_std = Some(feature_std(samples));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..samples.rows()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks_exact(cfg.sources) {
            let batch = samples.select_rows(chunk)?;
            let out = samp_clr_step(&model, &cfg, &batch, &mut rng)?;
            if cfg.learning_rate > 0.0 {
                optimizer.step(&mut model, &out.gradients)?;
            }
            history.push(LossRecord {
                epoch,
                step,
                loss: out.loss,
                raw_loss: out.raw_loss,
                refined_loss: out.refined_loss,
            });
            step += 1;
        }
        on_epoch(epoch, &model, &history)?;
    }
    Ok(PretrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::matrix::sq_dist;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn identity_augmentation_stacks_copies() {
        let mut rng = Rng::new(0);
        let x = random(3, 4, &mut rng);
        let out = augment(&AugmentationSpec::identity(), &x, 2, &mut rng).unwrap();
        assert_eq!(out, Matrix::vstack(&[&x, &x]).unwrap());
    }

    #[test]
    fn augmentation_layout_and_determinism() {
        let x = Matrix::from_rows(&[[1.0; 10], [100.0; 10], [-50.0; 10]]).unwrap();
        let spec = AugmentationSpec { jitter_sigma: 0.01, ..AugmentationSpec::default() };
        let a = augment(&spec, &x, 2, &mut Rng::new(5)).unwrap();
        let b = augment(&spec, &x, 2, &mut Rng::new(5)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.shape(), (6, 10));
        for r in 0..6 {
            let src = x.row(r % 3);
            // one masked coordinate per row, the rest near the source
            assert_eq!(a.row(r).iter().filter(|&&v| v == 0.0).count(), 1);
            let near = a.row(r).iter().zip(src).filter(|(v, s)| (*v / *s - 1.0).abs() < 0.2).count();
            assert_eq!(near, 9);
        }
    }

    #[test]
    fn invalid_augmentation_specs() {
        let x = Matrix::zeros(2, 3);
        let mut rng = Rng::new(0);
        for spec in [
            AugmentationSpec { jitter_sigma: -1.0, ..AugmentationSpec::default() },
            AugmentationSpec { scale_lo: 2.0, scale_hi: 1.0, ..AugmentationSpec::default() },
            AugmentationSpec { mask_fraction: 1.0, ..AugmentationSpec::default() },
        ] {
            assert!(augment(&spec, &x, 1, &mut rng).is_err());
        }
        assert!(augment(&AugmentationSpec::default(), &x, 0, &mut rng).is_err());
    }

    #[test]
    fn uniform_loss_is_log_l() {
        let z = Matrix::filled(4, 3, 0.7);
        let z_aug = Matrix::filled(8, 3, 0.7);
        let loss = proto_contrastive_loss(&z_aug, &z).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn separated_prototypes_give_near_zero_loss() {
        let z = Matrix::from_rows(&[[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]]).unwrap();
        let loss = proto_contrastive_loss(&z, &z).unwrap();
        assert!(loss <= 1e-4);
    }

    #[test]
    fn two_source_loss_matches_formula() {
        let z = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let z_aug = Matrix::from_rows(&[[0.5, 0.0], [0.0, 1.5]]).unwrap();
        let mut want = 0.0;
        for r in 0..2 {
            let d: Vec<f64> = (0..2).map(|k| sq_dist(z_aug.row(r), z.row(k))).collect();
            let denom: f64 = d.iter().map(|v| (-v).exp()).sum();
            want -= ((-d[r]).exp() / denom).ln();
        }
        want /= 2.0;
        assert!((proto_contrastive_loss(&z_aug, &z).unwrap() - want).abs() < 1e-14);
        assert!(proto_contrastive_loss(&Matrix::zeros(3, 2), &z).is_err());
    }

    fn small_setup(beta: f64) -> (Model, PretrainConfig, Matrix) {
        let model = Model::init(5, 8, 1, 2, 1).unwrap();
        let cfg = PretrainConfig { sources: 3, augmentations: 1, beta, ..PretrainConfig::default() };
        let x = random(3, 5, &mut Rng::new(2));
        (model, cfg, x)
    }

    #[test]
    fn beta_zero_leaves_only_refined_loss() {
        let (model, cfg, x) = small_setup(0.0);
        let out = samp_clr_step(&model, &cfg, &x, &mut Rng::new(3)).unwrap();
        assert!((out.loss - out.refined_loss).abs() <= 1e-12);
        assert!(out.raw_loss > 0.0);
    }

    #[test]
    fn step_rejects_wrong_batch_size() {
        let (model, cfg, _) = small_setup(0.7);
        assert!(samp_clr_step(&model, &cfg, &Matrix::zeros(4, 5), &mut Rng::new(0)).is_err());
        let bad = PretrainConfig { sources: 1, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sgd_and_adam_move_against_the_gradient() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let (mut model, _, _) = small_setup(0.7);
            let before = model.clone();
            let grads: Vec<Matrix> =
                model.named_params().iter().map(|(_, m)| Matrix::filled(m.rows(), m.cols(), 1.0)).collect();
            let mut opt = Optimizer::new(kind, 0.1);
            opt.step(&mut model, &grads).unwrap();
            for ((_, a), (_, b)) in before.named_params().iter().zip(model.named_params()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y - 0.1).abs() < 1e-6, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn small_dataset_is_rejected() {
        let (model, cfg, x) = small_setup(0.7);
        let cfg = PretrainConfig { sources: 4, ..cfg };
        assert!(pretrain_run(&x, model, &cfg, |_, _, _| Ok(())).is_err());
    }

    #[test]
    fn epoch_means_average_per_epoch() {
        let rec = |epoch, loss| LossRecord { epoch, step: 0, loss, raw_loss: 0.0, refined_loss: 0.0 };
        assert_eq!(epoch_means(&[rec(0, 1.0), rec(0, 3.0), rec(1, 5.0)]), vec![2.0, 5.0]);
    }

    #[test]
    fn loss_record_json_keys() {
        let r = LossRecord { epoch: 1, step: 7, loss: 0.5, raw_loss: 0.25, refined_loss: 0.375 };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"epoch":1,"step":7,"L":0.5,"L1":0.25,"L2":0.375}"#);
    }

    #[test]
    fn loss_decomposes_over_beta() {
        let (model, _, x) = small_setup(0.0);
        let aug = augment(&AugmentationSpec::default(), &x, 1, &mut Rng::new(4)).unwrap();
        let a = clr_loss_and_gradients(&model, &x, &aug, 0.0, 0.0).unwrap();
        let b = clr_loss_and_gradients(&model, &x, &aug, 0.7, 0.0).unwrap();
        assert!((b.loss - (0.7 * b.raw_loss + b.refined_loss)).abs() < 1e-12);
        assert!((a.refined_loss - b.refined_loss).abs() < 1e-15);
    }

    #[test]
    fn full_step_gradients_pass_check() {
        let (model, _, x) = small_setup(0.7);
        let aug = augment(&AugmentationSpec::default(), &x, 1, &mut Rng::new(11)).unwrap();
        let report = check_step_gradients(&model, &x, &aug, 0.7, 0.0, 1e-6).unwrap();
        assert!(report.max_rel_error <= 1e-5, "{report:?}");
        let out = clr_loss_and_gradients(&model, &x, &aug, 0.7, 0.0).unwrap();
        assert_eq!(out.gradients.len(), model.named_params().len());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (model, cfg, _) = small_setup(0.7);
        let x = random(9, 5, &mut Rng::new(8));
        let cfg = PretrainConfig { learning_rate: 0.0, epochs: 2, ..cfg };
        let out = pretrain_run(&x, model.clone(), &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(out.model.to_bytes(), model.to_bytes());
        assert_eq!(out.history.len(), 6);
    }

    #[test]
    fn training_is_deterministic() {
        let (model, cfg, _) = small_setup(0.7);
        let x = random(10, 5, &mut Rng::new(8));
        let cfg = PretrainConfig { learning_rate: 0.01, epochs: 3, ..cfg };
        let mut epochs_seen = Vec::new();
        let a = pretrain_run(&x, model.clone(), &cfg, |e, _, _| {
            epochs_seen.push(e);
            Ok(())
        })
        .unwrap();
        let b = pretrain_run(&x, model, &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        assert_eq!(a.history, b.history);
        assert_eq!(epochs_seen, vec![0, 1, 2]);
        // 10 samples in batches of 3: the tenth is dropped each epoch
        assert_eq!(a.history.len(), 9);
    }

    proptest::proptest! {
        #[test]
        fn loss_ignores_source_order(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let model = Model::init(4, 6, 1, 2, seed).unwrap();
            let x = random(4, 4, &mut rng);
            let aug = augment(&AugmentationSpec::default(), &x, 2, &mut rng).unwrap();
            let mut perm: Vec<usize> = (0..4).collect();
            rng.shuffle(&mut perm);
            let aug_perm: Vec<usize> = (0..2).flat_map(|a| perm.iter().map(move |&i| a * 4 + i)).collect();
            let base = clr_loss_and_gradients(&model, &x, &aug, 0.7, 0.0).unwrap();
            let moved = clr_loss_and_gradients(
                &model,
                &x.select_rows(&perm).unwrap(),
                &aug.select_rows(&aug_perm).unwrap(),
                0.7,
                0.0,
            )
            .unwrap();
            proptest::prop_assert!((base.loss - moved.loss).abs() <= 1e-10);
        }
    }
}
