//! Class prototypes and the nearest-mean linear head.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numcore::matrix::dot;
use crate::numcore::{Matrix, Rng, Tape};

pub const DEFAULT_FINETUNE_ITERS: usize = 15;
pub const DEFAULT_FINETUNE_LR: f64 = 0.01;

/// One mean embedding per class, row `k` for class `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    centers: Matrix,
}

impl Prototypes {
    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn num_classes(&self) -> usize {
        self.centers.rows()
    }
}

/// `scores = z · Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub weights: Matrix,
    pub biases: Matrix,
}

/// Mean of the supports of each class; every class in `0..N` must appear.
pub fn compute_prototypes(supports: &Matrix, labels: &[usize]) -> Result<Prototypes> {
    if labels.len() != supports.rows() {
        return Err(shape_err!("{} labels for {} supports", labels.len(), supports.rows()));
    }
    let n = labels.iter().max().map_or(0, |m| m + 1);
    if n == 0 {
        return Err(Error::InsufficientData("no supports".into()));
    }
    let mut centers = Matrix::zeros(n, supports.cols());
    let mut counts = vec![0usize; n];
    for (row, &k) in supports.iter_rows().zip(labels) {
        counts[k] += 1;
        for (c, v) in centers.row_mut(k).iter_mut().zip(row) {
            *c += v;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InsufficientData(format!("class {k} has no supports")));
    }
    for (k, &count) in counts.iter().enumerate() {
        for c in centers.row_mut(k) {
            *c /= count as f64;
        }
    }
    Ok(Prototypes { centers })
}

/// `W_k = 2 c_k`, `b_k = −‖c_k‖²`, so that
/// `score_k(z) = ‖z‖² − ‖z − c_k‖²` ranks classes by distance to their prototype.
pub fn init_classifier(protos: &Prototypes) -> LinearClassifier {
    let c = &protos.centers;
    let biases: Vec<f64> = c.iter_rows().map(|r| -dot(r, r)).collect();
    LinearClassifier { weights: c.scale(2.0), biases: Matrix::from_raw(1, biases.len(), biases) }
}

impl LinearClassifier {
    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn scores(&self, z: &Matrix) -> Result<Matrix> {
        z.matmul_t(&self.weights)?.add_row_broadcast(self.biases.row(0))
    }

    /// Mean cross-entropy of `softmax(scores)` against `labels`.
    pub fn cross_entropy(&self, z: &Matrix, labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let w = tape.constant(self.weights.clone());
        let b = tape.constant(self.biases.clone());
        let loss = classifier_loss(&mut tape, w, b, z, labels)?;
        tape.scalar(loss)
    }
}

pub(crate) fn classifier_loss(
    tape: &mut Tape,
    w: crate::numcore::Var,
    b: crate::numcore::Var,
    z: &Matrix,
    labels: &[usize],
) -> Result<crate::numcore::Var> {
    let x = tape.constant(z.clone());
    let s = tape.matmul_t(x, w)?;
    let s = tape.add_row_bias(s, b)?;
    tape.cross_entropy(s, labels)
}

/// Which supports each fine-tuning iteration trains on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetRule {
    /// `⌈K/2⌉` supports per class without replacement; all of them when `K = 1`.
    #[default]
    HalfPerClass,
    FullBatch,
}

impl SubsetRule {
    fn sample(self, labels: &[usize], num_classes: usize, rng: &mut Rng) -> Vec<usize> {
        match self {
            SubsetRule::FullBatch => (0..labels.len()).collect(),
            SubsetRule::HalfPerClass => {
                let mut picked = Vec::new();
                for k in 0..num_classes {
                    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
                    let take = members.len().div_ceil(2);
                    if members.len() <= 1 {
                        picked.extend(members);
                        continue;
                    }
                    picked.extend(rng.choose_distinct(members.len(), take).into_iter().map(|i| members[i]));
                }
                picked
            }
        }
    }
}

/// Plain gradient descent on the head's cross-entropy, one step per iteration.
/// Only the head changes; the embeddings are fixed inputs.
pub fn finetune_classifier(
    clf: &LinearClassifier,
    supports: &Matrix,
    labels: &[usize],
    iterations: usize,
    lr: f64,
    rule: SubsetRule,
    rng: &mut Rng,
) -> Result<LinearClassifier> {
    if supports.rows() == 0 {
        return Err(Error::InsufficientData("fine-tuning needs supports".into()));
    }
    if labels.len() != supports.rows() {
        return Err(shape_err!("{} labels for {} supports", labels.len(), supports.rows()));
    }
    let mut out = clf.clone();
    for _ in 0..iterations {
        let subset = rule.sample(labels, clf.num_classes(), rng);
        let z = supports.select_rows(&subset)?;
        let y: Vec<usize> = subset.iter().map(|&i| labels[i]).collect();
        let (gw, gb) = classifier_gradients(&out, &z, &y)?;
        out.weights = out.weights.sub(&gw.scale(lr))?;
        out.biases = out.biases.sub(&gb.scale(lr))?;
    }
    Ok(out)
}

/// Gradient of the mean cross-entropy with respect to weights and biases.
pub fn classifier_gradients(clf: &LinearClassifier, z: &Matrix, labels: &[usize]) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let w = tape.param("head.weight", clf.weights.clone());
    let b = tape.param("head.bias", clf.biases.clone());
    let loss = classifier_loss(&mut tape, w, b, z, labels)?;
    let grads = tape.backward(loss)?;
    Ok((grads.get_or_zeros(w), grads.get_or_zeros(b)))
}

/// Argmax of the scores per row; ties go to the lowest class index.
pub fn predict(clf: &LinearClassifier, zq: &Matrix) -> Result<Vec<usize>> {
    let s = clf.scores(zq)?;
    Ok(s.iter_rows().map(argmax).collect())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}
