//! Few-shot episodes and the evaluation protocol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::model::Model;
use crate::numcore::{Matrix, Rng};
use crate::ot::{opt_tune, SinkhornConfig};
use crate::proto::{compute_prototypes, finetune_classifier, init_classifier, predict, SubsetRule};
use crate::samp::samp_forward;

/// One `N`-way `K`-shot problem. Labels are remapped to `0..N`; `classes[j]`
/// is the dataset class behind label `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub classes: Vec<usize>,
    pub support: Matrix,
    pub support_labels: Vec<usize>,
    pub query: Matrix,
    pub query_labels: Vec<usize>,
    /// `(class, row)` of each support sample in the dataset.
    pub support_index: Vec<(usize, usize)>,
    pub query_index: Vec<(usize, usize)>,
}

pub fn sample_task(dataset: &Dataset, ways: usize, shots: usize, queries: usize, rng: &mut Rng) -> Result<Task> {
    if ways == 0 || shots == 0 || queries == 0 {
        return Err(Error::InvalidArgument("ways, shots and queries must be positive".into()));
    }
    if dataset.num_classes() < ways {
        return Err(Error::InsufficientData(format!(
            "{ways}-way episodes need {ways} classes, dataset has {}",
            dataset.num_classes()
        )));
    }
    if let Some(k) = (0..dataset.num_classes()).find(|&k| dataset.class(k).rows() < shots + queries) {
        return Err(Error::InsufficientData(format!(
            "class {} has {} samples, episodes need {}",
            dataset.names()[k],
            dataset.class(k).rows(),
            shots + queries
        )));
    }
    let classes = rng.choose_distinct(dataset.num_classes(), ways);
    let mut support_index = Vec::with_capacity(ways * shots);
    let mut query_index = Vec::with_capacity(ways * queries);
    for &c in &classes {
        let picked = rng.choose_distinct(dataset.class(c).rows(), shots + queries);
        support_index.extend(picked[..shots].iter().map(|&r| (c, r)));
        query_index.extend(picked[shots..].iter().map(|&r| (c, r)));
    }
    let gather = |idx: &[(usize, usize)]| -> Result<Matrix> {
        let rows: Vec<&[f64]> = idx.iter().map(|&(c, r)| dataset.class(c).row(r)).collect();
        Matrix::from_rows(&rows)
    };
    Ok(Task {
        ways,
        shots,
        queries,
        support: gather(&support_index)?,
        query: gather(&query_index)?,
        support_labels: (0..ways).flat_map(|j| std::iter::repeat_n(j, shots)).collect(),
        query_labels: (0..ways).flat_map(|j| std::iter::repeat_n(j, queries)).collect(),
        classes,
        support_index,
        query_index,
    })
}

/// Evaluation settings; echoed in every [`EvalReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub episodes: usize,
    pub ot_enabled: bool,
    pub finetune_iters: usize,
    pub finetune_lr: f64,
    pub finetune_subset: SubsetRule,
    pub gamma: f64,
    pub sinkhorn: SinkhornConfig,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: 1,
            queries: 15,
            episodes: 600,
            ot_enabled: true,
            finetune_iters: crate::proto::DEFAULT_FINETUNE_ITERS,
            finetune_lr: crate::proto::DEFAULT_FINETUNE_LR,
            finetune_subset: SubsetRule::default(),
            gamma: crate::graph::DEFAULT_GAMMA,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
    pub config: Protocol,
    pub seed: u64,
}

impl EvalReport {
    /// One `{"episode": e, "accuracy": a}` line per episode.
    pub fn episodes_jsonl(&self) -> String {
        self.accuracies
            .iter()
            .enumerate()
            .map(|(e, a)| serde_json::json!({"episode": e, "accuracy": a}).to_string() + "\n")
            .collect()
    }
}

/// Half-width `1.96 · s / √n` with the sample standard deviation.
pub fn confidence_interval(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("confidence interval needs 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Embed one episode, refine it over its graph, and return (supports, queries).
pub fn embed_task(model: &Model, task: &Task, shift: Option<&[f64]>, gamma: f64) -> Result<(Matrix, Matrix)> {
    let mut query = task.query.clone();
    if let Some(s) = shift {
        query = query.add_row_broadcast(s)?;
    }
    let x = Matrix::vstack(&[&task.support, &query])?;
    let mut z = encode(&model.encoder, &x)?;
    if model.samp.num_steps() > 0 {
        z = samp_forward(&model.samp, &build_graph(&z, gamma)?)?;
    }
    let ns = task.support.rows();
    Ok((z.slice_rows(0, ns)?, z.slice_rows(ns, z.rows())?))
}

/// Accuracy of one episode.
pub fn run_episode(model: &Model, dataset: &Dataset, protocol: &Protocol, rng: &mut Rng) -> Result<f64> {
    let task = sample_task(dataset, protocol.ways, protocol.shots, protocol.queries, rng)?;
    let (mut zs, zq) = embed_task(model, &task, dataset.query_shift(), protocol.gamma)?;
    if protocol.ot_enabled {
        zs = opt_tune(&zs, &zq, &protocol.sinkhorn)?;
    }
    let protos = compute_prototypes(&zs, &task.support_labels)?;
    let clf = finetune_classifier(
        &init_classifier(&protos),
        &zs,
        &task.support_labels,
        protocol.finetune_iters,
        protocol.finetune_lr,
        protocol.finetune_subset,
        rng,
    )?;
    let pred = predict(&clf, &zq)?;
    let right = pred.iter().zip(&task.query_labels).filter(|(p, y)| p == y).count();
    Ok(right as f64 / pred.len() as f64)
}

/// Run `protocol.episodes` episodes; episode `e` draws from `Rng::child(seed, e)`.
pub fn evaluate(model: &Model, dataset: &Dataset, protocol: &Protocol, seed: u64) -> Result<EvalReport> {
    if protocol.episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    if model.input_dim() != dataset.input_dim() {
        return Err(Error::Shape(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            dataset.input_dim()
        )));
    }
    protocol.sinkhorn.validate()?;
    let accuracies = (0..protocol.episodes)
        .into_par_iter()
        .map(|e| run_episode(model, dataset, protocol, &mut Rng::child(seed, e as u64)))
        .collect::<Result<Vec<f64>>>()?;
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let ci95 = if accuracies.len() < 2 { 0.0 } else { confidence_interval(&accuracies)? };
    Ok(EvalReport { accuracies, mean, ci95, config: protocol.clone(), seed })
}
