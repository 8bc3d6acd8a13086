//! WebAssembly bindings for the demo page in `www/`.
//!
//! Points cross the boundary as flat `[x0, y0, x1, y1, …]` arrays and
//! results come back as JSON strings. Every binding has a plain Rust twin
//! (`*_json`) so the logic is testable off the browser.

use samp_core::dataset::{gen_synthetic, SyntheticSpec};
use samp_core::encoder::{encode, EncoderParams};
use samp_core::episodes::{embed_task, sample_task};
use samp_core::graph::build_graph;
use samp_core::ot::{opt_tune_detailed, SinkhornConfig};
use samp_core::proto::{compute_prototypes, finetune_classifier, init_classifier, predict, SubsetRule};
use samp_core::samp::{attention_scores, samp_forward, SampParams};
use samp_core::{Error, Matrix, Model, Result, Rng};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn points(flat: &[f64]) -> Result<Matrix> {
    if flat.is_empty() || !flat.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("expected x,y pairs, got {} numbers", flat.len())));
    }
    Matrix::new(flat.len() / 2, 2, flat.to_vec())
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn to_js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct AlignOut {
    projected: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
    cost: f64,
}

/// Transport supports onto queries and project them to barycenters.
pub fn align_json(supports: &[f64], queries: &[f64], epsilon: f64) -> Result<String> {
    let (zs, zq) = (points(supports)?, points(queries)?);
    let cfg = SinkhornConfig { max_iterations: 5000, ..SinkhornConfig::with_epsilon(epsilon) };
    let a = opt_tune_detailed(&zs, &zq, &cfg)?;
    let out = AlignOut {
        projected: rows(&a.projected),
        weights: rows(&a.normalized),
        iterations: a.plan.iterations,
        converged: a.plan.converged,
        cost: a.plan.cost(&a.cost)?,
    };
    Ok(serde_json::to_string(&out)?)
}

#[wasm_bindgen]
pub fn align(supports: Vec<f64>, queries: Vec<f64>, epsilon: f64) -> std::result::Result<String, JsError> {
    to_js(align_json(&supports, &queries, epsilon))
}

#[derive(Serialize)]
struct AttentionOut {
    neighbors: Vec<usize>,
    /// `weights[h][j]`: how much the focus node draws from node `j` in head `h`.
    weights: Vec<Vec<f64>>,
    edges: usize,
    refined: Vec<Vec<f64>>,
}

/// Attention of one node over its graph neighborhood, under a random
/// untrained encoder (points are lifted to 8 dimensions first).
pub fn attention_json(flat: &[f64], gamma: f64, heads: usize, focus: usize, seed: u64) -> Result<String> {
    let x = points(flat)?;
    if focus >= x.rows() {
        return Err(Error::InvalidArgument(format!("focus {focus} out of {} points", x.rows())));
    }
    let model = Model::init(2, 8, 1, heads, seed)?;
    let z = encode(&model.encoder, &x)?;
    let graph = build_graph(&z, gamma)?;
    let weights = (0..heads)
        .map(|h| attention_scores(&model.samp, &graph, 0, h).map(|a| a.row(focus).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let refined = samp_forward(&model.samp, &graph)?;
    let out = AttentionOut {
        neighbors: graph.neighbors(focus).to_vec(),
        weights,
        edges: graph.edge_count(),
        refined: rows(&refined),
    };
    Ok(serde_json::to_string(&out)?)
}

#[wasm_bindgen]
pub fn attention(
    points: Vec<f64>,
    gamma: f64,
    heads: usize,
    focus: usize,
    seed: u64,
) -> std::result::Result<String, JsError> {
    to_js(attention_json(&points, gamma, heads, focus, seed))
}

#[derive(Serialize)]
struct Support {
    x: f64,
    y: f64,
    px: f64,
    py: f64,
    label: usize,
}

#[derive(Serialize)]
struct Query {
    x: f64,
    y: f64,
    label: usize,
    pred: usize,
}

#[derive(Serialize)]
struct EpisodeOut {
    supports: Vec<Support>,
    queries: Vec<Query>,
    accuracy: f64,
}

/// Settings for [`episode_json`].
#[derive(Clone, Copy, Debug)]
pub struct ToyEpisode {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub spread: f64,
    pub shift: f64,
    pub ot: bool,
    pub seed: u64,
}

/// One few-shot episode on 2-D Gaussian clusters, classified directly in
/// input space. Queries are displaced by `(shift, −shift)`.
pub fn episode_json(t: &ToyEpisode) -> Result<String> {
    let data = gen_synthetic(&SyntheticSpec {
        classes: t.ways,
        per_class: t.shots + t.queries,
        dim: 2,
        cluster_sigma: t.spread,
        shift: (t.shift != 0.0).then(|| vec![t.shift, -t.shift]),
        seed: t.seed,
    })?;
    let mut rng = Rng::new(t.seed ^ 0x5eed);
    let task = sample_task(&data, t.ways, t.shots, t.queries, &mut rng)?;
    let model = Model::new(EncoderParams::identity(2), SampParams::new(2, 0, 1, &mut rng)?)?;
    let (zs, zq) = embed_task(&model, &task, data.query_shift(), 0.0)?;
    let aligned = if t.ot { opt_tune_detailed(&zs, &zq, &SinkhornConfig::default())?.projected } else { zs.clone() };
    let clf = init_classifier(&compute_prototypes(&aligned, &task.support_labels)?);
    let clf = finetune_classifier(&clf, &aligned, &task.support_labels, 15, 0.01, SubsetRule::default(), &mut rng)?;
    let pred = predict(&clf, &zq)?;
    let right = pred.iter().zip(&task.query_labels).filter(|(p, y)| p == y).count();
    let out = EpisodeOut {
        supports: (0..zs.rows())
            .map(|i| Support {
                x: zs.get(i, 0),
                y: zs.get(i, 1),
                px: aligned.get(i, 0),
                py: aligned.get(i, 1),
                label: task.support_labels[i],
            })
            .collect(),
        queries: (0..zq.rows())
            .map(|j| Query { x: zq.get(j, 0), y: zq.get(j, 1), label: task.query_labels[j], pred: pred[j] })
            .collect(),
        accuracy: right as f64 / pred.len() as f64,
    };
    Ok(serde_json::to_string(&out)?)
}

#[wasm_bindgen]
pub fn episode(
    ways: usize,
    shots: usize,
    queries: usize,
    spread: f64,
    shift: f64,
    ot: bool,
    seed: u64,
) -> std::result::Result<String, JsError> {
    to_js(episode_json(&ToyEpisode { ways, shots, queries, spread, shift, ot, seed }))
}
