//! Self-attention message passing over a [`BatchGraph`].
//!
//! Each step runs `H` heads. Head `h` projects node features to queries,
//! keys and values of width `d/H`, scores neighbor pairs with
//! `q_i·k_j / √d`, normalizes the scores over the neighborhood of `i`, and
//! sums the neighbors' values with those weights. The head outputs are
//! concatenated back to width `d`. The graph is fixed across steps.

use crate::encoder::glorot_uniform;
use crate::error::{shape_err, Error, Result};
use crate::graph::BatchGraph;
use crate::model::Parameterized;
use crate::numcore::{Matrix, Rng, Tape, Var};

/// Query, key and value projections for one head, each `(d/H) × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampParams {
    dim: usize,
    heads: usize,
    steps: Vec<Vec<HeadWeights>>,
}

fn check_dims(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!("{heads} heads must evenly divide embedding dimension {dim}")));
    }
    Ok(())
}

impl SampParams {
    pub fn new(dim: usize, steps: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        check_dims(dim, heads)?;
        let width = dim / heads;
        let steps = (0..steps)
            .map(|_| {
                (0..heads)
                    .map(|_| HeadWeights {
                        query: glorot_uniform(width, dim, rng),
                        key: glorot_uniform(width, dim, rng),
                        value: glorot_uniform(width, dim, rng),
                    })
                    .collect()
            })
            .collect();
        Ok(Self { dim, heads, steps })
    }

    pub fn from_weights(dim: usize, heads: usize, steps: Vec<Vec<HeadWeights>>) -> Result<Self> {
        check_dims(dim, heads)?;
        let shape = (dim / heads, dim);
        for (p, step) in steps.iter().enumerate() {
            if step.len() != heads {
                return Err(shape_err!("step {p} has {} heads, expected {heads}", step.len()));
            }
            for (h, w) in step.iter().enumerate() {
                for m in [&w.query, &w.key, &w.value] {
                    if m.shape() != shape {
                        return Err(shape_err!(
                            "step {p} head {h}: weight is {}x{}, expected {}x{}",
                            m.rows(),
                            m.cols(),
                            shape.0,
                            shape.1
                        ));
                    }
                }
            }
        }
        Ok(Self { dim, heads, steps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[Vec<HeadWeights>] {
        &self.steps
    }

    pub fn register(&self, tape: &mut Tape) -> SampVars {
        self.register_with(tape, |t, name, m| t.param(name, m.clone()))
    }

    pub fn register_frozen(&self, tape: &mut Tape) -> SampVars {
        self.register_with(tape, |t, _, m| t.constant(m.clone()))
    }

    fn register_with(&self, tape: &mut Tape, mut leaf: impl FnMut(&mut Tape, String, &Matrix) -> Var) -> SampVars {
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(p, step)| {
                step.iter()
                    .enumerate()
                    .map(|(h, w)| HeadVars {
                        query: leaf(tape, format!("samp.{p}.{h}.query"), &w.query),
                        key: leaf(tape, format!("samp.{p}.{h}.key"), &w.key),
                        value: leaf(tape, format!("samp.{p}.{h}.value"), &w.value),
                    })
                    .collect()
            })
            .collect();
        SampVars { dim: self.dim, steps }
    }
}

impl Parameterized for SampParams {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (p, step) in self.steps.iter().enumerate() {
            for (h, w) in step.iter().enumerate() {
                out.push((format!("samp.{p}.{h}.query"), &w.query));
                out.push((format!("samp.{p}.{h}.key"), &w.key));
                out.push((format!("samp.{p}.{h}.value"), &w.value));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.steps.iter_mut().flatten().flat_map(|w| [&mut w.query, &mut w.key, &mut w.value]).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// SAMP parameters living on a tape.
#[derive(Clone, Debug)]
pub struct SampVars {
    dim: usize,
    steps: Vec<Vec<HeadVars>>,
}

impl SampVars {
    /// Build from raw head handles, `steps[p][h]`.
    pub fn from_heads(dim: usize, steps: Vec<Vec<HeadVars>>) -> Self {
        Self { dim, steps }
    }

    /// Rebuild from handles in [`Parameterized::named_params`] order.
    pub fn from_flat(dim: usize, heads: usize, vars: &[Var]) -> Self {
        let heads_flat: Vec<HeadVars> =
            vars.chunks(3).map(|c| HeadVars { query: c[0], key: c[1], value: c[2] }).collect();
        Self { dim, steps: heads_flat.chunks(heads.max(1)).map(|c| c.to_vec()).collect() }
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.steps.iter().flatten().flat_map(|h| [h.query, h.key, h.value])
    }
}

fn head_scores(tape: &mut Tape, x: Var, head: &HeadVars, graph: &BatchGraph, dim: usize) -> Result<Var> {
    let q = tape.matmul_t(x, head.query)?;
    let k = tape.matmul_t(x, head.key)?;
    let logits = tape.matmul_t(q, k)?;
    let logits = tape.scale(logits, 1.0 / (dim as f64).sqrt())?;
    tape.masked_softmax(logits, graph.mask())
}

/// Message passing on the tape. `x` holds the `B × d` node features.
///
/// When `scores` is given, every head's attention matrix is appended to it,
/// step-major.
pub fn samp_forward_on_tape(
    tape: &mut Tape,
    vars: &SampVars,
    graph: &BatchGraph,
    x: Var,
    mut scores: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let (rows, cols) = tape.value(x).shape();
    if cols != vars.dim {
        return Err(shape_err!("SAMP expects {}-dimensional nodes, got {cols}", vars.dim));
    }
    if rows != graph.len() {
        return Err(shape_err!("{rows} node rows for a graph of {} nodes", graph.len()));
    }
    let mut h = x;
    for step in &vars.steps {
        let mut outputs = Vec::with_capacity(step.len());
        for head in step {
            let attn = head_scores(tape, h, head, graph, vars.dim)?;
            if let Some(s) = scores.as_deref_mut() {
                s.push(attn);
            }
            let values = tape.matmul_t(h, head.value)?;
            outputs.push(tape.matmul(attn, values)?);
        }
        h = tape.concat_cols(&outputs)?;
    }
    Ok(h)
}

/// Refine the graph's node features with frozen parameters.
pub fn samp_forward(params: &SampParams, graph: &BatchGraph) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let x = tape.constant(graph.node_features().clone());
    let out = samp_forward_on_tape(&mut tape, &vars, graph, x, None)?;
    Ok(tape.value(out).clone())
}

/// Attention matrix of one head at one step; zero outside the adjacency.
pub fn attention_scores(params: &SampParams, graph: &BatchGraph, step: usize, head: usize) -> Result<Matrix> {
    if step >= params.num_steps() || head >= params.heads {
        return Err(Error::InvalidArgument(format!(
            "step {step} / head {head} out of range ({} steps, {} heads)",
            params.num_steps(),
            params.heads
        )));
    }
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let x = tape.constant(graph.node_features().clone());
    let mut scores = Vec::new();
    samp_forward_on_tape(&mut tape, &vars, graph, x, Some(&mut scores))?;
    Ok(tape.value(scores[step * params.heads + head]).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::numcore::{grad_check, softmax_rows};

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut rng = Rng::new(0);
        assert!(SampParams::new(6, 1, 4, &mut rng).is_err());
        assert!(SampParams::new(6, 1, 0, &mut rng).is_err());
        assert!(SampParams::new(8, 1, 4, &mut rng).is_ok());
    }

    #[test]
    fn singleton_neighborhood_scores_one() {
        let mut rng = Rng::new(1);
        let params = SampParams::new(4, 1, 2, &mut rng).unwrap();
        let v = random(3, 4, &mut rng);
        let g = build_graph(&v, 1.0001).unwrap();
        let s = attention_scores(&params, &g, 0, 1).unwrap();
        assert_eq!(s, Matrix::identity(3));
    }

    #[test]
    fn identical_nodes_share_attention_uniformly() {
        let mut rng = Rng::new(2);
        let params = SampParams::new(4, 1, 1, &mut rng).unwrap();
        let row = [0.3, -1.0, 0.8, 0.1];
        let v = Matrix::from_rows(&[row; 4]).unwrap();
        let g = build_graph(&v, -1.0001).unwrap();
        let s = attention_scores(&params, &g, 0, 0).unwrap();
        for &x in s.data() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    /// Direct evaluation of every pair's logit followed by a masked softmax.
    fn oracle_scores(w: &HeadWeights, v: &Matrix, adj: &dyn Fn(usize, usize) -> bool) -> Matrix {
        let n = v.rows();
        let d = v.cols() as f64;
        let project = |m: &Matrix, x: &[f64]| -> Vec<f64> {
            m.iter_rows().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
        };
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let qi = project(&w.query, v.row(i));
            let mut logits = Vec::new();
            for j in 0..n {
                let kj = project(&w.key, v.row(j));
                let l: f64 = qi.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt();
                logits.push(if adj(i, j) { l } else { f64::NEG_INFINITY });
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for j in 0..n {
                out.set(i, j, (logits[j] - max).exp() / z);
            }
        }
        out
    }

    #[test]
    fn three_node_scores_match_oracle() {
        let w = HeadWeights {
            query: Matrix::from_rows(&[[0.5, -0.2, 0.1], [0.0, 0.3, -0.4], [0.2, 0.2, 0.2]]).unwrap(),
            key: Matrix::from_rows(&[[-0.1, 0.4, 0.0], [0.3, 0.1, -0.2], [0.0, 0.0, 0.5]]).unwrap(),
            value: Matrix::identity(3),
        };
        let params = SampParams::from_weights(3, 1, vec![vec![w.clone()]]).unwrap();
        let v = Matrix::from_rows(&[[1.0, 2.0, 0.5], [-1.0, 0.5, 2.0], [0.3, -0.7, 1.1]]).unwrap();
        let adj = [true, true, false, true, true, true, false, true, true];
        let g = BatchGraph::from_adjacency(v.clone(), &adj).unwrap();
        let got = attention_scores(&params, &g, 0, 0).unwrap();
        let want = oracle_scores(&w, &v, &|i, j| adj[i * 3 + j]);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-14);
        assert_eq!(got.get(0, 2), 0.0);
        assert_eq!(got.get(2, 0), 0.0);
    }

    #[test]
    fn single_node_output_is_concatenated_values() {
        let mut rng = Rng::new(3);
        let params = SampParams::new(4, 1, 2, &mut rng).unwrap();
        let v = random(1, 4, &mut rng);
        let g = build_graph(&v, 0.0).unwrap();
        let out = samp_forward(&params, &g).unwrap();
        let heads = &params.steps()[0];
        let want =
            Matrix::hstack(&[&v.matmul_t(&heads[0].value).unwrap(), &v.matmul_t(&heads[1].value).unwrap()]).unwrap();
        assert!(out.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn fully_connected_output_matches_weighted_sum() {
        let mut rng = Rng::new(4);
        let params = SampParams::new(3, 1, 1, &mut rng).unwrap();
        let v = random(3, 3, &mut rng);
        let g = build_graph(&v, -1.0001).unwrap();
        let w = &params.steps()[0][0];
        let attn = oracle_scores(w, &v, &|_, _| true);
        let out = samp_forward(&params, &g).unwrap();
        for i in 0..3 {
            let mut want = [0.0; 3];
            for j in 0..3 {
                let wv: Vec<f64> =
                    w.value.iter_rows().map(|r| r.iter().zip(v.row(j)).map(|(a, b)| a * b).sum()).collect();
                for c in 0..3 {
                    want[c] += attn.get(i, j) * wv[c];
                }
            }
            for c in 0..3 {
                assert!((out.get(i, c) - want[c]).abs() < 1e-14);
            }
        }
        // full neighborhood reduces to a plain row softmax
        let plain = softmax_rows(
            &v.matmul_t(&w.query).unwrap().matmul_t(&v.matmul_t(&w.key).unwrap()).unwrap().scale(1.0 / 3f64.sqrt()),
        )
        .unwrap();
        assert!(plain.max_abs_diff(&attn).unwrap() < 1e-14);
    }

    #[test]
    fn zero_steps_is_identity_and_dim_is_preserved() {
        let mut rng = Rng::new(5);
        let v = random(5, 8, &mut rng);
        let g = build_graph(&v, 0.0).unwrap();
        assert_eq!(samp_forward(&SampParams::new(8, 0, 2, &mut rng).unwrap(), &g).unwrap(), v);
        for heads in [1, 2, 4, 8] {
            for steps in [1, 2] {
                let p = SampParams::new(8, steps, heads, &mut rng).unwrap();
                assert_eq!(samp_forward(&p, &g).unwrap().shape(), (5, 8));
            }
        }
        assert!(attention_scores(&SampParams::new(8, 1, 2, &mut rng).unwrap(), &g, 1, 0).is_err());
    }

    #[test]
    fn gradients_pass_check() {
        let mut rng = Rng::new(6);
        let samp = SampParams::new(4, 2, 2, &mut rng).unwrap();
        let v = random(5, 4, &mut rng);
        let g = build_graph(&v, 0.0).unwrap();
        let mut params: Vec<(String, Matrix)> = samp.named_params().into_iter().map(|(n, m)| (n, m.clone())).collect();
        params.push(("nodes".into(), v));
        let probe = random(5, 4, &mut rng);
        let report = grad_check(&params, 1e-5, |t, vars| {
            let heads =
                vars[..12].chunks(3).map(|c| HeadVars { query: c[0], key: c[1], value: c[2] }).collect::<Vec<_>>();
            let sv = SampVars::from_heads(4, heads.chunks(2).map(|c| c.to_vec()).collect());
            let out = samp_forward_on_tape(t, &sv, &g, vars[12], None)?;
            let p = t.constant(probe.clone());
            let w = t.hadamard(out, p)?;
            let s = t.sum(w)?;
            let q = t.sum_squares(out)?;
            t.add(s, q)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}
