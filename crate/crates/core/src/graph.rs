//! Batch graph: nodes are embeddings, edges join pairs whose centered cosine
//! similarity reaches the threshold.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::{centered_cosine, Matrix};

/// Default similarity threshold.
pub const DEFAULT_GAMMA: f64 = 0.0;

#[derive(Clone, Debug)]
pub struct BatchGraph {
    node_features: Matrix,
    adjacency: Arc<Vec<bool>>,
    neighbors: Vec<Vec<usize>>,
    similarities: Matrix,
    gamma: f64,
}

/// Edge `(i, j)`, `i ≠ j`, exists iff `centered_cosine(v_i, v_j) ≥ gamma`.
/// Every node carries a self-loop.
pub fn build_graph(v: &Matrix, gamma: f64) -> Result<BatchGraph> {
    let n = v.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("graph needs at least one node".into()));
    }
    if v.cols() < 2 {
        return Err(Error::InvalidArgument("graph features need at least 2 dimensions".into()));
    }
    v.ensure_finite("graph node features")?;
    let mut sims = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let s = centered_cosine(v.row(i), v.row(j))?;
            sims.set(i, j, s);
            sims.set(j, i, s);
        }
    }
    let mut adjacency = vec![false; n * n];
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j || sims.get(i, j) >= gamma {
                adjacency[i * n + j] = true;
                neighbors[i].push(j);
            }
        }
    }
    Ok(BatchGraph { node_features: v.clone(), adjacency: Arc::new(adjacency), neighbors, similarities: sims, gamma })
}

impl BatchGraph {
    /// Graph with the given structure and features, bypassing similarity
    /// thresholding. Self-loops are forced and the adjacency is symmetrized.
    pub fn from_adjacency(node_features: Matrix, adjacency: &[bool]) -> Result<Self> {
        let n = node_features.rows();
        if adjacency.len() != n * n {
            return Err(Error::Shape(format!("adjacency of {} entries for {n} nodes", adjacency.len())));
        }
        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                adj[i * n + j] = i == j || adjacency[i * n + j] || adjacency[j * n + i];
            }
        }
        let neighbors = (0..n).map(|i| (0..n).filter(|&j| adj[i * n + j]).collect()).collect();
        Ok(Self {
            node_features,
            adjacency: Arc::new(adj),
            neighbors,
            similarities: Matrix::identity(n),
            gamma: f64::NAN,
        })
    }

    pub fn len(&self) -> usize {
        self.node_features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Row-major adjacency mask
    pub fn mask(&self) -> &Arc<Vec<bool>> {
        &self.adjacency
    }

    /// Pairwise centered cosine similarities.
    pub fn similarities(&self) -> &Matrix {
        &self.similarities
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count()
    }

    /// Adjacency as a text matrix of 0/1.
    pub fn adjacency_text(&self) -> String {
        let n = self.len();
        let mut s = String::with_capacity(n * n * 2);
        for i in 0..n {
            let row: Vec<&str> = (0..n).map(|j| if self.has_edge(i, j) { "1" } else { "0" }).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;

    fn random_features(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn threshold_extremes() {
        let v = random_features(6, 4, 1);
        let full = build_graph(&v, -1.0001).unwrap();
        assert_eq!(full.edge_count(), 36);
        let loops = build_graph(&v, 1.0001).unwrap();
        assert_eq!(loops.edge_count(), 6);
        for i in 0..6 {
            assert_eq!(loops.neighbors(i), &[i]);
        }
    }

    #[test]
    fn two_clusters_split_at_zero() {
        let v = Matrix::from_rows(&[
            [1.0, 0.0, 0.0, 0.0],
            [0.9, 0.1, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.1],
            [0.0, 0.0, 0.9, 0.0],
        ])
        .unwrap();
        let g = build_graph(&v, 0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let oracle = i == j || centered_cosine(v.row(i), v.row(j)).unwrap() >= 0.0;
                assert_eq!(g.has_edge(i, j), oracle, "({i},{j})");
            }
        }
        assert!(g.has_edge(0, 1) && g.has_edge(2, 3));
        assert!(!g.has_edge(0, 2) && !g.has_edge(1, 3));
        assert_eq!(g.adjacency_text(), "1 1 0 0\n1 1 0 0\n0 0 1 1\n0 0 1 1\n");
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(build_graph(&Matrix::zeros(0, 3), 0.0).is_err());
        assert!(build_graph(&Matrix::zeros(3, 1), 0.0).is_err());
    }

    #[test]
    fn from_adjacency_symmetrizes() {
        let g = BatchGraph::from_adjacency(Matrix::zeros(2, 2), &[false, true, false, false]).unwrap();
        assert!(g.has_edge(1, 0) && g.has_edge(0, 0) && g.has_edge(1, 1));
    }

    proptest! {
        #[test]
        fn construction_is_permutation_equivariant(seed in 0u64..1000, gamma in -0.5f64..0.5) {
            let n = 7;
            let v = random_features(n, 5, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            Rng::new(seed + 1).shuffle(&mut perm);
            let g = build_graph(&v, gamma).unwrap();
            let gp = build_graph(&v.select_rows(&perm).unwrap(), gamma).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(gp.has_edge(i, j), g.has_edge(perm[i], perm[j]));
                }
            }
        }

        #[test]
        fn raising_gamma_never_adds_edges(seed in 0u64..1000, lo in -1.0f64..1.0, step in 0.0f64..1.0) {
            let v = random_features(8, 4, seed);
            let a = build_graph(&v, lo).unwrap();
            let b = build_graph(&v, lo + step).unwrap();
            for i in 0..8 {
                prop_assert_eq!(a.neighbors(i).len(), (0..8).filter(|&j| a.has_edge(i, j)).count());
                for j in 0..8 {
                    prop_assert_eq!(a.has_edge(i, j), a.has_edge(j, i));
                    prop_assert!(!b.has_edge(i, j) || a.has_edge(i, j));
                }
            }
        }
    }
}
