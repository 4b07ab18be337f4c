//! The frame relation graph and content-based candidate filtering.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media_io::EmbeddingSet;

pub const DEFAULT_NODE_CAP: usize = 5000;

/// What the edge-weight sum is divided by when computing `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaDivisor {
    /// Mean over the `n(n-1)/2` distinct edges.
    #[default]
    EdgeCount,
    /// Edge-weight sum over the node count.
    NodeCount,
}

/// Complete weighted graph over frames with a dense symmetric weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Srg {
    n: usize,
    weights: Vec<f64>,
    eta: f64,
}

impl Srg {
    /// Builds a graph from a full `n x n` matrix. The matrix must be exactly
    /// symmetric with a zero diagonal and non-negative finite entries.
    pub fn from_weights(n: usize, weights: Vec<f64>, divisor: EtaDivisor) -> Result<Self> {
        if n < 2 {
            return Err(Error::EmptyEmbeddings);
        }
        if weights.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{n}-node graph needs {} weights, got {}",
                n * n,
                weights.len()
            )));
        }
        for i in 0..n {
            if weights[i * n + i] != 0.0 {
                return Err(Error::BadParams(format!("non-zero self weight at node {i}")));
            }
            for j in i + 1..n {
                let w = weights[i * n + j];
                if !w.is_finite() {
                    return Err(Error::NonFiniteValues);
                }
                if w < 0.0 || w != weights[j * n + i] {
                    return Err(Error::BadParams(format!(
                        "weights must be symmetric and non-negative at ({i}, {j})"
                    )));
                }
            }
        }
        let mut g = Self { n, weights, eta: 0.0 };
        g.eta = mean_edge_weight_with(&g, divisor);
        Ok(g)
    }

    /// Replaces the content threshold.
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        Ok(())
    }

    pub fn export(&self) -> GraphExport {
        let mut upper = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 0..self.n {
            upper.extend_from_slice(&self.row(i)[i + 1..]);
        }
        GraphExport {
            nodes: self.n,
            eta: self.eta,
            upper_triangle: upper,
        }
    }

    pub fn from_export(export: &GraphExport) -> Result<Self> {
        let n = export.nodes;
        if n < 2 || export.upper_triangle.len() != n * (n - 1) / 2 {
            return Err(Error::DimensionMismatch(format!(
                "{n}-node graph export with {} edge weights",
                export.upper_triangle.len()
            )));
        }
        let mut weights = vec![0.0; n * n];
        let mut it = export.upper_triangle.iter();
        for i in 0..n {
            for j in i + 1..n {
                let w = *it.next().expect("length checked");
                weights[i * n + j] = w;
                weights[j * n + i] = w;
            }
        }
        Ok(Self::from_weights(n, weights, EtaDivisor::EdgeCount)?.with_eta(export.eta))
    }
}

/// Serialized graph: node count, threshold, and the row-major upper
/// triangle without the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: usize,
    pub eta: f64,
    pub upper_triangle: Vec<f64>,
}

pub fn build_graph(embeddings: &EmbeddingSet) -> Result<Srg> {
    build_graph_with(embeddings, EtaDivisor::default(), DEFAULT_NODE_CAP)
}

/// Pairwise Euclidean distances between embedding rows.
pub fn build_graph_with(embeddings: &EmbeddingSet, divisor: EtaDivisor, cap: usize) -> Result<Srg> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::EmptyEmbeddings);
    }
    if n > cap {
        return Err(Error::GraphTooLarge { n, cap });
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = embeddings.row(i);
            (i + 1..n)
                .map(|j| {
                    a.iter()
                        .zip(embeddings.row(j))
                        .map(|(&x, &y)| {
                            let d = x as f64 - y as f64;
                            d * d
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    let mut weights = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (k, &w) in row.iter().enumerate() {
            let j = i + 1 + k;
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
    }
    Srg::from_weights(n, weights, divisor)
}

/// Mean over the distinct edges.
pub fn mean_edge_weight(g: &Srg) -> f64 {
    mean_edge_weight_with(g, EtaDivisor::EdgeCount)
}

pub fn mean_edge_weight_with(g: &Srg, divisor: EtaDivisor) -> f64 {
    let n = g.n;
    let sum: f64 = (0..n).map(|i| g.row(i)[i + 1..].iter().sum::<f64>()).sum();
    match divisor {
        EtaDivisor::EdgeCount => sum / (n * (n - 1) / 2) as f64,
        EtaDivisor::NodeCount => sum / n as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    S1,
    S2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Ascending node indices.
    pub nodes: Vec<usize>,
    pub layer: Layer,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Unvisited nodes whose edge to `current` is strictly below `eta`.
pub fn content_candidates(g: &Srg, current: usize, visited: &HashSet<usize>) -> Result<CandidateSet> {
    g.check_node(current)?;
    if (0..g.n).all(|j| j == current || visited.contains(&j)) {
        return Err(Error::AllVisited);
    }
    let nodes = (0..g.n)
        .filter(|&j| j != current && !visited.contains(&j) && g.weight(current, j) < g.eta)
        .collect();
    Ok(CandidateSet {
        nodes,
        layer: Layer::S1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_io::TAG_EXTERNAL;

    fn three_node(a: f64, b: f64, c: f64) -> Srg {
        Srg::from_weights(3, vec![0.0, a, b, a, 0.0, c, b, c, 0.0], EtaDivisor::EdgeCount).unwrap()
    }

    #[test]
    fn identical_embeddings() {
        let set = EmbeddingSet::new(2, 3, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0], TAG_EXTERNAL).unwrap();
        let g = build_graph(&set).unwrap();
        assert_eq!(g.weight(0, 1), 0.0);
        assert_eq!(g.eta(), 0.0);
    }

    #[test]
    fn eta_is_edge_mean() {
        assert_eq!(three_node(1.0, 2.0, 3.0).eta(), 2.0);
        assert_eq!(three_node(0.0, 4.0, 8.0).eta(), 4.0);
        let g = three_node(1.0, 2.0, 3.0);
        assert_eq!(mean_edge_weight_with(&g, EtaDivisor::NodeCount), 2.0);
        let g4 = Srg::from_weights(
            4,
            vec![0., 1., 1., 1., 1., 0., 1., 1., 1., 1., 0., 1., 1., 1., 1., 0.],
            EtaDivisor::NodeCount,
        )
        .unwrap();
        assert_eq!(g4.eta(), 1.5);
    }

    #[test]
    fn single_embedding_is_rejected() {
        let set = EmbeddingSet::new(1, 2, vec![0.0, 1.0], TAG_EXTERNAL).unwrap();
        assert!(matches!(build_graph(&set), Err(Error::EmptyEmbeddings)));
    }

    #[test]
    fn node_cap() {
        let set = EmbeddingSet::new(4, 1, vec![0.0, 1.0, 2.0, 3.0], TAG_EXTERNAL).unwrap();
        assert!(matches!(
            build_graph_with(&set, EtaDivisor::EdgeCount, 3),
            Err(Error::GraphTooLarge { n: 4, cap: 3 })
        ));
    }

    #[test]
    fn boundary_equal_to_eta_is_excluded() {
        let g = three_node(2.0, 2.0, 2.0);
        let s1 = content_candidates(&g, 0, &HashSet::new()).unwrap();
        assert!(s1.is_empty());
    }

    #[test]
    fn star_graph_candidates() {
        // Node 0 has edges {1, 1, 4}; other edges are set so eta = 2.
        let w = vec![
            0.0, 1.0, 1.0, 4.0, //
            1.0, 0.0, 2.0, 2.0, //
            1.0, 2.0, 0.0, 2.0, //
            4.0, 2.0, 2.0, 0.0,
        ];
        let g = Srg::from_weights(4, w, EtaDivisor::EdgeCount).unwrap();
        assert_eq!(g.eta(), 2.0);
        let s1 = content_candidates(&g, 0, &HashSet::new()).unwrap();
        assert_eq!(s1.nodes, vec![1, 2]);
        let s1 = content_candidates(&g, 0, &HashSet::from([1])).unwrap();
        assert_eq!(s1.nodes, vec![2]);
    }

    #[test]
    fn all_visited() {
        let g = three_node(1.0, 2.0, 3.0);
        assert!(matches!(
            content_candidates(&g, 0, &HashSet::from([1, 2])),
            Err(Error::AllVisited)
        ));
    }

    #[test]
    fn export_round_trip() {
        let g = three_node(0.5, 1.5, 2.5);
        let e = g.export();
        assert_eq!(e.upper_triangle, vec![0.5, 1.5, 2.5]);
        let back = Srg::from_export(&e).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let w = vec![0.0, 1.0, 2.0, 0.0];
        assert!(Srg::from_weights(2, w, EtaDivisor::EdgeCount).is_err());
    }
}
