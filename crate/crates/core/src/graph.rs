//! Undirected simple graphs and their structural metrics.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

/// Immutable undirected graph with discrete node labels and an optional
/// binary class label.
///
/// Edges are stored once as `(lo, hi)` with `lo < hi`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    node_labels: Vec<usize>,
    class_label: Option<u8>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an unordered edge list.
    ///
    /// `(i, j)` and `(j, i)` collapse to one edge. Self-loops and
    /// out-of-range endpoints are rejected.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_labels: Vec<usize>,
        class_label: Option<u8>,
    ) -> Result<Self> {
        if node_labels.len() != node_count {
            return Err(Error::InvalidArgument(format!(
                "{} node labels for {node_count} nodes",
                node_labels.len()
            )));
        }
        if let Some(c) = class_label {
            if c > 1 {
                return Err(Error::InvalidArgument(format!("class label {c} not in {{0,1}}")));
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a},{b}) out of range for {node_count} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        Ok(Self::assemble(node_count, edges, node_labels, class_label))
    }

    /// Graph with `node_count` nodes, all labelled 0, and no class label.
    pub fn unlabeled(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(node_count, edges, vec![0; node_count], None)
    }

    fn assemble(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        node_labels: Vec<usize>,
        class_label: Option<u8>,
    ) -> Self {
        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Self {
            node_count,
            edges,
            node_labels,
            class_label,
            neighbors,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_labels(&self) -> &[usize] {
        &self.node_labels
    }

    pub fn class_label(&self) -> Option<u8> {
        self.class_label
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn with_class_label(&self, class_label: Option<u8>) -> Graph {
        Self::assemble(
            self.node_count,
            self.edges.clone(),
            self.node_labels.clone(),
            class_label,
        )
    }

    pub fn with_node_labels(&self, node_labels: Vec<usize>) -> Result<Graph> {
        Graph::new(self.node_count, self.edges.iter().copied(), node_labels, self.class_label)
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.node_count {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let mut labels = vec![0; self.node_count];
        for (v, &p) in perm.iter().enumerate() {
            labels[p] = self.node_labels[v];
        }
        Graph::new(
            self.node_count,
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])),
            labels,
            self.class_label,
        )
    }

    /// `2|E| / (|V|(|V|-1))`, or 0 when fewer than two nodes.
    pub fn edge_density(&self) -> f64 {
        let n = self.node_count as f64;
        if self.node_count < 2 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / (n * (n - 1.0))
        }
    }

    pub fn average_degree(&self) -> f64 {
        if self.node_count == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.node_count as f64
        }
    }

    /// Connected components found by breadth-first traversal.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.node_count];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &u in &self.neighbors[v] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralProfile {
    pub cyclomatic: usize,
    pub edge_density: f64,
    pub component_count: usize,
}

/// Combinatorial Laplacian `L = D - A`.
pub fn laplacian(g: &Graph) -> Matrix {
    let n = g.node_count();
    let mut l = Matrix::zeros(n, n);
    for v in 0..n {
        l[(v, v)] = g.degree(v) as f64;
    }
    for &(a, b) in g.edges() {
        l[(a, b)] = -1.0;
        l[(b, a)] = -1.0;
    }
    l
}

/// Symmetric normalized Laplacian `I - D^{-1/2} A D^{-1/2}`.
///
/// Isolated nodes keep an identity row and column.
pub fn normalized_laplacian(g: &Graph) -> Matrix {
    let n = g.node_count();
    let mut l = Matrix::identity(n);
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| match g.degree(v) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    for &(a, b) in g.edges() {
        let w = -inv_sqrt[a] * inv_sqrt[b];
        l[(a, b)] = w;
        l[(b, a)] = w;
    }
    l
}

pub fn structural_profile(g: &Graph) -> StructuralProfile {
    let component_count = g.component_count();
    // |E| - |V| + c is never negative for a simple graph
    let cyclomatic = g.edge_count() + component_count - g.node_count();
    StructuralProfile {
        cyclomatic,
        edge_density: g.edge_density(),
        component_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::unlabeled(3, [(0, 1), (1, 2)]).unwrap()
    }

    fn triangle() -> Graph {
        Graph::unlabeled(3, [(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn laplacian_of_path() {
        let l = laplacian(&path3());
        let want = Matrix::from_rows(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(l, want);
    }

    #[test]
    fn laplacian_of_isolated_node() {
        let g = Graph::unlabeled(1, []).unwrap();
        assert_eq!(laplacian(&g), Matrix::zeros(1, 1));
    }

    #[test]
    fn laplacian_of_triangle() {
        let l = laplacian(&triangle());
        for i in 0..3 {
            assert_eq!(l[(i, i)], 2.0);
            assert_eq!(l.row(i).iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn normalized_laplacian_k2_and_isolated() {
        let k2 = Graph::unlabeled(2, [(0, 1)]).unwrap();
        let l = normalized_laplacian(&k2);
        assert_eq!(l, Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap());

        let g = Graph::unlabeled(3, [(0, 1)]).unwrap();
        let l = normalized_laplacian(&g);
        assert_eq!(l.row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(l[(0, 2)], 0.0);
    }

    #[test]
    fn duplicate_and_reversed_edges_merge() {
        let g = Graph::unlabeled(3, [(0, 1), (1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn invalid_graphs_rejected() {
        assert!(Graph::unlabeled(2, [(0, 2)]).is_err());
        assert!(Graph::unlabeled(2, [(1, 1)]).is_err());
        assert!(Graph::new(2, [], vec![0], None).is_err());
        assert!(Graph::new(1, [], vec![0], Some(2)).is_err());
    }

    #[test]
    fn cyclomatic_numbers() {
        let tree = Graph::unlabeled(5, [(0, 1), (0, 2), (2, 3), (2, 4)]).unwrap();
        assert_eq!(structural_profile(&tree).cyclomatic, 0);
        assert_eq!(structural_profile(&triangle()).cyclomatic, 1);
        let two = Graph::unlabeled(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]).unwrap();
        let p = structural_profile(&two);
        assert_eq!((p.cyclomatic, p.component_count), (2, 2));
    }

    #[test]
    fn density_conventions() {
        assert_eq!(Graph::unlabeled(1, []).unwrap().edge_density(), 0.0);
        assert_eq!(Graph::unlabeled(0, []).unwrap().edge_density(), 0.0);
        assert_eq!(triangle().edge_density(), 1.0);
        assert!((path3().edge_density() - 2.0 / 3.0).abs() < 1e-15);
    }
}
