//! Featurized page structure shared by all embedders.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dom::DomTree;
use crate::features::{featurize, FeatureConfig, FeatureError};
use crate::tensor::Tensor;

/// Which nodes count as the neighborhood of `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodMode {
    #[default]
    ParentAndChildren,
    ChildrenOnly,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("expected {expected} feature rows, got {found}")]
    RowCount { expected: usize, found: usize },
    #[error("node {id} has parent {parent}; parents must precede their children")]
    BadParent { id: usize, parent: usize },
    #[error("node {0} is a second root")]
    MultipleRoots(usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Tree structure plus the `n × D` feature matrix of one page.
#[derive(Debug, Clone)]
pub struct PageGraph {
    features: Tensor,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    by_depth: Vec<Vec<usize>>,
    by_height: Vec<Vec<usize>>,
}

impl PageGraph {
    pub fn from_tree(tree: &DomTree, cfg: &FeatureConfig) -> Result<Self, GraphError> {
        let rows = tree
            .nodes()
            .iter()
            .map(|n| featurize(n, cfg).map(|f| f.0))
            .collect::<Result<Vec<_>, _>>()?;
        let features = Tensor::from_rows(&rows).expect("featurize yields equal lengths");
        let parents = tree.nodes().iter().map(|n| n.parent).collect();
        PageGraph::from_parts(parents, features)
    }

    /// Builds a graph from parent indices and precomputed feature rows.
    pub fn from_parts(parent: Vec<Option<usize>>, features: Tensor) -> Result<Self, GraphError> {
        let n = parent.len();
        if features.rows() != n {
            return Err(GraphError::RowCount {
                expected: n,
                found: features.rows(),
            });
        }
        let mut children = vec![Vec::new(); n];
        let mut depth = vec![0usize; n];
        for (id, p) in parent.iter().enumerate() {
            match *p {
                Some(p) if p >= id => return Err(GraphError::BadParent { id, parent: p }),
                Some(p) => {
                    children[p].push(id);
                    depth[id] = depth[p] + 1;
                }
                None if id > 0 => return Err(GraphError::MultipleRoots(id)),
                None => {}
            }
        }
        let mut height = vec![0usize; n];
        for id in (0..n).rev() {
            if let Some(p) = parent[id] {
                height[p] = height[p].max(height[id] + 1);
            }
        }
        let levels = |key: &[usize]| {
            let count = key.iter().max().map_or(0, |m| m + 1);
            let mut out = vec![Vec::new(); count];
            for (id, &k) in key.iter().enumerate() {
                out[k].push(id);
            }
            out
        };
        let by_depth = levels(&depth);
        let by_height = levels(&height);
        Ok(PageGraph {
            features,
            parent,
            children,
            by_depth,
            by_height,
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// Nodes grouped by distance from the root, each group in document order.
    pub fn by_depth(&self) -> &[Vec<usize>] {
        &self.by_depth
    }

    /// Nodes grouped by height (leaves first), each group in document order.
    pub fn by_height(&self) -> &[Vec<usize>] {
        &self.by_height
    }

    /// Neighbors of `v` in ascending id order: the parent (if any) then
    /// children. The order does not depend on how children are listed.
    pub fn neighborhood(&self, v: usize, mode: NeighborhoodMode) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.children[v].len() + 1);
        if mode == NeighborhoodMode::ParentAndChildren {
            out.extend(self.parent[v]);
        }
        let start = out.len();
        out.extend_from_slice(&self.children[v]);
        out[start..].sort_unstable();
        out
    }

    /// The path from the root down to `v`, inclusive.
    pub fn root_path(&self, v: usize) -> Vec<usize> {
        let mut path = vec![v];
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// `v` and all its descendants.
    pub fn subtree(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            out.push(u);
            stack.extend(self.children[u].iter().rev());
        }
        out
    }

    /// Replaces the children order of `v`. Used to check order invariance.
    pub fn with_children_order(mut self, v: usize, order: Vec<usize>) -> Self {
        debug_assert_eq!(
            {
                let mut a = order.clone();
                a.sort_unstable();
                a
            },
            {
                let mut b = self.children[v].clone();
                b.sort_unstable();
                b
            }
        );
        self.children[v] = order;
        self
    }

    /// Copy with different feature rows for the same structure.
    pub fn with_features(&self, features: Tensor) -> Result<Self, GraphError> {
        if features.rows() != self.len() {
            return Err(GraphError::RowCount {
                expected: self.len(),
                found: features.rows(),
            });
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }
}

/// A validated page together with its featurized graph.
#[derive(Debug, Clone)]
pub struct Page {
    tree: DomTree,
    graph: PageGraph,
}

impl Page {
    pub fn new(tree: DomTree, cfg: &FeatureConfig) -> Result<Self, GraphError> {
        let graph = PageGraph::from_tree(&tree, cfg)?;
        Ok(Page { tree, graph })
    }

    /// Pairs a tree with a prebuilt graph of the same size.
    pub fn from_parts(tree: DomTree, graph: PageGraph) -> Result<Self, GraphError> {
        if tree.len() != graph.len() {
            return Err(GraphError::RowCount {
                expected: tree.len(),
                found: graph.len(),
            });
        }
        Ok(Page { tree, graph })
    }

    pub fn tree(&self) -> &DomTree {
        &self.tree
    }

    pub fn graph(&self) -> &PageGraph {
        &self.graph
    }

    pub fn id(&self) -> &str {
        self.tree.page_id()
    }
}
