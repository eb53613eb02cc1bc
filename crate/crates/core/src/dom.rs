//! DOM-tree data model.
//!
//! A [`DomTree`] is a rooted, ordered tree stored as a flat list of nodes in
//! document order. Every node points at its parent by index and the parent
//! always precedes the child, which makes ancestor walks and bottom-up passes
//! simple index arithmetic.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// One of the five labels stored on page nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Price,
    Name,
    Image,
    Buy,
    Cart,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Price,
        Label::Name,
        Label::Image,
        Label::Buy,
        Label::Cart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Price => "price",
            Label::Name => "name",
            Label::Image => "image",
            Label::Buy => "buy",
            Label::Cart => "cart",
        }
    }

    pub fn class(self) -> ClassId {
        match self {
            Label::Price => ClassId::Price,
            Label::Name => ClassId::Name,
            Label::Image => ClassId::Image,
            Label::Buy => ClassId::Buy,
            Label::Cart => ClassId::Cart,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifier output classes: six positive classes and the negative class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassId {
    Price = 0,
    Name = 1,
    Image = 2,
    Buy = 3,
    Cart = 4,
    Subject = 5,
    Negative = 6,
}

impl ClassId {
    /// Number of classifier outputs.
    pub const COUNT: usize = 7;
    /// Number of positive (nominated) classes.
    pub const POSITIVE_COUNT: usize = 6;

    pub const POSITIVE: [ClassId; 6] = [
        ClassId::Price,
        ClassId::Name,
        ClassId::Image,
        ClassId::Buy,
        ClassId::Cart,
        ClassId::Subject,
    ];

    pub const ALL: [ClassId; 7] = [
        ClassId::Price,
        ClassId::Name,
        ClassId::Image,
        ClassId::Buy,
        ClassId::Cart,
        ClassId::Subject,
        ClassId::Negative,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassId> {
        ClassId::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassId::Price => "price",
            ClassId::Name => "name",
            ClassId::Image => "image",
            ClassId::Buy => "buy",
            ClassId::Cart => "cart",
            ClassId::Subject => "subject",
            ClassId::Negative => "negative",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single DOM element with its rendered style features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub tag: String,
    pub text: Option<String>,
    /// `(x, y, w, h)` in CSS pixels.
    pub bbox: Option<[f64; 4]>,
    pub font_size: Option<f64>,
    pub font_weight: Option<f64>,
    pub visible: Option<bool>,
    pub num_images_subtree: Option<u32>,
    pub label: Option<Label>,
    pub text_embedding: Option<Vec<f64>>,
}

impl DomNode {
    /// A bare node with only structure filled in.
    pub fn new(id: usize, parent: Option<usize>, tag: impl Into<String>) -> Self {
        DomNode {
            id,
            parent,
            tag: tag.into(),
            text: None,
            bbox: None,
            font_size: None,
            font_weight: None,
            visible: None,
            num_images_subtree: None,
            label: None,
            text_embedding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvariantError {
    #[error("page has no nodes")]
    Empty,
    #[error("node at position {position} has id {id}; ids must be dense from 0")]
    NonDenseId { position: usize, id: usize },
    #[error("node {id} has parent {parent}; parents must precede their children")]
    ParentNotBefore { id: usize, parent: usize },
    #[error("node 0 must be the root but has parent {0}")]
    RootHasParent(usize),
    #[error("node {0} has no parent; a page has exactly one root")]
    MultipleRoots(usize),
    #[error("label {label} appears on nodes {first} and {second}")]
    DuplicateLabel {
        label: Label,
        first: usize,
        second: usize,
    },
}

/// A validated page: nodes in document order plus derived structure.
#[derive(Debug, Clone, PartialEq)]
pub struct DomTree {
    page_id: String,
    nodes: Vec<DomNode>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    subject: Option<usize>,
}

impl DomTree {
    /// Validates the structural invariants and derives children lists and the
    /// subject node.
    pub fn new(page_id: impl Into<String>, nodes: Vec<DomNode>) -> Result<Self, InvariantError> {
        if nodes.is_empty() {
            return Err(InvariantError::Empty);
        }
        let mut children = alloc::vec![Vec::new(); nodes.len()];
        let mut depth = alloc::vec![0usize; nodes.len()];
        let mut seen: [Option<usize>; 5] = [None; 5];
        for (position, node) in nodes.iter().enumerate() {
            if node.id != position {
                return Err(InvariantError::NonDenseId {
                    position,
                    id: node.id,
                });
            }
            match node.parent {
                None if position == 0 => {}
                None => return Err(InvariantError::MultipleRoots(position)),
                Some(p) if position == 0 => return Err(InvariantError::RootHasParent(p)),
                Some(p) if p >= position => {
                    return Err(InvariantError::ParentNotBefore {
                        id: position,
                        parent: p,
                    })
                }
                Some(p) => {
                    children[p].push(position);
                    depth[position] = depth[p] + 1;
                }
            }
            if let Some(label) = node.label {
                let slot = &mut seen[label.class().index()];
                if let Some(first) = *slot {
                    return Err(InvariantError::DuplicateLabel {
                        label,
                        first,
                        second: position,
                    });
                }
                *slot = Some(position);
            }
        }
        let mut tree = DomTree {
            page_id: page_id.into(),
            nodes,
            children,
            depth,
            subject: None,
        };
        tree.subject = compute_subject_node(&tree);
        Ok(tree)
    }

    pub fn page_id(&self) -> &str {
        &self.page_id
    }

    pub fn nodes(&self) -> &[DomNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &DomNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn depth(&self, id: usize) -> usize {
        self.depth[id]
    }

    /// The lowest common ancestor of all labeled nodes, if any node is labeled.
    pub fn subject_id(&self) -> Option<usize> {
        self.subject
    }

    /// Node carrying the given stored label.
    pub fn labeled(&self, label: Label) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == Some(label))
    }

    /// Ground-truth node for a positive class (`Subject` is derived).
    pub fn truth(&self, class: ClassId) -> Option<usize> {
        match class {
            ClassId::Price => self.labeled(Label::Price),
            ClassId::Name => self.labeled(Label::Name),
            ClassId::Image => self.labeled(Label::Image),
            ClassId::Buy => self.labeled(Label::Buy),
            ClassId::Cart => self.labeled(Label::Cart),
            ClassId::Subject => self.subject,
            ClassId::Negative => None,
        }
    }

    /// `(node, class)` pairs for every positive class present on the page.
    /// A node may appear twice when the subject coincides with a stored label.
    pub fn labeled_elements(&self, include_subject: bool) -> Vec<(usize, ClassId)> {
        ClassId::POSITIVE
            .iter()
            .filter(|&&c| include_subject || c != ClassId::Subject)
            .filter_map(|&c| self.truth(c).map(|id| (id, c)))
            .collect()
    }

    /// Nodes that carry no label and are not the subject node.
    pub fn unlabeled(&self) -> Vec<usize> {
        let labeled: BTreeSet<usize> = self
            .labeled_elements(true)
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        (0..self.len()).filter(|id| !labeled.contains(id)).collect()
    }

    /// Whether all five stored labels are present.
    pub fn fully_labeled(&self) -> bool {
        Label::ALL.iter().all(|&l| self.labeled(l).is_some())
    }

    pub fn into_nodes(self) -> Vec<DomNode> {
        self.nodes
    }
}

/// Lowest common ancestor of every node carrying a stored label.
///
/// Parents always have smaller ids than their children, so the LCA of two
/// nodes is found by repeatedly lifting whichever of the two has the larger id.
pub fn compute_subject_node(tree: &DomTree) -> Option<usize> {
    tree.nodes
        .iter()
        .filter(|n| n.label.is_some())
        .map(|n| n.id)
        .reduce(|a, b| lca(tree, a, b))
}

fn lca(tree: &DomTree, mut a: usize, mut b: usize) -> usize {
    while a != b {
        if a > b {
            a = tree.nodes[a].parent.expect("non-root node has a parent");
        } else {
            b = tree.nodes[b].parent.expect("non-root node has a parent");
        }
    }
    a
}

/// Summary statistics over a corpus of pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub pages: usize,
    /// Distinct sites, when every page id has the form `site::page`.
    pub sites: Option<usize>,
    pub median_nodes: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Fraction of pages carrying each stored label, in [`Label::ALL`] order.
    pub label_coverage: [f64; 5],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("corpus is empty")]
pub struct EmptyCorpus;

pub fn corpus_stats(pages: &[DomTree]) -> Result<CorpusStats, EmptyCorpus> {
    if pages.is_empty() {
        return Err(EmptyCorpus);
    }
    let mut sizes: Vec<usize> = pages.iter().map(DomTree::len).collect();
    sizes.sort_unstable();
    let mid = sizes.len() / 2;
    let median_nodes = if sizes.len() % 2 == 1 {
        sizes[mid] as f64
    } else {
        (sizes[mid - 1] + sizes[mid]) as f64 / 2.0
    };
    let sites = pages
        .iter()
        .map(|p| p.page_id().split_once("::").map(|(site, _)| site))
        .collect::<Option<BTreeSet<&str>>>()
        .map(|s| s.len());
    let mut label_coverage = [0.0; 5];
    for (slot, label) in label_coverage.iter_mut().zip(Label::ALL) {
        let hits = pages.iter().filter(|p| p.labeled(label).is_some()).count();
        *slot = hits as f64 / pages.len() as f64;
    }
    Ok(CorpusStats {
        pages: pages.len(),
        sites,
        median_nodes,
        min_nodes: sizes[0],
        max_nodes: sizes[sizes.len() - 1],
        label_coverage,
    })
}
