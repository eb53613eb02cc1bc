//! Seeded generator of synthetic product pages with planted labels.
//!
//! Each page is a random tree of filler elements into which three kinds of
//! blocks are grafted at random positions:
//!
//! * the subject container, whose direct children hold the five labeled
//!   elements (each optionally under a wrapper `div`), so the container is
//!   the lowest common ancestor of the labels;
//! * confounder containers that look exactly like the subject container
//!   locally, each holding one thumbnail image and a few text spans;
//! * distractors per class, drawn from the class profile and then moved and
//!   shrunk.
//!
//! Nodes are finally renumbered in document (preorder) order.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::dom::{ClassId, DomNode, DomTree, Label};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_pages: usize,
    /// Node counts are drawn uniformly from `min_nodes..=max_nodes`.
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Mean of the geometric child-count distribution of filler elements.
    pub branching_mean: f64,
    /// Near-duplicates generated per stored label.
    pub distractors_per_class: usize,
    /// Copy the subject container's local features onto the confounders.
    pub context_only_subject: bool,
    /// Containers that share the subject container's local features.
    pub subject_confounders: usize,
    /// Length of the class-conditional text embeddings; 0 disables them.
    pub text_dim: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_pages: 100,
            min_nodes: 60,
            max_nodes: 300,
            branching_mean: 3.0,
            distractors_per_class: 3,
            context_only_subject: true,
            subject_confounders: 3,
            text_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid generator config: {0}")]
    Invalid(String),
}

/// Most nodes a subject container block can take.
const SUBJECT_BLOCK_MAX: usize = 1 + 2 * 5 + 2;
/// Most nodes a confounder block can take.
const CONFOUNDER_BLOCK_MAX: usize = 2 + 3;

impl GenConfig {
    /// Upper bound on the non-filler nodes of a page, plus `html` and `body`.
    fn fixed_nodes(&self) -> usize {
        2 + SUBJECT_BLOCK_MAX
            + self.subject_confounders * CONFOUNDER_BLOCK_MAX
            + 5 * self.distractors_per_class
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.min_nodes > self.max_nodes {
            return bad(format!(
                "min_nodes {} exceeds max_nodes {}",
                self.min_nodes, self.max_nodes
            ));
        }
        if !(self.branching_mean.is_finite() && self.branching_mean > 0.0) {
            return bad(format!(
                "branching mean must be positive, got {}",
                self.branching_mean
            ));
        }
        if self.fixed_nodes() + 1 > self.max_nodes {
            return bad(format!(
                "max_nodes {} cannot fit the {} planted nodes",
                self.max_nodes,
                self.fixed_nodes()
            ));
        }
        Ok(())
    }
}

/// Page id of the `index`-th generated page.
pub fn page_id(seed: u64, index: usize) -> String {
    format!("synth-{seed}-{index:05}")
}

#[derive(Debug, Clone)]
struct Proto {
    tag: &'static str,
    children: Vec<usize>,
    text: Option<String>,
    bbox: [f64; 4],
    font_size: f64,
    font_weight: f64,
    visible: bool,
    label: Option<Label>,
    /// Class whose text-embedding mean this node draws from.
    topic: Option<ClassId>,
}

impl Proto {
    fn new(tag: &'static str, bbox: [f64; 4]) -> Self {
        Proto {
            tag,
            children: Vec::new(),
            text: None,
            bbox,
            font_size: 14.0,
            font_weight: 400.0,
            visible: true,
            label: None,
            topic: None,
        }
    }
}

const FILLER_TAGS: [&str; 14] = [
    "div", "div", "div", "span", "span", "a", "p", "li", "ul", "section", "img", "i", "h3", "input",
];
const CONTAINER_TAGS: [&str; 6] = ["div", "ul", "li", "section", "body", "p"];
const LEAF_TAGS: [&str; 3] = ["img", "input", "i"];

fn range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn filler(rng: &mut ChaCha8Rng) -> Proto {
    let tag = *FILLER_TAGS.choose(rng).expect("non-empty");
    let bbox = [
        range(rng, 0.0, 300.0),
        range(rng, 0.0, 3000.0),
        range(rng, 20.0, 375.0),
        range(rng, 10.0, 400.0),
    ];
    let mut p = Proto::new(tag, bbox);
    p.font_size = range(rng, 12.0, 16.0);
    p.visible = rng.random_bool(0.9);
    if !LEAF_TAGS.contains(&tag) && rng.random_bool(0.5) {
        p.text = Some(format!("item {}", rng.random_range(0..1000)));
    }
    p
}

/// Local features of the labeled element of `label`.
fn label_profile(rng: &mut ChaCha8Rng, label: Label) -> Proto {
    let mut p = match label {
        Label::Price => {
            let mut p = Proto::new(
                "span",
                [
                    range(rng, 16.0, 120.0),
                    range(rng, 300.0, 360.0),
                    range(rng, 60.0, 100.0),
                    range(rng, 24.0, 30.0),
                ],
            );
            p.font_size = range(rng, 18.0, 22.0);
            p.font_weight = 700.0;
            p.text = Some(format!(
                "${}.{:02}",
                rng.random_range(5..500),
                rng.random_range(0..100)
            ));
            p
        }
        Label::Name => {
            let mut p = Proto::new(
                "h1",
                [
                    16.0,
                    range(rng, 250.0, 290.0),
                    range(rng, 300.0, 343.0),
                    range(rng, 28.0, 60.0),
                ],
            );
            p.font_size = range(rng, 20.0, 26.0);
            p.font_weight = 600.0;
            p.text = Some(format!("Product {}", rng.random_range(0..10_000)));
            p
        }
        Label::Image => Proto::new(
            "img",
            [
                range(rng, 0.0, 20.0),
                range(rng, 60.0, 100.0),
                range(rng, 335.0, 375.0),
                range(rng, 150.0, 180.0),
            ],
        ),
        Label::Buy => {
            let mut p = Proto::new(
                "button",
                [
                    16.0,
                    range(rng, 380.0, 420.0),
                    range(rng, 300.0, 343.0),
                    range(rng, 44.0, 52.0),
                ],
            );
            p.font_size = 16.0;
            p.font_weight = 600.0;
            p.text = Some(String::from("Add to bag"));
            p
        }
        Label::Cart => Proto::new(
            "a",
            [
                range(rng, 320.0, 350.0),
                range(rng, 8.0, 20.0),
                range(rng, 24.0, 32.0),
                range(rng, 24.0, 32.0),
            ],
        ),
    };
    p.topic = Some(label.class());
    p
}

/// A near-duplicate of `label`'s profile, displaced and shrunk.
fn distractor(rng: &mut ChaCha8Rng, label: Label) -> Proto {
    let mut p = label_profile(rng, label);
    let [x, y, w, h] = p.bbox;
    let shrink = range(rng, 0.7, 0.95);
    p.bbox = [
        x + range(rng, 0.0, 150.0) * (1.0 - shrink),
        y + range(rng, 60.0, 600.0),
        w * shrink,
        h * shrink,
    ];
    if label == Label::Cart {
        // other header icons sit on the left
        p.bbox[0] = range(rng, 8.0, 60.0);
        p.bbox[1] = y;
    }
    p
}

struct Arena {
    nodes: Vec<Proto>,
}

impl Arena {
    fn push(&mut self, parent: Option<usize>, node: Proto, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(node);
        if let Some(p) = parent {
            let kids = &mut self.nodes[p].children;
            let at = rng.random_range(0..=kids.len());
            kids.insert(at, id);
        }
        id
    }

    fn preorder(&self, root: usize) -> Vec<(usize, Option<usize>)> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(root, None)];
        while let Some((v, parent)) = stack.pop() {
            let new_id = out.len();
            out.push((v, parent));
            for &c in self.nodes[v].children.iter().rev() {
                stack.push((c, Some(new_id)));
            }
        }
        out
    }

    fn images_below(&self, v: usize, memo: &mut [Option<u32>]) -> u32 {
        if let Some(n) = memo[v] {
            return n;
        }
        let own = u32::from(self.nodes[v].tag == "img");
        let n = own
            + self.nodes[v]
                .children
                .clone()
                .into_iter()
                .map(|c| self.images_below(c, memo))
                .sum::<u32>();
        memo[v] = Some(n);
        n
    }
}

/// Copies the local style of `from` onto `to`.
fn copy_local(arena: &mut Arena, from: usize, to: usize) {
    let src = arena.nodes[from].clone();
    let dst = &mut arena.nodes[to];
    dst.tag = src.tag;
    dst.text = src.text;
    dst.bbox = src.bbox;
    dst.font_size = src.font_size;
    dst.font_weight = src.font_weight;
    dst.visible = src.visible;
    dst.topic = src.topic;
}

fn container_profile(rng: &mut ChaCha8Rng) -> Proto {
    Proto::new(
        "div",
        [
            0.0,
            range(rng, 40.0, 500.0),
            375.0,
            range(rng, 300.0, 700.0),
        ],
    )
}

fn text_span(rng: &mut ChaCha8Rng) -> Proto {
    let mut p = filler(rng);
    p.tag = "span";
    p.text = Some(format!("detail {}", rng.random_range(0..1000)));
    p
}

/// Per-class text-embedding means shared by every page of a corpus.
fn topic_means(cfg: &GenConfig) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(cfg.seed, rng::STREAM_PAGE, u64::MAX);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    (0..ClassId::COUNT)
        .map(|_| (0..cfg.text_dim).map(|_| normal.sample(&mut rng)).collect())
        .collect()
}

/// Generates page `index` of the corpus described by `cfg`.
pub fn generate_page(cfg: &GenConfig, index: usize) -> Result<DomTree, ConfigError> {
    cfg.validate()?;
    let means = topic_means(cfg);
    Ok(build_page(cfg, index, &means))
}

fn build_page(cfg: &GenConfig, index: usize, means: &[Vec<f64>]) -> DomTree {
    let mut rng = rng::stream(cfg.seed, rng::STREAM_PAGE, index as u64);
    let lo = cfg.min_nodes.max(cfg.fixed_nodes() + 1);
    let target = rng.random_range(lo..=cfg.max_nodes.max(lo));
    let mut arena = Arena {
        nodes: Vec::with_capacity(target),
    };

    let html = arena.push(
        None,
        Proto::new("html", [0.0, 0.0, 375.0, 3000.0]),
        &mut rng,
    );
    let body = arena.push(
        Some(html),
        Proto::new("body", [0.0, 0.0, 375.0, 3000.0]),
        &mut rng,
    );

    // planted blocks are built first so the filler budget is known
    let mut blocks: Vec<Vec<(Option<usize>, Proto)>> = Vec::new();
    let subject_style = container_profile(&mut rng);
    let mut subject: Vec<(Option<usize>, Proto)> = vec![(None, subject_style.clone())];
    for label in Label::ALL {
        let node = label_profile(&mut rng, label);
        let mut node = node;
        node.label = Some(label);
        if rng.random_bool(0.5) {
            let mut wrapper = filler(&mut rng);
            wrapper.tag = "div";
            wrapper.text = None;
            subject.push((Some(0), wrapper));
            let w = subject.len() - 1;
            subject.push((Some(w), node));
        } else {
            subject.push((Some(0), node));
        }
    }
    for _ in 0..rng.random_range(0..=2) {
        subject.push((Some(0), text_span(&mut rng)));
    }
    blocks.push(subject);

    for _ in 0..cfg.subject_confounders {
        let style = if cfg.context_only_subject {
            subject_style.clone()
        } else {
            container_profile(&mut rng)
        };
        let mut block = vec![(None, style)];
        let thumb = Proto::new(
            "img",
            [
                range(&mut rng, 0.0, 200.0),
                range(&mut rng, 0.0, 3000.0),
                range(&mut rng, 60.0, 100.0),
                range(&mut rng, 60.0, 100.0),
            ],
        );
        block.push((Some(0), thumb));
        for _ in 0..rng.random_range(1..=3) {
            block.push((Some(0), text_span(&mut rng)));
        }
        blocks.push(block);
    }
    for label in Label::ALL {
        for _ in 0..cfg.distractors_per_class {
            blocks.push(vec![(None, distractor(&mut rng, label))]);
        }
    }
    if !cfg.context_only_subject {
        // the subject gets a style of its own
        blocks[0][0].1 = container_profile(&mut rng);
    }

    let planted: usize = blocks.iter().map(Vec::len).sum();
    let fill = target.saturating_sub(planted + 2).max(1);

    // filler tree grown breadth-first under body
    let p = 1.0 / (1.0 + cfg.branching_mean);
    let geo = Geometric::new(p).expect("valid probability");
    let mut fillers = vec![body];
    let mut frontier = VecDeque::from([body]);
    let mut made = 0;
    while made < fill {
        let (parent, k) = match frontier.pop_front() {
            Some(v) => (v, geo.sample(&mut rng) as usize),
            None => {
                let open: Vec<usize> = fillers
                    .iter()
                    .copied()
                    .filter(|&v| !LEAF_TAGS.contains(&arena.nodes[v].tag))
                    .collect();
                (*open.choose(&mut rng).expect("body is open"), 1)
            }
        };
        if LEAF_TAGS.contains(&arena.nodes[parent].tag) {
            continue;
        }
        for _ in 0..k.min(fill - made) {
            let node = filler(&mut rng);
            let id = arena.push(Some(parent), node, &mut rng);
            fillers.push(id);
            frontier.push_back(id);
            made += 1;
        }
    }

    let hosts: Vec<usize> = fillers
        .iter()
        .copied()
        .filter(|&v| CONTAINER_TAGS.contains(&arena.nodes[v].tag))
        .collect();
    let mut subject_id = 0;
    let mut confounders = Vec::new();
    for (b, block) in blocks.into_iter().enumerate() {
        let host = *hosts.choose(&mut rng).expect("body hosts");
        let mut ids: Vec<usize> = Vec::with_capacity(block.len());
        for (parent, node) in block {
            let parent = parent.map_or(host, |i| ids[i]);
            ids.push(arena.push(Some(parent), node, &mut rng));
        }
        if b == 0 {
            subject_id = ids[0];
        } else if b <= cfg.subject_confounders {
            confounders.push(ids[0]);
        }
    }
    if cfg.context_only_subject {
        if let Some(&source) = confounders.choose(&mut rng) {
            copy_local(&mut arena, source, subject_id);
        }
    }

    let mut memo = vec![None; arena.nodes.len()];
    let images: Vec<u32> = (0..arena.nodes.len())
        .map(|v| arena.images_below(v, &mut memo))
        .collect();
    let normal = Normal::new(0.0, 0.5).expect("valid");
    let nodes: Vec<DomNode> = arena
        .preorder(html)
        .into_iter()
        .enumerate()
        .map(|(id, (v, parent))| {
            let p = &arena.nodes[v];
            let mut n = DomNode::new(id, parent, p.tag);
            n.text = p.text.clone();
            n.bbox = Some(p.bbox);
            n.font_size = Some(p.font_size);
            n.font_weight = Some(p.font_weight);
            n.visible = Some(p.visible);
            n.num_images_subtree = Some(images[v]);
            n.label = p.label;
            if cfg.text_dim > 0 && p.text.is_some() {
                let mean = &means[p.topic.unwrap_or(ClassId::Negative).index()];
                n.text_embedding = Some(mean.iter().map(|m| m + normal.sample(&mut rng)).collect());
            }
            n
        })
        .collect();
    DomTree::new(page_id(cfg.seed, index), nodes).expect("generator emits valid trees")
}

/// Generates all `cfg.n_pages` pages.
pub fn generate_pages(cfg: &GenConfig) -> Result<Vec<DomTree>, ConfigError> {
    cfg.validate()?;
    let means = topic_means(cfg);
    Ok((0..cfg.n_pages)
        .map(|i| build_page(cfg, i, &means))
        .collect())
}

/// Page indices of an 80/10/10 train/validation/test split (sizes rounded
/// down for train and validation).
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let train = n * 8 / 10;
    let val = n / 10;
    (
        (0..train).collect(),
        (train..train + val).collect(),
        (train + val..n).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dom::corpus_stats;
    use crate::features::{featurize, FeatureConfig};

    #[test]
    fn pages_are_fully_labeled_with_planted_subject() {
        let cfg = GenConfig {
            n_pages: 20,
            ..GenConfig::default()
        };
        for t in generate_pages(&cfg).unwrap() {
            assert!(t.fully_labeled());
            let s = t.subject_id().unwrap();
            assert_eq!(t.node(s).tag, "div");
            for l in Label::ALL {
                let mut v = t.labeled(l).unwrap();
                while t.parent(v) != Some(s) {
                    v = t.parent(v).unwrap();
                }
            }
            assert!((cfg.min_nodes..=cfg.max_nodes).contains(&t.len()));
        }
    }

    #[test]
    fn subject_has_feature_twins() {
        let cfg = GenConfig {
            n_pages: 10,
            ..GenConfig::default()
        };
        let fc = FeatureConfig::default();
        for t in generate_pages(&cfg).unwrap() {
            let s = t.subject_id().unwrap();
            let fs = featurize(t.node(s), &fc).unwrap();
            let twins = (0..t.len())
                .filter(|&v| v != s && featurize(t.node(v), &fc).unwrap() == fs)
                .count();
            assert_eq!(twins, cfg.subject_confounders);
        }
    }

    #[test]
    fn image_counts_are_consistent() {
        let t = generate_page(&GenConfig::default(), 3).unwrap();
        for v in (0..t.len()).rev() {
            let own = u32::from(t.node(v).tag == "img");
            let below: u32 = t
                .children(v)
                .iter()
                .map(|&c| t.node(c).num_images_subtree.unwrap())
                .sum();
            assert_eq!(t.node(v).num_images_subtree, Some(own + below));
        }
    }

    #[test]
    fn deterministic_and_varied() {
        let cfg = GenConfig::default();
        assert_eq!(
            generate_page(&cfg, 5).unwrap(),
            generate_page(&cfg, 5).unwrap()
        );
        assert_ne!(
            generate_page(&cfg, 5).unwrap(),
            generate_page(&cfg, 6).unwrap()
        );
    }

    #[test]
    fn coverage_and_split() {
        let pages = generate_pages(&GenConfig {
            n_pages: 30,
            seed: 1,
            ..GenConfig::default()
        })
        .unwrap();
        let stats = corpus_stats(&pages).unwrap();
        assert!(stats.label_coverage.iter().all(|&c| c == 1.0));
        let (a, b, c) = split_indices(10);
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    }

    #[test]
    fn text_embeddings_follow_text() {
        let cfg = GenConfig {
            text_dim: 4,
            ..GenConfig::default()
        };
        let t = generate_page(&cfg, 0).unwrap();
        for n in t.nodes() {
            assert_eq!(n.text_embedding.is_some(), n.text.is_some());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(GenConfig {
            min_nodes: 10,
            max_nodes: 5,
            ..GenConfig::default()
        }
        .validate()
        .is_err());
        assert!(GenConfig {
            max_nodes: 20,
            min_nodes: 10,
            ..GenConfig::default()
        }
        .validate()
        .is_err());
        assert!(GenConfig {
            branching_mean: 0.0,
            ..GenConfig::default()
        }
        .validate()
        .is_err());
    }
}
