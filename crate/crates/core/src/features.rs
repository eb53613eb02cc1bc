//! Fixed-layout numeric encoding of a node's local features.
//!
//! Layout of a [`FeatureVector`]:
//!
//! ```text
//! [x/vw, y/vh, w/vw, h/vh, font_size/16, font_weight/400, visible, ln(1+images)]
//!   ++ one-hot(tag over vocabulary ++ OTHER)
//!   ++ [has_text]
//!   ++ text_embedding (text_dim entries, zeros when absent)
//! ```

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dom::DomNode;

/// Number of leading style entries before the tag one-hot.
pub const STYLE_DIM: usize = 8;

pub const DEFAULT_TAGS: [&str; 41] = [
    "html", "body", "div", "span", "a", "img", "button", "input", "p", "h1", "h2", "h3", "h4",
    "h5", "h6", "ul", "ol", "li", "table", "tr", "td", "th", "form", "label", "select", "option",
    "nav", "header", "footer", "section", "article", "main", "aside", "i", "b", "strong", "em",
    "svg", "picture", "figure", "iframe",
];

/// Encoded value substituted for each missing field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingValues {
    pub bbox: f64,
    pub font_size: f64,
    pub font_weight: f64,
    pub visible: f64,
    pub num_images: f64,
}

impl Default for MissingValues {
    fn default() -> Self {
        MissingValues {
            bbox: 0.0,
            font_size: 0.0,
            font_weight: 0.0,
            visible: 0.0,
            num_images: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub viewport_w: f64,
    pub viewport_h: f64,
    tag_vocabulary: Vec<String>,
    pub text_dim: usize,
    #[serde(default)]
    pub missing: MissingValues,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig::new(DEFAULT_TAGS.iter().copied(), 0)
    }
}

impl FeatureConfig {
    /// Builds a config with the given vocabulary; duplicates and case
    /// variants are dropped keeping the first occurrence.
    pub fn new<'a>(tags: impl IntoIterator<Item = &'a str>, text_dim: usize) -> Self {
        let mut tag_vocabulary: Vec<String> = Vec::new();
        for t in tags {
            let t = t.to_ascii_lowercase();
            if !tag_vocabulary.contains(&t) {
                tag_vocabulary.push(t);
            }
        }
        FeatureConfig {
            viewport_w: 375.0,
            viewport_h: 812.0,
            tag_vocabulary,
            text_dim,
            missing: MissingValues::default(),
        }
    }

    pub fn with_text_dim(mut self, text_dim: usize) -> Self {
        self.text_dim = text_dim;
        self
    }

    pub fn tag_vocabulary(&self) -> &[String] {
        &self.tag_vocabulary
    }

    /// Total feature dimension `D`.
    pub fn dim(&self) -> usize {
        STYLE_DIM + self.tag_vocabulary.len() + 1 + 1 + self.text_dim
    }

    /// Slot of `tag` in the one-hot block; unknown tags map to OTHER.
    pub fn tag_slot(&self, tag: &str) -> usize {
        self.tag_vocabulary
            .iter()
            .position(|t| t.eq_ignore_ascii_case(tag))
            .unwrap_or(self.tag_vocabulary.len())
    }

    /// Index of the `has_text` entry.
    pub fn has_text_index(&self) -> usize {
        STYLE_DIM + self.tag_vocabulary.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("node {node} has a text embedding of length {found}, expected {expected}")]
    DimensionMismatch {
        node: usize,
        expected: usize,
        found: usize,
    },
}

/// Encoded features of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn finite_or(v: Option<f64>, fallback: f64) -> f64 {
    match v {
        Some(v) if v.is_finite() => v,
        _ => fallback,
    }
}

/// Encodes a node from its own fields only.
pub fn featurize(node: &DomNode, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    let mut out = Vec::with_capacity(cfg.dim());
    let miss = &cfg.missing;
    match node.bbox {
        Some([x, y, w, h]) => {
            let scale = [
                cfg.viewport_w,
                cfg.viewport_h,
                cfg.viewport_w,
                cfg.viewport_h,
            ];
            for (v, s) in [x, y, w, h].into_iter().zip(scale) {
                let e = v / s;
                out.push(if e.is_finite() { e } else { miss.bbox });
            }
        }
        None => out.extend([miss.bbox; 4]),
    }
    out.push(node.font_size.map_or(miss.font_size, |f| {
        finite_or(Some(f / 16.0), miss.font_size)
    }));
    out.push(node.font_weight.map_or(miss.font_weight, |f| {
        finite_or(Some(f / 400.0), miss.font_weight)
    }));
    out.push(
        node.visible
            .map_or(miss.visible, |v| if v { 1.0 } else { 0.0 }),
    );
    out.push(
        node.num_images_subtree
            .map_or(miss.num_images, |n| libm::log1p(n as f64)),
    );

    let vocab = cfg.tag_vocabulary.len();
    let slot = cfg.tag_slot(&node.tag);
    out.extend((0..=vocab).map(|i| if i == slot { 1.0 } else { 0.0 }));

    let has_text = node.text.as_deref().is_some_and(|t| !t.trim().is_empty());
    out.push(if has_text { 1.0 } else { 0.0 });

    if cfg.text_dim > 0 {
        match &node.text_embedding {
            Some(e) if e.len() != cfg.text_dim => {
                return Err(FeatureError::DimensionMismatch {
                    node: node.id,
                    expected: cfg.text_dim,
                    found: e.len(),
                })
            }
            Some(e) => out.extend(e.iter().map(|&v| if v.is_finite() { v } else { 0.0 })),
            None => out.extend(core::iter::repeat_n(0.0, cfg.text_dim)),
        }
    }
    debug_assert_eq!(out.len(), cfg.dim());
    Ok(FeatureVector(out))
}

/// Human-readable names of each feature entry, in layout order.
pub fn feature_names(cfg: &FeatureConfig) -> Vec<String> {
    let mut names: Vec<String> = [
        "x",
        "y",
        "w",
        "h",
        "font_size",
        "font_weight",
        "visible",
        "log_images",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(cfg.tag_vocabulary.iter().map(|t| alloc::format!("tag_{t}")));
    names.push("tag_OTHER".to_string());
    names.push("has_text".to_string());
    names.extend((0..cfg.text_dim).map(|i| alloc::format!("text_{i}")));
    names
}
