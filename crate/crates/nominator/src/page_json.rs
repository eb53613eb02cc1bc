//! Canonical one-page-per-file JSON format.
//!
//! ```json
//! {
//!   "page_id": "shop::item-17",
//!   "subject_id": 4,
//!   "nodes": [{"id": 0, "parent": null, "tag": "html", "text": null, ...}]
//! }
//! ```
//!
//! Nullable node fields may be omitted. `subject_id` is optional on input;
//! when present it must equal the subject derived from the labels.

use std::path::Path;

use nominator_core::dom::{compute_subject_node, DomNode, DomTree, InvariantError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PageError {
    #[error("schema error: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("invalid tree: {0}")]
    Invariant(#[from] InvariantError),
    #[error("stored subject {stored:?} disagrees with derived subject {derived:?}")]
    SubjectMismatch {
        stored: Option<usize>,
        derived: Option<usize>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct PageFile {
    page_id: String,
    #[serde(
        default,
        deserialize_with = "present",
        skip_serializing_if = "Option::is_none"
    )]
    subject_id: Option<Option<usize>>,
    nodes: Vec<DomNode>,
}

/// Distinguishes an explicit `null` from an absent key.
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Option<usize>>, D::Error> {
    Option::<usize>::deserialize(d).map(Some)
}

pub fn load_page_json(bytes: &[u8]) -> Result<DomTree, PageError> {
    let file: PageFile = serde_json::from_slice(bytes)?;
    let tree = DomTree::new(file.page_id, file.nodes)?;
    if let Some(stored) = file.subject_id {
        let derived = compute_subject_node(&tree);
        if stored != derived {
            return Err(PageError::SubjectMismatch { stored, derived });
        }
    }
    Ok(tree)
}

/// Pretty-printed JSON including the derived `subject_id`.
pub fn page_to_json(tree: &DomTree) -> String {
    let file = PageFile {
        page_id: tree.page_id().to_string(),
        subject_id: Some(tree.subject_id()),
        nodes: tree.nodes().to_vec(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("page serialization is infallible");
    out.push('\n');
    out
}

pub fn read_page(path: &Path) -> Result<DomTree, PageError> {
    let bytes = std::fs::read(path).map_err(|source| PageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_page_json(&bytes)
}

pub fn write_page(path: &Path, tree: &DomTree) -> Result<(), PageError> {
    std::fs::write(path, page_to_json(tree)).map_err(|source| PageError::Io {
        path: path.display().to_string(),
        source,
    })
}
