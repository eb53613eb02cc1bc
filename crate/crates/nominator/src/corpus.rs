//! A corpus directory: one canonical JSON file per page plus an optional
//! `manifest.json` naming the pages of each split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nominator_core::dom::DomTree;
use serde::{Deserialize, Serialize};

use crate::page_json::{read_page, write_page, PageError};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(format!(
                "unknown split `{s}` (expected train, val, test or all)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Page { path: String, source: PageError },
    #[error("{path}: bad manifest: {source}")]
    Manifest {
        path: String,
        source: serde_json::Error,
    },
    #[error("manifest names unknown page `{0}`")]
    UnknownPage(String),
    #[error("page id `{0}` occurs twice in the corpus")]
    DuplicatePage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    /// Pages sorted by page id.
    pub pages: Vec<DomTree>,
    pub manifest: Option<Manifest>,
}

/// File name for a page id, with characters outside `[A-Za-z0-9._-]`
/// replaced by `_`.
pub fn page_file_name(page_id: &str) -> String {
    let stem: String = page_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{stem}.json")
}

/// The `.json` files of `dir` other than the manifest, sorted by name.
pub fn page_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json && path.file_name().is_some_and(|n| n != MANIFEST) && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let mut pages = Vec::new();
        for path in page_files(dir)? {
            let tree = read_page(&path).map_err(|source| CorpusError::Page {
                path: path.display().to_string(),
                source,
            })?;
            pages.push(tree);
        }
        pages.sort_by(|a, b| a.page_id().cmp(b.page_id()));
        if let Some(w) = pages.windows(2).find(|w| w[0].page_id() == w[1].page_id()) {
            return Err(CorpusError::DuplicatePage(w[0].page_id().to_string()));
        }
        let manifest_path = dir.join(MANIFEST);
        let manifest = if manifest_path.is_file() {
            let bytes = std::fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
            let m: Manifest =
                serde_json::from_slice(&bytes).map_err(|source| CorpusError::Manifest {
                    path: manifest_path.display().to_string(),
                    source,
                })?;
            Some(m)
        } else {
            None
        };
        let corpus = Corpus { pages, manifest };
        if let Some(m) = &corpus.manifest {
            for id in m.train.iter().chain(&m.val).chain(&m.test) {
                if corpus.index_of(id).is_none() {
                    return Err(CorpusError::UnknownPage(id.clone()));
                }
            }
        }
        Ok(corpus)
    }

    fn index_of(&self, page_id: &str) -> Option<usize> {
        self.pages
            .binary_search_by(|p| p.page_id().cmp(page_id))
            .ok()
    }

    fn pick(&self, ids: &[String]) -> Vec<DomTree> {
        ids.iter()
            .filter_map(|id| self.index_of(id))
            .map(|i| self.pages[i].clone())
            .collect()
    }

    /// Pages of one split, in manifest order. Without a manifest every page
    /// counts as training data, and `test` and `val` are empty.
    pub fn split(&self, split: Split) -> Vec<DomTree> {
        match (split, &self.manifest) {
            (Split::All, _) | (Split::Train, None) => self.pages.clone(),
            (Split::Val | Split::Test, None) => Vec::new(),
            (Split::Train, Some(m)) => self.pick(&m.train),
            (Split::Val, Some(m)) => self.pick(&m.val),
            (Split::Test, Some(m)) => self.pick(&m.test),
        }
    }

    /// Training and validation pages. Without a manifest the last
    /// `round(val_fraction · n)` pages (by page id) are held out.
    pub fn train_val(&self, val_fraction: f64) -> (Vec<DomTree>, Vec<DomTree>) {
        match &self.manifest {
            Some(m) => (self.pick(&m.train), self.pick(&m.val)),
            None => {
                let n = self.pages.len();
                let n_val = ((val_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
                let (train, val) = self.pages.split_at(n - n_val);
                (train.to_vec(), val.to_vec())
            }
        }
    }
}

/// Writes each page as `<page_id>.json` and, when given, the manifest.
pub fn write_corpus(
    dir: &Path,
    pages: &[DomTree],
    manifest: Option<&Manifest>,
) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut names: BTreeMap<String, &str> = BTreeMap::new();
    for page in pages {
        let name = page_file_name(page.page_id());
        if names.insert(name.clone(), page.page_id()).is_some() {
            return Err(CorpusError::DuplicatePage(page.page_id().to_string()));
        }
        let path = dir.join(name);
        write_page(&path, page).map_err(|source| CorpusError::Page {
            path: path.display().to_string(),
            source,
        })?;
    }
    if let Some(m) = manifest {
        let path = dir.join(MANIFEST);
        let mut text =
            serde_json::to_string_pretty(m).expect("manifest serialization is infallible");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}
