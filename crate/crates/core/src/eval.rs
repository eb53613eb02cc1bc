//! Nomination, nomination accuracy, classification precision/recall and the
//! confidence gap.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dom::{ClassId, DomTree};
use crate::embedders::{EmbedError, Model};
use crate::exec::Executor;
use crate::graph::Page;
use crate::tensor::Tensor;
use crate::training::sample_training_elements;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("page `{0}` has no nodes")]
    EmptyPage(String),
    #[error("no page carries a label for any evaluated class")]
    NoLabeledPages,
    #[error("page `{page_id}` has no `{}` node", class.as_str())]
    MissingLabel { page_id: String, class: ClassId },
    #[error("probability matrix has shape {found:?}, expected ({rows}, 7)")]
    BadScores { rows: usize, found: (usize, usize) },
    #[error(transparent)]
    Model(#[from] EmbedError),
}

/// The node nominated for one positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nomination {
    pub class: ClassId,
    pub node: usize,
    pub probability: f64,
    /// `None` when the page has no ground truth for the class.
    pub correct: Option<bool>,
}

/// One nomination per positive class, in class-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominationResult {
    pub page_id: String,
    pub nominations: Vec<Nomination>,
}

impl NominationResult {
    pub fn get(&self, class: ClassId) -> Option<&Nomination> {
        self.nominations.iter().find(|n| n.class == class)
    }
}

/// Row-wise softmax of a logit matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `-log softmax(row)[target]`, computed stably from logits.
pub fn cross_entropy(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>()) + max;
    lse - row[target]
}

/// Index of the largest value, preferring the smallest index on ties.
pub fn argmax_first(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

fn check_scores(tree: &DomTree, probs: &Tensor) -> Result<(), EvalError> {
    if tree.is_empty() {
        return Err(EvalError::EmptyPage(String::from(tree.page_id())));
    }
    if probs.rows() != tree.len() || probs.cols() != ClassId::COUNT {
        return Err(EvalError::BadScores {
            rows: tree.len(),
            found: probs.shape(),
        });
    }
    Ok(())
}

/// Nominates, for each positive class, the node with the highest probability
/// given a full `n × 7` probability matrix.
pub fn nominate_from_probs(tree: &DomTree, probs: &Tensor) -> Result<NominationResult, EvalError> {
    check_scores(tree, probs)?;
    let nominations = ClassId::POSITIVE
        .iter()
        .map(|&class| {
            let c = class.index();
            let (node, probability) = argmax_first((0..probs.rows()).map(|r| probs.get(r, c)))
                .expect("page is non-empty");
            let correct = tree.truth(class).map(|t| t == node);
            Nomination {
                class,
                node,
                probability,
                correct,
            }
        })
        .collect();
    Ok(NominationResult {
        page_id: String::from(tree.page_id()),
        nominations,
    })
}

/// Classifies every node of the page and nominates one per positive class.
pub fn nominate(model: &Model, page: &Page) -> Result<NominationResult, EvalError> {
    if page.tree().is_empty() {
        return Err(EvalError::EmptyPage(String::from(page.id())));
    }
    let probs = model.predict_page(page.graph())?;
    nominate_from_probs(page.tree(), &probs)
}

/// Per-class and average nomination accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominationAccuracy {
    /// Fraction of evaluated pages nominating the labeled node, per positive
    /// class; `None` when no page carries that label.
    pub per_class: [Option<f64>; 6],
    /// Pages that carry each class's label.
    pub evaluated: [usize; 6],
    /// Unweighted mean over classes that were evaluated.
    pub average: f64,
}

pub fn accuracy_from_results(
    results: &[NominationResult],
) -> Result<NominationAccuracy, EvalError> {
    let mut correct = [0usize; 6];
    let mut evaluated = [0usize; 6];
    for r in results {
        for n in &r.nominations {
            if let Some(ok) = n.correct {
                let c = n.class.index();
                evaluated[c] += 1;
                correct[c] += usize::from(ok);
            }
        }
    }
    let mut per_class = [None; 6];
    for c in 0..6 {
        if evaluated[c] > 0 {
            per_class[c] = Some(correct[c] as f64 / evaluated[c] as f64);
        }
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(EvalError::NoLabeledPages);
    }
    let average = present.iter().sum::<f64>() / present.len() as f64;
    Ok(NominationAccuracy {
        per_class,
        evaluated,
        average,
    })
}

/// Full-page probabilities for every page, in page order.
pub fn score_pages<E: Executor>(
    model: &Model,
    pages: &[Page],
    exec: &E,
) -> Result<Vec<Tensor>, EvalError> {
    for p in pages {
        if p.tree().is_empty() {
            return Err(EvalError::EmptyPage(String::from(p.id())));
        }
    }
    exec.map(pages.len(), |i| model.predict_page(pages[i].graph()))
        .into_iter()
        .map(|r| r.map_err(EvalError::from))
        .collect()
}

pub fn nomination_accuracy<E: Executor>(
    model: &Model,
    pages: &[Page],
    exec: &E,
) -> Result<NominationAccuracy, EvalError> {
    let probs = score_pages(model, pages, exec)?;
    let results = pages
        .iter()
        .zip(&probs)
        .map(|(p, pr)| nominate_from_probs(p.tree(), pr))
        .collect::<Result<Vec<_>, _>>()?;
    accuracy_from_results(&results)
}

/// `p(true node, c) − max_{u unlabeled} p(u, c)` for one class. The maximum
/// over an empty unlabeled set is taken as zero.
pub fn confidence_gap_from_probs(
    tree: &DomTree,
    probs: &Tensor,
    class: ClassId,
) -> Result<f64, EvalError> {
    check_scores(tree, probs)?;
    let truth = tree.truth(class).ok_or_else(|| EvalError::MissingLabel {
        page_id: String::from(tree.page_id()),
        class,
    })?;
    let c = class.index();
    let best_other = tree
        .unlabeled()
        .into_iter()
        .map(|u| probs.get(u, c))
        .fold(0.0, f64::max);
    Ok(probs.get(truth, c) - best_other)
}

/// Gaps for all positive classes; classes without ground truth are `None`.
pub fn confidence_gaps_from_probs(
    tree: &DomTree,
    probs: &Tensor,
) -> Result<[Option<f64>; 6], EvalError> {
    check_scores(tree, probs)?;
    let unlabeled = tree.unlabeled();
    let mut out = [None; 6];
    for class in ClassId::POSITIVE {
        if let Some(truth) = tree.truth(class) {
            let c = class.index();
            let best_other = unlabeled
                .iter()
                .map(|&u| probs.get(u, c))
                .fold(0.0, f64::max);
            out[c] = Some(probs.get(truth, c) - best_other);
        }
    }
    Ok(out)
}

pub fn confidence_gap(model: &Model, page: &Page) -> Result<[Option<f64>; 6], EvalError> {
    if page.tree().is_empty() {
        return Err(EvalError::EmptyPage(String::from(page.id())));
    }
    let probs = model.predict_page(page.graph())?;
    confidence_gaps_from_probs(page.tree(), &probs)
}

/// Mean of each class's gap over the pages where it is defined.
pub fn mean_gaps(gaps: &[[Option<f64>; 6]]) -> [Option<f64>; 6] {
    let mut out = [None; 6];
    for (c, slot) in out.iter_mut().enumerate() {
        let vals: Vec<f64> = gaps.iter().filter_map(|g| g[c]).collect();
        if !vals.is_empty() {
            *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    out
}

/// 7×7 confusion counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub confusion: [[u64; 7]; 7],
}

impl ClassificationReport {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (ClassId, ClassId)>) -> Self {
        let mut r = ClassificationReport::default();
        for (truth, pred) in pairs {
            r.add(truth, pred);
        }
        r
    }

    pub fn add(&mut self, truth: ClassId, predicted: ClassId) {
        self.confusion[truth.index()][predicted.index()] += 1;
    }

    pub fn true_positives(&self, class: ClassId) -> u64 {
        self.confusion[class.index()][class.index()]
    }

    /// Elements predicted as `class`.
    pub fn predicted(&self, class: ClassId) -> u64 {
        self.confusion.iter().map(|row| row[class.index()]).sum()
    }

    /// Elements whose true class is `class`.
    pub fn support(&self, class: ClassId) -> u64 {
        self.confusion[class.index()].iter().sum()
    }

    pub fn precision(&self, class: ClassId) -> Option<f64> {
        ratio(self.true_positives(class), self.predicted(class))
    }

    pub fn recall(&self, class: ClassId) -> Option<f64> {
        ratio(self.true_positives(class), self.support(class))
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Element sampling used for classification metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Unlabeled nodes sampled per page as negatives.
    pub m: usize,
    pub include_subject: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            m: 10,
            include_subject: true,
            seed: 0,
        }
    }
}

fn predicted_class(probs: &Tensor, row: usize) -> ClassId {
    let (c, _) = argmax_first(probs.row(row).iter().copied()).expect("seven classes");
    ClassId::from_index(c).expect("seven classes")
}

fn report_elements(page: &Page, index: usize, cfg: &EvalConfig) -> Vec<(usize, ClassId)> {
    let mut rng = crate::rng::stream(cfg.seed, crate::rng::STREAM_REPORT, index as u64);
    sample_training_elements(page.tree(), cfg.m, cfg.include_subject, &mut rng)
}

fn report_from_probs(pages: &[Page], probs: &[Tensor], cfg: &EvalConfig) -> ClassificationReport {
    let mut report = ClassificationReport::default();
    for (i, (page, pr)) in pages.iter().zip(probs).enumerate() {
        for (node, truth) in report_elements(page, i, cfg) {
            report.add(truth, predicted_class(pr, node));
        }
    }
    report
}

/// Confusion counts over labeled nodes plus `cfg.m` sampled negatives per page.
pub fn classification_report<E: Executor>(
    model: &Model,
    pages: &[Page],
    cfg: &EvalConfig,
    exec: &E,
) -> Result<ClassificationReport, EvalError> {
    let probs = score_pages(model, pages, exec)?;
    Ok(report_from_probs(pages, &probs, cfg))
}

/// One row of a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub nomination_accuracy: Option<f64>,
    pub pages_evaluated: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub mean_confidence_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// One row per class in class-id order, `negative` last.
    pub classes: Vec<ClassMetrics>,
    pub average_nomination_accuracy: f64,
}

/// Nomination accuracy, precision/recall and mean confidence gaps in one pass.
pub fn evaluate<E: Executor>(
    model: &Model,
    pages: &[Page],
    cfg: &EvalConfig,
    exec: &E,
) -> Result<MetricReport, EvalError> {
    let probs = score_pages(model, pages, exec)?;
    let mut results = Vec::with_capacity(pages.len());
    let mut gaps = Vec::with_capacity(pages.len());
    for (p, pr) in pages.iter().zip(&probs) {
        results.push(nominate_from_probs(p.tree(), pr)?);
        gaps.push(confidence_gaps_from_probs(p.tree(), pr)?);
    }
    let acc = accuracy_from_results(&results)?;
    let gap = mean_gaps(&gaps);
    let report = report_from_probs(pages, &probs, cfg);
    let classes = ClassId::ALL
        .iter()
        .map(|&class| {
            let c = class.index();
            let positive = c < ClassId::POSITIVE_COUNT;
            ClassMetrics {
                class,
                nomination_accuracy: if positive { acc.per_class[c] } else { None },
                pages_evaluated: if positive { acc.evaluated[c] } else { 0 },
                precision: report.precision(class),
                recall: report.recall(class),
                mean_confidence_gap: if positive { gap[c] } else { None },
            }
        })
        .collect();
    Ok(MetricReport {
        classes,
        average_nomination_accuracy: acc.average,
    })
}
