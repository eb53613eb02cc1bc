//! Basic training and hard-example augmentation (CNTP).
//!
//! Every epoch each training page contributes its labeled nodes plus `M`
//! unlabeled nodes drawn uniformly without replacement; unlabeled nodes are
//! trained as `negative`. With augmentation enabled, at the start of epoch
//! `T` the current model ranks every unlabeled node of every training page for
//! each of the six positive classes and the top `K` per class join that page's
//! hard set `H_P`, which is added as extra negatives in every later epoch.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dom::{ClassId, DomTree};
use crate::embedders::{EmbedError, EmbedderConfig, Model};
use crate::eval::{
    accuracy_from_results, confidence_gaps_from_probs, cross_entropy, mean_gaps,
    nominate_from_probs, softmax, EvalError,
};
use crate::exec::Executor;
use crate::graph::Page;
use crate::rng;
use crate::tensor::{adam_step, AdamConfig, AdamState, Reduction, Tape, Tensor, TensorError};

/// Number of positive labels ranked during augmentation.
pub const LABEL_COUNT: usize = ClassId::POSITIVE_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Basic training: random negatives only.
    #[default]
    Off,
    /// Build the hard sets once, at the start of epoch `T`.
    OnceAtT,
    /// Rebuild the hard sets at the start of every epoch divisible by `T`.
    EveryT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Unlabeled nodes sampled per page per epoch.
    pub m: usize,
    /// Hard examples kept per label per page.
    pub k: usize,
    /// Augmentation epoch; `None` never augments.
    pub t: Option<usize>,
    pub augment: AugmentMode,
    pub seed: u64,
    /// Pages per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Share of pages held out for validation when no split is given.
    pub val_fraction: f64,
    /// Whether the derived subject node is a training target.
    pub include_subject: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            m: 10,
            k: 5,
            t: Some(50),
            augment: AugmentMode::Off,
            seed: 0,
            batch_size: 1,
            lr: 1e-3,
            val_fraction: 0.1,
            include_subject: true,
        }
    }
}

impl TrainConfig {
    /// Hard-example augmentation with `M = 20, K = 5, T = 50`, applied once.
    pub fn cntp() -> Self {
        TrainConfig {
            m: 20,
            k: 5,
            t: Some(50),
            augment: AugmentMode::OnceAtT,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad(String::from("batch size must be at least 1"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_fraction
            ));
        }
        if self.t == Some(0) {
            return bad(String::from("T must be at least 1"));
        }
        if self.augment != AugmentMode::Off {
            if let Some(t) = self.t {
                if t > self.epochs {
                    return bad(format!(
                        "T = {t} exceeds the number of epochs ({})",
                        self.epochs
                    ));
                }
            }
        }
        Ok(())
    }

    /// Whether hard sets are (re)built at the start of `epoch` (1-based).
    pub fn augments_at(&self, epoch: usize) -> bool {
        match (self.augment, self.t) {
            (AugmentMode::Off, _) | (_, None) => false,
            (AugmentMode::OnceAtT, Some(t)) => epoch == t,
            (AugmentMode::EveryT, Some(t)) => epoch.is_multiple_of(t),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("the training split is empty")]
    EmptyTrainSet,
    #[error("non-finite loss in epoch {epoch} on page `{page_id}`: {source}")]
    NonFiniteLoss {
        epoch: usize,
        page_id: String,
        source: TensorError,
    },
    #[error(transparent)]
    Model(#[from] EmbedError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Labeled nodes plus up to `m` unlabeled nodes sampled uniformly without
/// replacement, the latter targeted as `negative`. Negatives come back in
/// ascending node order.
pub fn sample_training_elements<R: Rng + ?Sized>(
    tree: &DomTree,
    m: usize,
    include_subject: bool,
    rng: &mut R,
) -> Vec<(usize, ClassId)> {
    let unlabeled = tree.unlabeled();
    let mut picked: Vec<usize> =
        rand::seq::index::sample(rng, unlabeled.len(), m.min(unlabeled.len()))
            .into_iter()
            .map(|i| unlabeled[i])
            .collect();
    picked.sort_unstable();
    let mut out = tree.labeled_elements(include_subject);
    out.extend(picked.into_iter().map(|v| (v, ClassId::Negative)));
    out
}

/// The training elements of page `index` in `epoch`: labeled nodes, the
/// epoch's random sample, and the page's hard set (deduplicated).
pub fn epoch_elements(
    tree: &DomTree,
    cfg: &TrainConfig,
    hard: &BTreeSet<usize>,
    epoch: usize,
    index: usize,
) -> Vec<(usize, ClassId)> {
    let mut rng = rng::stream(
        cfg.seed,
        rng::STREAM_SAMPLE,
        ((epoch as u64) << 32) | index as u64,
    );
    let unlabeled = tree.unlabeled();
    let mut negatives: BTreeSet<usize> =
        rand::seq::index::sample(&mut rng, unlabeled.len(), cfg.m.min(unlabeled.len()))
            .into_iter()
            .map(|i| unlabeled[i])
            .collect();
    negatives.extend(hard.iter().copied());
    let mut out = tree.labeled_elements(cfg.include_subject);
    out.extend(negatives.into_iter().map(|v| (v, ClassId::Negative)));
    out
}

/// For each positive class, the `k` unlabeled nodes with the highest
/// probability for that class (ties to the smaller id), merged into one set.
pub fn hard_examples(tree: &DomTree, probs: &Tensor, k: usize) -> BTreeSet<usize> {
    let unlabeled = tree.unlabeled();
    let mut out = BTreeSet::new();
    if k == 0 {
        return out;
    }
    for class in ClassId::POSITIVE {
        let c = class.index();
        let mut ranked = unlabeled.clone();
        ranked.sort_by(|&a, &b| probs.get(b, c).total_cmp(&probs.get(a, c)).then(a.cmp(&b)));
        out.extend(ranked.into_iter().take(k));
    }
    out
}

/// Mutable training state across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    /// Hard set of each training page, by position in the training split.
    pub hard: Vec<BTreeSet<usize>>,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Model, cfg: &TrainConfig, pages: usize) -> Self {
        TrainState {
            model,
            adam: AdamState::new(cfg.adam()),
            hard: vec![BTreeSet::new(); pages],
            epoch: 0,
        }
    }
}

/// Recomputes every page's hard set with the current model.
pub fn cntp_augment<E: Executor>(
    model: &Model,
    pages: &[Page],
    k: usize,
    exec: &E,
) -> Result<Vec<BTreeSet<usize>>, TrainError> {
    exec.map(pages.len(), |i| {
        let probs = model.predict_page(pages[i].graph())?;
        Ok(hard_examples(pages[i].tree(), &probs, k))
    })
    .into_iter()
    .collect()
}

struct PageStep {
    loss: f64,
    count: usize,
    grads: BTreeMap<String, Tensor>,
}

fn page_step(
    model: &Model,
    page: &Page,
    elements: &[(usize, ClassId)],
    epoch: usize,
) -> Result<PageStep, TrainError> {
    if elements.is_empty() {
        return Ok(PageStep {
            loss: 0.0,
            count: 0,
            grads: BTreeMap::new(),
        });
    }
    let non_finite = |source: TensorError| TrainError::NonFiniteLoss {
        epoch,
        page_id: String::from(page.id()),
        source,
    };
    let nodes: Vec<usize> = elements.iter().map(|&(v, _)| v).collect();
    let targets: Vec<usize> = elements.iter().map(|&(_, c)| c.index()).collect();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let logits = model
        .logits(&mut tape, &bound, page.graph(), &nodes)
        .map_err(|e| match e {
            EmbedError::Tensor(t @ TensorError::NonFinite { .. }) => non_finite(t),
            e => TrainError::Model(e),
        })?;
    let loss = tape
        .softmax_cross_entropy(logits, &targets, Reduction::Sum)
        .map_err(non_finite)?;
    let value = tape.value(loss).get(0, 0);
    let mut g = tape.backward(loss).map_err(non_finite)?;
    let grads = bound
        .iter()
        .filter_map(|(name, &v)| g.take(v).map(|t| (name.clone(), t)))
        .collect();
    Ok(PageStep {
        loss: value,
        count: elements.len(),
        grads,
    })
}

/// Outcome of one pass over the training pages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    /// Mean cross-entropy over all elements seen this epoch, accumulated
    /// while the parameters were being updated.
    pub mean_loss: f64,
    pub elements: usize,
    /// Largest per-page training set of the epoch.
    pub max_page_elements: usize,
}

/// One epoch: pages are shuffled, grouped into batches, and each batch takes
/// one Adam step on the element-averaged cross-entropy. Per-page gradients are
/// reduced in batch order so results do not depend on the executor.
pub fn train_epoch<E: Executor>(
    state: &mut TrainState,
    pages: &[Page],
    cfg: &TrainConfig,
    exec: &E,
) -> Result<EpochSummary, TrainError> {
    state.epoch += 1;
    let epoch = state.epoch;
    state.hard.resize(pages.len(), BTreeSet::new());
    let mut order: Vec<usize> = (0..pages.len()).collect();
    order.shuffle(&mut rng::stream(
        cfg.seed,
        rng::STREAM_SHUFFLE,
        epoch as u64,
    ));

    let mut total_loss = 0.0;
    let mut total = 0usize;
    let mut max_page = 0usize;
    for batch in order.chunks(cfg.batch_size) {
        let model = &state.model;
        let hard = &state.hard;
        let steps = exec.map(batch.len(), |j| {
            let i = batch[j];
            let elements = epoch_elements(pages[i].tree(), cfg, &hard[i], epoch, i);
            page_step(model, &pages[i], &elements, epoch)
        });
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut count = 0usize;
        for step in steps {
            let step = step?;
            total_loss += step.loss;
            count += step.count;
            max_page = max_page.max(step.count);
            for (name, g) in step.grads {
                match grads.get_mut(&name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        grads.insert(name, g);
                    }
                }
            }
        }
        if count == 0 {
            continue;
        }
        total += count;
        let scale = 1.0 / count as f64;
        for g in grads.values_mut() {
            g.scale_assign(scale);
        }
        adam_step(state.model.params_mut(), &grads, &mut state.adam)?;
    }
    let mean_loss = if total == 0 {
        0.0
    } else {
        total_loss / total as f64
    };
    if !mean_loss.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            epoch,
            page_id: String::new(),
            source: TensorError::NonFinite { op: "epoch_loss" },
        });
    }
    Ok(EpochSummary {
        mean_loss,
        elements: total,
        max_page_elements: max_page,
    })
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cross-entropy on a fixed per-page sample of the training split,
    /// measured after the epoch.
    pub train_loss: f64,
    /// Cross-entropy on a fixed per-page sample of the validation split.
    pub val_loss: f64,
    /// Average nomination accuracy on the validation split.
    pub val_nom_acc: Option<f64>,
    /// Mean confidence gap per positive class over the training split.
    pub conf_gap: [Option<f64>; 6],
    /// Running loss reported by [`train_epoch`].
    pub epoch_loss: f64,
    /// Largest per-page training set of the epoch.
    pub max_page_elements: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Model from the epoch with the lowest validation loss.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Model after the last epoch.
    pub last: Model,
    pub history: Vec<EpochRecord>,
    /// Final hard set of each training page.
    pub hard: Vec<BTreeSet<usize>>,
}

struct Snapshot {
    loss: f64,
    nom_acc: Option<f64>,
    gaps: [Option<f64>; 6],
}

/// Scores each page once and derives the fixed-sample loss, the nomination
/// accuracy, and mean confidence gaps.
fn snapshot<E: Executor>(
    model: &Model,
    pages: &[Page],
    samples: &[Vec<(usize, ClassId)>],
    exec: &E,
) -> Result<Snapshot, TrainError> {
    let logits = exec.map(pages.len(), |i| {
        model.predict_logits(
            pages[i].graph(),
            &(0..pages[i].tree().len()).collect::<Vec<_>>(),
        )
    });
    let mut loss = 0.0;
    let mut count = 0usize;
    let mut results = Vec::with_capacity(pages.len());
    let mut gaps = Vec::with_capacity(pages.len());
    for ((page, lg), sample) in pages.iter().zip(logits).zip(samples) {
        let lg = lg?;
        for &(v, c) in sample {
            loss += cross_entropy(lg.row(v), c.index());
            count += 1;
        }
        let probs = softmax(&lg);
        results.push(nominate_from_probs(page.tree(), &probs)?);
        gaps.push(confidence_gaps_from_probs(page.tree(), &probs)?);
    }
    let nom_acc = match accuracy_from_results(&results) {
        Ok(a) => Some(a.average),
        Err(EvalError::NoLabeledPages) => None,
        Err(e) => return Err(e.into()),
    };
    let loss = if count == 0 { 0.0 } else { loss / count as f64 };
    Ok(Snapshot {
        loss,
        nom_acc,
        gaps: mean_gaps(&gaps),
    })
}

fn fixed_samples(pages: &[Page], cfg: &TrainConfig, stream: u64) -> Vec<Vec<(usize, ClassId)>> {
    pages
        .iter()
        .enumerate()
        .map(|(i, p)| {
            sample_training_elements(
                p.tree(),
                cfg.m,
                cfg.include_subject,
                &mut rng::stream(cfg.seed, stream, i as u64),
            )
        })
        .collect()
}

/// Trains a fresh model and keeps the checkpoint with the lowest validation
/// loss. An empty validation split falls back to the training pages.
pub fn fit<E: Executor>(
    train: &[Page],
    val: &[Page],
    embedder: &EmbedderConfig,
    cfg: &TrainConfig,
    exec: &E,
) -> Result<FitResult, TrainError> {
    fit_with(
        train,
        val,
        Model::new(embedder.clone(), cfg.seed)?,
        cfg,
        exec,
        |_| {},
    )
}

/// [`fit`] starting from `model`, calling `on_epoch` after every epoch.
pub fn fit_with<E: Executor>(
    train: &[Page],
    val: &[Page],
    model: Model,
    cfg: &TrainConfig,
    exec: &E,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let val = if val.is_empty() { train } else { val };
    let train_samples = fixed_samples(train, cfg, rng::STREAM_TRAIN_EVAL);
    let val_samples = fixed_samples(val, cfg, rng::STREAM_VAL);

    let mut state = TrainState::new(model, cfg, train.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    for epoch in 1..=cfg.epochs {
        if cfg.augments_at(epoch) {
            state.hard = cntp_augment(&state.model, train, cfg.k, exec)?;
        }
        let summary = train_epoch(&mut state, train, cfg, exec)?;
        let tr = snapshot(&state.model, train, &train_samples, exec)?;
        let va = snapshot(&state.model, val, &val_samples, exec)?;
        let record = EpochRecord {
            epoch,
            train_loss: tr.loss,
            val_loss: va.loss,
            val_nom_acc: va.nom_acc,
            conf_gap: tr.gaps,
            epoch_loss: summary.mean_loss,
            max_page_elements: summary.max_page_elements,
        };
        on_epoch(&record);
        if best.as_ref().is_none_or(|(_, l, _)| va.loss < *l) {
            best = Some((epoch, va.loss, state.model.clone()));
        }
        history.push(record);
    }
    let (best_epoch, best_val_loss, best_model) =
        best.unwrap_or_else(|| (0, f64::INFINITY, state.model.clone()));
    Ok(FitResult {
        best: best_model,
        best_epoch,
        best_val_loss,
        last: state.model,
        history,
        hard: state.hard,
    })
}
