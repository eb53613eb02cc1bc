//! Node embedders and the shared classification head.
//!
//! Every embedder maps `(page graph, requested nodes)` to one embedding row
//! per requested node. A single linear layer followed by softmax turns
//! embeddings into probabilities over the seven classes.

mod fcn;
mod gcn;
mod gru;
mod lstm;
mod te;

pub use fcn::embed_fcn;
pub use gcn::{embed_gcn_mean, gcn_mean_layers};
pub use gru::{embed_gcn_gru, gru_cell, GruWeights};
pub use lstm::{
    embed_lstm_bi, embed_lstm_bie, embed_lstm_bu, embed_lstm_td, lstm_cell, LstmWeights,
};
pub use te::embed_te;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dom::ClassId;
use crate::graph::{NeighborhoodMode, PageGraph};
use crate::tensor::{glorot, BoundParams, Params, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    GcnMean,
    GcnGru,
    Te,
    LstmTd,
    LstmBu,
    LstmBi,
    LstmBie,
    Fcn,
}

impl EmbedderKind {
    pub const ALL: [EmbedderKind; 8] = [
        EmbedderKind::GcnMean,
        EmbedderKind::GcnGru,
        EmbedderKind::Te,
        EmbedderKind::LstmTd,
        EmbedderKind::LstmBu,
        EmbedderKind::LstmBi,
        EmbedderKind::LstmBie,
        EmbedderKind::Fcn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmbedderKind::GcnMean => "gcn-mean",
            EmbedderKind::GcnGru => "gcn-gru",
            EmbedderKind::Te => "te",
            EmbedderKind::LstmTd => "lstm-td",
            EmbedderKind::LstmBu => "lstm-bu",
            EmbedderKind::LstmBi => "lstm-bi",
            EmbedderKind::LstmBie => "lstm-bie",
            EmbedderKind::Fcn => "fcn",
        }
    }
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmbedderKind {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmbedderKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EmbedError::InvalidConfig(alloc::format!("unknown embedder `{s}`")))
    }
}

/// Neighborhoods larger than this are truncated for the transformer encoder.
pub const TE_MAX_NEIGHBORS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub input_dim: usize,
    pub dim: usize,
    /// GCN-Mean convolution layers.
    pub layers: usize,
    /// Transformer attention heads.
    pub heads: usize,
    /// Transformer feed-forward width; `2 * dim` when absent.
    pub ff_dim: Option<usize>,
    #[serde(default)]
    pub neighborhood: NeighborhoodMode,
}

impl EmbedderConfig {
    pub fn new(kind: EmbedderKind, input_dim: usize) -> Self {
        EmbedderConfig {
            kind,
            input_dim,
            dim: 150,
            layers: 2,
            heads: 2,
            ff_dim: None,
            neighborhood: NeighborhoodMode::ParentAndChildren,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_dim.unwrap_or(2 * self.dim)
    }

    /// Embedding width handed to the classifier.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EmbedderKind::LstmBi | EmbedderKind::LstmBie => 2 * self.dim,
            _ => self.dim,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::InvalidConfig(String::from(m)));
        if self.dim == 0 {
            return bad("embedding dimension must be positive");
        }
        if self.input_dim == 0 {
            return bad("input dimension must be positive");
        }
        match self.kind {
            EmbedderKind::GcnMean if self.layers == 0 => bad("GCN-Mean needs at least one layer"),
            EmbedderKind::Te if self.heads == 0 || !self.dim.is_multiple_of(self.heads) => {
                bad("transformer dimension must be divisible by the number of heads")
            }
            EmbedderKind::Te if self.ff_dim() == 0 => bad("feed-forward width must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("node {node} out of range for a page of {len} nodes")]
    NodeOutOfRange { node: usize, len: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Embedding rows for the requested nodes and the number of per-node cell or
/// aggregation evaluations that produced them.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub z: Var,
    pub cells: usize,
}

/// Embedder plus classification head parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: EmbedderConfig,
    params: Params,
}

pub(crate) fn zeros_row(cols: usize) -> Tensor {
    Tensor::zeros(1, cols)
}

pub(crate) fn init_linear<R: Rng + ?Sized>(
    p: &mut Params,
    w: &str,
    b: &str,
    rows: usize,
    cols: usize,
    rng: &mut R,
) {
    p.insert(w, glorot(rows, cols, rng));
    p.insert(b, zeros_row(cols));
}

/// Parameter shapes each embedder expects.
fn expected_shapes(cfg: &EmbedderConfig) -> Params {
    let mut rng = crate::rng::stream(0, 0, 0);
    let mut p = Params::new();
    init_params(cfg, &mut p, &mut rng);
    p
}

fn init_params<R: Rng + ?Sized>(cfg: &EmbedderConfig, p: &mut Params, rng: &mut R) {
    match cfg.kind {
        EmbedderKind::GcnMean => gcn::init(cfg, p, rng),
        EmbedderKind::GcnGru => gru::init(cfg, p, rng),
        EmbedderKind::Te => te::init(cfg, p, rng),
        EmbedderKind::LstmTd => lstm::init_td(cfg, "td", cfg.input_dim, p, rng),
        EmbedderKind::LstmBu => lstm::init_bu(cfg, p, rng),
        EmbedderKind::LstmBi => {
            lstm::init_td(cfg, "td", cfg.input_dim, p, rng);
            lstm::init_bu(cfg, p, rng);
        }
        EmbedderKind::LstmBie => {
            lstm::init_bu(cfg, p, rng);
            lstm::init_td(cfg, "tde", cfg.dim, p, rng);
        }
        EmbedderKind::Fcn => fcn::init(cfg, p, rng),
    }
    init_linear(p, "head.A", "head.a", cfg.output_dim(), ClassId::COUNT, rng);
}

impl Model {
    /// Freshly initialized model.
    pub fn new(config: EmbedderConfig, seed: u64) -> Result<Self, EmbedError> {
        config.validate()?;
        let mut rng = crate::rng::stream(seed, crate::rng::STREAM_INIT, 0);
        let mut params = Params::new();
        init_params(&config, &mut params, &mut rng);
        Ok(Model { config, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: EmbedderConfig, params: Params) -> Result<Self, EmbedError> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if expected.len() != params.len() {
            return Err(EmbedError::DimensionMismatch {
                what: String::from("parameter count"),
                expected: expected.len(),
                found: params.len(),
            });
        }
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(EmbedError::DimensionMismatch {
                        what: name.clone(),
                        expected: t.data().len(),
                        found: p.data().len(),
                    })
                }
                None => {
                    return Err(EmbedError::InvalidConfig(alloc::format!(
                        "missing parameter `{name}`"
                    )))
                }
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn into_params(self) -> Params {
        self.params
    }

    /// Embeds `nodes` on the tape using `bound` parameters.
    pub fn embed(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graph: &PageGraph,
        nodes: &[usize],
    ) -> Result<Embedding, EmbedError> {
        embed(&self.config, tape, bound, graph, nodes)
    }

    /// Classifier logits for `nodes`.
    pub fn logits(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graph: &PageGraph,
        nodes: &[usize],
    ) -> Result<Var, EmbedError> {
        let e = self.embed(tape, bound, graph, nodes)?;
        head_logits(tape, bound, e.z)
    }

    /// Class probabilities (`nodes.len() × 7`) without recording gradients.
    pub fn predict(&self, graph: &PageGraph, nodes: &[usize]) -> Result<Tensor, EmbedError> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let logits = self.logits(&mut tape, &bound, graph, nodes)?;
        let probs = tape.softmax_rows(logits)?;
        Ok(tape.value(probs).clone())
    }

    /// Raw head logits (`nodes.len() × 7`) without recording gradients.
    pub fn predict_logits(&self, graph: &PageGraph, nodes: &[usize]) -> Result<Tensor, EmbedError> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let logits = self.logits(&mut tape, &bound, graph, nodes)?;
        Ok(tape.value(logits).clone())
    }

    /// Probabilities for every node of the page, in document order.
    pub fn predict_page(&self, graph: &PageGraph) -> Result<Tensor, EmbedError> {
        let all: Vec<usize> = (0..graph.len()).collect();
        self.predict(graph, &all)
    }
}

fn check_inputs(
    cfg: &EmbedderConfig,
    graph: &PageGraph,
    nodes: &[usize],
) -> Result<(), EmbedError> {
    if graph.feature_dim() != cfg.input_dim {
        return Err(EmbedError::DimensionMismatch {
            what: String::from("node features"),
            expected: cfg.input_dim,
            found: graph.feature_dim(),
        });
    }
    if let Some(&node) = nodes.iter().find(|&&v| v >= graph.len()) {
        return Err(EmbedError::NodeOutOfRange {
            node,
            len: graph.len(),
        });
    }
    Ok(())
}

/// Dispatches to the embedder selected by `cfg.kind`.
pub fn embed(
    cfg: &EmbedderConfig,
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
) -> Result<Embedding, EmbedError> {
    check_inputs(cfg, graph, nodes)?;
    match cfg.kind {
        EmbedderKind::GcnMean => embed_gcn_mean(tape, bound, graph, nodes, cfg),
        EmbedderKind::GcnGru => embed_gcn_gru(tape, bound, graph, nodes, cfg),
        EmbedderKind::Te => embed_te(tape, bound, graph, nodes, cfg),
        EmbedderKind::LstmTd => embed_lstm_td(tape, bound, graph, nodes, cfg),
        EmbedderKind::LstmBu => embed_lstm_bu(tape, bound, graph, nodes, cfg),
        EmbedderKind::LstmBi => embed_lstm_bi(tape, bound, graph, nodes, cfg),
        EmbedderKind::LstmBie => embed_lstm_bie(tape, bound, graph, nodes, cfg),
        EmbedderKind::Fcn => embed_fcn(tape, bound, graph, nodes, cfg),
    }
}

/// `z A + a`.
pub fn head_logits(tape: &mut Tape, bound: &BoundParams, z: Var) -> Result<Var, EmbedError> {
    let zw = tape.matmul(z, bound.var("head.A"))?;
    Ok(tape.add_row(zw, bound.var("head.a"))?)
}

/// `softmax(z A + a)`: probabilities over the seven classes.
pub fn classify(tape: &mut Tape, bound: &BoundParams, z: Var) -> Result<Var, EmbedError> {
    let logits = head_logits(tape, bound, z)?;
    Ok(tape.softmax_rows(logits)?)
}

/// `input · W + b` for named parameters.
pub(crate) fn linear(
    tape: &mut Tape,
    bound: &BoundParams,
    input: Var,
    w: &str,
    b: &str,
) -> Result<Var, TensorError> {
    let y = tape.matmul(input, bound.var(w))?;
    tape.add_row(y, bound.var(b))
}

/// Feature matrix of the page as a tape constant.
pub(crate) fn features(tape: &mut Tape, graph: &PageGraph) -> Var {
    tape.constant(graph.features().clone())
}
