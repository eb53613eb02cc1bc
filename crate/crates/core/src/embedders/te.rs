//! Single-layer transformer encoder over `[x_v, x_u for u in N(v)]`.
//!
//! No positional encodings are used. Features are projected to width `d`
//! first. The embedding is the encoder output at sequence position 0; since
//! everything after attention is row-wise, only that row's query is computed:
//!
//! ```text
//! s    = x P + p                      (every sequence element)
//! a    = MultiHead(q = s_v, keys/values = s_v, s_u...)
//! r    = LayerNorm(s_v + a)
//! z_v  = LayerNorm(r + relu(r F1 + f1) F2 + f2)
//! ```

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{
    features, init_linear, linear, EmbedError, EmbedderConfig, Embedding, TE_MAX_NEIGHBORS,
};
use crate::graph::PageGraph;
use crate::tensor::{BoundParams, Params, Tape, Tensor, TensorError, Var};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

pub(super) fn init<R: Rng + ?Sized>(cfg: &EmbedderConfig, p: &mut Params, rng: &mut R) {
    let (input, d, ff) = (cfg.input_dim, cfg.dim, cfg.ff_dim());
    init_linear(p, "te.P", "te.p", input, d, rng);
    for m in ["q", "k", "v", "o"] {
        init_linear(p, &format!("te.W{m}"), &format!("te.b{m}"), d, d, rng);
    }
    init_linear(p, "te.F1", "te.f1", d, ff, rng);
    init_linear(p, "te.F2", "te.f2", ff, d, rng);
    for ln in ["ln1", "ln2"] {
        p.insert(format!("te.{ln}.g"), Tensor::filled(1, d, 1.0));
        p.insert(format!("te.{ln}.b"), Tensor::zeros(1, d));
    }
}

fn layer_norm(
    tape: &mut Tape,
    bound: &BoundParams,
    x: Var,
    name: &str,
) -> Result<Var, TensorError> {
    let n = tape.layer_norm_rows(x, LAYER_NORM_EPS)?;
    let g = tape.mul_row(n, bound.var(&format!("te.{name}.g")))?;
    tape.add_row(g, bound.var(&format!("te.{name}.b")))
}

/// Sequence of row indices for node `v`: itself first, then up to
/// [`TE_MAX_NEIGHBORS`] neighbors in document order.
pub(crate) fn sequence(graph: &PageGraph, v: usize, cfg: &EmbedderConfig) -> Vec<usize> {
    let mut seq = Vec::with_capacity(1 + TE_MAX_NEIGHBORS);
    seq.push(v);
    seq.extend(
        graph
            .neighborhood(v, cfg.neighborhood)
            .into_iter()
            .take(TE_MAX_NEIGHBORS),
    );
    seq
}

pub fn embed_te(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
    cfg: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let d = cfg.dim;
    let dk = d / cfg.heads;
    let x = features(tape, graph);
    let s_all = linear(tape, bound, x, "te.P", "te.p")?;
    let s = tape.gather_rows(s_all, nodes)?;
    let q = linear(tape, bound, s, "te.Wq", "te.bq")?;
    let k = linear(tape, bound, s_all, "te.Wk", "te.bk")?;
    let v = linear(tape, bound, s_all, "te.Wv", "te.bv")?;
    let lists: Vec<Vec<usize>> = nodes.iter().map(|&n| sequence(graph, n, cfg)).collect();
    let scale = 1.0 / libm::sqrt(dk as f64);
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.col_slice(q, h * dk, dk)?;
        let kh = tape.col_slice(k, h * dk, dk)?;
        let vh = tape.col_slice(v, h * dk, dk)?;
        heads.push(tape.segment_attention(qh, kh, vh, lists.clone(), scale)?);
    }
    let att = tape.concat_cols(&heads)?;
    let att = linear(tape, bound, att, "te.Wo", "te.bo")?;
    let r = tape.add(s, att)?;
    let r = layer_norm(tape, bound, r, "ln1")?;
    let ff = linear(tape, bound, r, "te.F1", "te.f1")?;
    let ff = tape.relu(ff)?;
    let ff = linear(tape, bound, ff, "te.F2", "te.f2")?;
    let out = tape.add(r, ff)?;
    let z = layer_norm(tape, bound, out, "ln2")?;
    Ok(Embedding {
        z,
        cells: nodes.len(),
    })
}
