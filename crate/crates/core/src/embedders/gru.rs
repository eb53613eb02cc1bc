//! GCN-GRU: a GRU step whose previous state is the mean projected
//! neighborhood, followed by a linear map of `[x_v, h_v]`.

use alloc::vec::Vec;

use rand::Rng;

use super::{features, init_linear, linear, EmbedError, EmbedderConfig, Embedding};
use crate::graph::PageGraph;
use crate::tensor::{BoundParams, Params, Tape, TensorError, Var};

pub(super) fn init<R: Rng + ?Sized>(cfg: &EmbedderConfig, p: &mut Params, rng: &mut R) {
    let (input, d) = (cfg.input_dim, cfg.dim);
    init_linear(p, "ggru.V", "ggru.b", input, d, rng);
    init_linear(p, "ggru.Wi", "ggru.bi", input, 3 * d, rng);
    init_linear(p, "ggru.Wh", "ggru.bh", d, 3 * d, rng);
    init_linear(p, "ggru.W", "ggru.w", input + d, d, rng);
}

/// Input-side and hidden-side weights of a GRU cell.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub wi: Var,
    pub bi: Var,
    pub wh: Var,
    pub bh: Var,
}

/// Standard GRU step with gates ordered (reset, update, candidate):
///
/// ```text
/// r = σ(x Wi_r + bi_r + h Wh_r + bh_r)
/// u = σ(x Wi_u + bi_u + h Wh_u + bh_u)
/// n = tanh(x Wi_n + bi_n + r ⊙ (h Wh_n + bh_n))
/// h' = (1 - u) ⊙ n + u ⊙ h
/// ```
pub fn gru_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    w: &GruWeights,
    d: usize,
) -> Result<Var, TensorError> {
    let GruWeights { wi, bi, wh, bh } = *w;
    let gi = tape.matmul(x, wi)?;
    let gi = tape.add_row(gi, bi)?;
    let gh = tape.matmul(h, wh)?;
    let gh = tape.add_row(gh, bh)?;
    let (ir, iu, inn) = (
        tape.col_slice(gi, 0, d)?,
        tape.col_slice(gi, d, d)?,
        tape.col_slice(gi, 2 * d, d)?,
    );
    let (hr, hu, hn) = (
        tape.col_slice(gh, 0, d)?,
        tape.col_slice(gh, d, d)?,
        tape.col_slice(gh, 2 * d, d)?,
    );
    let r = tape.add(ir, hr)?;
    let r = tape.sigmoid(r)?;
    let u = tape.add(iu, hu)?;
    let u = tape.sigmoid(u)?;
    let rh = tape.mul(r, hn)?;
    let n = tape.add(inn, rh)?;
    let n = tape.tanh(n)?;
    let diff = tape.sub(h, n)?;
    let ud = tape.mul(u, diff)?;
    tape.add(n, ud)
}

pub fn embed_gcn_gru(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
    cfg: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let d = cfg.dim;
    let x_all = features(tape, graph);
    let proj = linear(tape, bound, x_all, "ggru.V", "ggru.b")?;
    let segments: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&v| graph.neighborhood(v, cfg.neighborhood))
        .collect();
    let m = tape.segment_mean(proj, segments)?;
    let x = tape.gather_rows(x_all, nodes)?;
    let w = GruWeights {
        wi: bound.var("ggru.Wi"),
        bi: bound.var("ggru.bi"),
        wh: bound.var("ggru.Wh"),
        bh: bound.var("ggru.bh"),
    };
    let h = gru_cell(tape, x, m, &w, d)?;
    let cat = tape.concat_cols(&[x, h])?;
    let z = linear(tape, bound, cat, "ggru.W", "ggru.w")?;
    Ok(Embedding {
        z,
        cells: nodes.len(),
    })
}
