//! Tree-LSTM embedders.
//!
//! * top-down: a standard LSTM run along the root→v path, each node taking
//!   its parent's `(h, c)`; the root starts from zeros.
//! * bottom-up: child-sum tree-LSTM with one forget gate per child.
//! * bidirectional: `[top-down, bottom-up]`.
//! * global bidirectional: a top-down LSTM over the bottom-up states, then
//!   `[top-down-over-bottom-up, bottom-up]`.
//!
//! Passes are evaluated level by level (by depth going down, by height going
//! up) so each node's cell runs exactly once per direction.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{features, init_linear, EmbedError, EmbedderConfig, Embedding};
use crate::graph::PageGraph;
use crate::tensor::{BoundParams, Params, Tape, Tensor, TensorError, Var};

/// Weights of a standard LSTM cell; gate blocks ordered (input, forget,
/// output, candidate).
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `in × 4d`
    pub w: Var,
    /// `d × 4d`
    pub u: Var,
    /// `1 × 4d`
    pub b: Var,
}

impl LstmWeights {
    fn bind(bound: &BoundParams, prefix: &str) -> Self {
        LstmWeights {
            w: bound.var(&alloc::format!("{prefix}.W")),
            u: bound.var(&alloc::format!("{prefix}.U")),
            b: bound.var(&alloc::format!("{prefix}.b")),
        }
    }
}

/// Bias row of width `4d` with the block at `forget` set to one.
fn gate_bias(d: usize, forget: usize) -> Tensor {
    let mut b = Tensor::zeros(1, 4 * d);
    for j in forget * d..(forget + 1) * d {
        b.set(0, j, 1.0);
    }
    b
}

pub(super) fn init_td<R: Rng + ?Sized>(
    cfg: &EmbedderConfig,
    prefix: &str,
    input: usize,
    p: &mut Params,
    rng: &mut R,
) {
    let d = cfg.dim;
    let (w, u, b) = (
        alloc::format!("{prefix}.W"),
        alloc::format!("{prefix}.U"),
        alloc::format!("{prefix}.b"),
    );
    init_linear(p, &w, &b, input, 4 * d, rng);
    p.insert(u, crate::tensor::glorot(d, 4 * d, rng));
    p.insert(b, gate_bias(d, 1));
}

pub(super) fn init_bu<R: Rng + ?Sized>(cfg: &EmbedderConfig, p: &mut Params, rng: &mut R) {
    let d = cfg.dim;
    init_linear(p, "bu.W", "bu.b", cfg.input_dim, 4 * d, rng);
    p.insert("bu.U", crate::tensor::glorot(d, 3 * d, rng));
    p.insert("bu.Uf", crate::tensor::glorot(d, d, rng));
    // gate blocks ordered (input, output, candidate, forget)
    p.insert("bu.b", gate_bias(d, 3));
}

/// One LSTM step for a batch of rows:
///
/// ```text
/// [i, f, o, u] = x W + h U + b
/// c' = σ(i) ⊙ tanh(u) + σ(f) ⊙ c
/// h' = σ(o) ⊙ tanh(c')
/// ```
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    w: &LstmWeights,
    d: usize,
) -> Result<(Var, Var), TensorError> {
    let gx = tape.matmul(x, w.w)?;
    let gh = tape.matmul(h, w.u)?;
    let g = tape.add(gx, gh)?;
    let g = tape.add_row(g, w.b)?;
    let i = tape.col_slice(g, 0, d)?;
    let i = tape.sigmoid(i)?;
    let f = tape.col_slice(g, d, d)?;
    let f = tape.sigmoid(f)?;
    let o = tape.col_slice(g, 2 * d, d)?;
    let o = tape.sigmoid(o)?;
    let u = tape.col_slice(g, 3 * d, d)?;
    let u = tape.tanh(u)?;
    let iu = tape.mul(i, u)?;
    let fc = tape.mul(f, c)?;
    let c_new = tape.add(iu, fc)?;
    let tc = tape.tanh(c_new)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

type Loc = (Var, usize);

/// Top-down pass over all nodes; returns the hidden-state location of each.
fn top_down(
    tape: &mut Tape,
    graph: &PageGraph,
    input: Var,
    w: &LstmWeights,
    d: usize,
) -> Result<Vec<Loc>, TensorError> {
    let n = graph.len();
    let mut h_loc: Vec<Loc> = Vec::with_capacity(n);
    let mut c_loc: Vec<Loc> = Vec::with_capacity(n);
    let placeholder = tape.constant(Tensor::zeros(0, d));
    h_loc.resize(n, (placeholder, 0));
    c_loc.resize(n, (placeholder, 0));
    for level in graph.by_depth() {
        let x = tape.gather_rows(input, level)?;
        let (h_prev, c_prev) = if graph.parent(level[0]).is_none() {
            let z = tape.constant(Tensor::zeros(level.len(), d));
            (z, z)
        } else {
            let hp: Vec<Loc> = level
                .iter()
                .map(|&v| h_loc[graph.parent(v).expect("non-root")])
                .collect();
            let cp: Vec<Loc> = level
                .iter()
                .map(|&v| c_loc[graph.parent(v).expect("non-root")])
                .collect();
            (tape.gather(&hp, d)?, tape.gather(&cp, d)?)
        };
        let (h, c) = lstm_cell(tape, x, h_prev, c_prev, w, d)?;
        for (row, &v) in level.iter().enumerate() {
            h_loc[v] = (h, row);
            c_loc[v] = (c, row);
        }
    }
    Ok(h_loc)
}

/// Child-sum bottom-up pass over all nodes.
///
/// ```text
/// h~ = Σ_k h_k
/// i, o, u = σ(x W_i + h~ U_i + b_i), σ(..), tanh(..)
/// f_k = σ(x W_f + h_k U_f + b_f)
/// c = i ⊙ u + Σ_k f_k ⊙ c_k
/// h = o ⊙ tanh(c)
/// ```
fn bottom_up(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    input: Var,
    d: usize,
) -> Result<Vec<Loc>, TensorError> {
    let n = graph.len();
    let (w, u, uf, b) = (
        bound.var("bu.W"),
        bound.var("bu.U"),
        bound.var("bu.Uf"),
        bound.var("bu.b"),
    );
    let placeholder = tape.constant(Tensor::zeros(0, d));
    let mut h_loc: Vec<Loc> = vec![(placeholder, 0); n];
    let mut c_loc: Vec<Loc> = vec![(placeholder, 0); n];
    for level in graph.by_height() {
        let m = level.len();
        let x = tape.gather_rows(input, level)?;
        let gx = tape.matmul(x, w)?;
        let gx = tape.add_row(gx, b)?;

        let mut child_h: Vec<Loc> = Vec::new();
        let mut child_c: Vec<Loc> = Vec::new();
        let mut owner: Vec<usize> = Vec::new();
        let mut segments: Vec<Vec<usize>> = Vec::with_capacity(m);
        for (row, &v) in level.iter().enumerate() {
            let mut kids = graph.children(v).to_vec();
            kids.sort_unstable();
            let mut seg = Vec::with_capacity(kids.len());
            for k in kids {
                seg.push(child_h.len());
                child_h.push(h_loc[k]);
                child_c.push(c_loc[k]);
                owner.push(row);
            }
            segments.push(seg);
        }

        let iou_x = tape.col_slice(gx, 0, 3 * d)?;
        let (iou, fc) = if child_h.is_empty() {
            (iou_x, tape.constant(Tensor::zeros(m, d)))
        } else {
            let hc = tape.gather(&child_h, d)?;
            let cc = tape.gather(&child_c, d)?;
            let h_sum = tape.segment_sum(hc, segments.clone())?;
            let hu = tape.matmul(h_sum, u)?;
            let iou = tape.add(iou_x, hu)?;
            let fx = tape.col_slice(gx, 3 * d, d)?;
            let fx = tape.gather_rows(fx, &owner)?;
            let fh = tape.matmul(hc, uf)?;
            let f = tape.add(fx, fh)?;
            let f = tape.sigmoid(f)?;
            let fcc = tape.mul(f, cc)?;
            (iou, tape.segment_sum(fcc, segments)?)
        };
        let i = tape.col_slice(iou, 0, d)?;
        let i = tape.sigmoid(i)?;
        let o = tape.col_slice(iou, d, d)?;
        let o = tape.sigmoid(o)?;
        let cand = tape.col_slice(iou, 2 * d, d)?;
        let cand = tape.tanh(cand)?;
        let ic = tape.mul(i, cand)?;
        let c = tape.add(ic, fc)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        for (row, &v) in level.iter().enumerate() {
            h_loc[v] = (h, row);
            c_loc[v] = (c, row);
        }
    }
    Ok(h_loc)
}

fn pick(tape: &mut Tape, locs: &[Loc], nodes: &[usize], d: usize) -> Result<Var, TensorError> {
    let sel: Vec<Loc> = nodes.iter().map(|&v| locs[v]).collect();
    tape.gather(&sel, d)
}

pub fn embed_lstm_td(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
    cfg: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let x = features(tape, graph);
    let locs = top_down(tape, graph, x, &LstmWeights::bind(bound, "td"), cfg.dim)?;
    let z = pick(tape, &locs, nodes, cfg.dim)?;
    Ok(Embedding {
        z,
        cells: graph.len(),
    })
}

pub fn embed_lstm_bu(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
    cfg: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let x = features(tape, graph);
    let locs = bottom_up(tape, bound, graph, x, cfg.dim)?;
    let z = pick(tape, &locs, nodes, cfg.dim)?;
    Ok(Embedding {
        z,
        cells: graph.len(),
    })
}

pub fn embed_lstm_bi(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
    cfg: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let down = embed_lstm_td(tape, bound, graph, nodes, cfg)?;
    let up = embed_lstm_bu(tape, bound, graph, nodes, cfg)?;
    let z = tape.concat_cols(&[down.z, up.z])?;
    Ok(Embedding {
        z,
        cells: down.cells + up.cells,
    })
}

pub fn embed_lstm_bie(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
    cfg: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let d = cfg.dim;
    let x = features(tape, graph);
    let up_locs = bottom_up(tape, bound, graph, x, d)?;
    let all: Vec<usize> = (0..graph.len()).collect();
    let up_all = pick(tape, &up_locs, &all, d)?;
    let down_locs = top_down(tape, graph, up_all, &LstmWeights::bind(bound, "tde"), d)?;
    let down = pick(tape, &down_locs, nodes, d)?;
    let up = tape.gather_rows(up_all, nodes)?;
    let z = tape.concat_cols(&[down, up])?;
    Ok(Embedding {
        z,
        cells: 2 * graph.len(),
    })
}
