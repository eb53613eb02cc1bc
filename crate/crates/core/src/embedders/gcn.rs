//! GCN-Mean: stacked mean-aggregation convolutions with L2-normalized outputs.
//!
//! Per layer `l`, for every node `v`:
//!
//! ```text
//! h_v = mean over u in N(v) of relu(z_u V_l + b_l)
//! k_v = relu([z_v, h_v] W_l + w_l)
//! z_v = k_v / |k_v|
//! ```
//!
//! All nodes are computed at each layer so that layer `l` sees the layer
//! `l - 1` outputs of every neighbor.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{features, init_linear, linear, EmbedError, EmbedderConfig, Embedding};
use crate::graph::PageGraph;
use crate::tensor::{BoundParams, Params, Tape, Var};

pub(super) fn init<R: Rng + ?Sized>(cfg: &EmbedderConfig, p: &mut Params, rng: &mut R) {
    let d = cfg.dim;
    for l in 0..cfg.layers {
        let input = if l == 0 { cfg.input_dim } else { d };
        init_linear(
            p,
            &format!("gcn.{l}.V"),
            &format!("gcn.{l}.b"),
            input,
            d,
            rng,
        );
        init_linear(
            p,
            &format!("gcn.{l}.W"),
            &format!("gcn.{l}.w"),
            input + d,
            d,
            rng,
        );
    }
}

/// Outputs of every layer for all nodes (`n × d` each).
pub fn gcn_mean_layers(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    cfg: &EmbedderConfig,
) -> Result<Vec<Var>, EmbedError> {
    let segments: Vec<Vec<usize>> = (0..graph.len())
        .map(|v| graph.neighborhood(v, cfg.neighborhood))
        .collect();
    let mut z = features(tape, graph);
    let mut outputs = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let msg = linear(tape, bound, z, &format!("gcn.{l}.V"), &format!("gcn.{l}.b"))?;
        let msg = tape.relu(msg)?;
        let h = tape.segment_mean(msg, segments.clone())?;
        let cat = tape.concat_cols(&[z, h])?;
        let k = linear(
            tape,
            bound,
            cat,
            &format!("gcn.{l}.W"),
            &format!("gcn.{l}.w"),
        )?;
        let k = tape.relu(k)?;
        z = tape.l2_normalize_rows(k)?;
        outputs.push(z);
    }
    Ok(outputs)
}

pub fn embed_gcn_mean(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
    cfg: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let layers = gcn_mean_layers(tape, bound, graph, cfg)?;
    let last = *layers.last().expect("at least one layer");
    let z = tape.gather_rows(last, nodes)?;
    Ok(Embedding {
        z,
        cells: cfg.layers * graph.len(),
    })
}
