//! Context-oblivious two-layer fully connected baseline.

use rand::Rng;

use super::{features, init_linear, linear, EmbedError, EmbedderConfig, Embedding};
use crate::graph::PageGraph;
use crate::tensor::{BoundParams, Params, Tape};

pub(super) fn init<R: Rng + ?Sized>(cfg: &EmbedderConfig, p: &mut Params, rng: &mut R) {
    init_linear(p, "fcn.W1", "fcn.b1", cfg.input_dim, cfg.dim, rng);
    init_linear(p, "fcn.W2", "fcn.b2", cfg.dim, cfg.dim, rng);
}

/// `relu(relu(x W1 + b1) W2 + b2)` on each requested node alone.
pub fn embed_fcn(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &PageGraph,
    nodes: &[usize],
    _cfg: &EmbedderConfig,
) -> Result<Embedding, EmbedError> {
    let x_all = features(tape, graph);
    let x = tape.gather_rows(x_all, nodes)?;
    let h = linear(tape, bound, x, "fcn.W1", "fcn.b1")?;
    let h = tape.relu(h)?;
    let z = linear(tape, bound, h, "fcn.W2", "fcn.b2")?;
    let z = tape.relu(z)?;
    Ok(Embedding {
        z,
        cells: nodes.len(),
    })
}
