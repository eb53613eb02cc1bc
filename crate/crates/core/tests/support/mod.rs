//! Shared fixtures and straight-line reference implementations.
//!
//! The oracles here use plain `Vec<f64>` arithmetic in the column-vector
//! convention (`y = M x + b`) and never touch the tape, so they check the
//! batched embedders independently.
#![allow(dead_code)]

use nominator_core::dom::{ClassId, DomNode, DomTree, Label};
use nominator_core::embedders::EmbedderConfig;
use nominator_core::graph::{NeighborhoodMode, PageGraph};
use nominator_core::tensor::{Params, Tensor};
use nominator_core::Page;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Vector = Vec<f64>;
pub type Matrix = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parent array of a uniformly random recursive tree on `n` nodes.
pub fn random_parents(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<usize>> {
    (0..n)
        .map(|i| {
            if i == 0 {
                None
            } else {
                Some(rng.random_range(0..i))
            }
        })
        .collect()
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Tensor {
    let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(n, dim, data).unwrap()
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PageGraph {
    let parents = random_parents(rng, n);
    PageGraph::from_parts(parents, random_features(rng, n, dim)).unwrap()
}

/// A tree whose first `labels` stored labels sit on distinct random nodes.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize, labels: usize) -> DomTree {
    let parents = random_parents(rng, n);
    let mut nodes: Vec<DomNode> = parents
        .iter()
        .enumerate()
        .map(|(i, &p)| DomNode::new(i, p, "div"))
        .collect();
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    for (label, &id) in Label::ALL.iter().take(labels).zip(&ids) {
        nodes[id].label = Some(*label);
    }
    DomTree::new(format!("rand::{n}"), nodes).unwrap()
}

/// A random labeled page with random `dim`-wide features.
pub fn random_page(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Page {
    let tree = random_tree(rng, n, 5.min(n));
    let graph = PageGraph::from_parts(
        tree.nodes().iter().map(|v| v.parent).collect(),
        random_features(rng, n, dim),
    )
    .unwrap();
    Page::from_parts(tree, graph).unwrap()
}

// ---------------------------------------------------------------- tree oracles

pub fn ancestors(parents: &[Option<usize>], v: usize) -> Vec<usize> {
    let mut out = vec![v];
    let mut cur = v;
    while let Some(p) = parents[cur] {
        out.push(p);
        cur = p;
    }
    out
}

/// Lowest common ancestor by intersecting ancestor sets and taking the
/// deepest common member.
pub fn lca_bruteforce(parents: &[Option<usize>], nodes: &[usize]) -> Option<usize> {
    let first = nodes.first()?;
    let mut common = ancestors(parents, *first);
    for &v in &nodes[1..] {
        let a = ancestors(parents, v);
        common.retain(|x| a.contains(x));
    }
    common
        .into_iter()
        .max_by_key(|&c| ancestors(parents, c).len())
}

/// Parent first, then children in increasing id order.
pub fn neighbors(parents: &[Option<usize>], v: usize, mode: NeighborhoodMode) -> Vec<usize> {
    let mut out = Vec::new();
    if mode == NeighborhoodMode::ParentAndChildren {
        out.extend(parents[v]);
    }
    out.extend((0..parents.len()).filter(|&u| parents[u] == Some(v)));
    out
}

pub fn children(parents: &[Option<usize>], v: usize) -> Vec<usize> {
    (0..parents.len())
        .filter(|&u| parents[u] == Some(v))
        .collect()
}

pub fn parents_of(graph: &PageGraph) -> Vec<Option<usize>> {
    (0..graph.len()).map(|v| graph.parent(v)).collect()
}

/// Per positive class, the first node achieving the maximum probability.
pub fn nominate_scan(probs: &Tensor) -> [usize; 6] {
    let mut out = [0; 6];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut best = 0;
        for v in 1..probs.rows() {
            if probs.get(v, c) > probs.get(best, c) {
                best = v;
            }
        }
        *slot = best;
    }
    out
}

// ---------------------------------------------------------------- linear algebra

/// Column-vector view of a stored `in × out` weight: returns `out × in`.
pub fn weight(params: &Params, name: &str) -> Matrix {
    let t = params.get(name).unwrap_or_else(|| panic!("missing {name}"));
    (0..t.cols())
        .map(|j| (0..t.rows()).map(|i| t.get(i, j)).collect())
        .collect()
}

pub fn bias(params: &Params, name: &str) -> Vector {
    params.get(name).unwrap().data().to_vec()
}

pub fn matvec(m: &Matrix, x: &[f64]) -> Vector {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn affine(m: &Matrix, x: &[f64], b: &[f64]) -> Vector {
    matvec(m, x).iter().zip(b).map(|(a, c)| a + c).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn relu(a: &[f64]) -> Vector {
    a.iter().map(|x| x.max(0.0)).collect()
}

pub fn sigmoid(a: &[f64]) -> Vector {
    a.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect()
}

pub fn tanh(a: &[f64]) -> Vector {
    a.iter().map(|x| x.tanh()).collect()
}

pub fn concat(a: &[f64], b: &[f64]) -> Vector {
    a.iter().chain(b).copied().collect()
}

pub fn mean(rows: &[Vector], width: usize) -> Vector {
    if rows.is_empty() {
        return vec![0.0; width];
    }
    let mut out = vec![0.0; width];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter().map(|v| v / rows.len() as f64).collect()
}

pub fn block(v: &[f64], k: usize, d: usize) -> Vector {
    v[k * d..(k + 1) * d].to_vec()
}

pub fn row(t: &Tensor, r: usize) -> Vector {
    t.row(r).to_vec()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- embedder oracles

/// GCN-Mean, all layers, all nodes: returns the last layer's `z`.
pub fn gcn_mean(params: &Params, graph: &PageGraph, cfg: &EmbedderConfig) -> Vec<Vector> {
    let parents = parents_of(graph);
    let n = graph.len();
    let mut z: Vec<Vector> = (0..n).map(|v| row(graph.features(), v)).collect();
    for l in 0..cfg.layers {
        let vl = weight(params, &format!("gcn.{l}.V"));
        let bl = bias(params, &format!("gcn.{l}.b"));
        let wl = weight(params, &format!("gcn.{l}.W"));
        let wb = bias(params, &format!("gcn.{l}.w"));
        let next: Vec<Vector> = (0..n)
            .map(|v| {
                let msgs: Vec<Vector> = neighbors(&parents, v, cfg.neighborhood)
                    .iter()
                    .map(|&u| relu(&affine(&vl, &z[u], &bl)))
                    .collect();
                let h = mean(&msgs, cfg.dim);
                let k = relu(&affine(&wl, &concat(&z[v], &h), &wb));
                let norm = k.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    k
                } else {
                    k.iter().map(|x| x / norm).collect()
                }
            })
            .collect();
        z = next;
    }
    z
}

/// GRU step with gates (reset, update, candidate).
pub fn gru(params: &Params, prefix: &str, x: &[f64], h: &[f64], d: usize) -> Vector {
    let gi = affine(
        &weight(params, &format!("{prefix}.Wi")),
        x,
        &bias(params, &format!("{prefix}.bi")),
    );
    let gh = affine(
        &weight(params, &format!("{prefix}.Wh")),
        h,
        &bias(params, &format!("{prefix}.bh")),
    );
    let r = sigmoid(&add(&block(&gi, 0, d), &block(&gh, 0, d)));
    let u = sigmoid(&add(&block(&gi, 1, d), &block(&gh, 1, d)));
    let n = tanh(&add(&block(&gi, 2, d), &hadamard(&r, &block(&gh, 2, d))));
    (0..d).map(|j| (1.0 - u[j]) * n[j] + u[j] * h[j]).collect()
}

pub fn gcn_gru(params: &Params, graph: &PageGraph, cfg: &EmbedderConfig, v: usize) -> Vector {
    let parents = parents_of(graph);
    let x = row(graph.features(), v);
    let vm = weight(params, "ggru.V");
    let vb = bias(params, "ggru.b");
    let msgs: Vec<Vector> = neighbors(&parents, v, cfg.neighborhood)
        .iter()
        .map(|&u| affine(&vm, &row(graph.features(), u), &vb))
        .collect();
    let h = gru(params, "ggru", &x, &mean(&msgs, cfg.dim), cfg.dim);
    affine(
        &weight(params, "ggru.W"),
        &concat(&x, &h),
        &bias(params, "ggru.w"),
    )
}

pub fn fcn(params: &Params, graph: &PageGraph, v: usize) -> Vector {
    let x = row(graph.features(), v);
    let h = relu(&affine(
        &weight(params, "fcn.W1"),
        &x,
        &bias(params, "fcn.b1"),
    ));
    relu(&affine(
        &weight(params, "fcn.W2"),
        &h,
        &bias(params, "fcn.b2"),
    ))
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vector {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    x.iter()
        .zip(g)
        .zip(b)
        .map(|((v, g), b)| (v - mu) / (var + eps).sqrt() * g + b)
        .collect()
}

/// One post-norm transformer encoder layer evaluated at sequence position 0
/// of `[x_v, x_u for u in N(v)]` (neighbors truncated to `max_neighbors`).
pub fn te(
    params: &Params,
    graph: &PageGraph,
    cfg: &EmbedderConfig,
    v: usize,
    max_neighbors: usize,
) -> Vector {
    let parents = parents_of(graph);
    let d = cfg.dim;
    let heads = cfg.heads;
    let dk = d / heads;
    let p = weight(params, "te.P");
    let pb = bias(params, "te.p");
    let mut seq = vec![v];
    seq.extend(
        neighbors(&parents, v, cfg.neighborhood)
            .into_iter()
            .take(max_neighbors),
    );
    let s: Vec<Vector> = seq
        .iter()
        .map(|&u| affine(&p, &row(graph.features(), u), &pb))
        .collect();
    let proj = |name: &str, b: &str, x: &[f64]| affine(&weight(params, name), x, &bias(params, b));
    let q = proj("te.Wq", "te.bq", &s[0]);
    let ks: Vec<Vector> = s.iter().map(|x| proj("te.Wk", "te.bk", x)).collect();
    let vs: Vec<Vector> = s.iter().map(|x| proj("te.Wv", "te.bv", x)).collect();
    let mut att = Vec::with_capacity(d);
    for h in 0..heads {
        let qh = block(&q, h, dk);
        let scores: Vec<f64> = ks
            .iter()
            .map(|k| {
                qh.iter()
                    .zip(block(k, h, dk))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / (dk as f64).sqrt()
            })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let mut out = vec![0.0; dk];
        for (w, vv) in e.iter().zip(&vs) {
            for (o, x) in out.iter_mut().zip(block(vv, h, dk)) {
                *o += w / total * x;
            }
        }
        att.extend(out);
    }
    let a = proj("te.Wo", "te.bo", &att);
    let eps = 1e-5;
    let r = layer_norm(
        &add(&s[0], &a),
        &bias(params, "te.ln1.g"),
        &bias(params, "te.ln1.b"),
        eps,
    );
    let f = proj("te.F2", "te.f2", &relu(&proj("te.F1", "te.f1", &r)));
    layer_norm(
        &add(&r, &f),
        &bias(params, "te.ln2.g"),
        &bias(params, "te.ln2.b"),
        eps,
    )
}

/// Standard LSTM cell with gate blocks (input, forget, output, candidate).
pub fn lstm(
    params: &Params,
    prefix: &str,
    x: &[f64],
    h: &[f64],
    c: &[f64],
    d: usize,
) -> (Vector, Vector) {
    let g = add(
        &matvec(&weight(params, &format!("{prefix}.W")), x),
        &affine(
            &weight(params, &format!("{prefix}.U")),
            h,
            &bias(params, &format!("{prefix}.b")),
        ),
    );
    let i = sigmoid(&block(&g, 0, d));
    let f = sigmoid(&block(&g, 1, d));
    let o = sigmoid(&block(&g, 2, d));
    let u = tanh(&block(&g, 3, d));
    let c2 = add(&hadamard(&i, &u), &hadamard(&f, c));
    let h2 = hadamard(&o, &tanh(&c2));
    (h2, c2)
}

/// Top-down LSTM unrolled along the root path of `v` over `inputs`.
pub fn lstm_td_on(
    params: &Params,
    prefix: &str,
    parents: &[Option<usize>],
    inputs: &[Vector],
    v: usize,
    d: usize,
) -> Vector {
    let mut path = ancestors(parents, v);
    path.reverse();
    let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
    for u in path {
        (h, c) = lstm(params, prefix, &inputs[u], &h, &c, d);
    }
    h
}

pub fn lstm_td(params: &Params, graph: &PageGraph, cfg: &EmbedderConfig, v: usize) -> Vector {
    let inputs: Vec<Vector> = (0..graph.len()).map(|u| row(graph.features(), u)).collect();
    lstm_td_on(params, "td", &parents_of(graph), &inputs, v, cfg.dim)
}

/// Child-sum tree-LSTM evaluated recursively from the leaves of `v`'s subtree.
/// Gate blocks of `bu.W`/`bu.b` are (input, output, candidate, forget).
pub fn lstm_bu_state(
    params: &Params,
    graph: &PageGraph,
    cfg: &EmbedderConfig,
    v: usize,
) -> (Vector, Vector) {
    let d = cfg.dim;
    let parents = parents_of(graph);
    let kids: Vec<(Vector, Vector)> = children(&parents, v)
        .into_iter()
        .map(|k| lstm_bu_state(params, graph, cfg, k))
        .collect();
    let x = row(graph.features(), v);
    let gx = affine(&weight(params, "bu.W"), &x, &bias(params, "bu.b"));
    let h_sum = kids.iter().fold(vec![0.0; d], |acc, (h, _)| add(&acc, h));
    let gh = matvec(&weight(params, "bu.U"), &h_sum);
    let i = sigmoid(&add(&block(&gx, 0, d), &block(&gh, 0, d)));
    let o = sigmoid(&add(&block(&gx, 1, d), &block(&gh, 1, d)));
    let u = tanh(&add(&block(&gx, 2, d), &block(&gh, 2, d)));
    let uf = weight(params, "bu.Uf");
    let mut c = hadamard(&i, &u);
    for (hk, ck) in &kids {
        let f = sigmoid(&add(&block(&gx, 3, d), &matvec(&uf, hk)));
        c = add(&c, &hadamard(&f, ck));
    }
    let h = hadamard(&o, &tanh(&c));
    (h, c)
}

pub fn lstm_bu(params: &Params, graph: &PageGraph, cfg: &EmbedderConfig, v: usize) -> Vector {
    lstm_bu_state(params, graph, cfg, v).0
}

pub fn lstm_bie(params: &Params, graph: &PageGraph, cfg: &EmbedderConfig, v: usize) -> Vector {
    let up: Vec<Vector> = (0..graph.len())
        .map(|u| lstm_bu(params, graph, cfg, u))
        .collect();
    let down = lstm_td_on(params, "tde", &parents_of(graph), &up, v, cfg.dim);
    concat(&down, &up[v])
}

/// Head probabilities `softmax(A z + a)`.
pub fn head(params: &Params, z: &[f64]) -> Vector {
    let logits = affine(&weight(params, "head.A"), z, &bias(params, "head.a"));
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

pub fn class_of(i: usize) -> ClassId {
    ClassId::from_index(i).unwrap()
}

/// Embedder output rows for `nodes`, computed on a constant tape.
pub fn embed_rows(model: &nominator_core::Model, graph: &PageGraph, nodes: &[usize]) -> Tensor {
    let mut tape = nominator_core::Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let e = model.embed(&mut tape, &bound, graph, nodes).unwrap();
    tape.value(e.z).clone()
}
