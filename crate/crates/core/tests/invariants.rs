//! Structural properties of the embedders and evaluation.
#![allow(clippy::needless_range_loop)]

mod support;

use nominator_core::embedders::{EmbedderConfig, EmbedderKind};
use nominator_core::eval::{self, EvalConfig};
use nominator_core::exec::Sequential;
use nominator_core::{Model, PageGraph, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use support::*;

fn all_nodes(n: usize) -> Vec<usize> {
    (0..n).collect()
}

#[test]
fn gcn_mean_rows_are_unit_or_zero() {
    let mut r = rng(31);
    for seed in 0..20 {
        let n = r.random_range(1..=40);
        let graph = random_graph(&mut r, n, 9);
        for layers in 1..=3 {
            let cfg = EmbedderConfig::new(EmbedderKind::GcnMean, 9)
                .with_dim(4)
                .with_layers(layers);
            let model = Model::new(cfg, seed).unwrap();
            let z = embed_rows(&model, &graph, &all_nodes(n));
            for v in 0..n {
                let norm = z.row(v).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(
                    norm == 0.0 || (norm - 1.0).abs() <= 1e-6,
                    "layers {layers} node {v}: {norm}"
                );
            }
        }
    }
}

/// The same graph with every child list shuffled.
fn shuffled_children(graph: &PageGraph, r: &mut rand_chacha::ChaCha8Rng) -> PageGraph {
    let mut g = graph.clone();
    for v in 0..graph.len() {
        let mut order = graph.children(v).to_vec();
        order.shuffle(r);
        g = g.with_children_order(v, order);
    }
    g
}

#[test]
fn child_order_does_not_change_embeddings() {
    let mut r = rng(32);
    for kind in EmbedderKind::ALL {
        for seed in 0..5 {
            let n = r.random_range(5..=40);
            let graph = random_graph(&mut r, n, 8);
            let permuted = shuffled_children(&graph, &mut r);
            let model =
                Model::new(EmbedderConfig::new(kind, 8).with_dim(6).with_heads(2), seed).unwrap();
            let a = embed_rows(&model, &graph, &all_nodes(n));
            let b = embed_rows(&model, &permuted, &all_nodes(n));
            match kind {
                EmbedderKind::Te => assert!(max_abs_diff(a.data(), b.data()) <= 1e-9),
                _ => assert_eq!(a, b, "{kind}"),
            }
            let pa = model.predict_page(&graph).unwrap();
            let pb = model.predict_page(&permuted).unwrap();
            assert_eq!(nominate_scan(&pa), nominate_scan(&pb));
        }
    }
}

/// Re-draws the feature rows of every node outside `keep`.
fn perturb_outside(
    graph: &PageGraph,
    keep: &[usize],
    r: &mut rand_chacha::ChaCha8Rng,
) -> PageGraph {
    let mut x = graph.features().clone();
    for v in 0..graph.len() {
        if !keep.contains(&v) {
            for c in 0..x.cols() {
                x.set(v, c, r.random_range(-3.0..3.0));
            }
        }
    }
    graph.with_features(x).unwrap()
}

fn check_locality(kind: EmbedderKind, region: impl Fn(&PageGraph, usize) -> Vec<usize>) {
    let mut r = rng(33 + kind as u64);
    for seed in 0..20 {
        let n = r.random_range(2..=30);
        let graph = random_graph(&mut r, n, 7);
        let model = Model::new(EmbedderConfig::new(kind, 7).with_dim(5), seed).unwrap();
        let v = r.random_range(0..n);
        let keep = region(&graph, v);
        let moved = perturb_outside(&graph, &keep, &mut r);
        let a = embed_rows(&model, &graph, &[v]);
        let b = embed_rows(&model, &moved, &[v]);
        assert_eq!(a, b, "{kind} node {v}");
    }
}

#[test]
fn lstm_td_depends_only_on_root_path() {
    check_locality(EmbedderKind::LstmTd, |g, v| g.root_path(v));
}

#[test]
fn lstm_bu_depends_only_on_subtree() {
    check_locality(EmbedderKind::LstmBu, |g, v| g.subtree(v));
}

#[test]
fn fcn_depends_only_on_the_node() {
    check_locality(EmbedderKind::Fcn, |_, v| vec![v]);
}

#[test]
fn locality_probe_detects_dependence() {
    // the perturbation does reach a node's own embedding
    let mut r = rng(34);
    let graph = random_graph(&mut r, 10, 7);
    let model = Model::new(EmbedderConfig::new(EmbedderKind::LstmTd, 7).with_dim(5), 0).unwrap();
    let moved = perturb_outside(&graph, &[], &mut r);
    assert_ne!(
        embed_rows(&model, &graph, &[5]),
        embed_rows(&model, &moved, &[5])
    );
}

#[test]
fn lstm_bi_is_concat_of_directions() {
    let mut r = rng(35);
    for seed in 0..5 {
        let n = r.random_range(1..=30);
        let graph = random_graph(&mut r, n, 7);
        let bi = Model::new(
            EmbedderConfig::new(EmbedderKind::LstmBi, 7).with_dim(4),
            seed,
        )
        .unwrap();
        let mut td =
            Model::new(EmbedderConfig::new(EmbedderKind::LstmTd, 7).with_dim(4), 99).unwrap();
        let mut bu =
            Model::new(EmbedderConfig::new(EmbedderKind::LstmBu, 7).with_dim(4), 99).unwrap();
        for (name, value) in bi.params().iter() {
            for m in [&mut td, &mut bu] {
                if !name.starts_with("head.") {
                    if let Some(slot) = m.params_mut().get_mut(name) {
                        *slot = value.clone();
                    }
                }
            }
        }
        let z = embed_rows(&bi, &graph, &all_nodes(n));
        let zt = embed_rows(&td, &graph, &all_nodes(n));
        let zb = embed_rows(&bu, &graph, &all_nodes(n));
        for v in 0..n {
            assert_eq!(z.row(v), concat(zt.row(v), zb.row(v)).as_slice());
        }
    }
}

fn cells(kind: EmbedderKind, layers: usize, graph: &PageGraph) -> usize {
    let model = Model::new(
        EmbedderConfig::new(kind, graph.feature_dim())
            .with_dim(4)
            .with_layers(layers),
        0,
    )
    .unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    model
        .embed(&mut tape, &bound, graph, &all_nodes(graph.len()))
        .unwrap()
        .cells
}

#[test]
fn full_page_cost_is_linear() {
    let mut r = rng(36);
    for n in [1, 10, 100, 400] {
        let graph = random_graph(&mut r, n, 5);
        for layers in 1..=3 {
            assert_eq!(cells(EmbedderKind::GcnMean, layers, &graph), layers * n);
        }
        assert_eq!(cells(EmbedderKind::LstmTd, 1, &graph), n);
        assert_eq!(cells(EmbedderKind::LstmBu, 1, &graph), n);
        assert_eq!(cells(EmbedderKind::LstmBi, 1, &graph), 2 * n);
        assert_eq!(cells(EmbedderKind::LstmBie, 1, &graph), 2 * n);
    }
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let mut r = rng(37);
    let pages: Vec<_> = (0..10).map(|_| random_page(&mut r, 20, 6)).collect();
    for kind in EmbedderKind::ALL {
        let model = Model::new(EmbedderConfig::new(kind, 6).with_dim(4).with_heads(2), 1).unwrap();
        let before = model.params().checksum();
        eval::evaluate(&model, &pages, &EvalConfig::default(), &Sequential).unwrap();
        for p in &pages {
            eval::nominate(&model, p).unwrap();
            eval::confidence_gap(&model, p).unwrap();
        }
        assert_eq!(model.params().checksum(), before, "{kind}");
    }
}

#[test]
fn nomination_survives_monotone_transforms() {
    let mut r = rng(38);
    let transforms: [fn(f64) -> f64; 3] = [|p| p * p * p, |p| p.ln(), |p| 2.0 * p + 5.0];
    for seed in 0..30 {
        let page = random_page(&mut r, 25, 6);
        let model = Model::new(
            EmbedderConfig::new(EmbedderKind::GcnMean, 6).with_dim(4),
            seed,
        )
        .unwrap();
        let probs = model.predict_page(page.graph()).unwrap();
        let base = nominate_scan(&probs);
        for f in transforms {
            for c in 0..6 {
                let mut moved = probs.clone();
                for v in 0..moved.rows() {
                    moved.set(v, c, f(probs.get(v, c)));
                }
                let res = eval::nominate_from_probs(page.tree(), &moved).unwrap();
                assert_eq!(res.get(class_of(c)).unwrap().node, base[c]);
            }
        }
    }
}

#[test]
fn probabilities_are_distributions_and_shift_invariant() {
    let mut r = rng(39);
    for _ in 0..100 {
        let logits =
            Tensor::from_vec(1, 7, (0..7).map(|_| r.random_range(-10.0..10.0)).collect()).unwrap();
        let p = eval::softmax(&logits);
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let shifted = eval::softmax(&logits.map(|x| x + 3.7));
        assert_eq!(
            eval::argmax_first(p.data().iter().copied()).unwrap().0,
            eval::argmax_first(shifted.data().iter().copied())
                .unwrap()
                .0
        );
    }
}

#[test]
fn uniform_classifier_has_zero_gap() {
    let mut r = rng(40);
    let page = random_page(&mut r, 15, 6);
    let probs = Tensor::filled(15, 7, 1.0 / 7.0);
    let gaps = eval::confidence_gaps_from_probs(page.tree(), &probs).unwrap();
    for g in gaps.into_iter().flatten() {
        assert_eq!(g, 0.0);
    }
}

#[test]
fn positive_gap_iff_correct_nomination() {
    let mut r = rng(41);
    let mut checked = 0;
    for seed in 0..200 {
        let n = r.random_range(3..=20);
        let page = random_page(&mut r, n, 6);
        let model = Model::new(
            EmbedderConfig::new(EmbedderKind::GcnMean, 6).with_dim(4),
            seed,
        )
        .unwrap();
        let probs = model.predict_page(page.graph()).unwrap();
        let noms = eval::nominate_from_probs(page.tree(), &probs).unwrap();
        let gaps = eval::confidence_gaps_from_probs(page.tree(), &probs).unwrap();
        let labeled: Vec<usize> = page
            .tree()
            .labeled_elements(true)
            .into_iter()
            .map(|(v, _)| v)
            .collect();
        for c in 0..6 {
            let (Some(gap), Some(truth)) = (gaps[c], page.tree().truth(class_of(c))) else {
                continue;
            };
            if gap.abs() < 1e-12 {
                continue;
            }
            // other labeled nodes compete in nomination but not in the gap
            let (pt, pu) = (probs.get(truth, c), |u: usize| probs.get(u, c));
            let beats_labeled = labeled
                .iter()
                .all(|&u| u == truth || pu(u) < pt || (pu(u) == pt && u > truth));
            let correct = noms.get(class_of(c)).unwrap().correct.unwrap();
            assert_eq!(gap > 0.0 && beats_labeled, correct);
            if beats_labeled {
                assert_eq!(gap > 0.0, correct);
                checked += 1;
            }
            assert!((-1.0..=1.0).contains(&gap));
        }
    }
    assert!(checked > 100, "{checked}");
}
