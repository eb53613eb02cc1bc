//! Equivalence against independent reference implementations.

mod support;

use nominator_core::dom::{compute_subject_node, ClassId};
use nominator_core::embedders::{EmbedderConfig, EmbedderKind, TE_MAX_NEIGHBORS};
use nominator_core::eval::{self, ClassificationReport};
use nominator_core::exec::Sequential;
use nominator_core::training::hard_examples;
use nominator_core::{Model, Tensor};
use rand::Rng;
use support::*;

const TOL: f64 = 1e-9;

#[test]
fn subject_node_matches_ancestor_intersection() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let n = r.random_range(1..=50);
        let labels = r.random_range(0..=5.min(n));
        let tree = random_tree(&mut r, n, labels);
        let parents: Vec<_> = tree.nodes().iter().map(|v| v.parent).collect();
        let labeled: Vec<usize> = tree
            .nodes()
            .iter()
            .filter(|v| v.label.is_some())
            .map(|v| v.id)
            .collect();
        let expected = lca_bruteforce(&parents, &labeled);
        assert_eq!(compute_subject_node(&tree), expected);
        assert_eq!(tree.subject_id(), expected);
    }
}

#[test]
fn nominate_matches_exhaustive_scan() {
    let mut r = rng(12);
    for i in 0..100 {
        let n = r.random_range(1..=60);
        let page = random_page(&mut r, n, 6);
        let model =
            Model::new(EmbedderConfig::new(EmbedderKind::GcnMean, 6).with_dim(8), i).unwrap();
        let probs = model.predict_page(page.graph()).unwrap();
        let got = eval::nominate(&model, &page).unwrap();
        let want = nominate_scan(&probs);
        for (c, &node) in want.iter().enumerate() {
            let nom = got.get(class_of(c)).unwrap();
            assert_eq!(nom.node, node);
            assert_eq!(nom.probability, probs.get(node, c));
            assert_eq!(
                nom.correct,
                page.tree().truth(class_of(c)).map(|t| t == node)
            );
        }
    }
}

#[test]
fn nomination_ties_go_to_the_smaller_id() {
    let mut r = rng(13);
    let page = random_page(&mut r, 12, 6);
    let mut probs = Tensor::filled(12, 7, 0.01);
    probs.set(4, 0, 0.5);
    probs.set(9, 0, 0.5);
    let res = eval::nominate_from_probs(page.tree(), &probs).unwrap();
    assert_eq!(res.get(ClassId::Price).unwrap().node, 4);
}

#[test]
fn nomination_accuracy_matches_per_page_indicators() {
    let mut r = rng(14);
    let pages: Vec<_> = (0..100)
        .map(|_| {
            let n = r.random_range(6..=30);
            random_page(&mut r, n, 6)
        })
        .collect();
    let model = Model::new(EmbedderConfig::new(EmbedderKind::Fcn, 6).with_dim(8), 3).unwrap();
    let acc = eval::nomination_accuracy(&model, &pages, &Sequential).unwrap();
    let mut per_class = [0.0; 6];
    let mut counts = [0usize; 6];
    for p in &pages {
        let probs = model.predict_page(p.graph()).unwrap();
        let nominee = nominate_scan(&probs);
        for c in 0..6 {
            if let Some(t) = p.tree().truth(class_of(c)) {
                counts[c] += 1;
                per_class[c] += f64::from(u8::from(t == nominee[c]));
            }
        }
    }
    let mut sum = 0.0;
    for c in 0..6 {
        let want = per_class[c] / counts[c] as f64;
        assert!((acc.per_class[c].unwrap() - want).abs() < 1e-12);
        sum += want;
    }
    assert!((acc.average - sum / 6.0).abs() < 1e-12);
}

#[test]
fn confusion_counts_match_hand_tally() {
    let mut r = rng(15);
    let pairs: Vec<(ClassId, ClassId)> = (0..50)
        .map(|_| {
            (
                class_of(r.random_range(0..7)),
                class_of(r.random_range(0..7)),
            )
        })
        .collect();
    let report = ClassificationReport::from_pairs(pairs.iter().copied());
    for c in ClassId::ALL {
        let tp = pairs.iter().filter(|(t, p)| *t == c && *p == c).count() as f64;
        let pred = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
        let real = pairs.iter().filter(|(t, _)| *t == c).count() as f64;
        assert_eq!(report.precision(c), (pred > 0.0).then(|| tp / pred));
        assert_eq!(report.recall(c), (real > 0.0).then(|| tp / real));
    }
}

#[test]
fn hard_examples_match_exhaustive_ranking() {
    let mut r = rng(16);
    for _ in 0..50 {
        let n = r.random_range(10..=60);
        let page = random_page(&mut r, n, 6);
        let data: Vec<f64> = (0..n * 7)
            .map(|_| f64::from(r.random_range(0..20u8)) / 20.0)
            .collect();
        let probs = Tensor::from_vec(n, 7, data).unwrap();
        let k = r.random_range(0..=6);
        let got = hard_examples(page.tree(), &probs, k);
        let unlabeled = page.tree().unlabeled();
        let mut want = std::collections::BTreeSet::new();
        for c in 0..6 {
            // a node is in the top k when fewer than k nodes beat it, counting
            // equal scores at smaller ids as beating it
            for &v in &unlabeled {
                let ahead = unlabeled
                    .iter()
                    .filter(|&&u| {
                        probs.get(u, c) > probs.get(v, c)
                            || (probs.get(u, c) == probs.get(v, c) && u < v)
                    })
                    .count();
                if ahead < k {
                    want.insert(v);
                }
            }
        }
        assert_eq!(got, want);
        assert!(got.len() <= 6 * k);
        for (v, _) in page.tree().labeled_elements(true) {
            assert!(!got.contains(&v));
        }
    }
}

fn check_embedder(
    kind: EmbedderKind,
    oracle: impl Fn(
        &nominator_core::tensor::Params,
        &nominator_core::PageGraph,
        &EmbedderConfig,
        usize,
    ) -> Vector,
) {
    let mut r = rng(17 + kind as u64);
    for seed in 0..5 {
        let n = r.random_range(1..=25);
        let graph = random_graph(&mut r, n, 7);
        let cfg = EmbedderConfig::new(kind, 7).with_dim(6).with_heads(3);
        let model = Model::new(cfg.clone(), seed).unwrap();
        let nodes: Vec<usize> = (0..n).collect();
        let got = embed_rows(&model, &graph, &nodes);
        for v in 0..n {
            let want = oracle(model.params(), &graph, &cfg, v);
            let err = max_abs_diff(got.row(v), &want);
            assert!(err <= TOL, "{kind} node {v}: {err}");
        }
        let probs = model.predict_page(&graph).unwrap();
        for v in 0..n {
            let want = head(model.params(), got.row(v));
            assert!(max_abs_diff(probs.row(v), &want) <= TOL);
        }
    }
}

#[test]
fn gcn_mean_matches_oracle() {
    let mut r = rng(20);
    for seed in 0..5 {
        let n = r.random_range(1..=30);
        let graph = random_graph(&mut r, n, 7);
        for layers in 1..=3 {
            let cfg = EmbedderConfig::new(EmbedderKind::GcnMean, 7)
                .with_dim(6)
                .with_layers(layers);
            let model = Model::new(cfg.clone(), seed).unwrap();
            let got = embed_rows(&model, &graph, &(0..n).collect::<Vec<_>>());
            let want = gcn_mean(model.params(), &graph, &cfg);
            for (v, w) in want.iter().enumerate() {
                assert!(max_abs_diff(got.row(v), w) <= TOL);
            }
        }
    }
}

#[test]
fn gcn_gru_matches_oracle() {
    check_embedder(EmbedderKind::GcnGru, gcn_gru);
}

#[test]
fn encoder_layer_matches_oracle() {
    check_embedder(EmbedderKind::Te, |p, g, c, v| {
        te(p, g, c, v, TE_MAX_NEIGHBORS)
    });
}

#[test]
fn encoder_truncates_wide_neighborhoods() {
    // a star with 80 leaves: the root sees only the first 64 children
    let parents: Vec<Option<usize>> = (0..81)
        .map(|i| if i == 0 { None } else { Some(0) })
        .collect();
    let mut r = rng(21);
    let graph =
        nominator_core::PageGraph::from_parts(parents, random_features(&mut r, 81, 5)).unwrap();
    let cfg = EmbedderConfig::new(EmbedderKind::Te, 5)
        .with_dim(4)
        .with_heads(2);
    let model = Model::new(cfg.clone(), 1).unwrap();
    let got = embed_rows(&model, &graph, &[0]);
    let want = te(model.params(), &graph, &cfg, 0, 64);
    assert!(max_abs_diff(got.row(0), &want) <= TOL);
    let untruncated = te(model.params(), &graph, &cfg, 0, 80);
    assert!(max_abs_diff(got.row(0), &untruncated) > 1e-6);
}

#[test]
fn lstm_td_matches_unrolled_oracle() {
    check_embedder(EmbedderKind::LstmTd, lstm_td);
}

#[test]
fn lstm_bu_matches_recursive_oracle() {
    check_embedder(EmbedderKind::LstmBu, lstm_bu);
}

#[test]
fn lstm_bi_matches_oracle() {
    check_embedder(EmbedderKind::LstmBi, |p, g, c, v| {
        concat(&lstm_td(p, g, c, v), &lstm_bu(p, g, c, v))
    });
}

#[test]
fn lstm_bie_matches_oracle() {
    check_embedder(EmbedderKind::LstmBie, lstm_bie);
}

#[test]
fn fcn_matches_oracle() {
    check_embedder(EmbedderKind::Fcn, |p, g, _, v| fcn(p, g, v));
}
