use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nominator::corpus::{Corpus, Split};
use nominator::report::{read_history, read_metrics};
use nominator_core::dom::ClassId;
use tempfile::TempDir;

fn nominator(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nominator"))
        .args(args)
        .env_remove("NOMINATOR_SEED")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, pages: usize) -> PathBuf {
    let corpus = dir.join("corpus");
    let out = nominator(&[
        "generate",
        "--out",
        s(&corpus),
        "--pages",
        &pages.to_string(),
        "--seed",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    corpus
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&nominator(&[])), 1);
    assert_eq!(
        code(&nominator(&[
            "train",
            "--corpus",
            "x",
            "--out",
            "y",
            "--nonsense"
        ])),
        1
    );
    assert_eq!(
        code(&nominator(&[
            "train",
            "--corpus",
            "x",
            "--out",
            "y",
            "--augment",
            "sometimes"
        ])),
        1
    );
    assert_eq!(
        code(&nominator(&[
            "eval",
            "--corpus",
            "x",
            "--checkpoint",
            "y",
            "--split",
            "dev"
        ])),
        1
    );
    let help = nominator(&["train", "--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8(help.stdout).unwrap();
    for flag in [
        "--corpus",
        "--out",
        "--model",
        "--epochs",
        "--dim",
        "--layers",
        "--heads",
        "--lr",
        "--seed",
        "--M",
        "--K",
        "--T",
        "--augment",
        "--text-dim",
        "--workers",
        "--config",
    ] {
        assert!(text.contains(flag), "train --help lacks {flag}");
    }
}

#[test]
fn missing_inputs_are_data_errors() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing");
    let out = nominator(&[
        "train",
        "--corpus",
        s(&missing),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert_eq!(code(&nominator(&["stats", "--corpus", s(&missing)])), 2);
    assert_eq!(
        code(&nominator(&[
            "ingest",
            "--corpus",
            s(&missing),
            "--out",
            s(&tmp.path().join("o"))
        ])),
        2
    );

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"not\": \"a checkpoint\"}").unwrap();
    let corpus = generate(tmp.path(), 3);
    assert_eq!(
        code(&nominator(&[
            "eval",
            "--corpus",
            s(&corpus),
            "--checkpoint",
            s(&bad),
            "--split",
            "all"
        ])),
        2
    );
    assert_eq!(
        code(&nominator(&[
            "nominate",
            "--checkpoint",
            s(&bad),
            "--page",
            s(&bad)
        ])),
        2
    );
}

#[test]
fn config_file_keys_are_checked_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    let corpus = generate(tmp.path(), 4);
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"train.epochs": 2, "model.dim": 8, "train.epoch": 3}"#,
    )
    .unwrap();
    let out = nominator(&[
        "train",
        "--corpus",
        s(&corpus),
        "--out",
        s(&tmp.path().join("o")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epoch"));

    std::fs::write(
        &cfg,
        r#"{"train.epochs": 2, "model.dim": 8, "model.kind": "fcn"}"#,
    )
    .unwrap();
    let o = tmp.path().join("o");
    let out = nominator(&[
        "train",
        "--corpus",
        s(&corpus),
        "--out",
        s(&o),
        "--config",
        s(&cfg),
        "--epochs",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("resolved config")
            && stderr.contains("\"epochs\":3")
            && stderr.contains("\"kind\":\"fcn\""),
        "{stderr}"
    );
    let hist = read_history(std::fs::File::open(o.join("history.csv")).unwrap()).unwrap();
    assert_eq!(hist.len(), 3);
    let ck = nominator::checkpoint::Checkpoint::load(&o.join("checkpoint.json")).unwrap();
    assert_eq!(
        (ck.embedder.dim, ck.embedder.kind.to_string().as_str()),
        (8, "fcn")
    );
}

#[test]
fn seed_environment_variable_overrides_flag() {
    let tmp = TempDir::new().unwrap();
    let corpus = generate(tmp.path(), 4);
    let run = |name: &str, seed: &str, env: Option<&str>| {
        let o = tmp.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nominator"));
        cmd.args([
            "train",
            "--corpus",
            s(&corpus),
            "--out",
            s(&o),
            "--epochs",
            "2",
            "--dim",
            "8",
            "--seed",
            seed,
        ]);
        match env {
            Some(v) => cmd.env("NOMINATOR_SEED", v),
            None => cmd.env_remove("NOMINATOR_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(o.join("checkpoint.json")).unwrap()
    };
    let a = run("a", "1", Some("9"));
    let b = run("b", "2", Some("9"));
    let c = run("c", "9", None);
    let d = run("d", "1", None);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a, d);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let tmp = TempDir::new().unwrap();
    let corpus = generate(tmp.path(), 6);
    let mut outs = Vec::new();
    for workers in ["1", "3"] {
        let o = tmp.path().join(format!("o{workers}"));
        let args = [
            "train",
            "--corpus",
            s(&corpus),
            "--out",
            s(&o),
            "--epochs",
            "3",
            "--dim",
            "8",
            "--K",
            "2",
            "--T",
            "2",
        ];
        let mut args = args.to_vec();
        args.extend(["--augment", "every", "--workers", workers]);
        assert_eq!(code(&nominator(&args)), 0);
        let eval = nominator(&[
            "eval",
            "--corpus",
            s(&corpus),
            "--checkpoint",
            s(&o.join("checkpoint.json")),
            "--split",
            "all",
            "--workers",
            workers,
        ]);
        assert_eq!(code(&eval), 0);
        outs.push((
            std::fs::read(o.join("history.csv")).unwrap(),
            std::fs::read(o.join("checkpoint.json")).unwrap(),
            eval.stdout,
        ));
    }
    assert!(outs[0] == outs[1]);
}

#[test]
fn generate_stats_and_ingest() {
    let tmp = TempDir::new().unwrap();
    let corpus = generate(tmp.path(), 10);
    let loaded = Corpus::load(&corpus).unwrap();
    assert_eq!(loaded.pages.len(), 10);
    let (tr, va, te) = (
        loaded.split(Split::Train),
        loaded.split(Split::Val),
        loaded.split(Split::Test),
    );
    assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));

    let stats = nominator(&["stats", "--corpus", s(&corpus)]);
    assert_eq!(code(&stats), 0);
    let v: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(v["pages"], 10);

    let html = tmp.path().join("html");
    std::fs::create_dir(&html).unwrap();
    std::fs::write(
        html.join("shop-a.html"),
        "<html><body><div><img src=x><span>$3</span></div></body></html>",
    )
    .unwrap();
    std::fs::write(html.join("shop b.htm"), "<ul><li>a<li>b</ul>").unwrap();
    std::fs::write(html.join("notes.txt"), "ignored").unwrap();
    let out = tmp.path().join("ingested");
    assert_eq!(
        code(&nominator(&[
            "ingest",
            "--corpus",
            s(&html),
            "--out",
            s(&out)
        ])),
        0
    );
    let ingested = Corpus::load(&out).unwrap();
    let ids: Vec<&str> = ingested.pages.iter().map(|p| p.page_id()).collect();
    assert_eq!(ids, ["shop b", "shop-a"]);
    assert_eq!(ingested.pages[1].len(), 5);
    assert!(ingested.manifest.is_none());
}

#[test]
fn gradcheck_passes_on_fresh_models() {
    let out = nominator(&["gradcheck", "--seed", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 9);
    let overall = text.lines().last().unwrap();
    let err: f64 = overall.split_whitespace().last().unwrap().parse().unwrap();
    assert!(overall.starts_with("overall") && err < 1e-4, "{overall}");
}

#[test]
fn diverging_training_exits_three() {
    let tmp = TempDir::new().unwrap();
    let corpus = generate(tmp.path(), 3);
    let out = nominator(&[
        "train",
        "--corpus",
        s(&corpus),
        "--out",
        s(&tmp.path().join("o")),
        "--epochs",
        "5",
        "--dim",
        "8",
        "--lr",
        "1e305",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

/// Train to convergence on a 20-page corpus, then check `eval` on the
/// training split and `nominate` on a training page.
#[test]
fn overfit_fixture_evaluates_perfectly() {
    let tmp = TempDir::new().unwrap();
    let corpus = generate(tmp.path(), 20);
    let o = tmp.path().join("o");
    let out = nominator(&[
        "train",
        "--corpus",
        s(&corpus),
        "--out",
        s(&o),
        "--epochs",
        "200",
        "--dim",
        "32",
        "--model",
        "gcn-mean",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ck = o.join("checkpoint.json");

    let metrics = tmp.path().join("metrics.csv");
    let eval = nominator(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--checkpoint",
        s(&ck),
        "--split",
        "train",
        "--out",
        s(&metrics),
    ]);
    assert_eq!(code(&eval), 0);
    let report = read_metrics(std::fs::File::open(&metrics).unwrap()).unwrap();
    assert_eq!(report.average_nomination_accuracy, 1.0);

    let page = Corpus::load(&corpus).unwrap().split(Split::Train).remove(0);
    let path = corpus.join(nominator::corpus::page_file_name(page.page_id()));
    let nom = nominator(&["nominate", "--checkpoint", s(&ck), "--page", s(&path)]);
    assert_eq!(code(&nom), 0);
    let v: serde_json::Value = serde_json::from_slice(&nom.stdout).unwrap();
    assert_eq!(v["page_id"], page.page_id());
    for class in ClassId::POSITIVE {
        let truth = page.truth(class).unwrap();
        assert_eq!(v[class.as_str()]["node"], truth, "{class}");
        assert_eq!(v[class.as_str()]["correct"], true);
    }
}
