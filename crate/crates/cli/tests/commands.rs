mod support;

use std::collections::BTreeMap;

use support::{cli, p, train_small, write_corpus};
use treeattn::checkpoint;
use treeattn::model::Side;
use treeattn::synthetic::{overfit_corpus, structure_corpus};
use treeattn::Graph;

#[test]
fn unknown_variant_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_corpus(dir.path(), "train", &overfit_corpus()[..6]);
    let (code, _) = cli(&[
        "train", "--variant", "bogus", "--train", &p(&f.jsonl), "--checkpoint", &p(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn bad_arguments_and_missing_files() {
    assert_eq!(cli(&["frobnicate"]).0, 2);
    assert_eq!(cli(&["train", "--variant", "nbow"]).0, 2);
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = cli(&[
        "train", "--variant", "nbow", "--train", &p(&dir.path().join("absent.jsonl")), "--checkpoint",
        &p(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(code, 3);
    let (code, _) = cli(&["eval", "--checkpoint", &p(&dir.path().join("absent.ckpt")), "--test", "x"]);
    assert_ne!(code, 0);
}

#[test]
fn dependency_variant_without_sidecar_names_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_corpus(dir.path(), "train", &overfit_corpus()[..6]);
    let args = treeattn_cli::TrainArgs {
        variant: "sat-dlstm".into(),
        train: f.jsonl.clone(),
        dev: None,
        test: None,
        emb: None,
        dep_sidecar: None,
        checkpoint: dir.path().join("m.ckpt"),
        metrics: None,
        manifest_dir: None,
        seed: 1,
        lr: 0.05,
        l2: 0.0,
        clip: 50.0,
        batch: 4,
        epochs: 1,
        patience: 5,
        embedding_size: 4,
        hidden_size: 4,
        freeze_embeddings: false,
        share_encoders: false,
        tie_attention: false,
        keep_case: false,
        grid: false,
    };
    let err = treeattn_cli::cmd_train(&args, &mut Vec::new()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("overfit-00"), "{err}");
    assert!(err.to_string().contains("--dep-sidecar"), "{err}");
}

#[test]
fn train_writes_checkpoint_metrics_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_corpus(dir.path(), "train", &overfit_corpus()[..12]);
    let ckpt = train_small(dir.path(), "sat-clstm", &f, &["--lr", "0"]);
    let metrics = std::fs::read_to_string(format!("{}.metrics.jsonl", ckpt.display())).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["epoch"], 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest-train-0.json")).unwrap()).unwrap();
    let warnings = manifest["metrics"]["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("learning rate is 0")));
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("--emb")));
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["checksums"]["train"].as_str().unwrap().len(), 64);
    assert!(manifest["build_id"].as_str().unwrap().starts_with('v'));
}

#[test]
fn manifests_are_append_only() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_corpus(dir.path(), "train", &overfit_corpus()[..6]);
    let md = dir.path().join("runs");
    let md_s = p(&md);
    train_small(dir.path(), "nbow", &f, &["--manifest-dir", &md_s]);
    let first = std::fs::read(md.join("manifest-train-0.json")).unwrap();
    train_small(dir.path(), "nbow", &f, &["--manifest-dir", &md_s, "--seed", "9"]);
    assert_eq!(std::fs::read(md.join("manifest-train-0.json")).unwrap(), first);
    let second: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(md.join("manifest-train-1.json")).unwrap()).unwrap();
    assert_eq!(second["seed"], 9);
    let n = std::fs::read_dir(&md).unwrap().count();
    assert_eq!(n, 2);
}

#[test]
fn eval_counts_match_an_independent_recount() {
    let dir = tempfile::tempdir().unwrap();
    let data = overfit_corpus();
    let f = write_corpus(dir.path(), "train", &data);
    let ckpt = train_small(dir.path(), "sat-dlstm", &f, &[]);
    let preds = dir.path().join("preds.jsonl");
    let args = treeattn_cli::EvalArgs {
        checkpoint: ckpt.clone(),
        test: f.jsonl.clone(),
        dep_sidecar: Some(f.deps.clone()),
        variant: Some("sat-dlstm".into()),
        out: Some(preds.clone()),
        manifest_dir: None,
    };
    let mut out = Vec::new();
    let report = treeattn_cli::cmd_eval(&args, &mut out).unwrap();

    let (params, _) = checkpoint::load(&ckpt).unwrap();
    let mut correct = 0;
    let mut confusion = [[0usize; 3]; 3];
    for ex in &data {
        let label = params.predict(ex).unwrap().label;
        correct += usize::from(label == ex.gold);
        confusion[ex.gold.index()][label.index()] += 1;
    }
    assert_eq!(report.total, data.len());
    assert_eq!(report.correct, correct);
    assert_eq!(report.confusion, confusion);
    assert_eq!(report.accuracy, correct as f64 / data.len() as f64);
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains(&format!("({correct}/{})", data.len())), "{text}");

    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), data.len());
    let recount = lines.iter().filter(|l| l["gold"] == l["predicted"]).count();
    assert_eq!(recount, correct);
    assert_eq!(lines[0]["pairID"], "overfit-00");
}

#[test]
fn eval_rejects_wrong_variant_and_empty_sets() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_corpus(dir.path(), "train", &overfit_corpus()[..6]);
    let ckpt = train_small(dir.path(), "nbow", &f, &[]);
    let (code, _) = cli(&["eval", "--checkpoint", &p(&ckpt), "--test", &p(&f.jsonl), "--variant", "lstm"]);
    assert_eq!(code, 2);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let (code, _) = cli(&["eval", "--checkpoint", &p(&ckpt), "--test", &p(&empty)]);
    assert_eq!(code, 3);
    let (code, out) = cli(&["eval", "--checkpoint", &p(&ckpt), "--test", &p(&f.jsonl)]);
    assert_eq!(code, 0);
    assert!(out.contains("contradiction"));
}

#[test]
fn single_node_premise_gets_all_the_attention() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_corpus(dir.path(), "train", &overfit_corpus()[..9]);
    for variant in ["at-lstm", "sat-clstm", "sat-dlstm"] {
        let ckpt = train_small(dir.path(), variant, &f, &[]);
        let (code, out) = cli(&[
            "attend", "--checkpoint", &p(&ckpt), "--premise", "dog", "--hypothesis", "the dog runs",
            "--premise-heads", "0", "--hypothesis-heads", "2,3,0",
        ]);
        assert_eq!(code, 0, "{variant}: {out}");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["premise_nodes"].as_array().unwrap().len(), 1);
        let rows = v["rows"].as_array().unwrap();
        assert!(!rows.is_empty());
        for r in rows {
            assert_eq!(r["weights"].as_array().unwrap(), &vec![serde_json::json!(1.0)], "{variant}");
        }
    }
}

#[test]
fn attend_errors() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_corpus(dir.path(), "train", &overfit_corpus()[..6]);
    let nbow = train_small(dir.path(), "nbow", &f, &[]);
    let (code, _) = cli(&["attend", "--checkpoint", &p(&nbow), "--premise", "a dog", "--hypothesis", "a cat"]);
    assert_eq!(code, 2);
    let sat = train_small(dir.path(), "sat-clstm", &f, &[]);
    let (code, _) = cli(&["attend", "--checkpoint", &p(&sat), "--test", &p(&f.jsonl), "--pair", "nope"]);
    assert_eq!(code, 3);
    let (code, _) = cli(&["attend", "--checkpoint", &p(&sat)]);
    assert_eq!(code, 2);
}

/// Just enough DOT to read back what `render_dot` writes.
mod dot {
    use std::collections::BTreeMap;

    #[derive(Debug, Default)]
    pub struct Graph {
        pub nodes: BTreeMap<String, BTreeMap<String, String>>,
        pub edges: Vec<(String, String, BTreeMap<String, String>)>,
    }

    fn tokens(src: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut it = src.chars().peekable();
        while let Some(&c) = it.peek() {
            if c.is_whitespace() {
                it.next();
            } else if c == '"' {
                it.next();
                let mut s = String::new();
                while let Some(c) = it.next() {
                    match c {
                        '\\' => match it.next() {
                            Some('n') => s.push('\n'),
                            Some(o) => s.push(o),
                            None => panic!("dangling escape"),
                        },
                        '"' => break,
                        c => s.push(c),
                    }
                }
                out.push(format!("\"{s}"));
            } else if c == '-' {
                it.next();
                assert_eq!(it.next(), Some('>'));
                out.push("->".into());
            } else if "{}[];=,".contains(c) {
                it.next();
                out.push(c.to_string());
            } else {
                let mut s = String::new();
                while let Some(&c) = it.peek() {
                    if c.is_alphanumeric() || c == '_' || c == '.' {
                        s.push(c);
                        it.next();
                    } else {
                        break;
                    }
                }
                assert!(!s.is_empty(), "unexpected {c:?}");
                out.push(s);
            }
        }
        out
    }

    fn unquote(t: &str) -> String {
        t.strip_prefix('"').unwrap_or(t).to_string()
    }

    pub fn parse(src: &str) -> Graph {
        let toks = tokens(src);
        let mut g = Graph::default();
        let mut i = 0;
        assert_eq!(toks[0], "digraph");
        while i < toks.len() {
            let t = &toks[i];
            if t == "{" || t == "}" || t == ";" || t == "digraph" || t == "subgraph" || t.starts_with("cluster_") || t == "attention" {
                i += 1;
                continue;
            }
            if toks.get(i + 1).map(String::as_str) == Some("=") {
                i += 3; // graph attribute
                continue;
            }
            let mut attrs = BTreeMap::new();
            let (a, b) = if toks.get(i + 1).map(String::as_str) == Some("->") {
                let r = (t.clone(), Some(toks[i + 2].clone()));
                i += 3;
                r
            } else {
                i += 1;
                (t.clone(), None)
            };
            if toks.get(i).map(String::as_str) == Some("[") {
                i += 1;
                while toks[i] != "]" {
                    if toks[i] == "," {
                        i += 1;
                        continue;
                    }
                    assert_eq!(toks[i + 1], "=");
                    attrs.insert(toks[i].clone(), unquote(&toks[i + 2]));
                    i += 3;
                }
                i += 1;
            }
            match b {
                Some(b) => g.edges.push((a, b, attrs)),
                None if a == "node" => {}
                None => {
                    g.nodes.insert(a, attrs);
                }
            }
        }
        g
    }
}

#[test]
fn dot_export_round_trips_against_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = overfit_corpus();
    let f = write_corpus(dir.path(), "train", &data[..9]);
    for variant in ["sat-clstm", "sat-dlstm", "at-lstm"] {
        let ckpt = train_small(dir.path(), variant, &f, &[]);
        let base = [
            "attend", "--checkpoint", &p(&ckpt), "--test", &p(&f.jsonl), "--dep-sidecar", &p(&f.deps), "--pair",
            "overfit-04",
        ];
        let (code, json) = cli(&base);
        assert_eq!(code, 0);
        let mut with_dot = base.to_vec();
        with_dot.extend(["--format", "dot"]);
        let (code, dot_src) = cli(&with_dot);
        assert_eq!(code, 0);

        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let g = dot::parse(&dot_src);
        let prem = v["premise_nodes"].as_array().unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(g.nodes.len(), prem.len() + rows.len());
        for n in prem {
            let id = format!("p{}", n["node"]);
            assert_eq!(g.nodes[&id]["label"], n["text"].as_str().unwrap());
        }
        let mut weights = BTreeMap::new();
        let mut tree_edges = 0;
        for (a, b, attrs) in &g.edges {
            if attrs.get("style").map(String::as_str) == Some("dotted") {
                weights.insert((a.clone(), b.clone()), attrs["tooltip"].parse::<f64>().unwrap());
            } else {
                tree_edges += 1;
            }
        }
        // Parse edges: one per non-root node on each side; none for sequences.
        let expected = if variant == "at-lstm" { 0 } else { prem.len() - 1 + rows.len() - 1 };
        assert_eq!(tree_edges, expected, "{variant}");
        assert_eq!(weights.len(), prem.len() * rows.len());
        for r in rows {
            let ws = r["weights"].as_array().unwrap();
            let mut sum = 0.0;
            for (n, w) in prem.iter().zip(ws) {
                let got = weights[&(format!("h{}", r["node"]), format!("p{}", n["node"]))];
                // serde_json's default float parser may be one ulp off.
                assert!((got - w.as_f64().unwrap()).abs() <= 1e-15, "{got} vs {w}");
                sum += got;
            }
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn dot_escapes_quotes_and_backslashes() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_corpus(dir.path(), "train", &overfit_corpus()[..6]);
    let ckpt = train_small(dir.path(), "at-lstm", &f, &[]);
    let (code, src) = cli(&[
        "attend", "--checkpoint", &p(&ckpt), "--premise", r#"say "hi" \now"#, "--hypothesis", "ok", "--format", "dot",
    ]);
    assert_eq!(code, 0);
    let g = dot::parse(&src);
    let labels: Vec<&str> = g.nodes.values().map(|a| a["label"].as_str()).collect();
    assert!(labels.contains(&"\"hi\""), "{labels:?}");
    assert!(labels.contains(&"\\now"), "{labels:?}");
}

#[test]
fn neighbors_find_the_query_itself_first() {
    let dir = tempfile::tempdir().unwrap();
    let data = structure_corpus(30, 0, 4);
    let f = write_corpus(dir.path(), "idx", &data);
    let ckpt = train_small(dir.path(), "sat-clstm", &f, &[]);
    let query = data[3].premise.constituency.as_ref().unwrap().to_sexpr();
    let text = data[3].premise.tokens().join(" ");
    let args = treeattn_cli::NeighborsArgs {
        checkpoint: ckpt.clone(),
        index: f.jsonl.clone(),
        dep_sidecar: None,
        query: query.clone(),
        query_heads: None,
        mode: treeattn_cli::NeighborMode::Sentence,
        k: 5,
        exclude_exact: false,
        out: None,
        manifest_dir: None,
    };
    let r = treeattn_cli::cmd_neighbors(&args, &mut Vec::new()).unwrap();
    assert_eq!(r.neighbors[0].text, text);
    assert!((r.neighbors[0].cosine - 1.0).abs() < 1e-12);
    assert_eq!(r.neighbors.len(), 5);
    assert!(r.neighbors.windows(2).all(|w| w[0].cosine >= w[1].cosine));

    // Independent cosine for the runner-up.
    let (params, _) = checkpoint::load(&ckpt).unwrap();
    let vec_of = |s: &treeattn::Sentence| {
        let mut g = Graph::new();
        let e = params.encode(&mut g, Side::Premise, s).unwrap();
        g.value(e.summary()).data().to_vec()
    };
    let q = vec_of(&data[3].premise);
    let second = data
        .iter()
        .flat_map(|e| [&e.premise, &e.hypothesis])
        .find(|s| s.tokens().join(" ") == r.neighbors[1].text)
        .unwrap();
    let v = vec_of(second);
    let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let expect = dot / (norm(&q) * norm(&v));
    assert!((r.neighbors[1].cosine - expect).abs() < 1e-12);

    let excl = treeattn_cli::NeighborsArgs {
        exclude_exact: true,
        ..args.clone()
    };
    let r2 = treeattn_cli::cmd_neighbors(&excl, &mut Vec::new()).unwrap();
    assert!(r2.neighbors.iter().all(|n| n.text != text));

    let many = treeattn_cli::NeighborsArgs { k: 10_000, ..args.clone() };
    let r3 = treeattn_cli::cmd_neighbors(&many, &mut Vec::new()).unwrap();
    assert_eq!(r3.neighbors.len(), r3.candidates);
    let mut texts: Vec<_> = r3.neighbors.iter().map(|n| n.text.clone()).collect();
    texts.sort();
    texts.dedup();
    assert_eq!(texts.len(), r3.candidates);
}

#[test]
fn phrase_neighbors_include_subtrees() {
    let dir = tempfile::tempdir().unwrap();
    let data = structure_corpus(12, 0, 4);
    let f = write_corpus(dir.path(), "idx", &data);
    let ckpt = train_small(dir.path(), "tree-clstm", &f, &[]);
    let (code, out) = cli(&["neighbors", "--checkpoint", &p(&ckpt), "--index", &p(&f.jsonl), "--query", "( the ( red dog ) )", "--k", "3"]);
    assert_eq!(code, 0, "{out}");
    let first = out.lines().next().unwrap();
    let (cos, text) = first.split_once('\t').unwrap();
    if text == "the red dog" {
        assert!((cos.parse::<f64>().unwrap() - 1.0).abs() < 1e-6);
    }
    assert_eq!(out.lines().count(), 3);

    let nbow = train_small(dir.path(), "nbow", &f, &[]);
    let (code, _) = cli(&["neighbors", "--checkpoint", &p(&nbow), "--index", &p(&f.jsonl), "--query", "dog"]);
    assert_eq!(code, 2);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let (code, _) = cli(&["neighbors", "--checkpoint", &p(&ckpt), "--index", &p(&empty), "--query", "dog"]);
    assert_eq!(code, 3);
}

#[test]
fn gradcheck_passes_clean_and_fails_with_fault() {
    let (code, out) = cli(&["gradcheck", "--variant", "sat-clstm"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("sat-clstm"));
    let (code, out) = cli(&["gradcheck", "--variant", "tree-dlstm", "--inject-fault"]);
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("FAIL"));
    // The switch is released afterwards.
    assert_eq!(cli(&["gradcheck", "--variant", "tree-dlstm"]).0, 0);
}

#[test]
fn gradcheck_json_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = cli(&["gradcheck", "--variant", "nbow", "--json", "--manifest-dir", &p(dir.path())]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["reports"][0]["variant"], "nbow");
    assert!(dir.path().join("manifest-gradcheck-0.json").exists());
}

#[test]
fn binary_runs() {
    let bin = env!("CARGO_BIN_EXE_treeattn");
    let out = std::process::Command::new(bin).arg("--help").output().unwrap();
    assert!(out.status.success());
    let out = std::process::Command::new(bin).args(["train", "--variant", "nope", "--train", "x", "--checkpoint", "y"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sat-clstm"));
}
