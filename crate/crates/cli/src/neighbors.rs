use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use treeattn::checkpoint;
use treeattn::model::{Encoding, ParseRequirement, Side};
use treeattn::{Graph, ModelParams, Sentence};

use crate::common::{cosine, emit, inline_sentence, read_corpus};
use crate::manifest::RunManifest;
use crate::{CliError, NeighborMode, NeighborsArgs};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub text: String,
    pub cosine: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NeighborsReport {
    pub query: String,
    pub mode: String,
    /// Distinct candidate texts searched.
    pub candidates: usize,
    pub neighbors: Vec<Neighbor>,
}

/// `(text, vector)` for the whole sentence, or for every subtree.
fn encode_units(params: &ModelParams, s: &Sentence, mode: NeighborMode) -> treeattn::Result<Vec<(String, Vec<f64>)>> {
    let mut g = Graph::new();
    let enc = params.encode(&mut g, Side::Premise, s)?;
    Ok(match (mode, &enc) {
        (NeighborMode::Phrase, Encoding::Tree(t)) => t
            .nodes
            .iter()
            .map(|(id, st)| (t.tree.subtree_text(*id), g.value(st.h).data().to_vec()))
            .collect(),
        _ => vec![(s.tokens().join(" "), g.value(enc.summary()).data().to_vec())],
    })
}

pub fn cmd_neighbors(args: &NeighborsArgs, out: &mut dyn Write) -> Result<NeighborsReport, CliError> {
    let started = Instant::now();
    let (params, train_config) = checkpoint::load(&args.checkpoint)?;
    let variant = params.variant();
    if args.mode == NeighborMode::Phrase && variant.requires() == ParseRequirement::None {
        return Err(CliError::Config(format!(
            "{variant} has no phrase representations; use --mode sentence or a tree variant"
        )));
    }
    if args.k == 0 {
        return Err(CliError::Config("--k must be positive".into()));
    }

    let query = inline_sentence(&args.query, args.query_heads.as_deref())?;
    let query_text = query.tokens().join(" ");
    let mut g = Graph::new();
    let q = params.encode(&mut g, Side::Premise, &query)?;
    let qv = g.value(q.summary()).data().to_vec();

    let corpus = read_corpus(&args.index, args.dep_sidecar.as_deref())?;
    let sentences: Vec<&Sentence> = corpus
        .examples
        .iter()
        .flat_map(|e| [&e.premise, &e.hypothesis])
        .collect();
    let units: Vec<Vec<(String, Vec<f64>)>> = sentences
        .par_iter()
        .map(|s| encode_units(&params, s, args.mode))
        .collect::<treeattn::Result<_>>()?;

    // First occurrence of each text wins, in corpus order.
    let mut seen = BTreeSet::new();
    let mut scored: Vec<Neighbor> = Vec::new();
    for (text, v) in units.into_iter().flatten() {
        if args.exclude_exact && text == query_text {
            continue;
        }
        if seen.insert(text.clone()) {
            scored.push(Neighbor {
                cosine: cosine(&qv, &v),
                text,
            });
        }
    }
    if scored.is_empty() {
        return Err(CliError::Data(format!("{}: nothing to search", args.index.display())));
    }
    let candidates = scored.len();
    // Stable: ties keep corpus order.
    scored.sort_by(|a, b| b.cosine.total_cmp(&a.cosine));
    scored.truncate(args.k);

    let mode = match args.mode {
        NeighborMode::Phrase => "phrase",
        NeighborMode::Sentence => "sentence",
    };
    let report = NeighborsReport {
        query: query_text,
        mode: mode.to_string(),
        candidates,
        neighbors: scored,
    };
    match &args.out {
        Some(p) => emit(&(serde_json::to_string_pretty(&report)? + "\n"), Some(p), out)?,
        None => {
            for n in &report.neighbors {
                writeln!(out, "{:.6}\t{}", n.cosine, n.text)?;
            }
        }
    }

    if let Some(dir) = &args.manifest_dir {
        let mut m = RunManifest::new(
            "neighbors",
            json!({"variant": variant, "train": train_config, "query": args.query, "mode": mode, "k": args.k, "exclude_exact": args.exclude_exact}),
            Some(train_config.seed),
        );
        m.checksum("checkpoint", Some(&args.checkpoint))?;
        m.checksum("index", Some(&args.index))?;
        m.checksum("dep_sidecar", args.dep_sidecar.as_deref())?;
        m.wall_clock_secs = started.elapsed().as_secs_f64();
        m.metrics = json!({"candidates": candidates, "returned": report.neighbors.len()});
        m.write(dir)?;
    }
    Ok(report)
}
