use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use treeattn::checkpoint;
use treeattn::model::Prediction;
use treeattn::Label;

use crate::common::{check_parses, emit, parse_variant, read_corpus};
use crate::manifest::RunManifest;
use crate::{CliError, EvalArgs};

#[derive(Debug)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: [[usize; Label::COUNT]; Label::COUNT],
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    #[serde(rename = "pairID")]
    pair_id: &'a str,
    gold: Label,
    predicted: Label,
    probs: &'a [f64],
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<EvalReport, CliError> {
    let started = Instant::now();
    let (params, train_config) = checkpoint::load(&args.checkpoint)?;
    let variant = params.variant();
    if let Some(v) = &args.variant {
        let wanted = parse_variant(v)?;
        if wanted != variant {
            return Err(CliError::Config(format!(
                "checkpoint holds {variant}, not {wanted}"
            )));
        }
    }
    let examples = read_corpus(&args.test, args.dep_sidecar.as_deref())?.examples;
    if examples.is_empty() {
        return Err(CliError::Data(format!("{}: nothing to evaluate", args.test.display())));
    }
    check_parses(variant, &examples, "eval")?;

    let predictions: Vec<Prediction> = examples
        .par_iter()
        .map(|ex| params.predict(ex))
        .collect::<treeattn::Result<_>>()?;

    let mut confusion = [[0usize; Label::COUNT]; Label::COUNT];
    for (ex, p) in examples.iter().zip(&predictions) {
        confusion[ex.gold.index()][p.label.index()] += 1;
    }
    let correct: usize = (0..Label::COUNT).map(|i| confusion[i][i]).sum();
    let total = examples.len();
    let accuracy = correct as f64 / total as f64;

    writeln!(out, "{variant}: accuracy {accuracy:.4} ({correct}/{total})")?;
    write!(out, "{:<14}", "gold \\ pred")?;
    for l in Label::ALL {
        write!(out, "{:>14}", l.as_str())?;
    }
    writeln!(out)?;
    for g in Label::ALL {
        write!(out, "{:<14}", g.as_str())?;
        for p in Label::ALL {
            write!(out, "{:>14}", confusion[g.index()][p.index()])?;
        }
        writeln!(out)?;
    }

    if let Some(path) = &args.out {
        let mut text = String::new();
        for (ex, p) in examples.iter().zip(&predictions) {
            let line = PredictionLine {
                pair_id: &ex.pair_id,
                gold: ex.gold,
                predicted: p.label,
                probs: &p.probs,
            };
            text.push_str(&serde_json::to_string(&line)?);
            text.push('\n');
        }
        emit(&text, Some(path), out)?;
    }

    if let Some(dir) = &args.manifest_dir {
        let mut m = RunManifest::new(
            "eval",
            json!({"variant": variant, "train": train_config}),
            Some(train_config.seed),
        );
        m.checksum("checkpoint", Some(&args.checkpoint))?;
        m.checksum("test", Some(&args.test))?;
        m.checksum("dep_sidecar", args.dep_sidecar.as_deref())?;
        m.wall_clock_secs = started.elapsed().as_secs_f64();
        m.metrics = json!({"accuracy": accuracy, "correct": correct, "total": total, "confusion": confusion});
        m.write(dir)?;
    }

    Ok(EvalReport {
        total,
        correct,
        accuracy,
        confusion,
    })
}
