use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use treeattn::checkpoint;
use treeattn::data::embeddings::load_embeddings;
use treeattn::data::vocab::build_vocab;
use treeattn::train::{accuracy, grid_search, init_params, train_loop, EpochRecord, Grid};
use treeattn::TrainConfig;

use crate::common::{check_parses, parse_variant, read_corpus};
use crate::manifest::RunManifest;
use crate::{CliError, TrainArgs};

#[derive(Debug)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub manifest: PathBuf,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub test_accuracy: Option<f64>,
    pub warnings: Vec<String>,
}

fn config_from(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        embedding_size: args.embedding_size,
        hidden_size: args.hidden_size,
        learning_rate: args.lr,
        l2: args.l2,
        clip_threshold: args.clip,
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        early_stop_patience: args.patience,
        freeze_embeddings: args.freeze_embeddings,
        share_encoders: args.share_encoders,
        tie_attention_weights: args.tie_attention,
        lowercase: !args.keep_case,
        ..TrainConfig::default()
    }
}

fn default_metrics_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".metrics.jsonl");
    PathBuf::from(s)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainReport, CliError> {
    let started = Instant::now();
    let variant = parse_variant(&args.variant)?;
    let mut config = config_from(args);
    config.validate()?;

    let mut warnings = Vec::new();
    let mut warn = |msg: String| {
        log::warn!("{msg}");
        warnings.push(msg);
    };
    if config.learning_rate == 0.0 {
        warn("learning rate is 0: parameters will not change".into());
    }
    if args.emb.is_none() {
        warn("no --emb given: every word vector starts random".into());
    }

    let sidecar = args.dep_sidecar.as_deref();
    let train = read_corpus(&args.train, sidecar)?.examples;
    if train.is_empty() {
        return Err(CliError::Data(format!("{}: no labeled pairs", args.train.display())));
    }
    check_parses(variant, &train, "train")?;
    let dev = match &args.dev {
        Some(p) => read_corpus(p, sidecar)?.examples,
        None => Vec::new(),
    };
    check_parses(variant, &dev, "dev")?;
    if dev.is_empty() {
        warn("no dev pairs: model selection uses training accuracy".into());
    }
    let test = match &args.test {
        Some(p) => Some(read_corpus(p, sidecar)?.examples),
        None => None,
    };
    if let Some(t) = &test {
        check_parses(variant, t, "test")?;
    }

    let vocab = build_vocab(&train, config.min_count, config.lowercase);
    let pretrained = match &args.emb {
        Some(p) => Some(load_embeddings(p, config.embedding_size, config.lowercase)?),
        None => None,
    };
    if let Some(table) = &pretrained {
        let hits = vocab.tokens().iter().filter(|t| table.get(t).is_some()).count();
        log::info!("pretrained vectors cover {hits} of {} vocabulary entries", vocab.len());
    }

    let mut grid_trials = Vec::new();
    if args.grid {
        let outcome = grid_search(
            &Grid::default(),
            &config,
            |cfg| init_params(variant, cfg, vocab.clone(), pretrained.as_ref()),
            &train,
            &dev,
        )?;
        writeln!(
            out,
            "grid: lr {} l2 {} clip {} (dev accuracy {:.4})",
            outcome.best.learning_rate, outcome.best.l2, outcome.best.clip_threshold, outcome.best_dev_acc
        )?;
        grid_trials = outcome
            .trials
            .iter()
            .map(|(c, acc)| json!({"lr": c.learning_rate, "l2": c.l2, "clip": c.clip_threshold, "dev_acc": acc}))
            .collect();
        config = outcome.best;
    }

    let params = init_params(variant, &config, vocab, pretrained.as_ref())?;
    log::info!(
        "{variant}: {} parameters in {} blocks",
        params.store.num_scalars(),
        params.store.len()
    );

    let metrics_path = args.metrics.clone().unwrap_or_else(|| default_metrics_path(&args.checkpoint));
    let mut metrics = std::fs::File::create(&metrics_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", metrics_path.display())))?;
    let mut write_err = None;
    let outcome = train_loop(params, &config, &train, &dev, |rec| {
        let line = serde_json::to_string(rec).expect("plain record");
        if let Err(e) = writeln!(metrics, "{line}") {
            write_err = Some(e);
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = write_err {
        return Err(CliError::Data(format!("{}: {e}", metrics_path.display())));
    }
    metrics.sync_all()?;

    checkpoint::save(&args.checkpoint, &outcome.best, &config)?;
    let test_accuracy = match &test {
        Some(t) if !t.is_empty() => Some(accuracy(&outcome.best, t)?),
        _ => None,
    };

    let best = &outcome.history[outcome.best_epoch - 1];
    writeln!(
        out,
        "{variant}: best epoch {} of {}, dev accuracy {:.4}",
        outcome.best_epoch,
        outcome.history.len(),
        best.dev_acc
    )?;
    if let Some(acc) = test_accuracy {
        writeln!(out, "test accuracy {acc:.4}")?;
    }
    writeln!(out, "checkpoint written to {}", args.checkpoint.display())?;

    let mut manifest = RunManifest::new(
        "train",
        json!({"variant": variant, "train": config, "grid": args.grid}),
        Some(config.seed),
    );
    manifest.checksum("train", Some(&args.train))?;
    manifest.checksum("dev", args.dev.as_deref())?;
    manifest.checksum("test", args.test.as_deref())?;
    manifest.checksum("embeddings", args.emb.as_deref())?;
    manifest.checksum("dep_sidecar", sidecar)?;
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.metrics = json!({
        "best_epoch": outcome.best_epoch,
        "best_dev_acc": best.dev_acc,
        "test_acc": test_accuracy,
        "history": outcome.history,
        "grid": grid_trials,
        "warnings": warnings,
    });
    let dir = match &args.manifest_dir {
        Some(d) => d.clone(),
        None => args
            .checkpoint
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let manifest_path = manifest.write(&dir)?;

    Ok(TrainReport {
        checkpoint: args.checkpoint.clone(),
        metrics: metrics_path,
        manifest: manifest_path,
        config,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        test_accuracy,
        warnings,
    })
}
