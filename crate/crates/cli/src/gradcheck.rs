use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use treeattn::autodiff::fault;
use treeattn::gradcheck::{gradcheck_variant, GradcheckReport, InstanceSizes, DEFAULT_TOLERANCE};
use treeattn::ModelVariant;

use crate::common::parse_variant;
use crate::manifest::RunManifest;
use crate::{CliError, GradcheckArgs};

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckSummary {
    pub tolerance: f64,
    pub reports: Vec<GradcheckReport>,
    /// `variant/block` for every block at or over the tolerance.
    pub failing: Vec<String>,
}

/// Restores the tanh backward rule even if a check errors out.
struct FaultGuard;

impl FaultGuard {
    fn arm() -> Result<Self, CliError> {
        if fault::corrupt_tanh_backward(true) {
            Ok(FaultGuard)
        } else {
            Err(CliError::Config(
                "--inject-fault needs a build with the fault-injection feature".into(),
            ))
        }
    }
}

impl Drop for FaultGuard {
    fn drop(&mut self) {
        fault::corrupt_tanh_backward(false);
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<GradcheckSummary, CliError> {
    let started = Instant::now();
    let variants: Vec<ModelVariant> = match &args.variant {
        Some(v) => vec![parse_variant(v)?],
        None => ModelVariant::ALL.to_vec(),
    };
    let sizes = InstanceSizes {
        embedding_size: args.embedding_size,
        hidden_size: args.hidden_size,
        premise_tokens: args.premise_tokens,
        hypothesis_tokens: args.hypothesis_tokens,
        init_range: args.init_range,
    };
    if sizes.embedding_size == 0 || sizes.hidden_size == 0 || sizes.premise_tokens == 0 || sizes.hypothesis_tokens == 0 {
        return Err(CliError::Config("gradcheck sizes must be positive".into()));
    }
    if !(sizes.init_range > 0.0 && sizes.init_range.is_finite()) {
        return Err(CliError::Config("--init-range must be positive".into()));
    }
    let _guard = if args.inject_fault { Some(FaultGuard::arm()?) } else { None };

    let tolerance = DEFAULT_TOLERANCE;
    let mut reports = Vec::with_capacity(variants.len());
    let mut failing = Vec::new();
    for v in variants {
        let r = gradcheck_variant(v, &sizes, args.seed)?;
        for b in r.failing(tolerance) {
            failing.push(format!("{v}/{}", b.name));
        }
        if !args.json {
            writeln!(out, "{v}: worst relative error {:.3e} ({} redraws)", r.worst(), r.redraws)?;
            for b in &r.blocks {
                let mark = if b.worst_rel_error < tolerance { "ok" } else { "FAIL" };
                writeln!(
                    out,
                    "  {:<24} {:>10.3e}  {mark}  (analytic {:+.6e}, numeric {:+.6e} at {})",
                    b.name, b.worst_rel_error, b.analytic, b.numeric, b.worst_index
                )?;
            }
        }
        reports.push(r);
    }
    let summary = GradcheckSummary {
        tolerance,
        reports,
        failing,
    };
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    }

    if let Some(dir) = &args.manifest_dir {
        let mut m = RunManifest::new(
            "gradcheck",
            json!({"variant": args.variant, "sizes": {
                "embedding_size": sizes.embedding_size,
                "hidden_size": sizes.hidden_size,
                "premise_tokens": sizes.premise_tokens,
                "hypothesis_tokens": sizes.hypothesis_tokens,
                "init_range": sizes.init_range,
            }, "inject_fault": args.inject_fault}),
            Some(args.seed),
        );
        m.wall_clock_secs = started.elapsed().as_secs_f64();
        m.metrics = serde_json::to_value(&summary)?;
        m.write(dir)?;
    }

    if summary.failing.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::GradcheckFailed(summary.failing.join(", ")))
    }
}
