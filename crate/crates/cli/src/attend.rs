use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use treeattn::attention::AttentionTrace;
use treeattn::checkpoint;
use treeattn::model::ParseRequirement;
use treeattn::{Example, Label, ModelVariant, Sentence};

use crate::common::{check_parses, emit, inline_sentence, read_corpus};
use crate::manifest::RunManifest;
use crate::{AttendArgs, CliError, TraceFormat};

#[derive(Clone, Debug, Serialize)]
pub struct TraceNodeOut {
    pub node: usize,
    pub span: (usize, usize),
    pub text: String,
    /// Parent node in the parse, for tree variants.
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRowOut {
    pub node: usize,
    pub span: (usize, usize),
    pub text: String,
    pub parent: Option<usize>,
    /// Over `premise_nodes`, in order.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttendReport {
    pub variant: ModelVariant,
    pub pair_id: Option<String>,
    pub predicted: Label,
    pub probs: Vec<f64>,
    pub premise_tokens: Vec<String>,
    pub hypothesis_tokens: Vec<String>,
    pub premise_nodes: Vec<TraceNodeOut>,
    pub rows: Vec<TraceRowOut>,
}

/// Text and parent of each traced position: parse nodes for tree
/// variants, token positions otherwise.
struct Labeller {
    tokens: Vec<String>,
    tree: Option<treeattn::ParseTree>,
    parents: Vec<Option<usize>>,
}

impl Labeller {
    fn new(variant: ModelVariant, s: &Sentence) -> Self {
        let tree = match variant.requires() {
            ParseRequirement::Constituency => s.constituency.clone(),
            ParseRequirement::Dependency => s.dependency.clone(),
            ParseRequirement::None => None,
        };
        let parents = tree.as_ref().map(|t| t.parents()).unwrap_or_default();
        Labeller {
            tokens: s.tokens().iter().map(|t| t.to_string()).collect(),
            tree,
            parents,
        }
    }

    fn text(&self, node: usize, span: (usize, usize)) -> String {
        match &self.tree {
            Some(t) => t.subtree_text(node),
            None => self.tokens[span.0..span.1].join(" "),
        }
    }

    fn parent(&self, node: usize) -> Option<usize> {
        self.parents.get(node).copied().flatten()
    }
}

fn report(variant: ModelVariant, ex: &Example, probs: Vec<f64>, label: Label, trace: AttentionTrace) -> AttendReport {
    let p = Labeller::new(variant, &ex.premise);
    let h = Labeller::new(variant, &ex.hypothesis);
    AttendReport {
        variant,
        pair_id: if ex.pair_id.is_empty() { None } else { Some(ex.pair_id.clone()) },
        predicted: label,
        probs,
        premise_nodes: trace
            .premise
            .iter()
            .map(|n| TraceNodeOut {
                node: n.node,
                span: n.span,
                text: p.text(n.node, n.span),
                parent: p.parent(n.node),
            })
            .collect(),
        rows: trace
            .rows
            .into_iter()
            .map(|r| TraceRowOut {
                node: r.node,
                span: r.span,
                text: h.text(r.node, r.span),
                parent: h.parent(r.node),
                weights: r.weights,
            })
            .collect(),
        premise_tokens: p.tokens,
        hypothesis_tokens: h.tokens,
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

/// Graphviz rendering: one cluster per sentence with its parse edges, and a
/// dotted edge from each hypothesis node to every premise node labelled
/// with the attention weight.
pub fn render_dot(r: &AttendReport) -> String {
    let mut s = String::new();
    s.push_str("digraph attention {\n  rankdir=TB;\n  node [shape=box];\n");
    s.push_str("  subgraph cluster_premise {\n    label=\"premise\";\n");
    for n in &r.premise_nodes {
        let _ = writeln!(s, "    p{} [label=\"{}\"];", n.node, escape(&n.text));
    }
    for n in &r.premise_nodes {
        if let Some(par) = n.parent {
            let _ = writeln!(s, "    p{par} -> p{};", n.node);
        }
    }
    s.push_str("  }\n  subgraph cluster_hypothesis {\n    label=\"hypothesis\";\n");
    for n in &r.rows {
        let _ = writeln!(s, "    h{} [label=\"{}\"];", n.node, escape(&n.text));
    }
    for n in &r.rows {
        if let Some(par) = n.parent {
            let _ = writeln!(s, "    h{par} -> h{};", n.node);
        }
    }
    s.push_str("  }\n");
    for row in &r.rows {
        for (p, w) in r.premise_nodes.iter().zip(&row.weights) {
            let _ = writeln!(
                s,
                "  h{} -> p{} [style=dotted, constraint=false, label=\"{:.4}\", tooltip=\"{w}\"];",
                row.node, p.node, w
            );
        }
    }
    s.push_str("}\n");
    s
}

fn select_pair(args: &AttendArgs) -> Result<Example, CliError> {
    if let (Some(p), Some(h)) = (&args.premise, &args.hypothesis) {
        return Ok(Example {
            pair_id: String::new(),
            premise: inline_sentence(p, args.premise_heads.as_deref())?,
            hypothesis: inline_sentence(h, args.hypothesis_heads.as_deref())?,
            gold: Label::Neutral,
        });
    }
    let (Some(test), Some(pair)) = (&args.test, &args.pair) else {
        return Err(CliError::Config(
            "give --test with --pair, or --premise with --hypothesis".into(),
        ));
    };
    let corpus = read_corpus(test, args.dep_sidecar.as_deref())?;
    corpus
        .examples
        .into_iter()
        .find(|e| &e.pair_id == pair)
        .ok_or_else(|| CliError::Data(format!("{}: no pair {pair:?}", test.display())))
}

pub fn cmd_attend(args: &AttendArgs, out: &mut dyn Write) -> Result<AttendReport, CliError> {
    let started = Instant::now();
    let (params, train_config) = checkpoint::load(&args.checkpoint)?;
    let variant = params.variant();
    if !variant.has_attention() {
        return Err(CliError::Config(format!("{variant} has no attention to export")));
    }
    let ex = select_pair(args)?;
    check_parses(variant, std::slice::from_ref(&ex), "attend")?;
    let pred = params.predict(&ex)?;
    let trace = pred
        .trace
        .ok_or_else(|| CliError::Internal(format!("{variant} produced no attention trace")))?;
    let r = report(variant, &ex, pred.probs, pred.label, trace);

    let text = match args.format {
        TraceFormat::Json => serde_json::to_string_pretty(&r)? + "\n",
        TraceFormat::Dot => render_dot(&r),
    };
    emit(&text, args.out.as_deref(), out)?;

    if let Some(dir) = &args.manifest_dir {
        let mut m = RunManifest::new(
            "attend",
            json!({"variant": variant, "train": train_config, "pair": args.pair, "format": format!("{:?}", args.format)}),
            Some(train_config.seed),
        );
        m.checksum("checkpoint", Some(&args.checkpoint))?;
        m.checksum("test", args.test.as_deref())?;
        m.checksum("dep_sidecar", args.dep_sidecar.as_deref())?;
        m.wall_clock_secs = started.elapsed().as_secs_f64();
        m.metrics = json!({"predicted": r.predicted, "probs": r.probs, "rows": r.rows.len()});
        m.write(dir)?;
    }
    Ok(r)
}
