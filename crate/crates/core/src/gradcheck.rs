//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Graph;
use crate::data::conll::{parse_conll, ConllRow};
use crate::data::corpus::{Example, Label, Sentence};
use crate::data::tree::{ParseTree, TreeNode};
use crate::data::vocab::Vocabulary;
use crate::error::Result;
use crate::model::{loss, ModelParams, ModelVariant};
use crate::params::ParamStore;
use crate::train::{init_params, TrainConfig};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub worst_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares precomputed analytic gradients (one vector per parameter, in
/// store order) against central differences of `objective`.
pub fn check_store(
    store: &mut ParamStore,
    step: f64,
    grads: &[Vec<f64>],
    mut objective: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<Vec<BlockReport>> {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut reports = Vec::with_capacity(ids.len());
    for (id, grad) in ids.into_iter().zip(grads) {
        let mut report = BlockReport {
            name: store.get(id).name.clone(),
            worst_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (k, &a) in grad.iter().enumerate() {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + step;
            let plus = objective(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - step;
            let minus = objective(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            if err > report.worst_rel_error || k == 0 {
                report = BlockReport {
                    worst_rel_error: err,
                    worst_index: k,
                    analytic: a,
                    numeric,
                    ..report
                };
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Cross-entropy of one example, for use as an objective.
pub fn example_loss(params: &ModelParams, example: &Example) -> Result<f64> {
    let mut g = Graph::new();
    let out = params.forward(&mut g, example)?;
    let l = loss(&mut g, out.probs, example.gold)?;
    Ok(g.value(l).data()[0])
}

/// Backpropagated loss gradient of every parameter, in store order.
pub fn analytic_gradients(params: &ModelParams, example: &Example) -> Result<Vec<Vec<f64>>> {
    let mut p = params.clone();
    p.store.clear_grad();
    let mut g = Graph::new();
    let out = p.forward(&mut g, example)?;
    let l = loss(&mut g, out.probs, example.gold)?;
    g.backward(l, &mut p.store)?;
    Ok(p
        .store
        .iter()
        .map(|(_, q)| q.value.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; q.value.len()]))
        .collect())
}

/// Checks every parameter of `params` on one example.
pub fn check_model(params: &mut ModelParams, example: &Example, step: f64) -> Result<Vec<BlockReport>> {
    let grads = analytic_gradients(params, example)?;
    // Parameter ids index into any store with the same layout, so one
    // store-less template can evaluate every perturbed snapshot.
    let mut store = std::mem::take(&mut params.store);
    let mut template = params.clone();
    let reports = check_store(&mut store, step, &grads, |s| {
        template.store = s.clone();
        example_loss(&template, example)
    });
    params.store = store;
    reports
}

/// Sizes of a synthetic gradient-check instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceSizes {
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub premise_tokens: usize,
    pub hypothesis_tokens: usize,
    /// Half-width of the uniform draws for weights, embeddings and biases.
    pub init_range: f64,
}

impl Default for InstanceSizes {
    fn default() -> Self {
        InstanceSizes {
            embedding_size: 4,
            hidden_size: 3,
            premise_tokens: 3,
            hypothesis_tokens: 3,
            init_range: 1.0,
        }
    }
}

const WORDS: [&str; 6] = ["a", "dog", "runs", "the", "cat", "sleeps"];

/// Random binary bracketing over `tokens`, nodes in post-order.
pub fn random_binary_tree(tokens: &[&str], rng: &mut impl Rng) -> ParseTree {
    fn build(tokens: &[&str], offset: usize, nodes: &mut Vec<TreeNode>, rng: &mut impl Rng) -> usize {
        if tokens.len() == 1 {
            nodes.push(TreeNode {
                token: Some(tokens[0].to_string()),
                children: vec![],
                span: (offset, offset + 1),
                position: Some(offset),
            });
            return nodes.len() - 1;
        }
        let split = rng.random_range(1..tokens.len());
        let l = build(&tokens[..split], offset, nodes, rng);
        let r = build(&tokens[split..], offset + split, nodes, rng);
        nodes.push(TreeNode {
            token: None,
            children: vec![l, r],
            span: (offset, offset + tokens.len()),
            position: None,
        });
        nodes.len() - 1
    }
    let mut nodes = Vec::new();
    let root = build(tokens, 0, &mut nodes, rng);
    ParseTree::new(nodes, root).expect("well-formed by construction")
}

/// Random dependency tree: each word after a randomly chosen root picks a
/// head among the words already attached.
pub fn random_dependency_tree(tokens: &[&str], rng: &mut impl Rng) -> ParseTree {
    let n = tokens.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut heads = vec![0; n];
    for k in 1..n {
        heads[order[k]] = order[rng.random_range(0..k)] + 1;
    }
    let rows: Vec<ConllRow> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| ConllRow::new(i + 1, *t, heads[i]))
        .collect();
    parse_conll(&rows).expect("valid by construction")
}

fn random_sentence(len: usize, rng: &mut impl Rng) -> Sentence {
    let toks: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    Sentence {
        constituency: Some(random_binary_tree(&toks, rng)),
        dependency: Some(random_dependency_tree(&toks, rng)),
    }
}

/// A tiny random example and freshly initialized parameters. Biases get a
/// random offset so every term of the gradient is exercised.
pub fn random_instance(
    variant: ModelVariant,
    sizes: &InstanceSizes,
    seed: u64,
) -> Result<(ModelParams, Example)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let example = Example {
        pair_id: format!("gradcheck-{seed}"),
        premise: random_sentence(sizes.premise_tokens, &mut rng),
        hypothesis: random_sentence(sizes.hypothesis_tokens, &mut rng),
        gold: Label::from_index(rng.random_range(0..Label::COUNT)).expect("label"),
    };
    let vocab = Vocabulary::from_tokens(
        std::iter::once(crate::data::vocab::UNK)
            .chain(WORDS)
            .map(str::to_string)
            .collect(),
        true,
    );
    let config = TrainConfig {
        embedding_size: sizes.embedding_size,
        hidden_size: sizes.hidden_size,
        seed,
        init_range: sizes.init_range,
        ..TrainConfig::default()
    };
    let mut params = init_params(variant, &config, vocab, None)?;
    for p in params.store.iter_mut() {
        if p.init == crate::params::InitKind::Zero {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-sizes.init_range..sizes.init_range));
        }
    }
    Ok((params, example))
}

/// Central differences at step `1e-5` carry roughly `1e-11` of rounding
/// noise, so a gradient coordinate smaller than this cannot be resolved to
/// `1e-4` relative error. Instances with a live coordinate in
/// `(0, RESOLUTION)` are redrawn.
pub const RESOLUTION: f64 = 5e-7;
pub const MAX_REDRAWS: u64 = 20;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub variant: ModelVariant,
    pub seed: u64,
    /// Instances skipped because a gradient fell below [`RESOLUTION`].
    pub redraws: u64,
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.worst_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self, tolerance: f64) -> Vec<&BlockReport> {
        self.blocks
            .iter()
            .filter(|b| b.worst_rel_error.is_nan() || b.worst_rel_error >= tolerance)
            .collect()
    }
}

fn resolvable(grads: &[Vec<f64>]) -> bool {
    grads.iter().flatten().all(|g| *g == 0.0 || g.abs() >= RESOLUTION)
}

pub fn gradcheck_variant(variant: ModelVariant, sizes: &InstanceSizes, seed: u64) -> Result<GradcheckReport> {
    let mut redraws: u64 = 0;
    let (mut params, example) = loop {
        let draw_seed = seed.wrapping_add(redraws.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (params, example) = random_instance(variant, sizes, draw_seed)?;
        if redraws + 1 >= MAX_REDRAWS || resolvable(&analytic_gradients(&params, &example)?) {
            break (params, example);
        }
        redraws += 1;
    };
    let blocks = check_model(&mut params, &example, DEFAULT_STEP)?;
    Ok(GradcheckReport {
        variant,
        seed,
        redraws,
        blocks,
    })
}
