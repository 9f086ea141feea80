//! The seven classifier variants: bag-of-words, sequence and tree encoders
//! with a root combiner, and the sequence and tree attention models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{attend_sequence, attend_tree, AttentionParams, AttentionTrace, Combiner};
use crate::autodiff::{Graph, Var};
use crate::data::corpus::{Example, Label, Sentence};
use crate::data::tree::ParseTree;
use crate::data::vocab::Vocabulary;
use crate::encoders::{
    encode_const_tree, encode_dep_tree, encode_nbow, encode_sequence, ConstTreeLstmParams,
    DepTreeLstmParams, EncodedTree, LstmParams, NodeState, TableEmbedder, TreeKind,
};
use crate::error::{Error, Result};
use crate::params::{InitKind, ParamId, ParamStore};

/// Probability floor applied before taking the log in the loss.
pub const PROB_FLOOR: f64 = 1e-30;

/// Branching factor of the constituency encoder; input trees are binarized.
pub const CONSTITUENCY_ARITY: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "nbow")]
    Nbow,
    #[serde(rename = "lstm")]
    LstmEnc,
    #[serde(rename = "at-lstm")]
    AtLstm,
    #[serde(rename = "tree-dlstm")]
    TreeDlstmEnc,
    #[serde(rename = "tree-clstm")]
    TreeClstmEnc,
    #[serde(rename = "sat-dlstm")]
    SatDlstm,
    #[serde(rename = "sat-clstm")]
    SatClstm,
}

/// Parse structure a variant consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseRequirement {
    None,
    Constituency,
    Dependency,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 7] = [
        ModelVariant::Nbow,
        ModelVariant::LstmEnc,
        ModelVariant::AtLstm,
        ModelVariant::TreeDlstmEnc,
        ModelVariant::TreeClstmEnc,
        ModelVariant::SatDlstm,
        ModelVariant::SatClstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Nbow => "nbow",
            ModelVariant::LstmEnc => "lstm",
            ModelVariant::AtLstm => "at-lstm",
            ModelVariant::TreeDlstmEnc => "tree-dlstm",
            ModelVariant::TreeClstmEnc => "tree-clstm",
            ModelVariant::SatDlstm => "sat-dlstm",
            ModelVariant::SatClstm => "sat-clstm",
        }
    }

    pub fn requires(self) -> ParseRequirement {
        match self {
            ModelVariant::Nbow | ModelVariant::LstmEnc | ModelVariant::AtLstm => ParseRequirement::None,
            ModelVariant::TreeClstmEnc | ModelVariant::SatClstm => ParseRequirement::Constituency,
            ModelVariant::TreeDlstmEnc | ModelVariant::SatDlstm => ParseRequirement::Dependency,
        }
    }

    pub fn has_attention(self) -> bool {
        matches!(
            self,
            ModelVariant::AtLstm | ModelVariant::SatDlstm | ModelVariant::SatClstm
        )
    }

    pub fn names() -> String {
        Self::ALL.map(Self::name).join(", ")
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!("unknown variant {s:?}; expected one of {}", Self::names()))
            })
    }
}

/// Architecture choices that fix the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub embedding_size: usize,
    pub hidden_size: usize,
    /// One encoder for both sentences instead of one per side.
    pub share_encoders: bool,
    /// Reuse the score projections in the combiner and the carry matrix in
    /// the sequence score.
    pub tie_attention_weights: bool,
    /// Half-width of the uniform initialization range.
    pub init_range: f64,
}

impl ModelConfig {
    pub fn new(variant: ModelVariant, embedding_size: usize, hidden_size: usize) -> Self {
        ModelConfig {
            variant,
            embedding_size,
            hidden_size,
            share_encoders: false,
            tie_attention_weights: false,
            init_range: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
enum SentenceEncoder {
    Bag,
    Sequence(LstmParams),
    Constituency(ConstTreeLstmParams),
    Dependency(DepTreeLstmParams),
}

#[derive(Clone, Debug)]
enum Head {
    Mlp { w: ParamId, b: ParamId },
    Combine(Combiner),
    Attend(AttentionParams),
}

#[derive(Clone, Debug)]
pub struct ClassifierParams {
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Premise,
    Hypothesis,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Premise => "premise",
            Side::Hypothesis => "hypothesis",
        }
    }
}

/// Graph-level encoding of one sentence.
#[derive(Clone, Debug)]
pub enum Encoding {
    Bag(Var),
    Sequence(Vec<NodeState>),
    Tree(EncodedTree),
}

impl Encoding {
    /// The sentence vector: the bag sum, last hidden state, or root state.
    pub fn summary(&self) -> Var {
        match self {
            Encoding::Bag(v) => *v,
            Encoding::Sequence(states) => states.last().expect("nonempty").h,
            Encoding::Tree(t) => t.root_state().h,
        }
    }
}

pub struct ForwardOutput {
    pub probs: Var,
    pub h_star: Var,
    pub trace: Option<AttentionTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: Label,
    pub trace: Option<AttentionTrace>,
}

/// The complete weight set of one variant plus the vocabulary it embeds.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub vocab: Vocabulary,
    pub embedding: ParamId,
    premise_encoder: SentenceEncoder,
    hypothesis_encoder: SentenceEncoder,
    head: Head,
    pub classifier: ClassifierParams,
}

impl ModelParams {
    /// Registers every parameter (zero-valued, tagged with its init scheme).
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        let (e, d) = (config.embedding_size, config.hidden_size);
        if e == 0 || d == 0 {
            return Err(Error::Config("embedding and hidden sizes must be positive".into()));
        }
        let range = config.init_range;
        let mut store = ParamStore::new();
        let embedding = store.register("embedding", vec![vocab.len(), e], InitKind::Embedding(range))?;

        let variant = config.variant;
        let make_encoder = |store: &mut ParamStore, prefix: &str| -> Result<SentenceEncoder> {
            Ok(match variant.requires() {
                _ if variant == ModelVariant::Nbow => SentenceEncoder::Bag,
                ParseRequirement::None => {
                    SentenceEncoder::Sequence(LstmParams::register(store, &format!("{prefix}.lstm"), e, d)?)
                }
                ParseRequirement::Constituency => SentenceEncoder::Constituency(
                    ConstTreeLstmParams::register(store, &format!("{prefix}.ctree"), e, d, CONSTITUENCY_ARITY)?,
                ),
                ParseRequirement::Dependency => {
                    SentenceEncoder::Dependency(DepTreeLstmParams::register(store, &format!("{prefix}.dtree"), e, d)?)
                }
            })
        };
        let (premise_encoder, hypothesis_encoder) = if config.share_encoders {
            let enc = make_encoder(&mut store, "encoder")?;
            (enc.clone(), enc)
        } else {
            let p = make_encoder(&mut store, "premise")?;
            let h = make_encoder(&mut store, "hypothesis")?;
            (p, h)
        };

        let head = match variant {
            ModelVariant::Nbow => Head::Mlp {
                w: store.register("mlp.W", vec![d, 2 * e], InitKind::Uniform(range))?,
                b: store.register("mlp.b", vec![d], InitKind::Zero)?,
            },
            ModelVariant::AtLstm | ModelVariant::SatDlstm => Head::Attend(AttentionParams::register(
                &mut store,
                d,
                d,
                variant == ModelVariant::AtLstm,
                config.tie_attention_weights,
                range,
            )?),
            ModelVariant::SatClstm => Head::Attend(AttentionParams::register(
                &mut store,
                d,
                CONSTITUENCY_ARITY * d,
                false,
                config.tie_attention_weights,
                range,
            )?),
            _ => Head::Combine(Combiner::register(&mut store, d, range)?),
        };
        let classifier = ClassifierParams {
            wo: store.register("out.Wo", vec![Label::COUNT, d], InitKind::Uniform(range))?,
            bo: store.register("out.bo", vec![Label::COUNT], InitKind::Zero)?,
        };
        Ok(ModelParams {
            config,
            store,
            vocab,
            embedding,
            premise_encoder,
            hypothesis_encoder,
            head,
            classifier,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    fn embedder(&self) -> TableEmbedder<'_> {
        TableEmbedder {
            store: &self.store,
            table: self.embedding,
            vocab: &self.vocab,
        }
    }

    fn tree<'a>(&self, sentence: &'a Sentence, side: Side, kind: TreeKind) -> Result<&'a ParseTree> {
        let (tree, structure) = match kind {
            TreeKind::Constituency => (sentence.constituency.as_ref(), "constituency"),
            TreeKind::Dependency => (sentence.dependency.as_ref(), "dependency"),
        };
        tree.ok_or(Error::MissingParse {
            variant: self.variant().name(),
            structure,
            side: side.name(),
        })
    }

    /// Encodes one sentence with the encoder for `side`.
    pub fn encode_tree(&self, g: &mut Graph, side: Side, tree: &ParseTree) -> Result<Encoding> {
        let enc = match side {
            Side::Premise => &self.premise_encoder,
            Side::Hypothesis => &self.hypothesis_encoder,
        };
        let embedder = self.embedder();
        Ok(match enc {
            SentenceEncoder::Bag => Encoding::Bag(encode_nbow(g, &embedder, &tree.tokens())?),
            SentenceEncoder::Sequence(p) => {
                Encoding::Sequence(encode_sequence(g, &self.store, p, &embedder, &tree.tokens())?)
            }
            SentenceEncoder::Constituency(p) => {
                Encoding::Tree(encode_const_tree(g, &self.store, p, tree, &embedder)?)
            }
            SentenceEncoder::Dependency(p) => {
                Encoding::Tree(encode_dep_tree(g, &self.store, p, tree, &embedder)?)
            }
        })
    }

    /// Encodes a sentence, picking the parse this variant needs.
    pub fn encode(&self, g: &mut Graph, side: Side, sentence: &Sentence) -> Result<Encoding> {
        let tree = match self.variant().requires() {
            ParseRequirement::Constituency => self.tree(sentence, side, TreeKind::Constituency)?,
            ParseRequirement::Dependency => self.tree(sentence, side, TreeKind::Dependency)?,
            ParseRequirement::None => sentence
                .constituency
                .as_ref()
                .or(sentence.dependency.as_ref())
                .ok_or(Error::MissingParse {
                    variant: self.variant().name(),
                    structure: "token",
                    side: side.name(),
                })?,
        };
        self.encode_tree(g, side, tree)
    }

    /// Builds the class distribution for one example on `g`.
    pub fn forward(&self, g: &mut Graph, example: &Example) -> Result<ForwardOutput> {
        let premise = self.encode(g, Side::Premise, &example.premise)?;
        let hypothesis = self.encode(g, Side::Hypothesis, &example.hypothesis)?;
        let (h_star, trace) = match (&self.head, &premise, &hypothesis) {
            (Head::Mlp { w, b }, Encoding::Bag(x), Encoding::Bag(y)) => {
                let xy = g.concat(&[*x, *y])?;
                let w = g.param(&self.store, *w);
                let b = g.param(&self.store, *b);
                let lin = g.matmul(w, xy)?;
                let pre = g.add(lin, b)?;
                (g.tanh(pre), None)
            }
            (Head::Combine(c), p, h) => (c.apply(g, &self.store, p.summary(), h.summary())?, None),
            (Head::Attend(a), Encoding::Sequence(p), Encoding::Sequence(h)) => {
                let (hs, trace) = attend_sequence(g, &self.store, a, p, h)?;
                (hs, Some(trace))
            }
            (Head::Attend(a), Encoding::Tree(p), Encoding::Tree(h)) => {
                let (hs, trace) = attend_tree(g, &self.store, a, p, h, p.kind)?;
                (hs, Some(trace))
            }
            _ => unreachable!("head and encoders are registered together"),
        };
        let wo = g.param(&self.store, self.classifier.wo);
        let bo = g.param(&self.store, self.classifier.bo);
        let logits = g.matmul(wo, h_star)?;
        let logits = g.add(logits, bo)?;
        let probs = g.softmax(logits)?;
        Ok(ForwardOutput { probs, h_star, trace })
    }

    /// Forward pass on a private graph, returning plain values.
    pub fn predict(&self, example: &Example) -> Result<Prediction> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, example)?;
        let probs = g.value(out.probs).data().to_vec();
        Ok(Prediction {
            label: Label::from_index(argmax(&probs)).expect("three classes"),
            probs,
            trace: out.trace,
        })
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Cross-entropy against a one-hot gold label.
pub fn loss(g: &mut Graph, probs: Var, gold: Label) -> Result<Var> {
    g.neg_log(probs, gold.index(), PROB_FLOOR)
}

/// `lambda * sum ||theta||^2` over trainable parameters; when `lambda > 0`
/// its gradient is added to the gradient slots. Returns the penalty value.
pub fn l2_penalty(store: &mut ParamStore, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for p in store.iter_mut().filter(|p| p.trainable) {
        let (data, _) = p.value.data_and_grad_mut();
        let sq: f64 = data.iter().map(|v| v * v).sum();
        total += sq;
        let values = data.to_vec();
        let grad = p.value.grad_mut();
        grad.iter_mut().zip(values).for_each(|(g, v)| *g += 2.0 * lambda * v);
    }
    lambda * total
}
