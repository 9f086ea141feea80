//! Word-by-word attention over a premise sequence, and node-by-node
//! attention of a hypothesis tree over every node of a premise tree.
//!
//! Both produce the pair vector `h* = tanh(Wx' r_last + Wy' h_last)` where
//! `r` is the attention-weighted premise summary carried along the
//! hypothesis, and an [`AttentionTrace`] of the weights for inspection.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::encoders::{EncodedTree, NodeState, TreeKind};
use crate::error::{Error, Result};
use crate::params::{InitKind, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wy: ParamId,
    pub wx: ParamId,
    /// Applied to `r_{j-1}` inside the score; sequence mode only.
    pub wr_score: Option<ParamId>,
    /// Applied to the carried accumulator: `d x d` for sequences and
    /// dependency trees, `d x N*d` for constituency trees.
    pub wr_carry: ParamId,
    pub we: ParamId,
    pub wx_final: ParamId,
    pub wy_final: ParamId,
    pub hidden_size: usize,
}

/// `Wx'` and `Wy'` of the pair combiner.
#[derive(Clone, Debug)]
pub struct Combiner {
    pub wx: ParamId,
    pub wy: ParamId,
}

impl Combiner {
    pub fn register(store: &mut ParamStore, d: usize, range: f64) -> Result<Self> {
        Ok(Combiner {
            wx: store.register("combine.Wx", vec![d, d], InitKind::Uniform(range))?,
            wy: store.register("combine.Wy", vec![d, d], InitKind::Uniform(range))?,
        })
    }

    /// `tanh(Wx' x + Wy' y)`.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, y: Var) -> Result<Var> {
        let wx = g.param(store, self.wx);
        let wy = g.param(store, self.wy);
        let a = g.matmul(wx, x)?;
        let b = g.matmul(wy, y)?;
        let s = g.add(a, b)?;
        Ok(g.tanh(s))
    }
}

impl AttentionParams {
    /// Registers attention weights. `carry_cols` is `d` or `N*d`; the score
    /// matrix `Wr_score` exists only for sequence attention. With `tie`, the
    /// score and carry matrices share storage, as do the score and combiner
    /// projections.
    pub fn register(
        store: &mut ParamStore,
        d: usize,
        carry_cols: usize,
        sequence: bool,
        tie: bool,
        range: f64,
    ) -> Result<Self> {
        let u = InitKind::Uniform(range);
        let wy = store.register("attn.Wy", vec![d, d], u.clone())?;
        let wx = store.register("attn.Wx", vec![d, d], u.clone())?;
        let wr_carry = store.register("attn.Wr_carry", vec![d, carry_cols], u.clone())?;
        let we = store.register("attn.we", vec![d], u.clone())?;
        let wr_score = match (sequence, tie) {
            (false, _) => None,
            (true, true) => Some(wr_carry),
            (true, false) => Some(store.register("attn.Wr_score", vec![d, d], u)?),
        };
        let (wx_final, wy_final) = if tie {
            (wx, wy)
        } else {
            let c = Combiner::register(store, d, range)?;
            (c.wx, c.wy)
        };
        Ok(AttentionParams {
            wy,
            wx,
            wr_score,
            wr_carry,
            we,
            wx_final,
            wy_final,
            hidden_size: d,
        })
    }

    pub fn combiner(&self) -> Combiner {
        Combiner {
            wx: self.wx_final,
            wy: self.wy_final,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub node: usize,
    pub span: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// The hypothesis position or node this row belongs to.
    pub node: usize,
    pub span: (usize, usize),
    /// Distribution over `AttentionTrace::premise`, in the same order.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub premise: Vec<TraceNode>,
    pub rows: Vec<TraceRow>,
}

/// Precomputed premise side: stacked states and their `Wx` projection.
struct Premise {
    hx: Var,
    projected: Var,
}

fn premise_side(g: &mut Graph, store: &ParamStore, p: &AttentionParams, hs: &[Var]) -> Result<Premise> {
    let hx = g.stack_columns(hs)?;
    let wx = g.param(store, p.wx);
    let projected = g.matmul(wx, hx)?;
    Ok(Premise { hx, projected })
}

/// Scores every premise column against `query` (already `Wy h_j + extra`),
/// returning the attention weights and the weighted premise sum.
fn attend_once(
    g: &mut Graph,
    store: &ParamStore,
    p: &AttentionParams,
    premise: &Premise,
    query: Var,
) -> Result<(Var, Var)> {
    let m = g.add_column(premise.projected, query)?;
    let m = g.tanh(m);
    let we = g.param(store, p.we);
    let scores = g.matmul(we, m)?;
    let alpha = g.softmax(scores)?;
    let weighted = g.matmul(premise.hx, alpha)?;
    Ok((alpha, weighted))
}

/// Sequence attention: at each hypothesis position the score sees the
/// previous accumulator through `Wr_score`, and the new accumulator adds
/// `tanh(Wr_carry r_{j-1})` to the attended premise sum. `r_0 = 0`.
pub fn attend_sequence(
    g: &mut Graph,
    store: &ParamStore,
    p: &AttentionParams,
    premise: &[NodeState],
    hypothesis: &[NodeState],
) -> Result<(Var, AttentionTrace)> {
    if premise.is_empty() || hypothesis.is_empty() {
        return Err(Error::Empty { op: "attend_sequence" });
    }
    let d = p.hidden_size;
    let hs: Vec<Var> = premise.iter().map(|s| s.h).collect();
    let prem = premise_side(g, store, p, &hs)?;
    let wy = g.param(store, p.wy);
    let wr_score = p
        .wr_score
        .ok_or_else(|| Error::Config("sequence attention needs Wr_score".into()))?;
    let wr_score = g.param(store, wr_score);
    let wr_carry = g.param(store, p.wr_carry);

    let mut r = g.zeros(d);
    let mut rows = Vec::with_capacity(hypothesis.len());
    for (j, state) in hypothesis.iter().enumerate() {
        let qy = g.matmul(wy, state.h)?;
        let qr = g.matmul(wr_score, r)?;
        let query = g.add(qy, qr)?;
        let (alpha, weighted) = attend_once(g, store, p, &prem, query)?;
        let carry = g.matmul(wr_carry, r)?;
        let carry = g.tanh(carry);
        r = g.add(weighted, carry)?;
        rows.push(TraceRow {
            node: j,
            span: (j, j + 1),
            weights: g.value(alpha).data().to_vec(),
        });
    }
    let last = hypothesis.last().expect("nonempty").h;
    let h_star = p.combiner().apply(g, store, r, last)?;
    let trace = AttentionTrace {
        premise: (0..premise.len())
            .map(|i| TraceNode {
                node: i,
                span: (i, i + 1),
            })
            .collect(),
        rows,
    };
    Ok((h_star, trace))
}

/// Tree attention: hypothesis nodes are visited in post-order; each node
/// attends over all premise nodes, leaves and phrases alike. The child
/// accumulators are folded by `g(R_j)` (concatenation for constituency,
/// sum for dependency), which enters both the score and the carry.
pub fn attend_tree(
    g: &mut Graph,
    store: &ParamStore,
    p: &AttentionParams,
    premise: &EncodedTree,
    hypothesis: &EncodedTree,
    mode: TreeKind,
) -> Result<(Var, AttentionTrace)> {
    if premise.is_empty() || hypothesis.is_empty() {
        return Err(Error::Empty { op: "attend_tree" });
    }
    for (side, enc) in [("premise", premise), ("hypothesis", hypothesis)] {
        let shape_ok = match mode {
            TreeKind::Constituency => enc.tree.is_constituency(),
            TreeKind::Dependency => enc.tree.is_dependency(),
        };
        if enc.kind != mode || !shape_ok {
            return Err(Error::Tree(format!(
                "{side} tree was encoded as {:?} but attention mode is {mode:?}",
                enc.kind
            )));
        }
    }
    let d = p.hidden_size;
    let carry_cols = store.value(p.wr_carry).cols();
    let slots = carry_cols / d;
    if mode == TreeKind::Dependency && carry_cols != d {
        return Err(Error::shape("attend_tree carry", &[d, carry_cols], &[d, d]));
    }
    if mode == TreeKind::Constituency && hypothesis.tree.max_arity() > slots {
        return Err(Error::Tree(format!(
            "hypothesis arity {} exceeds carry slots {slots}",
            hypothesis.tree.max_arity()
        )));
    }

    let hs: Vec<Var> = premise.nodes.iter().map(|(_, s)| s.h).collect();
    let prem = premise_side(g, store, p, &hs)?;
    let wy = g.param(store, p.wy);
    let wr = g.param(store, p.wr_carry);

    let tree = &hypothesis.tree;
    let mut acc: Vec<Option<Var>> = vec![None; tree.len()];
    let mut rows = Vec::with_capacity(hypothesis.len());
    for &(j, state) in &hypothesis.nodes {
        let children = tree.children(j);
        let fold = if children.is_empty() {
            None
        } else {
            let rs: Vec<Var> = children.iter().map(|&c| acc[c].expect("post-order")).collect();
            let folded = match mode {
                TreeKind::Constituency => {
                    let mut parts = rs;
                    while parts.len() < slots {
                        parts.push(g.zeros(d));
                    }
                    g.concat(&parts)?
                }
                TreeKind::Dependency => g.add_all(&rs)?,
            };
            Some(g.matmul(wr, folded)?)
        };
        let qy = g.matmul(wy, state.h)?;
        let query = match fold {
            Some(f) => g.add(qy, f)?,
            None => qy,
        };
        let (alpha, weighted) = attend_once(g, store, p, &prem, query)?;
        let r = match fold {
            Some(f) => {
                let carry = g.tanh(f);
                g.add(weighted, carry)?
            }
            None => weighted,
        };
        acc[j] = Some(r);
        rows.push(TraceRow {
            node: j,
            span: tree.node(j).span,
            weights: g.value(alpha).data().to_vec(),
        });
    }
    let root = tree.root();
    let r_root = acc[root].expect("root visited");
    let h_star = p
        .combiner()
        .apply(g, store, r_root, hypothesis.root_state().h)?;
    let trace = AttentionTrace {
        premise: premise
            .nodes
            .iter()
            .map(|&(id, _)| TraceNode {
                node: id,
                span: premise.tree.node(id).span,
            })
            .collect(),
        rows,
    };
    Ok((h_star, trace))
}
