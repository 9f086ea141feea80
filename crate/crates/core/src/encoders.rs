//! Sentence encoders: sequence LSTM, N-ary constituency Tree-LSTM,
//! child-sum dependency Tree-LSTM, and the bag-of-words sum.
//!
//! Every encoder records its computation on a caller-supplied [`Graph`],
//! so the returned states are graph handles that downstream attention and
//! classification layers can differentiate through.

use crate::autodiff::{Graph, Var};
use crate::data::tree::ParseTree;
use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::params::{InitKind, ParamId, ParamStore};

/// Maps a token to its input vector on the graph.
pub trait TokenEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, g: &mut Graph, token: &str) -> Result<Var>;
}

/// Embedding lookup through a `[vocab, e]` parameter matrix.
pub struct TableEmbedder<'a> {
    pub store: &'a ParamStore,
    pub table: ParamId,
    pub vocab: &'a Vocabulary,
}

impl TokenEmbedder for TableEmbedder<'_> {
    fn dim(&self) -> usize {
        self.store.value(self.table).cols()
    }

    fn embed(&self, g: &mut Graph, token: &str) -> Result<Var> {
        g.param_row(self.store, self.table, self.vocab.index(token))
    }
}

/// Hidden state and memory cell of one position or tree node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeState {
    pub h: Var,
    pub c: Var,
}

impl NodeState {
    pub fn zeros(g: &mut Graph, d: usize) -> Self {
        NodeState {
            h: g.zeros(d),
            c: g.zeros(d),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeKind {
    Constituency,
    Dependency,
}

/// Per-node states of an encoded tree in post-order.
#[derive(Clone, Debug)]
pub struct EncodedTree {
    pub kind: TreeKind,
    pub tree: ParseTree,
    /// `(node id, state)`, every child before its parent.
    pub nodes: Vec<(usize, NodeState)>,
    slot: Vec<usize>,
}

impl EncodedTree {
    fn new(kind: TreeKind, tree: &ParseTree, nodes: Vec<(usize, NodeState)>) -> Self {
        let mut slot = vec![usize::MAX; tree.len()];
        for (i, (id, _)) in nodes.iter().enumerate() {
            slot[*id] = i;
        }
        EncodedTree {
            kind,
            tree: tree.clone(),
            nodes,
            slot,
        }
    }

    pub fn root(&self) -> usize {
        self.tree.root()
    }

    pub fn state(&self, node: usize) -> NodeState {
        self.nodes[self.slot[node]].1
    }

    pub fn root_state(&self) -> NodeState {
        self.state(self.root())
    }

    /// Index of `node` in the post-order list.
    pub fn position(&self, node: usize) -> usize {
        self.slot[node]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Affine map `A [x; h] + b` producing `[c~; o; i; f]` row blocks.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub a: ParamId,
    pub b: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn register(store: &mut ParamStore, prefix: &str, e: usize, d: usize) -> Result<Self> {
        let a = store.register(
            format!("{prefix}.A"),
            vec![4 * d, e + d],
            InitKind::Orthogonal {
                block: d,
                segments: vec![e, d],
            },
        )?;
        let b = store.register(format!("{prefix}.b"), vec![4 * d], InitKind::Zero)?;
        Ok(LstmParams {
            a,
            b,
            input_size: e,
            hidden_size: d,
        })
    }
}

/// N-ary Tree-LSTM weights. Each forget gate `k` reads the whole
/// concatenated child state through its own `uf[k]`.
#[derive(Clone, Debug)]
pub struct ConstTreeLstmParams {
    pub wp: ParamId,
    pub bp: ParamId,
    pub wf: ParamId,
    pub uf: Vec<ParamId>,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl ConstTreeLstmParams {
    pub fn arity(&self) -> usize {
        self.uf.len()
    }

    pub fn register(store: &mut ParamStore, prefix: &str, e: usize, d: usize, arity: usize) -> Result<Self> {
        let mut segments = vec![e];
        segments.extend(std::iter::repeat_n(d, arity));
        let wp = store.register(
            format!("{prefix}.Wp"),
            vec![3 * d, e + arity * d],
            InitKind::Orthogonal { block: d, segments },
        )?;
        let bp = store.register(format!("{prefix}.bp"), vec![3 * d], InitKind::Zero)?;
        let wf = store.register(
            format!("{prefix}.Wf"),
            vec![d, e],
            InitKind::Orthogonal {
                block: d,
                segments: vec![e],
            },
        )?;
        let uf = (0..arity)
            .map(|k| {
                store.register(
                    format!("{prefix}.Uf{k}"),
                    vec![d, arity * d],
                    InitKind::Orthogonal {
                        block: d,
                        segments: vec![d; arity],
                    },
                )
            })
            .collect::<Result<_>>()?;
        Ok(ConstTreeLstmParams {
            wp,
            bp,
            wf,
            uf,
            input_size: e,
            hidden_size: d,
        })
    }
}

/// Child-sum Tree-LSTM weights; one `uf` shared by every child.
#[derive(Clone, Debug)]
pub struct DepTreeLstmParams {
    pub wp: ParamId,
    pub bp: ParamId,
    pub wf: ParamId,
    pub uf: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl DepTreeLstmParams {
    pub fn register(store: &mut ParamStore, prefix: &str, e: usize, d: usize) -> Result<Self> {
        let wp = store.register(
            format!("{prefix}.Wp"),
            vec![3 * d, e + d],
            InitKind::Orthogonal {
                block: d,
                segments: vec![e, d],
            },
        )?;
        let bp = store.register(format!("{prefix}.bp"), vec![3 * d], InitKind::Zero)?;
        let wf = store.register(
            format!("{prefix}.Wf"),
            vec![d, e],
            InitKind::Orthogonal {
                block: d,
                segments: vec![e],
            },
        )?;
        let uf = store.register(
            format!("{prefix}.Uf"),
            vec![d, d],
            InitKind::Orthogonal {
                block: d,
                segments: vec![d],
            },
        )?;
        Ok(DepTreeLstmParams {
            wp,
            bp,
            wf,
            uf,
            input_size: e,
            hidden_size: d,
        })
    }
}

fn check_len(g: &Graph, v: Var, expected: usize, op: &'static str) -> Result<()> {
    let shape = g.shape(v);
    if shape != [expected] {
        return Err(Error::shape(op, shape, &[expected]));
    }
    Ok(())
}

/// `W [x; child] + b` split into `parts` row blocks of size `d`.
fn gate_blocks(
    g: &mut Graph,
    store: &ParamStore,
    w: ParamId,
    b: ParamId,
    input: Var,
    d: usize,
    parts: usize,
) -> Result<Vec<Var>> {
    let w = g.param(store, w);
    let b = g.param(store, b);
    let lin = g.matmul(w, input)?;
    let pre = g.add(lin, b)?;
    (0..parts).map(|k| g.slice(pre, k * d, d)).collect()
}

/// One LSTM transition without peepholes.
pub fn lstm_step(
    g: &mut Graph,
    store: &ParamStore,
    p: &LstmParams,
    prev: &NodeState,
    x: Var,
) -> Result<NodeState> {
    let d = p.hidden_size;
    check_len(g, x, p.input_size, "lstm_step input")?;
    check_len(g, prev.h, d, "lstm_step hidden")?;
    check_len(g, prev.c, d, "lstm_step cell")?;
    let xh = g.concat(&[x, prev.h])?;
    let blocks = gate_blocks(g, store, p.a, p.b, xh, d, 4)?;
    let cand = g.tanh(blocks[0]);
    let o = g.sigmoid(blocks[1]);
    let i = g.sigmoid(blocks[2]);
    let f = g.sigmoid(blocks[3]);
    let new_part = g.hadamard(cand, i)?;
    let kept = g.hadamard(prev.c, f)?;
    let c = g.add(new_part, kept)?;
    let tc = g.tanh(c);
    let h = g.hadamard(o, tc)?;
    Ok(NodeState { h, c })
}

/// Left-to-right LSTM from a zero state; one state per token.
pub fn encode_sequence(
    g: &mut Graph,
    store: &ParamStore,
    p: &LstmParams,
    embedder: &dyn TokenEmbedder,
    tokens: &[&str],
) -> Result<Vec<NodeState>> {
    if tokens.is_empty() {
        return Err(Error::Empty { op: "encode_sequence" });
    }
    let mut state = NodeState::zeros(g, p.hidden_size);
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let x = embedder.embed(g, tok)?;
        state = lstm_step(g, store, p, &state, x)?;
        out.push(state);
    }
    Ok(out)
}

/// `c = c~ . i + sum_k c_k . f_k`, `h = o . tanh(c)`.
fn finish_node(
    g: &mut Graph,
    cand: Var,
    o: Var,
    i: Var,
    forgets: &[(Var, Var)],
) -> Result<NodeState> {
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let i = g.sigmoid(i);
    let mut c = g.hadamard(cand, i)?;
    for &(child_c, f) in forgets {
        let kept = g.hadamard(child_c, f)?;
        c = g.add(c, kept)?;
    }
    let tc = g.tanh(c);
    let h = g.hadamard(o, tc)?;
    Ok(NodeState { h, c })
}

/// Encodes a constituency tree bottom-up. Internal nodes take a zero input
/// vector; missing child slots are zero-filled.
pub fn encode_const_tree(
    g: &mut Graph,
    store: &ParamStore,
    p: &ConstTreeLstmParams,
    tree: &ParseTree,
    embedder: &dyn TokenEmbedder,
) -> Result<EncodedTree> {
    let (e, d, n) = (p.input_size, p.hidden_size, p.arity());
    if embedder.dim() != e {
        return Err(Error::shape("encode_const_tree embedding", &[embedder.dim()], &[e]));
    }
    let mut states: Vec<Option<NodeState>> = vec![None; tree.len()];
    let mut nodes = Vec::with_capacity(tree.len());
    for id in tree.post_order() {
        let node = tree.node(id);
        if node.children.len() > n {
            return Err(Error::Tree(format!(
                "node {id} has {} children, encoder arity is {n}",
                node.children.len()
            )));
        }
        let state = if node.children.is_empty() {
            let tok = node
                .token
                .as_deref()
                .ok_or_else(|| Error::Tree(format!("leaf {id} has no token")))?;
            let x = embedder.embed(g, tok)?;
            let h_slots = g.zeros(n * d);
            let input = g.concat(&[x, h_slots])?;
            let b = gate_blocks(g, store, p.wp, p.bp, input, d, 3)?;
            finish_node(g, b[0], b[1], b[2], &[])?
        } else {
            if node.token.is_some() {
                return Err(Error::Tree(format!("internal node {id} carries a token")));
            }
            let x = g.zeros(e);
            let mut slots = Vec::with_capacity(n);
            for k in 0..n {
                slots.push(match node.children.get(k) {
                    Some(&c) => states[c].expect("post-order").h,
                    None => g.zeros(d),
                });
            }
            let hcat = g.concat(&slots)?;
            let input = g.concat(&[x, hcat])?;
            let b = gate_blocks(g, store, p.wp, p.bp, input, d, 3)?;
            let wf = g.param(store, p.wf);
            let fx = g.matmul(wf, x)?;
            let mut forgets = Vec::with_capacity(node.children.len());
            for (k, &c) in node.children.iter().enumerate() {
                let uf = g.param(store, p.uf[k]);
                let fh = g.matmul(uf, hcat)?;
                let pre = g.add(fx, fh)?;
                let f = g.sigmoid(pre);
                forgets.push((states[c].expect("post-order").c, f));
            }
            finish_node(g, b[0], b[1], b[2], &forgets)?
        };
        states[id] = Some(state);
        nodes.push((id, state));
    }
    Ok(EncodedTree::new(TreeKind::Constituency, tree, nodes))
}

/// Encodes a dependency tree bottom-up with child-sum composition.
pub fn encode_dep_tree(
    g: &mut Graph,
    store: &ParamStore,
    p: &DepTreeLstmParams,
    tree: &ParseTree,
    embedder: &dyn TokenEmbedder,
) -> Result<EncodedTree> {
    let (e, d) = (p.input_size, p.hidden_size);
    if embedder.dim() != e {
        return Err(Error::shape("encode_dep_tree embedding", &[embedder.dim()], &[e]));
    }
    let mut states: Vec<Option<NodeState>> = vec![None; tree.len()];
    let mut nodes = Vec::with_capacity(tree.len());
    for id in tree.post_order() {
        let node = tree.node(id);
        let tok = node
            .token
            .as_deref()
            .ok_or_else(|| Error::Tree(format!("dependency node {id} has no token")))?;
        let x = embedder.embed(g, tok)?;
        let children: Vec<NodeState> = node
            .children
            .iter()
            .map(|&c| states[c].expect("post-order"))
            .collect();
        let hsum = if children.is_empty() {
            g.zeros(d)
        } else {
            let hs: Vec<Var> = children.iter().map(|s| s.h).collect();
            g.add_all(&hs)?
        };
        let input = g.concat(&[x, hsum])?;
        let b = gate_blocks(g, store, p.wp, p.bp, input, d, 3)?;
        let mut forgets = Vec::with_capacity(children.len());
        if !children.is_empty() {
            let wf = g.param(store, p.wf);
            let uf = g.param(store, p.uf);
            let fx = g.matmul(wf, x)?;
            for child in &children {
                let fh = g.matmul(uf, child.h)?;
                let pre = g.add(fx, fh)?;
                forgets.push((child.c, g.sigmoid(pre)));
            }
        }
        let state = finish_node(g, b[0], b[1], b[2], &forgets)?;
        states[id] = Some(state);
        nodes.push((id, state));
    }
    Ok(EncodedTree::new(TreeKind::Dependency, tree, nodes))
}

/// Sum of token embeddings.
pub fn encode_nbow(g: &mut Graph, embedder: &dyn TokenEmbedder, tokens: &[&str]) -> Result<Var> {
    let vecs = tokens
        .iter()
        .map(|t| embedder.embed(g, t))
        .collect::<Result<Vec<_>>>()?;
    if vecs.is_empty() {
        return Err(Error::Empty { op: "encode_nbow" });
    }
    g.add_all(&vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sexpr::parse_sexpr;
    use crate::tensor::Tensor;

    /// Fixed vectors per token, as an embedding-free test double.
    struct Fixed(usize);

    impl TokenEmbedder for Fixed {
        fn dim(&self) -> usize {
            self.0
        }
        fn embed(&self, g: &mut Graph, token: &str) -> Result<Var> {
            let seed = token.bytes().map(|b| b as f64).sum::<f64>();
            let v = (0..self.0).map(|k| ((seed + k as f64) * 0.37).sin()).collect();
            Ok(g.input(Tensor::vector(v)))
        }
    }

    #[test]
    fn zero_lstm_gives_zero_hidden() {
        let mut store = ParamStore::new();
        let p = LstmParams::register(&mut store, "l", 3, 2).unwrap();
        let mut g = Graph::new();
        let prev = NodeState::zeros(&mut g, 2);
        let x = g.zeros(3);
        let s = lstm_step(&mut g, &store, &p, &prev, x).unwrap();
        assert_eq!(g.value(s.h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_rejects_wrong_input_size() {
        let mut store = ParamStore::new();
        let p = LstmParams::register(&mut store, "l", 3, 2).unwrap();
        let mut g = Graph::new();
        let prev = NodeState::zeros(&mut g, 2);
        let x = g.zeros(4);
        assert!(lstm_step(&mut g, &store, &p, &prev, x).is_err());
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut store = ParamStore::new();
        let p = LstmParams::register(&mut store, "l", 3, 2).unwrap();
        let mut g = Graph::new();
        assert!(encode_sequence(&mut g, &store, &p, &Fixed(3), &[]).is_err());
        assert!(encode_nbow(&mut g, &Fixed(3), &[]).is_err());
    }

    #[test]
    fn four_leaf_binary_tree_has_seven_states() {
        let mut store = ParamStore::new();
        let p = ConstTreeLstmParams::register(&mut store, "t", 3, 2, 2).unwrap();
        let tree = parse_sexpr("( ( a b ) ( c d ) )").unwrap();
        let mut g = Graph::new();
        let enc = encode_const_tree(&mut g, &store, &p, &tree, &Fixed(3)).unwrap();
        assert_eq!(enc.len(), 7);
        assert_eq!(enc.nodes.last().unwrap().0, tree.root());
    }

    #[test]
    fn constituency_arity_and_token_checks() {
        let mut store = ParamStore::new();
        let p = ConstTreeLstmParams::register(&mut store, "t", 3, 2, 2).unwrap();
        let dep = crate::data::conll::parse_conll(&[
            crate::data::ConllRow::new(1, "a", 0),
            crate::data::ConllRow::new(2, "b", 1),
            crate::data::ConllRow::new(3, "c", 1),
            crate::data::ConllRow::new(4, "d", 1),
        ])
        .unwrap();
        let mut g = Graph::new();
        // root has three children
        assert!(encode_const_tree(&mut g, &store, &p, &dep, &Fixed(3)).is_err());
        let p1 = ConstTreeLstmParams::register(&mut store, "t3", 3, 2, 3).unwrap();
        // arity fits but internal node carries a token
        assert!(encode_const_tree(&mut g, &store, &p1, &dep, &Fixed(3)).is_err());
    }

    #[test]
    fn dependency_requires_tokens_everywhere() {
        let mut store = ParamStore::new();
        let p = DepTreeLstmParams::register(&mut store, "d", 3, 2).unwrap();
        let tree = parse_sexpr("( a b )").unwrap();
        let mut g = Graph::new();
        assert!(encode_dep_tree(&mut g, &store, &p, &tree, &Fixed(3)).is_err());
    }

    #[test]
    fn nbow_sums_embeddings() {
        let mut g = Graph::new();
        let e = Fixed(3);
        let s = encode_nbow(&mut g, &e, &["a", "b"]).unwrap();
        let a = e.embed(&mut g, "a").unwrap();
        let b = e.embed(&mut g, "b").unwrap();
        let (a, b) = (g.value(a).data().to_vec(), g.value(b).data().to_vec());
        let expected: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(g.value(s).data(), expected.as_slice());
        let one = encode_nbow(&mut g, &e, &["a"]).unwrap();
        assert_eq!(g.value(one).data(), a.as_slice());
    }
}
