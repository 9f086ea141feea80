use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub token: Option<String>,
    /// Ordered child ids.
    pub children: Vec<usize>,
    /// Half-open token range covered by the subtree.
    pub span: (usize, usize),
    /// Sentence position of this node's own token, when it has one.
    pub position: Option<usize>,
}

/// A rooted ordered tree. Node ids index into `nodes`.
///
/// Constituency trees carry tokens only at leaves; dependency trees carry a
/// token at every node and use the word's sentence position as its id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    nodes: Vec<TreeNode>,
    root: usize,
}

impl ParseTree {
    /// Validates that `nodes` form a single tree rooted at `root`.
    pub fn new(nodes: Vec<TreeNode>, root: usize) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Tree("tree has no nodes".into()));
        }
        if root >= n {
            return Err(Error::Tree(format!("root {root} out of range for {n} nodes")));
        }
        let mut parent = vec![None; n];
        for (id, node) in nodes.iter().enumerate() {
            for &c in &node.children {
                if c >= n {
                    return Err(Error::Tree(format!("node {id} has out-of-range child {c}")));
                }
                if c == root {
                    return Err(Error::Tree(format!("root {root} appears as a child of {id}")));
                }
                if parent[c].replace(id).is_some() {
                    return Err(Error::Tree(format!("node {c} has more than one parent")));
                }
            }
        }
        // Unique parents plus full reachability from the root rules out cycles.
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Tree(format!("cycle through node {id}")));
            }
            stack.extend(nodes[id].children.iter().copied());
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(Error::Tree(format!("node {orphan} is not reachable from the root")));
        }
        Ok(ParseTree { nodes, root })
    }

    pub fn leaf(token: impl Into<String>) -> Self {
        ParseTree {
            nodes: vec![TreeNode {
                token: Some(token.into()),
                children: Vec::new(),
                span: (0, 1),
                position: Some(0),
            }],
            root: 0,
        }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    pub fn max_arity(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for &c in &node.children {
                parent[c] = Some(id);
            }
        }
        parent
    }

    /// Children before parents, siblings left to right.
    pub fn post_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                order.push(id);
            } else {
                stack.push((id, true));
                for &c in self.nodes[id].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }

    /// Tokens only at leaves.
    pub fn is_constituency(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.children.is_empty() == n.token.is_some())
    }

    /// A token at every node.
    pub fn is_dependency(&self) -> bool {
        self.nodes.iter().all(|n| n.token.is_some())
    }

    /// Tokens in sentence order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut toks: Vec<(usize, &str)> = self
            .nodes
            .iter()
            .filter_map(|n| Some((n.position?, n.token.as_deref()?)))
            .collect();
        toks.sort_by_key(|&(p, _)| p);
        toks.into_iter().map(|(_, t)| t).collect()
    }

    /// Left-to-right leaf tokens of a constituency tree, read off by traversal.
    pub fn leaf_tokens(&self) -> Vec<&str> {
        self.post_order()
            .into_iter()
            .filter(|&id| self.is_leaf(id))
            .filter_map(|id| self.nodes[id].token.as_deref())
            .collect()
    }

    /// Surface text of the subtree rooted at `id`.
    pub fn subtree_text(&self, id: usize) -> String {
        let mut toks: Vec<(usize, &str)> = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if let (Some(p), Some(t)) = (node.position, node.token.as_deref()) {
                toks.push((p, t));
            }
            stack.extend(node.children.iter().copied());
        }
        toks.sort_by_key(|&(p, _)| p);
        toks.iter().map(|(_, t)| *t).collect::<Vec<_>>().join(" ")
    }

    /// Bracketed rendering, e.g. `( a ( b c ) )`.
    pub fn to_sexpr(&self) -> String {
        fn go(t: &ParseTree, id: usize, out: &mut String) {
            let node = &t.nodes[id];
            if node.children.is_empty() {
                out.push_str(node.token.as_deref().unwrap_or("_"));
                return;
            }
            out.push_str("( ");
            if let (Some(tok), true) = (&node.token, t.is_dependency()) {
                out.push_str(tok);
                out.push(' ');
            }
            for &c in &node.children {
                go(t, c, out);
                out.push(' ');
            }
            out.push(')');
        }
        let mut out = String::new();
        go(self, self.root, &mut out);
        out
    }

    /// A copy with each node's children reordered by `order(node_id, children)`.
    pub fn with_children_reordered(&self, mut order: impl FnMut(usize, &mut Vec<usize>)) -> Self {
        let mut nodes = self.nodes.clone();
        for (id, node) in nodes.iter_mut().enumerate() {
            order(id, &mut node.children);
        }
        ParseTree {
            nodes,
            root: self.root,
        }
    }
}
