//! Dependency parses from `index / form / head` rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::tree::{ParseTree, TreeNode};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConllRow {
    /// 1-based token index.
    pub index: usize,
    pub form: String,
    /// Index of the head token; 0 for the sentence root.
    pub head: usize,
}

impl ConllRow {
    pub fn new(index: usize, form: impl Into<String>, head: usize) -> Self {
        ConllRow {
            index,
            form: form.into(),
            head,
        }
    }
}

/// Builds the tree rooted at the word whose head is 0. Node ids are
/// `index - 1` and children are ordered by sentence index.
pub fn parse_conll(rows: &[ConllRow]) -> Result<ParseTree> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Conll {
            row: 0,
            message: "no rows".into(),
        });
    }
    let mut root = None;
    for (i, r) in rows.iter().enumerate() {
        let row = i + 1;
        if r.index != row {
            return Err(Error::Conll {
                row,
                message: format!("expected index {row}, found {}", r.index),
            });
        }
        if r.head > n {
            return Err(Error::Conll {
                row,
                message: format!("head {} out of range 0..={n}", r.head),
            });
        }
        if r.head == r.index {
            return Err(Error::Conll {
                row,
                message: "token is its own head".into(),
            });
        }
        if r.head == 0 && root.replace(i).is_some() {
            return Err(Error::Conll {
                row,
                message: "multiple roots".into(),
            });
        }
    }
    let root = root.ok_or(Error::Conll {
        row: 0,
        message: "no row with head 0".into(),
    })?;

    // Every chain of heads must reach the root within n steps.
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while rows[cur].head != 0 {
            cur = rows[cur].head - 1;
            steps += 1;
            if steps > n {
                return Err(Error::Conll {
                    row: start + 1,
                    message: "head chain contains a cycle".into(),
                });
            }
        }
    }

    let mut children = vec![Vec::new(); n];
    for (i, r) in rows.iter().enumerate() {
        if r.head != 0 {
            children[r.head - 1].push(i);
        }
    }
    let mut nodes: Vec<TreeNode> = rows
        .iter()
        .zip(children)
        .enumerate()
        .map(|(i, (r, ch))| TreeNode {
            token: Some(r.form.clone()),
            children: ch,
            span: (i, i + 1),
            position: Some(i),
        })
        .collect();
    let tree = ParseTree::new(nodes.clone(), root)?;
    for id in tree.post_order() {
        let (mut lo, mut hi) = nodes[id].span;
        for &c in &nodes[id].children {
            lo = lo.min(nodes[c].span.0);
            hi = hi.max(nodes[c].span.1);
        }
        nodes[id].span = (lo, hi);
    }
    ParseTree::new(nodes, root)
}

/// Inverse of [`parse_conll`]: the head array in sentence order.
pub fn flatten(tree: &ParseTree) -> Vec<ConllRow> {
    let parents = tree.parents();
    let mut rows: Vec<ConllRow> = tree
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, node)| {
            let pos = node.position.unwrap_or(id);
            let head = parents[id]
                .map(|p| tree.node(p).position.unwrap_or(p) + 1)
                .unwrap_or(0);
            ConllRow::new(pos + 1, node.token.clone().unwrap_or_default(), head)
        })
        .collect();
    rows.sort_by_key(|r| r.index);
    rows
}

/// Reads sidecar blocks: an id line followed by `index\tform\thead` rows,
/// blocks separated by blank lines.
pub fn parse_sidecar(text: &str) -> Result<BTreeMap<String, ParseTree>> {
    let mut out = BTreeMap::new();
    let mut current: Option<(String, usize, Vec<ConllRow>)> = None;

    let mut finish = |block: Option<(String, usize, Vec<ConllRow>)>| -> Result<()> {
        if let Some((id, line, rows)) = block {
            let tree = parse_conll(&rows).map_err(|e| {
                Error::Data(format!("sidecar block {id} (line {line}): {e}"))
            })?;
            out.insert(id, tree);
        }
        Ok(())
    };

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(current.take())?;
            continue;
        }
        match current.as_mut() {
            None => current = Some((line.trim().to_string(), lineno, Vec::new())),
            Some((_, _, rows)) => {
                let fields: Vec<&str> = line.split('\t').collect();
                let parsed = match fields.as_slice() {
                    [idx, form, head, ..] => idx
                        .trim()
                        .parse()
                        .ok()
                        .zip(head.trim().parse().ok())
                        .map(|(i, h)| ConllRow::new(i, *form, h)),
                    _ => None,
                };
                let row = parsed.ok_or_else(|| {
                    Error::Data(format!("sidecar line {lineno}: expected index\\tform\\thead"))
                })?;
                rows.push(row);
            }
        }
    }
    finish(current.take())?;
    Ok(out)
}

pub fn write_sidecar<'a>(blocks: impl IntoIterator<Item = (&'a str, &'a ParseTree)>) -> String {
    let mut out = String::new();
    for (id, tree) in blocks {
        out.push_str(id);
        out.push('\n');
        for r in flatten(tree) {
            let _ = writeln!(out, "{}\t{}\t{}", r.index, r.form, r.head);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_word_sentence() {
        let t = parse_conll(&[ConllRow::new(1, "sits", 0), ConllRow::new(2, "child", 1)]).unwrap();
        assert_eq!(t.node(t.root()).token.as_deref(), Some("sits"));
        let kids = t.children(t.root());
        assert_eq!(kids.len(), 1);
        assert_eq!(t.node(kids[0]).token.as_deref(), Some("child"));
        assert_eq!(t.node(t.root()).span, (0, 2));
    }

    #[test]
    fn rejects_malformed_heads() {
        let self_loop = [ConllRow::new(1, "a", 0), ConllRow::new(2, "b", 2)];
        assert!(matches!(parse_conll(&self_loop), Err(Error::Conll { row: 2, .. })));

        let two_roots = [ConllRow::new(1, "a", 0), ConllRow::new(2, "b", 0)];
        assert!(matches!(parse_conll(&two_roots), Err(Error::Conll { row: 2, .. })));

        let no_root = [ConllRow::new(1, "a", 2), ConllRow::new(2, "b", 1)];
        assert!(parse_conll(&no_root).is_err());

        let cycle = [
            ConllRow::new(1, "a", 0),
            ConllRow::new(2, "b", 3),
            ConllRow::new(3, "c", 2),
        ];
        assert!(matches!(parse_conll(&cycle), Err(Error::Conll { row: 2, .. })));

        let out_of_range = [ConllRow::new(1, "a", 0), ConllRow::new(2, "b", 7)];
        assert!(matches!(parse_conll(&out_of_range), Err(Error::Conll { row: 2, .. })));
    }

    #[test]
    fn children_sorted_by_index() {
        let rows = [
            ConllRow::new(1, "the", 2),
            ConllRow::new(2, "dog", 3),
            ConllRow::new(3, "barks", 0),
            ConllRow::new(4, "loudly", 3),
        ];
        let t = parse_conll(&rows).unwrap();
        assert_eq!(t.children(2), &[1, 3]);
        assert_eq!(t.tokens(), vec!["the", "dog", "barks", "loudly"]);
        assert_eq!(flatten(&t), rows.to_vec());
    }

    #[test]
    fn sidecar_round_trip() {
        let text = "p1.s1\n1\tsits\t0\n2\tchild\t1\n\np1.s2\n1\tsleeps\t0\n";
        let map = parse_sidecar(text).unwrap();
        assert_eq!(map.len(), 2);
        let again = write_sidecar(map.iter().map(|(k, v)| (k.as_str(), v)));
        assert_eq!(parse_sidecar(&again).unwrap(), map);
        assert!(parse_sidecar("p1.s1\n1 sits 0\n").is_err());
    }
}
