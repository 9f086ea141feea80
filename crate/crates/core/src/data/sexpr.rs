//! Bracketed constituency parses, as found in the `*_binary_parse` fields.

use crate::data::tree::{ParseTree, TreeNode};
use crate::error::{Error, Result};

enum Sexp<'a> {
    Atom(&'a str),
    List(Vec<Sexp<'a>>, usize),
}

struct Reader<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn read(&mut self) -> Result<Sexp<'a>> {
        self.skip_ws();
        match self.peek() {
            None => Err(Error::Syntax {
                offset: self.pos,
                message: "unexpected end of input".into(),
            }),
            Some(')') => Err(Error::Syntax {
                offset: self.pos,
                message: "unbalanced ')'".into(),
            }),
            Some('(') => {
                let open = self.pos;
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        None => {
                            return Err(Error::Syntax {
                                offset: open,
                                message: "unclosed '('".into(),
                            })
                        }
                        Some(')') => {
                            self.pos += 1;
                            return Ok(Sexp::List(items, open));
                        }
                        Some(_) => items.push(self.read()?),
                    }
                }
            }
            Some(_) => {
                let start = self.pos;
                let rest = &self.text[start..];
                let len = rest
                    .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
                    .unwrap_or(rest.len());
                self.pos += len;
                Ok(Sexp::Atom(&rest[..len]))
            }
        }
    }
}

struct Builder {
    nodes: Vec<TreeNode>,
    next_leaf: usize,
}

impl Builder {
    fn leaf(&mut self, token: &str) -> usize {
        let p = self.next_leaf;
        self.next_leaf += 1;
        self.nodes.push(TreeNode {
            token: Some(token.to_string()),
            children: Vec::new(),
            span: (p, p + 1),
            position: Some(p),
        });
        self.nodes.len() - 1
    }

    fn internal(&mut self, children: Vec<usize>) -> usize {
        let span = (
            self.nodes[children[0]].span.0,
            self.nodes[*children.last().unwrap()].span.1,
        );
        self.nodes.push(TreeNode {
            token: None,
            children,
            span,
            position: None,
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, sexp: &Sexp) -> Result<usize> {
        match sexp {
            Sexp::Atom(tok) => Ok(self.leaf(tok)),
            Sexp::List(items, offset) => match items.as_slice() {
                [] => Err(Error::Syntax {
                    offset: *offset,
                    message: "empty bracket".into(),
                }),
                [only] => self.build(only),
                items => self.build_right_branching(items),
            },
        }
    }

    /// `(a b c d)` becomes `(a (b (c d)))`.
    fn build_right_branching(&mut self, items: &[Sexp]) -> Result<usize> {
        let left = self.build(&items[0])?;
        let right = if items.len() == 2 {
            self.build(&items[1])?
        } else {
            self.build_right_branching(&items[1..])?
        };
        Ok(self.internal(vec![left, right]))
    }
}

/// Parses a bracketed tree. Unary chains collapse onto their child and
/// wider nodes are right-binarized, so the result has arity at most two.
pub fn parse_sexpr(text: &str) -> Result<ParseTree> {
    let mut reader = Reader { text, pos: 0 };
    let sexp = reader.read()?;
    reader.skip_ws();
    if reader.pos < text.len() {
        return Err(Error::Syntax {
            offset: reader.pos,
            message: "trailing input after tree".into(),
        });
    }
    let mut builder = Builder {
        nodes: Vec::new(),
        next_leaf: 0,
    };
    let root = builder.build(&sexp)?;
    ParseTree::new(builder.nodes, root)
}
