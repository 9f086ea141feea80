//! Parse trees, corpus files, vocabularies and pretrained vectors.

pub mod conll;
pub mod corpus;
pub mod embeddings;
pub mod sexpr;
pub mod tree;
pub mod vocab;

pub use conll::{flatten, parse_conll, parse_sidecar, write_sidecar, ConllRow};
pub use corpus::{load_corpus, load_sidecar, parse_corpus, render_corpus, Corpus, Example, Label, Sentence};
pub use embeddings::{load_embeddings, read_embeddings, EmbeddingTable};
pub use sexpr::parse_sexpr;
pub use tree::{ParseTree, TreeNode};
pub use vocab::{build_vocab, Vocabulary, UNK, UNK_INDEX};
