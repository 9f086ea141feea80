//! Tree-structured LSTM encoders and tree-over-tree attention for
//! natural language inference, on a small reverse-mode autodiff core.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use data::corpus::{Corpus, Example, Label, Sentence};
pub use data::tree::ParseTree;
pub use data::vocab::Vocabulary;
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, ModelVariant};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
pub use train::TrainConfig;
