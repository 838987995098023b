//! Soft contextualized encoder for text classification over user-defined
//! label sets, two reference baselines and an analytic transformer FLOP model.

pub mod baselines;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod flops;
pub mod model;
pub mod tensor;
pub mod training;

pub use data::{ClassificationInstance, SyntheticCorpus, SyntheticCorpusSpec, Vocabulary};
pub use embedding::EmbeddingProvider;
pub use encoder::{EncoderConfig, EncoderParams};
pub use error::{Result, SceError};
pub use model::{LabelEmbeddingTable, PredictionDistribution, QueryAdaptor, SceConfig, SceParams};
pub use tensor::Tensor;
