//! Tokenizer and vocabulary, JSONL datasets, and the synthetic topic corpus.

mod instance;
mod synthetic;
mod vocab;

pub use instance::{load_jsonl, load_lexicon, write_jsonl, ClassificationInstance};
pub use synthetic::{
    default_topics, gen_synthetic, procedural_topics, LabelSetMode, LexiconEntry, SyntheticCorpus,
    SyntheticCorpusSpec, Topic,
};
pub use vocab::{single_token, tokenize, Vocabulary};
