//! Tokenization, datasets, augmentation and the synthetic corpus.

mod augment;
mod corpus;
mod dataset;
mod vocab;

pub use augment::{max_repeats, repeat_positions, word_repetition};
pub use corpus::{generate_synthetic_corpus, CorpusSpec, SyntheticCorpus};
pub use dataset::{load_jsonl, read_jsonl, sample_batch, write_jsonl, DomainDataset, Example, JsonlRead, Record};
pub use vocab::{tokenize, Vocab, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
