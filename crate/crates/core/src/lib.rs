pub mod ablation;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod ngram;
pub mod scoring;
pub mod stimuli;
