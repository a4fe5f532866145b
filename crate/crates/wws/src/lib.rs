//! Wake-word spotting engine.
//!
//! The pipeline: JSONL manifest -> log-mel features -> global CMVN ->
//! DS-TCN backbone with per-keyword binary heads -> FAR/FRR/Score
//! evaluation. Training runs in three stages (SIC on control speech,
//! SID fine-tuned on dysarthric speech, SDD fine-tuned per speaker on
//! a few minutes of enrollment utterances), with spectrogram masking,
//! speed perturbation, and additive white noise as augmentations.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod eval;
pub mod nnet;
pub mod train;
