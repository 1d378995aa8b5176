//! Desk-scale attacker/defender benchmark for speech anti-spoofing.
//!
//! The defender trains a two-way spoofing countermeasure over a pluggable
//! frontend; the attacker fine-tunes a speaker-embedding extractor on the
//! same kind of frontend and then trains a time-domain enhancement model
//! that pulls spoofed utterances toward bona fide speaker embeddings.
//! Protocol splitting, scoring, equal-error-rate evaluation, and report
//! plotting complete the loop.

pub mod antispoof;
pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod enhancer;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod nn;
pub mod proto;
pub mod spkembed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
