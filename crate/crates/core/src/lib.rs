//! Watermark embedding and detection for generated text, plus the quality,
//! factuality and statistical tooling used to evaluate watermarked output.
//!
//! Everything runs offline against a pluggable [`textmodel::LanguageModel`];
//! the bundled n-gram model stands in for a neural generator.

pub mod dipmark;
pub mod error;
pub mod expedit;
pub mod factuality;
pub mod fws;
pub mod greenlist;
pub mod judger;
pub mod posthoc;
pub mod synth;
pub mod tasks;
pub mod taskeval;
pub mod textmodel;
pub mod wmcore;

pub use error::{Error, Result};
