//! Multilingual confidence estimation for LLM question answering.
//!
//! The crate covers the full loop: building a parallel multilingual QA
//! dataset through dual translation, generating answers, scoring
//! confidence (token likelihoods, self-evaluated true probability,
//! verbalized confidence), aggregating scores across languages, gating
//! self-refinement on confidence, and evaluating with exact match,
//! token F1, and AUROC.

pub mod backend;
pub mod confidence;
pub mod crosslingual;
pub mod dataset;
pub mod judge;
pub mod lang;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod refine;
pub mod report;
pub mod types;
