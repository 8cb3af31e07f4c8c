//! Desk-scale toolkit for radiology impression generation and evaluation.
//!
//! The crate covers the whole loop: multi-institution corpus cleaning and splitting
//! ([`corpus`]), template-based prompt synthesis ([`prompt`]), guarded generation
//! against pluggable backends ([`inference`]), CJK-aware ROUGE scoring ([`rouge`]),
//! prompt selection and fine-tune job specs ([`selection`]), radiologist scoring
//! ([`expert`]), reference numeric kernels ([`kernels`]), table rendering
//! ([`report`]) and the end-to-end pipeline ([`pipeline`]).

pub mod corpus;
pub mod expert;
pub mod fixture;
pub mod prompt;
pub mod inference;
pub mod kernels;
pub mod pipeline;
pub mod provenance;
pub mod report;
pub mod rouge;
pub mod segment;
pub mod selection;
