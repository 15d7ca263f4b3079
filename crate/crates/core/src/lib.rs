//! Desk-scale fine-tuning laboratory.
//!
//! Implements and compares confidence-weighted training objectives (SFT, DFT,
//! BFT, Focal) on a from-scratch reverse-mode autodiff engine and a tiny
//! decoder-only transformer, with deterministic data pipelines, an Adam
//! trainer, and evaluation utilities.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod trainer;
