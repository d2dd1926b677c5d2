//! Desk-scale laboratory for translation-guided sequence recognition with
//! parallel gated cross-attention fusion.

pub mod attention;
pub mod aux_embed;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod util;
