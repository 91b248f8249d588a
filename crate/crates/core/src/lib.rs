//! Return-type inference for functions in 32-bit x86 disassembly.
//!
//! The pipeline: parse or synthesize labeled listings ([`asm`], [`synth`]),
//! cut return-site and call-site chunks ([`extract`]), generalize them into
//! named binary features ([`generalize`]), assemble a dataset ([`dataset`]),
//! then train, select, evaluate and mine rules ([`classifiers`],
//! [`selection`], [`eval`], [`rules`]).

pub mod asm;
pub mod bits;
pub mod classifiers;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod extract;
pub mod generalize;
pub mod label;
pub mod rules;
pub mod seed;
pub mod selection;
pub mod synth;

pub use bits::BitRow;
pub use error::*;
pub use label::{map_to_sizerep, Scheme, SizeRepLabel, TypeLabel};
