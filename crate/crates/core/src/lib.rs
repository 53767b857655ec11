//! Symbolic-numeric toolkit for x-flat three-input control systems.
//!
//! Given a control-affine system and a candidate x-flat output, the crate
//! computes the derivative structure of the output, decides static feedback
//! equivalence to the structurally flat triangular form for three inputs via
//! a sequence of integrable codistributions, constructs the coordinate and
//! input transformations, derives the flat parameterization, applies input
//! prolongations when needed, and validates everything numerically through
//! open-loop feedforward simulation.

pub mod analysis;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod matrix;
pub mod numeric;
pub mod parse;
pub mod planner;
pub mod poly;
pub mod prolong;
pub mod solve;
pub mod symbol;
pub mod synth;
pub mod system;
pub mod triangular;

pub use error::{Error, Result};
pub use expr::{Expr, Func};
pub use numeric::{Sampling, TriState};
pub use symbol::{Symbol, SymbolKind};
pub use system::SystemModel;
