// `!(a > b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crlb;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod noise;
pub mod quantum;
pub mod rng;
pub mod solver;
