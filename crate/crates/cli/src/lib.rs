// Negated comparisons are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Scenario-driven batch runner over `charlab-core`.

pub mod cases;
pub mod report;
pub mod run;
pub mod scenario;
pub mod spec;
