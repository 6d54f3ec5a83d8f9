// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod characteristics;
pub mod diagnostics;
pub mod expr;
pub mod forms;
pub mod hamiltonian;
pub mod ode;
