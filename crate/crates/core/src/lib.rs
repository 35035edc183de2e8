#![no_std]
// Float supplies math methods on toolchains whose core lacks them; newer
// toolchains and std builds shadow it with inherent methods.
#![allow(unused_imports)]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ao;
pub mod assignment;
pub mod assoc;
pub mod baselines;
pub mod channel;
pub mod control;
pub mod error;
pub mod lp;
pub mod montecarlo;
pub mod objective;
pub mod position;
pub mod power;
pub mod scenario;
pub mod sensing;
pub mod units;

pub use error::{Error, Result};
