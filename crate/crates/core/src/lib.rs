// NaN must fail validation, so `!(x > 0.0)` is the intended form
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// oracle reference values keep all their digits
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod channel;
pub mod codec;
pub mod density;
pub mod distortion;
pub mod harness;
pub mod ratecontrol;
pub mod source;
