//! SNR-routed multi-teacher knowledge distillation for time-domain speech
//! enhancement.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod tensor;
pub mod signal;
pub mod unet;
pub mod dataset;
pub mod metrics;
pub mod distill;
