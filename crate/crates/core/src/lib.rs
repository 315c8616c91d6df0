// `!(x > 0.0)` guards are deliberate: they reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod controller;
pub mod cosim;
pub mod dse;
pub mod localization;
pub mod plant;
pub mod report;
pub mod scenario;
pub mod sensors;
pub mod world;
