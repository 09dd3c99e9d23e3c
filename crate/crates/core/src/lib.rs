// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod codesign;
pub mod desk;
pub mod error;
pub mod linalg;
pub mod linmodel;
pub mod model;
pub mod reduction;
pub mod sdp;
pub mod statespace;
pub mod structure;
pub mod sweep;
pub mod topology;

pub use error::{Error, Result};
