// Numeric kernels index several parallel buffers per loop.
#![allow(clippy::needless_range_loop)]

pub mod datasets;
pub mod harness;
pub mod lexfeat;
pub mod model;
pub mod nn;
pub mod numcore;
pub mod pipeline;
pub mod synthetic;
pub mod textprep;
