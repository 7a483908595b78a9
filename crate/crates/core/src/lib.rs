//! Static deadlock analysis for a small C-like language with pthreads-style primitives.

pub mod frontend;
pub mod framework;
pub mod model;
pub mod places;
pub mod pointsto;
pub mod depend;
pub mod locksets;
pub mod nonconc;
pub mod lockgraph;
pub mod oracle;
pub mod generator;
pub mod pipeline;
