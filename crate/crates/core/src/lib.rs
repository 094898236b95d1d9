pub mod autodiff;
pub mod config;
pub mod diagnostics;
pub mod enrichment;
pub mod harness;
pub mod model;
pub mod signal;
pub mod spd;
pub mod tokenization;
