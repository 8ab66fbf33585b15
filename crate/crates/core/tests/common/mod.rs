//! Oracles and fixtures shared by the integration tests and the acceptance
//! runner. Each oracle recomputes its quantity without calling the code under
//! test.
#![allow(dead_code)]

pub mod evidence;
pub mod fixtures;
pub mod gradients;
pub mod qc_oracle;
pub mod structure;
