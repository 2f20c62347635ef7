//! Test support for gridspace: proptest generators and brute-force
//! reference implementations used by the property tests and the acceptance
//! suite.

pub mod brute;
pub mod gen;
