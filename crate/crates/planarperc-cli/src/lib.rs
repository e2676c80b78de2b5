//! Support code for the `planarperc` binary: output plumbing and the
//! release-gate criterion runner. Lives in a library target so integration
//! tests can drive the criteria directly.

pub mod output;
pub mod verify;
