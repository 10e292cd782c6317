//! Forward kernels against direct nested-loop definitions.

#[path = "support/oracles.rs"]
mod reference;

use reference::{conv2d_sweep, correlation_sweep, deconv2d_sweep, maxpool2d_sweep, TOL};

#[test]
fn conv2d_matches_oracle() {
    let s = conv2d_sweep();
    assert!(s.cases > 400, "{s:?}");
    assert!(s.worst <= TOL, "{s:?}");
}

#[test]
fn deconv2d_matches_oracle() {
    let s = deconv2d_sweep();
    assert!(s.worst <= TOL, "{s:?}");
}

#[test]
fn maxpool2d_matches_oracle_exactly() {
    assert_eq!(maxpool2d_sweep().worst, 0.0);
}

#[test]
fn correlation_matches_oracle() {
    let s = correlation_sweep();
    assert!(s.worst <= TOL, "{s:?}");
}
