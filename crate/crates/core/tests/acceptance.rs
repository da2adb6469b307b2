//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Lines go straight to stderr so they show up with or without `--nocapture`.
//! Criteria 3 to 6 share cached phase-space decompositions, so running the
//! whole file is cheaper than running the tests one by one.

use std::io::Write;

use wavepack::harness::criteria;

fn check(id: u8) {
    let o = criteria::run(id);
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", o.line());
    for r in o.rows.iter().filter(|r| r.failed()) {
        let _ = writeln!(err, "    failed row: {} {} lhs={:?} rhs={:?} slope={:?}", r.tag, r.key, r.lhs, r.rhs, r.slope);
    }
    assert!(o.pass, "{}", o.line());
}

#[test]
fn c01_energy_conservation() {
    check(1);
}

#[test]
fn c02_null_cancellation() {
    check(2);
}

#[test]
fn c03_decomposition_fidelity() {
    check(3);
}

#[test]
fn c04_bessel() {
    check(4);
}

#[test]
fn c05_almost_orthogonality() {
    check(5);
}

#[test]
fn c06_packet_localization() {
    check(6);
}

#[test]
fn c07_vector_field_commutation() {
    check(7);
}

#[test]
fn c08_decay_slope() {
    check(8);
}

#[test]
fn c09_bilinear_null_slope() {
    check(9);
}

#[test]
fn c10_fixed_time_slope() {
    check(10);
}

#[test]
fn c11_improved_strichartz_slope() {
    check(11);
}

#[test]
fn c12_fundamental_thickness() {
    check(12);
}

#[test]
fn c13_whitney_dichotomy() {
    check(13);
}

#[test]
fn c14_transverse_intersection() {
    check(14);
}

#[test]
fn c15_determinism() {
    check(15);
}
