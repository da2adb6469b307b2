//! The pinned sweeps against a stored CSV. Numeric cells are compared with a
//! relative tolerance since FFT rounding can differ between machines.
//! Regenerate with `WAVEPACK_BLESS=1 cargo test --test golden`.

use std::path::Path;

use wavepack::harness::criteria::pinned_csv;
use wavepack::harness::report::strip_timestamps;

const REL: f64 = 1e-9;

fn same_cell(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= REL * x.abs().max(y.abs()) || (x.is_nan() && y.is_nan()),
        _ => a == b,
    }
}

#[test]
fn pinned_sweeps_match_golden_file() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/pinned.csv");
    let fresh = strip_timestamps(&pinned_csv().unwrap());
    if std::env::var_os("WAVEPACK_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &fresh).unwrap();
        return;
    }
    let stored = std::fs::read_to_string(&path).unwrap();
    let (a, b): (Vec<&str>, Vec<&str>) = (stored.lines().collect(), fresh.lines().collect());
    assert_eq!(a.len(), b.len(), "line count");
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        let (cx, cy): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        assert_eq!(cx.len(), cy.len(), "line {i}");
        for (p, q) in cx.iter().zip(&cy) {
            assert!(same_cell(p, q), "line {i}: stored {p:?}, fresh {q:?}");
        }
    }
}
