//! Analytic gradients against central finite differences on a tiny model.

mod common;

use common::{max_rel_error, tiny};
use pano_orient::neural::Variant;

fn assert_report(report: &[(String, f64)]) {
    for (name, err) in report {
        eprintln!("{name:>14}: max rel err {err:.3e}");
    }
    let worst = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    assert!(worst < 1e-4, "max relative error {worst:.3e}");
}

#[test]
fn flat2d_gradients_match_finite_differences() {
    assert_report(&max_rel_error(&tiny(Variant::Flat2D, 1), 17));
}

#[test]
fn stacked3d_gradients_match_finite_differences() {
    assert_report(&max_rel_error(&tiny(Variant::Stacked3D, 2), 29));
}
