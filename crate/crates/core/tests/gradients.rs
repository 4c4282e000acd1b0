//! Analytic student-logit gradients against central differences.

mod support;

use dtkd::distill::TempGradMode;
use support::gradient_suite;

#[test]
fn gradients_match_finite_differences_with_temperature_flow() {
    let s = gradient_suite(50, 11, TempGradMode::Flow);
    assert_eq!(s.violations, 0, "{s:?}");
    assert!(s.cases > 6 * 50 * 20);
}

#[test]
fn gradients_match_finite_differences_with_detached_temperatures() {
    let s = gradient_suite(50, 12, TempGradMode::Detach);
    assert_eq!(s.violations, 0, "{s:?}");
    assert!(s.cases > 6 * 50 * 20);
}
