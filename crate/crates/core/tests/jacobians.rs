mod common;

use common::{audit_jacobians, random_problem};
use gnss_init::residuals::Phase;

fn audit(phase: Phase) {
    for seed in 0..5 {
        let (state, meas, ext) = random_problem(seed, 1.0);
        for (bi, a) in audit_jacobians(&state, &meas, &ext, phase).iter().enumerate() {
            assert!(a.unlisted.is_empty(), "{:?} block {bi} depends on unlisted {:?}", a.kind, a.unlisted);
            assert!(a.worst_ratio <= 1.0, "{:?} block {bi}: error is {:.2}x the tolerance", a.kind, a.worst_ratio);
        }
    }
}

#[test]
fn relative_phase_jacobians_match_finite_differences() {
    audit(Phase::Relative);
}

#[test]
fn global_phase_jacobians_match_finite_differences() {
    audit(Phase::Global);
}
