use std::f64::consts::PI;

use crate::taskgen::{TaskSuite, Trial};
use crate::OUTPUT_DIM;

/// Fixation output above this breaks fixation.
pub const FIXATION_LIMIT: f64 = 0.5;
/// Largest accepted angular error of the response.
pub const ANGLE_TOL: f64 = PI / 10.0;

/// Wrapped absolute angle difference in `[0, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// A trial counts as correct when the fixation output stays at or below 0.5
/// before the response and the time-averaged response direction is within
/// π/10 of the target.
pub fn evaluate_perf(y_hat: &[[f64; OUTPUT_DIM]], trial: &Trial, suite: &TaskSuite) -> bool {
    let Some(onset) = trial.response_onset(suite) else {
        return false;
    };
    if y_hat[..onset].iter().any(|y| y[2] > FIXATION_LIMIT) {
        return false;
    }
    let resp: Vec<usize> = (onset..trial.len()).filter(|&t| suite.is_response(trial.z_true[t])).collect();
    let (mut cx, mut cy) = (0.0, 0.0);
    for &t in &resp {
        cx += y_hat[t][0];
        cy += y_hat[t][1];
    }
    if cx == 0.0 && cy == 0.0 {
        return false;
    }
    let target = suite.target_angle(trial.z_true[onset], trial.x_true);
    angle_diff(cy.atan2(cx), target) < ANGLE_TOL
}
