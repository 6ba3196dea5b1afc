use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FlowError, FlowSystem};

/// Measured constants of the flow-speed comparison on a scaled ball
/// B(x, β|X(x)|).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallReport {
    pub beta: f64,
    pub samples: usize,
    /// Smallest K with |X(x)|/|X(y)| ∈ [1 − K d/|X(x)|, 1 + K d/|X(x)|].
    pub k_speed: f64,
    /// Same for the angle between the unit directions X/|X|.
    pub k_direction: f64,
    /// Same for the angle between the lines ⟨X(x)⟩ and ⟨X(y)⟩.
    pub k_line: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

/// Samples `samples` points uniformly in B(x, β|X(x)|) and reports the
/// smallest constants satisfying the speed and direction comparisons.
///
/// With β = 0 (or no samples) every constant is 0 and the ratios are 1.
pub fn scaled_ball_check(
    system: &dyn FlowSystem,
    x: &[f64],
    beta: f64,
    samples: usize,
    seed: u64,
) -> Result<BallReport, FlowError> {
    let d = system.dim();
    let fx = system.eval(x);
    let speed = fx.norm();
    if speed == 0.0 {
        return Err(FlowError::NearSingularity { x: x.to_vec(), speed });
    }
    if !(beta >= 0.0) {
        return Err(FlowError::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
    }
    let mut report = BallReport {
        beta,
        samples: 0,
        k_speed: 0.0,
        k_direction: 0.0,
        k_line: 0.0,
        ratio_min: 1.0,
        ratio_max: 1.0,
    };
    let radius = beta * speed;
    if radius == 0.0 {
        return Ok(report);
    }
    let ux = &fx / speed;
    let center = DVector::from_column_slice(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let dir = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
        let dir_norm = dir.norm();
        if dir_norm == 0.0 {
            continue;
        }
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        if r == 0.0 {
            continue;
        }
        let y = &center + dir * (r / dir_norm);
        let fy = system.eval(y.as_slice());
        let speed_y = fy.norm();
        if speed_y == 0.0 {
            return Err(FlowError::SingularBall { y: y.as_slice().to_vec() });
        }
        let dist = (&y - &center).norm();
        let scale = speed / dist;
        let ratio = speed / speed_y;
        let uy = fy / speed_y;
        let angle = ux.dot(&uy).clamp(-1.0, 1.0).acos();
        let line = angle.min(std::f64::consts::PI - angle);
        report.samples += 1;
        report.k_speed = report.k_speed.max((ratio - 1.0).abs() * scale);
        report.k_direction = report.k_direction.max(angle * scale);
        report.k_line = report.k_line.max(line * scale);
        report.ratio_min = report.ratio_min.min(ratio);
        report.ratio_max = report.ratio_max.max(ratio);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{Hopf, Lorenz};

    #[test]
    fn zero_radius_gives_zero_constants() {
        let r = scaled_ball_check(&Lorenz::default(), &[1.0, 1.0, 1.0], 0.0, 100, 1).unwrap();
        assert_eq!(r.k_speed, 0.0);
        assert_eq!(r.k_line, 0.0);
        assert_eq!(r.samples, 0);
    }

    #[test]
    fn hopf_circle_ratios() {
        let r = scaled_ball_check(&Hopf, &[1.0, 0.0, 0.0], 0.01, 1000, 3).unwrap();
        assert_eq!(r.samples, 1000);
        assert!(r.ratio_min >= 0.97 && r.ratio_max <= 1.03, "{r:?}");
    }

    #[test]
    fn small_balls_obey_first_order_bound() {
        // Oracle: first-order Taylor expansion gives K ≤ ‖DX(x)‖, so the
        // supremum of the spectral norm over the sampled region bounds K.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            if Hopf.speed(&x) < 0.1 {
                continue;
            }
            let r = scaled_ball_check(&Hopf, &x, 1e-4, 50, 9).unwrap();
            let radius = 1e-4 * Hopf.speed(&x);
            let sup = (0..200)
                .map(|k| {
                    let s = -1.0 + 2.0 * k as f64 / 199.0;
                    let y: Vec<f64> = x.iter().map(|v| v + s * radius).collect();
                    Hopf.jacobian(&y).singular_values().max()
                })
                .fold(0.0, f64::max);
            assert!(r.k_speed <= 1.05 * sup, "K = {} vs sup = {sup}", r.k_speed);
        }
    }

    #[test]
    fn singular_base_point_is_rejected() {
        assert!(matches!(
            scaled_ball_check(&Hopf, &[0.0, 0.0, 0.0], 0.1, 10, 0),
            Err(FlowError::NearSingularity { .. })
        ));
    }
}
