use serde::{Deserialize, Serialize};

use super::PeriodicOrbit;
use crate::flow::OrbitSegment;

/// Time window (in loop time) searched around the previous match.
const SEARCH_WINDOW: f64 = 1.0;
/// Largest backward step of θ tolerated as rounding.
const BACKWARD_TOL: f64 = 1e-6;
/// Spacing of the difference quotients of θ.
const QUOTIENT_STEP: f64 = 0.1;

/// The shadowing conclusions measured along y: θ with θ(0) = 0 matches
/// φ_t(y) with φ_{θ(t)}(p) by nearest-point projection onto the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowingReport {
    /// (t, θ(t)) at the samples of y.
    pub theta_samples: Vec<(f64, f64)>,
    /// (min, max) of θ difference quotients over steps of about 0.1.
    pub theta_prime_bounds: (f64, f64),
    /// max_t |φ_t(y) − φ_{θ(t)}(p)| / |X(φ_t(y))|.
    pub scaled_dist_max: f64,
    pub epsilon_used: f64,
    pub monotone: bool,
    pub pass: bool,
}

/// Projection of `x` onto the chord between loop samples k and k+1:
/// (loop time, squared distance).
fn project(loop_orbit: &OrbitSegment, k: usize, x: &nalgebra::DVector<f64>) -> (f64, f64, nalgebra::DVector<f64>) {
    let a = &loop_orbit.states[k];
    let b = &loop_orbit.states[k + 1];
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((x - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let point = a + s * &ab;
    let t = loop_orbit.times[k] + s * (loop_orbit.times[k + 1] - loop_orbit.times[k]);
    ((t), (x - &point).norm_squared(), point)
}

/// Builds θ by following y along the loop: each sample is projected onto the
/// loop chords within a window around the previous match (wrapping around
/// the period), and the loop time is unwrapped so θ keeps increasing. The
/// report passes iff θ is monotone, every quotient lies in (1 − ε, 1 + ε)
/// and every scaled distance is below ε.
pub fn verify_shadowing(y_segment: &OrbitSegment, orbit: &PeriodicOrbit, epsilon: f64) -> ShadowingReport {
    let lp = &orbit.loop_orbit;
    let period = orbit.period;
    let chords = lp.len() - 1;
    let mean = period / chords as f64;
    let window = ((SEARCH_WINDOW / mean).ceil() as isize).max(2);
    let system = y_segment.system.as_ref();

    let mut theta = Vec::with_capacity(y_segment.len());
    let mut monotone = true;
    let mut scaled_dist_max: f64 = 0.0;
    let mut center = 0isize;
    let mut laps = 0.0;
    let mut last_raw: Option<f64> = None;
    for (i, x) in y_segment.states.iter().enumerate() {
        let lo = if i == 0 { -window } else { 0 };
        let mut best: Option<(f64, f64, isize)> = None;
        for off in lo..=window {
            let k = (center + off).rem_euclid(chords as isize);
            let (t, dist2, _) = project(lp, k as usize, x);
            if best.is_none_or(|b| dist2 < b.1) {
                best = Some((t, dist2, k));
            }
        }
        let (raw, dist2, k) = best.expect("non-empty window");
        center = k;
        if let Some(prev) = last_raw {
            if raw < prev - period / 2.0 {
                laps += period;
            } else if raw > prev + period / 2.0 {
                laps -= period;
            }
        }
        last_raw = Some(raw);
        let value = raw + laps;
        if let Some(&(_, previous)) = theta.last() {
            if value < previous - BACKWARD_TOL {
                monotone = false;
            }
        }
        theta.push((y_segment.times[i] - y_segment.times[0], value));
        let speed = system.speed(x.as_slice());
        scaled_dist_max = scaled_dist_max.max(dist2.sqrt() / speed);
    }
    let origin = theta[0].1;
    theta.iter_mut().for_each(|p| p.1 -= origin);

    let (mut qmin, mut qmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut start = 0;
    for j in 1..theta.len() {
        let dt = theta[j].0 - theta[start].0;
        if dt + 1e-12 >= QUOTIENT_STEP || j + 1 == theta.len() {
            if dt > 0.0 {
                let q = (theta[j].1 - theta[start].1) / dt;
                qmin = qmin.min(q);
                qmax = qmax.max(q);
            }
            start = j;
        }
    }
    let pass = monotone && qmin > 1.0 - epsilon && qmax < 1.0 + epsilon && scaled_dist_max < epsilon;
    ShadowingReport {
        theta_samples: theta,
        theta_prime_bounds: (qmin, qmax),
        scaled_dist_max,
        epsilon_used: epsilon,
        monotone,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, Hopf, IntegrateOptions, SharedSystem};
    use crate::shadow::{close_up, CloseUpOptions};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn hopf(x0: &[f64], duration: f64) -> OrbitSegment {
        let sys: SharedSystem = Arc::new(Hopf);
        integrate(&sys, x0, duration, &IntegrateOptions::uniform(1e-12, 0.01)).unwrap()
    }

    fn circle() -> PeriodicOrbit {
        close_up(&hopf(&[1.0, 0.0, 0.0], 2.0 * PI), &CloseUpOptions::default()).unwrap()
    }

    #[test]
    fn orbit_shadows_itself() {
        let orbit = circle();
        let report = verify_shadowing(&orbit.loop_orbit, &orbit, 0.1);
        assert!(report.pass);
        assert_eq!(report.theta_samples[0].1, 0.0);
        assert!(report.scaled_dist_max < 1e-12);
        for (t, th) in &report.theta_samples {
            assert!((t - th).abs() < 1e-9, "{t} {th}");
        }
    }

    #[test]
    fn radial_contraction_is_shadowed() {
        let orbit = circle();
        let y = hopf(&[1.02, 0.0, 0.0], 4.0 * PI);
        let report = verify_shadowing(&y, &orbit, 0.1);
        assert!(report.pass, "{:?} {}", report.theta_prime_bounds, report.scaled_dist_max);
        assert!(report.scaled_dist_max <= 0.05);
        assert!(report.monotone);
        let (lo, hi) = report.theta_prime_bounds;
        assert!(lo > 0.9 && hi < 1.1);
        // θ runs past one period without wrapping.
        assert!(report.theta_samples.last().unwrap().1 > 2.0 * PI);
    }

    #[test]
    fn distant_orbit_fails() {
        let orbit = circle();
        let y = hopf(&[0.5, 0.0, 0.3], 3.0);
        assert!(!verify_shadowing(&y, &orbit, 0.1).pass);
    }
}
