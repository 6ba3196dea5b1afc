//! Invariant measures as weighted samples, the cosine test-function family
//! and the truncated weak* metric
//!
//! ```text
//! d_M(μ, ν) = Σ_i |∫f_i dμ − ∫f_i dν| / (2^i ‖f_i‖).
//! ```

mod basis;
mod metric;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use basis::{default_basis, BoxBounds, TestBasis};
pub use metric::{
    birkhoff_check, continuity_diagnostics, dm_distance, integrate_basis, BirkhoffOptions, BirkhoffReport,
    ContinuityDiagnostics, DmReport,
};

use crate::flow::OrbitSegment;
use crate::linalg::compensated_sum;
use crate::shadow::PeriodicOrbit;

/// Weights must sum to one within this tolerance.
pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("sample {index} at {point:?} lies outside the test-function box")]
    BoxTooSmall { index: usize, point: Vec<f64> },
    #[error("measure atom {index} lies outside the test-function box")]
    OutOfBox { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Empirical,
    Periodic,
    Atomic,
}

/// A probability measure Σ w_k δ_{x_k}.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
    kind: MeasureKind,
    source_span: f64,
}

impl DiscreteMeasure {
    /// Checks finiteness, nonnegativity and normalization of the weights.
    pub fn new(
        points: Vec<DVector<f64>>,
        weights: Vec<f64>,
        kind: MeasureKind,
        source_span: f64,
    ) -> Result<Self, MeasureError> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(MeasureError::InvalidArgument(format!(
                "{} points with {} weights",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(MeasureError::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        if points.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(MeasureError::InvalidArgument("measure atoms must be finite".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(MeasureError::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { points, weights, kind, source_span })
    }

    /// Rescales positive weights to sum to one before validating.
    pub fn normalized(
        points: Vec<DVector<f64>>,
        weights: Vec<f64>,
        kind: MeasureKind,
        source_span: f64,
    ) -> Result<Self, MeasureError> {
        let total = compensated_sum(weights.iter().copied());
        if !(total > 0.0) {
            return Err(MeasureError::InvalidArgument("weights have no positive mass".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(points, weights, kind, source_span)
    }

    /// The point mass δ_x.
    pub fn dirac(x: DVector<f64>) -> Self {
        DiscreteMeasure { points: vec![x], weights: vec![1.0], kind: MeasureKind::Atomic, source_span: 0.0 }
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    /// Total time the samples represent (zero for atomic measures).
    pub fn source_span(&self) -> f64 {
        self.source_span
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// ∫ f dμ, compensated and accumulated in atom order.
    pub fn integrate<F: Fn(&DVector<f64>) -> f64>(&self, f: F) -> f64 {
        compensated_sum(self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)))
    }
}

/// The time average (1/T) ∫_0^T δ_{φ_t x} dt with trapezoidal weights over
/// the samples of the segment.
pub fn empirical_measure(segment: &OrbitSegment) -> Result<DiscreteMeasure, MeasureError> {
    let span = segment.duration();
    if segment.len() < 2 || !(span > 0.0) {
        return Err(MeasureError::InvalidArgument("segment must have positive duration".into()));
    }
    let m = segment.len();
    let mut weights = vec![0.0; m];
    for k in 0..m - 1 {
        let half = 0.5 * (segment.times[k + 1] - segment.times[k]) / span;
        weights[k] += half;
        weights[k + 1] += half;
    }
    DiscreteMeasure::normalized(segment.states.clone(), weights, MeasureKind::Empirical, span)
}

/// The invariant probability measure on a periodic orbit, uniform in time.
/// The loop samples sit on a uniform grid over one period with the anchor
/// repeated at the end, so the periodic trapezoid rule gives every distinct
/// sample the weight 1/N.
pub fn periodic_measure(orbit: &PeriodicOrbit) -> Result<DiscreteMeasure, MeasureError> {
    loop_measure(&orbit.loop_orbit)
}

/// [`periodic_measure`] from the closed loop alone: samples over one period
/// whose last state repeats the first.
pub fn loop_measure(lp: &OrbitSegment) -> Result<DiscreteMeasure, MeasureError> {
    if lp.len() < 2 {
        return Err(MeasureError::InvalidArgument("periodic loop has fewer than two samples".into()));
    }
    let m = lp.len() - 1;
    let mut weights = vec![0.0; m];
    for k in 0..m {
        let half = 0.5 * (lp.times[k + 1] - lp.times[k]);
        weights[k] += half;
        weights[(k + 1) % m] += half;
    }
    DiscreteMeasure::normalized(lp.states[..m].to_vec(), weights, MeasureKind::Periodic, lp.duration())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{built_in, integrate, IntegrateOptions};
    use crate::shadow::{close_up, CloseUpOptions};
    use std::f64::consts::PI;

    #[test]
    fn single_interval_trapezoid() {
        let hopf = built_in("hopf").unwrap();
        let seg = integrate(&hopf, &[1.0, 0.0, 0.0], 0.5, &IntegrateOptions::uniform(1e-10, 0.5)).unwrap();
        assert_eq!(seg.len(), 2);
        let mu = empirical_measure(&seg).unwrap();
        assert_eq!(mu.weights(), &[0.5, 0.5]);
        assert_eq!(mu.kind(), MeasureKind::Empirical);
    }

    #[test]
    fn weights_validated() {
        let x = DVector::from_vec(vec![0.0]);
        assert!(DiscreteMeasure::new(vec![x.clone(), x.clone()], vec![0.5, 0.4], MeasureKind::Atomic, 0.0).is_err());
        assert!(DiscreteMeasure::new(vec![x.clone(), x.clone()], vec![1.5, -0.5], MeasureKind::Atomic, 0.0).is_err());
        assert!(DiscreteMeasure::new(vec![x.clone()], vec![1.0], MeasureKind::Atomic, 0.0).is_ok());
        let bad = DVector::from_vec(vec![f64::NAN]);
        assert!(DiscreteMeasure::new(vec![bad], vec![1.0], MeasureKind::Atomic, 0.0).is_err());
    }

    #[test]
    fn constant_integrates_to_one() {
        let hopf = built_in("hopf").unwrap();
        let seg = integrate(&hopf, &[0.3, 0.1, 0.2], 7.3, &IntegrateOptions::default()).unwrap();
        let mu = empirical_measure(&seg).unwrap();
        assert!((mu.integrate(|_| 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirac_integrates_exactly() {
        let x = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let mu = DiscreteMeasure::dirac(x.clone());
        let f = |p: &DVector<f64>| p[0].sin() * p[1] + p[2].exp();
        assert_eq!(mu.integrate(f), f(&x));
    }

    #[test]
    fn hopf_period_measure_is_shift_invariant() {
        let hopf = built_in("hopf").unwrap();
        let opts = IntegrateOptions::uniform(1e-12, 2.0 * PI / 2000.0);
        let a = integrate(&hopf, &[1.0, 0.0, 0.0], 2.0 * PI, &opts).unwrap();
        let b = integrate(&hopf, &[-1.0, 0.0, 0.0], 2.0 * PI, &opts).unwrap();
        let (ma, mb) = (empirical_measure(&a).unwrap(), empirical_measure(&b).unwrap());
        let fs: Vec<Box<dyn Fn(&DVector<f64>) -> f64>> = vec![
            Box::new(|p| p[0]),
            Box::new(|p| (3.0 * p[0]).cos() * p[1]),
            Box::new(|p| (p[0] + 2.0 * p[1]).exp()),
        ];
        for f in &fs {
            assert!((ma.integrate(f) - mb.integrate(f)).abs() < 1e-6);
        }
    }

    fn hopf_circle() -> PeriodicOrbit {
        let hopf = built_in("hopf").unwrap();
        let guess = integrate(&hopf, &[1.0, 0.0, 0.0], 2.0 * PI, &IntegrateOptions::default()).unwrap();
        close_up(&guess, &CloseUpOptions::default()).unwrap()
    }

    #[test]
    fn hopf_circle_moments() {
        let orbit = hopf_circle();
        let mu = periodic_measure(&orbit).unwrap();
        assert_eq!(mu.kind(), MeasureKind::Periodic);
        assert!((mu.source_span() - 2.0 * PI).abs() < 1e-8);
        assert!(mu.integrate(|p| p[0]).abs() < 1e-8);
        assert!(mu.integrate(|p| p[1]).abs() < 1e-8);
        assert!((mu.integrate(|p| p[0] * p[0] + p[1] * p[1]) - 1.0).abs() < 1e-8);
        assert!((mu.integrate(|_| 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hopf_cosine_product_matches_quadrature() {
        let orbit = hopf_circle();
        let mu = periodic_measure(&orbit).unwrap();
        let basis = default_basis(BoxBounds::hopf(), 5, mu.points()).unwrap();
        // k = (2,0,0) is the fifth function.
        assert_eq!(basis.modes[4], vec![2, 0, 0]);
        let got = integrate_basis(&basis, 4, &mu).unwrap();
        // Oracle: (1/2π)∮ cos(π(cos s + 2)/2) ds by the midpoint rule on 10⁶ nodes.
        let n = 1_000_000;
        let oracle = (0..n)
            .map(|j| {
                let s = 2.0 * PI * (j as f64 + 0.5) / n as f64;
                (PI * (s.cos() + 2.0) / 2.0).cos()
            })
            .sum::<f64>()
            / n as f64;
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }
}
