use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SpectrumError;
use crate::cocycle::CocycleChain;
use crate::flow::{tangent_integrate, OrbitSegment};
use crate::linalg::qr_positive;

/// Smallest number of steps accepted by [`qr_exponents`].
pub const MIN_STEPS: usize = 100;

/// Number of points kept on the running-average history curve.
const HISTORY_POINTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhichFlow {
    Tangent,
    Poincare,
    ScaledPoincare,
}

/// Finite-window Lyapunov exponents of a linear cocycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Ascending.
    pub exponents: Vec<f64>,
    pub which_flow: WhichFlow,
    pub window: f64,
    /// Per exponent (same order), the largest deviation of the running
    /// average from the final value over the last 10% of the window.
    pub drift: Vec<f64>,
    /// Running averages (time, ascending exponents) at evenly spaced steps.
    pub history: Vec<(f64, Vec<f64>)>,
}

impl SpectrumEstimate {
    pub fn count_negative(&self) -> usize {
        self.exponents.iter().filter(|&&l| l < 0.0).count()
    }

    /// min_i |λ_i|.
    pub fn gap(&self) -> f64 {
        self.exponents.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_drift(&self) -> f64 {
        self.drift.iter().copied().fold(0.0, f64::max)
    }

    /// Largest negative and smallest positive exponents.
    pub fn extremes(&self) -> (Option<f64>, Option<f64>) {
        let neg = self.exponents.iter().copied().filter(|&l| l < 0.0).fold(None, |a: Option<f64>, l| Some(a.map_or(l, |a| a.max(l))));
        let pos = self.exponents.iter().copied().filter(|&l| l > 0.0).fold(None, |a: Option<f64>, l| Some(a.map_or(l, |a| a.min(l))));
        (neg, pos)
    }

    /// The same spectrum with the exponent closest to zero removed.
    pub fn without_zero(&self) -> Vec<f64> {
        let mut out = self.exponents.clone();
        if let Some(k) = (0..out.len()).min_by(|&a, &b| out[a].abs().total_cmp(&out[b].abs())) {
            out.remove(k);
        }
        out
    }
}

/// Fraction of the steps used to seed the accumulation.
const SEED_FRACTION: usize = 10;

/// The orthonormal basis at step 0 whose columns grow fastest, in order,
/// under the first steps of the cocycle: QR iteration with the transposed
/// steps run backward from a basis in general position. Starting the
/// forward accumulation here removes most of the start-up transient, and a
/// coordinate axis that happens to be invariant cannot trap it.
fn seed_basis(steps: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = steps[0].nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = qr_positive(&DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal))).0;
    let horizon = (steps.len() / SEED_FRACTION).max(1);
    for a in steps[..horizon].iter().rev() {
        q = qr_positive(&(a.transpose() * q)).0;
    }
    q
}

/// Benettin/QR accumulation over a sequence of square matrices.
pub fn benettin<'a, I>(steps: I, dts: &[f64], which_flow: WhichFlow) -> Result<SpectrumEstimate, SpectrumError>
where
    I: IntoIterator<Item = &'a DMatrix<f64>>,
{
    let m = dts.len();
    if m < MIN_STEPS {
        return Err(SpectrumError::InsufficientData { steps: m, required: MIN_STEPS });
    }
    let window: f64 = dts.iter().sum();
    let steps: Vec<&DMatrix<f64>> = steps.into_iter().take(m).collect();
    let mut q = seed_basis(&steps);
    let mut sums: Vec<f64> = Vec::new();
    let mut elapsed = 0.0;
    let tail_start = m - m / 10 - 1;
    let mut tail: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut history = Vec::new();
    let every = (m / HISTORY_POINTS).max(1);
    for (k, a) in steps.iter().enumerate() {
        let n = a.nrows();
        let (qn, r) = qr_positive(&(*a * &q));
        if sums.is_empty() {
            sums = vec![0.0; n];
        }
        for (j, rj) in r.iter().enumerate() {
            if !(*rj >= 1e-300) {
                return Err(SpectrumError::IllConditioned { step: k, value: *rj });
            }
            sums[j] += rj.ln();
        }
        q = qn;
        elapsed += dts[k];
        let record_tail = k >= tail_start;
        let record_history = (k + 1) % every == 0 || k + 1 == m;
        if record_tail || record_history {
            let running: Vec<f64> = sums.iter().map(|s| s / elapsed).collect();
            if record_history {
                let mut sorted = running.clone();
                sorted.sort_by(f64::total_cmp);
                history.push((elapsed, sorted));
            }
            if record_tail {
                tail.push((elapsed, running));
            }
        }
    }
    let last = tail.last().expect("tail holds the final step").1.clone();
    let mut order: Vec<usize> = (0..last.len()).collect();
    order.sort_by(|&a, &b| last[a].total_cmp(&last[b]));
    let exponents = order.iter().map(|&j| last[j]).collect();
    let drift = order
        .iter()
        .map(|&j| tail.iter().map(|(_, r)| (r[j] - last[j]).abs()).fold(0.0, f64::max))
        .collect();
    Ok(SpectrumEstimate {
        exponents,
        which_flow,
        window,
        drift,
        history,
    })
}

/// Lyapunov exponents of ψ or ψ* along a chain.
pub fn qr_exponents(chain: &CocycleChain) -> Result<SpectrumEstimate, SpectrumError> {
    let which = if chain.scaled { WhichFlow::ScaledPoincare } else { WhichFlow::Poincare };
    benettin(&chain.steps, &chain.dts, which)
}

/// Lyapunov exponents of the tangent flow Φ_t along a segment.
pub fn tangent_exponents(segment: &OrbitSegment) -> Result<SpectrumEstimate, SpectrumError> {
    let propagation = tangent_integrate(segment)?;
    let dts: Vec<f64> = segment.times.windows(2).map(|w| w[1] - w[0]).collect();
    benettin(&propagation.matrices, &dts, WhichFlow::Tangent)
}

/// Comparison of the ψ and ψ* spectra over the same segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingIdentityReport {
    /// max_i |λ_i(ψ) − λ_i(ψ*)|.
    pub max_difference: f64,
    /// |log(speed_0 / speed_m)| / window.
    pub predicted: f64,
    pub window: f64,
}

/// The finite-window exponents of ψ and ψ* differ by exactly
/// log(|X(x_0)|/|X(x_m)|)/T in every direction, since each step is a scalar
/// multiple of the other.
pub fn scaled_equals_unscaled_check(
    unscaled: &SpectrumEstimate,
    scaled: &SpectrumEstimate,
    speed_start: f64,
    speed_end: f64,
) -> ScalingIdentityReport {
    let max_difference = unscaled
        .exponents
        .iter()
        .zip(&scaled.exponents)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ScalingIdentityReport {
        max_difference,
        predicted: (speed_start / speed_end).ln().abs() / scaled.window,
        window: scaled.window,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::build_chain;
    use crate::flow::{integrate, Hopf, IntegrateOptions, Lorenz, SharedSystem, ALPHA_MIN};
    use nalgebra::DVector;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn constant_chain(a: DMatrix<f64>, steps: usize) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        (vec![a; steps], vec![1.0; steps])
    }

    #[test]
    fn diagonal_constant_chain() {
        let (steps, dts) = constant_chain(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])), 200);
        let est = benettin(&steps, &dts, WhichFlow::ScaledPoincare).unwrap();
        assert!((est.exponents[0] + 2f64.ln()).abs() < 1e-12);
        assert!((est.exponents[1] - 2f64.ln()).abs() < 1e-12);
        assert!(est.max_drift() < 1e-12);
        assert_eq!(est.window, 200.0);
    }

    #[test]
    fn short_chain_is_rejected() {
        let (steps, dts) = constant_chain(DMatrix::identity(2, 2), 99);
        assert!(matches!(benettin(&steps, &dts, WhichFlow::Poincare), Err(SpectrumError::InsufficientData { .. })));
    }

    #[test]
    fn singular_step_is_ill_conditioned() {
        let (mut steps, dts) = constant_chain(DMatrix::identity(2, 2), 150);
        steps[70] = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(
            benettin(&steps, &dts, WhichFlow::Poincare),
            Err(SpectrumError::IllConditioned { step: 70, .. })
        ));
    }

    fn hopf_segment() -> OrbitSegment {
        let sys: SharedSystem = Arc::new(Hopf);
        integrate(&sys, &[1.0, 0.0, 0.0], 20.0 * PI, &IntegrateOptions::uniform(1e-11, 0.02 * PI)).unwrap()
    }

    #[test]
    fn hopf_poincare_and_tangent_exponents() {
        let seg = hopf_segment();
        let chain = build_chain(&seg, true, ALPHA_MIN).unwrap();
        let est = qr_exponents(&chain).unwrap();
        assert!((est.exponents[0] + 2.0).abs() < 0.01 && (est.exponents[1] + 1.0).abs() < 0.01, "{:?}", est.exponents);
        let tan = tangent_exponents(&seg).unwrap();
        let expected = [-2.0, -1.0, 0.0];
        for (l, e) in tan.exponents.iter().zip(expected) {
            assert!((l - e).abs() < 0.01, "{:?}", tan.exponents);
        }
        let unscaled = qr_exponents(&chain.with_scaling(false)).unwrap();
        let report = scaled_equals_unscaled_check(&unscaled, &est, seg.speeds[0], *seg.speeds.last().unwrap());
        assert!(report.max_difference < 1e-12);
    }

    #[test]
    fn lorenz_equilibrium_exponents() {
        let sys: SharedSystem = Arc::new(Lorenz::default());
        let seg = integrate(&sys, &[0.0, 0.0, 0.0], 20.0, &IntegrateOptions::uniform(1e-12, 0.01)).unwrap();
        let est = tangent_exponents(&seg).unwrap();
        let (s, r, b) = (10.0f64, 28.0f64, 8.0 / 3.0);
        let disc = ((s + 1.0).powi(2) + 4.0 * s * (r - 1.0)).sqrt();
        let mut expected = [(-(s + 1.0) - disc) / 2.0, -b, (-(s + 1.0) + disc) / 2.0];
        expected.sort_by(f64::total_cmp);
        assert!((expected[0] + 22.83).abs() < 0.01 && (expected[2] - 11.83).abs() < 0.01);
        for (l, e) in est.exponents.iter().zip(expected) {
            assert!((l - e).abs() < 0.01, "{:?}", est.exponents);
        }
    }

    #[test]
    fn scaling_identity_is_exact() {
        let sys: SharedSystem = Arc::new(Lorenz::default());
        let warm = integrate(&sys, &[1.0, 1.0, 1.0], 10.0, &IntegrateOptions::uniform(1e-10, 0.01)).unwrap();
        let seg = integrate(&sys, warm.last().as_slice(), 20.0, &IntegrateOptions::uniform(1e-10, 0.01)).unwrap();
        let chain = build_chain(&seg, false, ALPHA_MIN).unwrap();
        let a = qr_exponents(&chain).unwrap();
        let b = qr_exponents(&chain.with_scaling(true)).unwrap();
        let report = scaled_equals_unscaled_check(&a, &b, seg.speeds[0], *seg.speeds.last().unwrap());
        assert!((report.max_difference - report.predicted).abs() < 1e-10, "{report:?}");
        // Each exponent moves by the same signed amount.
        let shift = (seg.speeds[0] / seg.speeds.last().unwrap()).ln() / b.window;
        for (x, y) in a.exponents.iter().zip(&b.exponents) {
            assert!((y - x - shift).abs() < 1e-10);
        }
    }

    #[test]
    fn exponent_sum_matches_log_determinant() {
        let sys: SharedSystem = Arc::new(Lorenz::default());
        let warm = integrate(&sys, &[1.0, 1.0, 1.0], 10.0, &IntegrateOptions::uniform(1e-10, 0.01)).unwrap();
        let seg = integrate(&sys, warm.last().as_slice(), 20.0, &IntegrateOptions::uniform(1e-10, 0.01)).unwrap();
        let chain = build_chain(&seg, true, ALPHA_MIN).unwrap();
        let est = qr_exponents(&chain).unwrap();
        let logdet: f64 = chain.steps.iter().map(|a| a.determinant().abs().ln()).sum::<f64>() / est.window;
        assert!((est.exponents.iter().sum::<f64>() - logdet).abs() < 1e-6);
    }
}
