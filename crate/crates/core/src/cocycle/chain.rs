use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::frame::{normal_frame, transport_frame, NormalFrame};
use super::CocycleError;
use crate::flow::{tangent_integrate, OrbitSegment, TangentPropagation};
use crate::linalg::{mininorm, norm2};

/// ψ or ψ* along an orbit segment as (d−1)×(d−1) matrices between
/// consecutive normal frames.
#[derive(Debug, Clone)]
pub struct CocycleChain {
    pub frames: Vec<NormalFrame>,
    /// `steps[i]` maps frame i coordinates to frame i+1 coordinates.
    pub steps: Vec<DMatrix<f64>>,
    /// True for ψ*, false for ψ.
    pub scaled: bool,
    pub dts: Vec<f64>,
    /// Sample times, starting at 0.
    pub times: Vec<f64>,
    pub speeds: Vec<f64>,
    pub log_norms: Vec<f64>,
    pub log_mininorms: Vec<f64>,
    /// Samples whose frame could not be transported and was rebuilt from
    /// scratch. The step into such a frame is still exact, only the basis
    /// convention jumps there.
    pub rebuilt: Vec<usize>,
}

impl CocycleChain {
    /// Number of steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Dimension of the normal bundle, d − 1.
    pub fn normal_dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times[0]
    }

    /// A_{j−1}···A_i, mapping frame i to frame j.
    pub fn product(&self, i: usize, j: usize) -> DMatrix<f64> {
        let n = self.normal_dim();
        self.steps[i..j].iter().fold(DMatrix::identity(n, n), |acc, a| a * acc)
    }

    /// The same chain for the other flow (ψ ↔ ψ*), recomputed from speeds.
    pub fn with_scaling(&self, scaled: bool) -> CocycleChain {
        if scaled == self.scaled {
            return self.clone();
        }
        let mut out = self.clone();
        out.scaled = scaled;
        for i in 0..self.len() {
            let r = self.speeds[i] / self.speeds[i + 1];
            let f = if scaled { r } else { 1.0 / r };
            out.steps[i] = &self.steps[i] * f;
            out.log_norms[i] += f.ln();
            out.log_mininorms[i] += f.ln();
        }
        out
    }

    /// The sub-chain on samples `start..=end`, with times shifted to start at 0.
    pub fn slice(&self, start: usize, end: usize) -> CocycleChain {
        let t0 = self.times[start];
        CocycleChain {
            frames: self.frames[start..=end].to_vec(),
            steps: self.steps[start..end].to_vec(),
            scaled: self.scaled,
            dts: self.dts[start..end].to_vec(),
            times: self.times[start..=end].iter().map(|t| t - t0).collect(),
            speeds: self.speeds[start..=end].to_vec(),
            log_norms: self.log_norms[start..end].to_vec(),
            log_mininorms: self.log_mininorms[start..end].to_vec(),
            rebuilt: self
                .rebuilt
                .iter()
                .filter(|&&k| k > start && k <= end)
                .map(|k| k - start)
                .collect(),
        }
    }
}

/// Pushes frame `from` by the tangent map `phi`, removes the flow component
/// at the endpoint and expresses the result in frame `to`.
pub fn poincare_step(phi: &DMatrix<f64>, from: &NormalFrame, to: &NormalFrame) -> DMatrix<f64> {
    let pushed = phi * &from.basis;
    let n = &to.flow_dir;
    let along = n.transpose() * &pushed;
    let projected = pushed - n * along;
    to.basis.transpose() * projected
}

/// ψ for interval `i` of a tangent propagation between the given frames.
pub fn linear_poincare_step(
    propagation: &TangentPropagation<'_>,
    i: usize,
    frames: (&NormalFrame, &NormalFrame),
) -> Result<DMatrix<f64>, CocycleError> {
    let m = propagation
        .matrices
        .get(i)
        .ok_or_else(|| CocycleError::InvalidArgument(format!("step {i} out of range")))?;
    Ok(poincare_step(m, frames.0, frames.1))
}

/// ψ* from ψ: multiply by |X(x)| / |X(φ_t x)|.
pub fn scaled_step(unscaled: &DMatrix<f64>, speed_start: f64, speed_end: f64) -> DMatrix<f64> {
    unscaled * (speed_start / speed_end)
}

/// Builds the ψ (or ψ*) chain along a regular segment, speeds all at least
/// `alpha_min`.
pub fn build_chain(segment: &OrbitSegment, scaled: bool, alpha_min: f64) -> Result<CocycleChain, CocycleError> {
    if let Some(i) = segment.speeds.iter().position(|&s| !(s >= alpha_min)) {
        return Err(CocycleError::Step {
            index: i,
            source: Box::new(CocycleError::NearSingularity {
                x: segment.states[i].as_slice().to_vec(),
                speed: segment.speeds[i],
            }),
        });
    }
    let propagation = tangent_integrate(segment)?;
    build_chain_from(&propagation, scaled, alpha_min)
}

/// Builds a chain from precomputed interval tangent maps.
pub fn build_chain_from(
    propagation: &TangentPropagation<'_>,
    scaled: bool,
    alpha_min: f64,
) -> Result<CocycleChain, CocycleError> {
    let seg = propagation.base;
    let system = seg.system.as_ref();
    let tag = |index: usize| move |e: CocycleError| CocycleError::Step { index, source: Box::new(e) };
    let mut frames = Vec::with_capacity(seg.len());
    let mut rebuilt = Vec::new();
    frames.push(normal_frame(system, seg.states[0].as_slice(), alpha_min).map_err(tag(0))?);
    for i in 1..seg.len() {
        let x = seg.states[i].as_slice();
        let next = match transport_frame(&frames[i - 1], system, x, alpha_min) {
            Ok(f) => f,
            Err(CocycleError::DegenerateProjection { .. }) => {
                rebuilt.push(i);
                normal_frame(system, x, alpha_min).map_err(tag(i))?
            }
            Err(e) => return Err(tag(i)(e)),
        };
        frames.push(next);
    }
    let steps: Vec<DMatrix<f64>> = (0..propagation.len())
        .into_par_iter()
        .map(|i| {
            let a = poincare_step(&propagation.matrices[i], &frames[i], &frames[i + 1]);
            if scaled {
                scaled_step(&a, seg.speeds[i], seg.speeds[i + 1])
            } else {
                a
            }
        })
        .collect();
    let (log_norms, log_mininorms) = steps.par_iter().map(|a| (norm2(a).ln(), mininorm(a).ln())).unzip();
    Ok(CocycleChain {
        frames,
        steps,
        scaled,
        dts: seg.times.windows(2).map(|w| w[1] - w[0]).collect(),
        times: seg.times.clone(),
        speeds: seg.speeds.clone(),
        log_norms,
        log_mininorms,
        rebuilt,
    })
}

/// A unit vector u and a vector v orthogonal to it, at a common base point.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereVectorPair {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl SphereVectorPair {
    pub fn new(u: DVector<f64>, v: DVector<f64>) -> Result<Self, CocycleError> {
        if u.len() != v.len() {
            return Err(CocycleError::InvalidArgument("u and v differ in dimension".into()));
        }
        if (u.norm() - 1.0).abs() > 1e-12 {
            return Err(CocycleError::InvalidArgument(format!("|u| = {} is not 1", u.norm())));
        }
        if u.dot(&v).abs() > 1e-12 * v.norm().max(f64::MIN_POSITIVE) {
            return Err(CocycleError::InvalidArgument("v is not orthogonal to u".into()));
        }
        Ok(SphereVectorPair { u, v })
    }
}

/// One step of the extended flow Θ with tangent map `phi`:
/// (u, v) ↦ (Φu/|Φu|, Φv − ⟨Φu, Φv⟩/|Φu|² · Φu).
///
/// The first component is the unit tangent flow. The map is well defined at
/// singularities, where ψ is not.
pub fn extended_flow_step(phi: &DMatrix<f64>, pair: &SphereVectorPair) -> Result<SphereVectorPair, CocycleError> {
    let pu = phi * &pair.u;
    let pv = phi * &pair.v;
    let nu = pu.norm();
    if nu < 1e-14 {
        return Err(CocycleError::ZeroPush { norm: nu });
    }
    let u = &pu / nu;
    let mut v = &pv - &u * u.dot(&pv);
    // One more pass removes the rounding left by the first subtraction.
    let c = u.dot(&v);
    v.axpy(-c, &u, 1.0);
    Ok(SphereVectorPair { u, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_and_tangent, integrate, FlowSystem, Hopf, IntegrateOptions, Lorenz, SharedSystem, ALPHA_MIN};
    use crate::linalg::norm2;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::{Arc, OnceLock};

    fn hopf_segment(steps: usize, periods: f64) -> OrbitSegment {
        let sys: SharedSystem = Arc::new(Hopf);
        let dt = 2.0 * PI / steps as f64;
        integrate(&sys, &[1.0, 0.0, 0.0], periods * 2.0 * PI, &IntegrateOptions::uniform(1e-11, dt)).unwrap()
    }

    fn lorenz_segment() -> &'static OrbitSegment {
        static SEG: OnceLock<OrbitSegment> = OnceLock::new();
        SEG.get_or_init(|| {
            let sys: SharedSystem = Arc::new(Lorenz::default());
            let warm = integrate(&sys, &[1.0, 1.0, 1.0], 20.0, &IntegrateOptions::uniform(1e-10, 0.01)).unwrap();
            integrate(&sys, warm.last().as_slice(), 50.0, &IntegrateOptions::uniform(1e-10, 0.01)).unwrap()
        })
    }

    fn lorenz_chain(scaled: bool) -> CocycleChain {
        build_chain(lorenz_segment(), scaled, ALPHA_MIN).unwrap()
    }

    #[test]
    fn zero_duration_step_is_identity() {
        let f = normal_frame(&Lorenz::default(), &[1.0, 1.0, 1.0], ALPHA_MIN).unwrap();
        assert_relative_eq!(poincare_step(&DMatrix::identity(3, 3), &f, &f), DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn hopf_period_product_eigenvalues() {
        let seg = hopf_segment(1000, 1.0);
        let chain = build_chain(&seg, false, ALPHA_MIN).unwrap();
        assert_eq!(chain.len(), 1000);
        assert!(chain.rebuilt.is_empty());
        let p = chain.product(0, chain.len());
        let mut eig: Vec<f64> = p.complex_eigenvalues().iter().map(|c| c.norm()).collect();
        eig.sort_by(f64::total_cmp);
        for (e, x) in eig.iter().zip([(-4.0 * PI).exp(), (-2.0 * PI).exp()]) {
            assert!(((e - x) / x).abs() < 1e-6, "{e} vs {x}");
        }
        let sv = p.singular_values();
        let mut logs: Vec<f64> = sv.iter().map(|s| s.ln() / (2.0 * PI)).collect();
        logs.sort_by(f64::total_cmp);
        assert!((logs[0] + 2.0).abs() < 0.01 && (logs[1] + 1.0).abs() < 0.01, "{logs:?}");
    }

    #[test]
    fn hopf_scaled_equals_unscaled() {
        let seg = hopf_segment(200, 1.0);
        let a = build_chain(&seg, false, ALPHA_MIN).unwrap();
        let b = build_chain(&seg, true, ALPHA_MIN).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert!((x - y).amax() < 1e-9);
        }
    }

    #[test]
    fn single_sample_chain_is_empty() {
        let seg = hopf_segment(10, 1.0).slice(3, 3);
        let chain = build_chain(&seg, true, ALPHA_MIN).unwrap();
        assert!(chain.is_empty());
        assert_eq!(chain.frames.len(), 1);
    }

    #[test]
    fn lorenz_columns_are_normal_at_endpoint() {
        let sys = Lorenz::default();
        let (x1, phi) = flow_and_tangent(&sys, &[1.0, 1.0, 1.0], 0.5, 1e-11).unwrap();
        let f0 = normal_frame(&sys, &[1.0, 1.0, 1.0], ALPHA_MIN).unwrap();
        let f1 = normal_frame(&sys, x1.as_slice(), ALPHA_MIN).unwrap();
        let a = poincare_step(&phi, &f0, &f1);
        let n = sys.eval(x1.as_slice()).normalize();
        let cols = &f1.basis * &a;
        for c in cols.column_iter() {
            assert!(c.dot(&n).abs() <= 1e-10 * c.norm().max(1.0));
        }
        // Independent oracle: the projection formula applied in ambient space.
        let xn = sys.eval(x1.as_slice());
        for k in 0..2 {
            let pv = &phi * f0.basis.column(k);
            let psi = &pv - &xn * (pv.dot(&xn) / xn.norm_squared());
            assert!((&cols.column(k) - &psi).norm() <= 1e-10 * psi.norm());
        }
    }

    #[test]
    fn scaled_step_formula() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(scaled_step(&id, 2.0, 1.0), id.clone() * 2.0);
        assert_eq!(scaled_step(&id, 1.5, 1.5), id);
    }

    #[test]
    fn lorenz_scaled_steps_recompute() {
        let u = lorenz_chain(false);
        let s = lorenz_chain(true);
        for i in (0..u.len()).step_by(37) {
            let ratio = u.speeds[i] / u.speeds[i + 1];
            let expect = &u.steps[i] * ratio;
            assert!((&s.steps[i] - &expect).norm() <= 1e-10 * expect.norm());
            assert_relative_eq!(norm2(&s.steps[i]) / norm2(&u.steps[i]), ratio, max_relative = 1e-12);
        }
        assert!(s.log_mininorms.iter().all(|m| m.is_finite()));
        let back = s.with_scaling(false);
        for (a, b) in back.steps.iter().zip(&u.steps) {
            assert!((a - b).norm() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn lorenz_chain_has_invertible_steps() {
        let chain = lorenz_chain(true);
        assert!((chain.duration() - 50.0).abs() < 1e-12);
        for a in &chain.steps {
            assert!(crate::linalg::mininorm(a) > 0.0);
            let sv = a.singular_values();
            assert!(sv.max() / sv.min() < 1e3);
        }
    }

    #[test]
    fn chain_matches_direct_scaled_flow() {
        let seg = lorenz_segment();
        let chain = lorenz_chain(true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let i = rng.random_range(0..chain.len() - 200);
            let j = i + rng.random_range(1..200);
            let (_, phi) = flow_and_tangent(seg.system.as_ref(), seg.states[i].as_slice(), seg.times[j] - seg.times[i], 1e-11).unwrap();
            let direct = scaled_step(&poincare_step(&phi, &chain.frames[i], &chain.frames[j]), seg.speeds[i], seg.speeds[j]);
            let prod = chain.product(i, j);
            assert!((&prod - &direct).norm() <= 1e-4 * direct.norm(), "[{i}, {j}]");
            let k = rng.random_range(i..=j);
            let split = chain.product(k, j) * chain.product(i, k);
            assert!((&split - &prod).norm() <= 1e-10 * prod.norm());
        }
    }

    #[test]
    fn columns_orthogonal_to_flow_everywhere() {
        let chain = lorenz_chain(true);
        for i in 0..chain.len() {
            let cols = &chain.frames[i + 1].basis * &chain.steps[i];
            for c in cols.column_iter() {
                assert!(c.dot(&chain.frames[i + 1].flow_dir).abs() <= 1e-10 * c.norm().max(1.0));
            }
        }
    }

    #[test]
    fn scaled_minus_unscaled_log_norm_is_speed_ratio() {
        let u = lorenz_chain(false);
        let s = lorenz_chain(true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let i = rng.random_range(0..u.len() - 100);
            let j = i + rng.random_range(1..100);
            let diff = norm2(&s.product(i, j)).ln() - norm2(&u.product(i, j)).ln();
            assert!((diff - (u.speeds[i] / u.speeds[j]).ln()).abs() <= 1e-8);
        }
    }

    #[test]
    fn theta_reproduces_psi() {
        let seg = lorenz_segment();
        let sys = seg.system.as_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let i = rng.random_range(0..seg.len());
            let x = seg.states[i].as_slice();
            let t = rng.random_range(0.01..0.5);
            let (x1, phi) = flow_and_tangent(sys, x, t, 1e-11).unwrap();
            let f0 = normal_frame(sys, x, ALPHA_MIN).unwrap();
            let f1 = normal_frame(sys, x1.as_slice(), ALPHA_MIN).unwrap();
            let psi = &f1.basis * poincare_step(&phi, &f0, &f1);
            for k in 0..2 {
                let pair = SphereVectorPair::new(f0.flow_dir.clone(), f0.basis.column(k).into_owned()).unwrap();
                let out = extended_flow_step(&phi, &pair).unwrap();
                let expect = psi.column(k);
                assert!((&out.v - expect).norm() <= 1e-6 * expect.norm());
                assert!(out.u.dot(&out.v).abs() <= 1e-10 * out.v.norm());
            }
        }
    }

    #[test]
    fn theta_at_time_zero_is_identity() {
        let pair = SphereVectorPair::new(
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
            DVector::from_vec(vec![2.0, 0.0, -1.0]),
        )
        .unwrap();
        let out = extended_flow_step(&DMatrix::identity(3, 3), &pair).unwrap();
        assert_eq!(out, pair);
    }

    #[test]
    fn theta_is_defined_at_the_lorenz_origin() {
        let sys = Lorenz::default();
        let (x1, phi) = flow_and_tangent(&sys, &[0.0, 0.0, 0.0], 0.3, 1e-12).unwrap();
        assert_eq!(x1.amax(), 0.0);
        // Unstable eigen-direction of DX(0) in the (x, y) block.
        let (s, r) = (sys.sigma, sys.rho);
        let lam = (-(s + 1.0) + ((s + 1.0).powi(2) + 4.0 * s * (r - 1.0)).sqrt()) / 2.0;
        let u = DVector::from_vec(vec![s, s + lam, 0.0]).normalize();
        let expected_phi_u = &u * (lam * 0.3).exp();
        assert!((&phi * &u - &expected_phi_u).norm() <= 1e-6 * expected_phi_u.norm());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let w = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let v = &w - &u * u.dot(&w);
            let out = extended_flow_step(&phi, &SphereVectorPair::new(u.clone(), v).unwrap()).unwrap();
            assert!((out.u.norm() - 1.0).abs() < 1e-12);
            assert!(out.u.dot(&out.v).abs() <= 1e-10 * out.v.norm());
        }
    }

    #[test]
    fn zero_push_is_reported() {
        let pair = SphereVectorPair::new(DVector::from_vec(vec![1.0, 0.0, 0.0]), DVector::zeros(3)).unwrap();
        let phi = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0]));
        assert!(matches!(extended_flow_step(&phi, &pair), Err(CocycleError::ZeroPush { .. })));
    }

    #[test]
    fn near_singular_segment_is_rejected() {
        let sys: SharedSystem = Arc::new(Hopf);
        let seg = integrate(&sys, &[1e-5, 0.0, 0.0], 1.0, &IntegrateOptions::uniform(1e-10, 0.1)).unwrap();
        assert!(matches!(build_chain(&seg, true, ALPHA_MIN), Err(CocycleError::Step { index: 0, .. })));
    }

    #[test]
    fn rebuilt_frames_are_flagged() {
        // Two samples on opposite sides of the Hopf circle.
        let sys: SharedSystem = Arc::new(Hopf);
        let seg = integrate(&sys, &[1.0, 0.0, 0.0], PI, &IntegrateOptions::uniform(1e-11, PI)).unwrap();
        assert_eq!(seg.len(), 2);
        let chain = build_chain(&seg, false, ALPHA_MIN).unwrap();
        assert_eq!(chain.rebuilt, vec![1]);
    }
}
