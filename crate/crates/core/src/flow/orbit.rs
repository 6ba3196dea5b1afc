use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ode::{dopri5, rk4_doubling, DenseStep, OdeOptions};
use super::{FlowError, FlowSystem, SharedSystem, ESCAPE_RADIUS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// Local error tolerance (absolute and relative).
    pub tol: f64,
    /// Uniform sampling stride Δ.
    pub stride: f64,
    /// Also emit the end point of every accepted adaptive step.
    pub include_steps: bool,
    pub escape_radius: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: 1e-10,
            stride: 0.01,
            include_steps: true,
            escape_radius: ESCAPE_RADIUS,
        }
    }
}

impl IntegrateOptions {
    pub fn uniform(tol: f64, stride: f64) -> Self {
        IntegrateOptions {
            tol,
            stride,
            include_steps: false,
            ..Default::default()
        }
    }

    fn ode(&self, dim: usize) -> OdeOptions {
        OdeOptions {
            escape_radius: self.escape_radius,
            ..OdeOptions::new(self.tol, dim)
        }
    }
}

/// Time-stamped samples of one trajectory, starting at time 0.
#[derive(Clone)]
pub struct OrbitSegment {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub speeds: Vec<f64>,
    pub system: SharedSystem,
    /// Integration tolerance the samples were produced with.
    pub tol: f64,
}

impl std::fmt::Debug for OrbitSegment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OrbitSegment")
            .field("system", &self.system.name())
            .field("samples", &self.times.len())
            .field("duration", &self.duration())
            .field("tol", &self.tol)
            .finish()
    }
}

impl OrbitSegment {
    /// Builds a segment from raw samples, recomputing speeds.
    pub fn from_samples(
        system: SharedSystem,
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        tol: f64,
    ) -> Result<Self, FlowError> {
        if times.len() != states.len() || times.is_empty() {
            return Err(FlowError::InvalidArgument("times and states must be non-empty and equally long".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FlowError::InvalidArgument("sample times must be strictly increasing".into()));
        }
        if let Some(s) = states.iter().find(|s| s.len() != system.dim()) {
            return Err(FlowError::InvalidArgument(format!("state of dimension {} in a {}-dimensional system", s.len(), system.dim())));
        }
        let speeds = states.iter().map(|x| system.speed(x.as_slice())).collect();
        Ok(OrbitSegment {
            times,
            states,
            speeds,
            system,
            tol,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.times.last().unwrap_or(&0.0) - self.times.first().unwrap_or(&0.0)
    }

    pub fn first(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("segments are never empty")
    }

    pub fn min_speed(&self) -> f64 {
        self.speeds.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Samples `start..=end`, with times shifted so the first is 0.
    pub fn slice(&self, start: usize, end: usize) -> OrbitSegment {
        let t0 = self.times[start];
        OrbitSegment {
            times: self.times[start..=end].iter().map(|t| t - t0).collect(),
            states: self.states[start..=end].to_vec(),
            speeds: self.speeds[start..=end].to_vec(),
            system: self.system.clone(),
            tol: self.tol,
        }
    }

    /// Index of the first sample with time ≥ `t` (clamped to the last sample).
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t - 1e-12).min(self.len() - 1)
    }

    /// Fails with [`FlowError::NearSingularity`] if any sample is slower than `alpha`.
    pub fn check_regular(&self, alpha: f64) -> Result<(), FlowError> {
        match self.speeds.iter().position(|&s| s < alpha) {
            Some(i) => Err(FlowError::NearSingularity {
                x: self.states[i].as_slice().to_vec(),
                speed: self.speeds[i],
            }),
            None => Ok(()),
        }
    }
}

fn validate(system: &dyn FlowSystem, x0: &[f64], duration: f64) -> Result<(), FlowError> {
    if x0.len() != system.dim() {
        return Err(FlowError::InvalidArgument(format!(
            "initial state has dimension {}, system has {}",
            x0.len(),
            system.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::InvalidArgument("initial state is not finite".into()));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(FlowError::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    Ok(())
}

/// Integrates the flow φ_t from `x0` over `duration`, sampling on a uniform
/// grid (plus adaptive step ends when requested).
pub fn integrate(
    system: &SharedSystem,
    x0: &[f64],
    duration: f64,
    opts: &IntegrateOptions,
) -> Result<OrbitSegment, FlowError> {
    validate(system.as_ref(), x0, duration)?;
    if !(opts.stride > 0.0) {
        return Err(FlowError::InvalidArgument("stride must be positive".into()));
    }
    let d = system.dim();
    let mut times = vec![0.0];
    let mut states = vec![DVector::from_column_slice(x0)];
    let mut next_grid = 1usize;
    let mut buf = vec![0.0; d];
    let eps = 1e-9 * opts.stride;
    let sys = system.clone();
    let end = dopri5(
        move |y, out| sys.eval_into(y, out),
        x0,
        duration,
        &opts.ode(d),
        |step: &DenseStep<'_>| {
            let t1 = step.t1();
            loop {
                let tg = next_grid as f64 * opts.stride;
                if tg > t1 + eps || tg > duration - eps {
                    break;
                }
                step.eval(tg, &mut buf);
                times.push(tg);
                states.push(DVector::from_column_slice(&buf));
                next_grid += 1;
            }
            let last_t = *times.last().unwrap();
            if opts.include_steps && t1 > last_t + eps && t1 < duration - eps {
                step.eval(t1, &mut buf);
                times.push(t1);
                states.push(DVector::from_column_slice(&buf));
            }
        },
    )?;
    // The final sample is the exact step end rather than an interpolant.
    if *times.last().unwrap() > duration - eps && times.len() > 1 {
        times.pop();
        states.pop();
    }
    times.push(duration);
    states.push(DVector::from_vec(end));
    OrbitSegment::from_samples(system.clone(), times, states, opts.tol)
}

/// Integrates from `x0` and returns the states at the requested times, which
/// must be sorted and lie in `[0, duration]`, followed by the final state.
pub fn integrate_at(
    system: &SharedSystem,
    x0: &[f64],
    duration: f64,
    sample_times: &[f64],
    tol: f64,
) -> Result<(Vec<DVector<f64>>, DVector<f64>), FlowError> {
    let d = system.dim();
    if duration <= 0.0 {
        let x = DVector::from_column_slice(x0);
        return Ok((sample_times.iter().map(|_| x.clone()).collect(), x));
    }
    validate(system.as_ref(), x0, duration)?;
    let mut out = Vec::with_capacity(sample_times.len());
    let mut k = 0usize;
    while k < sample_times.len() && sample_times[k] <= 0.0 {
        out.push(DVector::from_column_slice(x0));
        k += 1;
    }
    let mut buf = vec![0.0; d];
    let sys = system.clone();
    let end = dopri5(
        move |y, o| sys.eval_into(y, o),
        x0,
        duration,
        &OdeOptions::new(tol, d),
        |step| {
            while k < sample_times.len() && sample_times[k] <= step.t1() {
                step.eval(sample_times[k], &mut buf);
                out.push(DVector::from_column_slice(&buf));
                k += 1;
            }
        },
    )?;
    let end = DVector::from_vec(end);
    while out.len() < sample_times.len() {
        out.push(end.clone());
    }
    Ok((out, end))
}

/// φ_duration(x0) by classical RK4 with step doubling, independent of the
/// Dormand–Prince integrator used everywhere else.
pub fn flow_rk4(system: &dyn FlowSystem, x0: &[f64], duration: f64, tol: f64) -> Result<DVector<f64>, FlowError> {
    let y = rk4_doubling(|x, out| system.eval_into(x, out), x0, duration, &OdeOptions::new(tol, system.dim()))?;
    Ok(DVector::from_vec(y))
}

/// Solves the variational equation V' = DX(φ_t x) V, V(0) = I, over
/// `duration`. Returns (φ_duration(x), Φ_duration(x)).
pub fn flow_and_tangent(
    system: &dyn FlowSystem,
    x0: &[f64],
    duration: f64,
    tol: f64,
) -> Result<(DVector<f64>, DMatrix<f64>), FlowError> {
    let d = system.dim();
    let mut y0 = vec![0.0; d + d * d];
    y0[..d].copy_from_slice(x0);
    for i in 0..d {
        y0[d + i * d + i] = 1.0;
    }
    if duration <= 0.0 {
        return Ok((DVector::from_column_slice(x0), DMatrix::identity(d, d)));
    }
    let rhs = |y: &[f64], out: &mut [f64]| {
        let (x, v) = y.split_at(d);
        let (dx, dv) = out.split_at_mut(d);
        system.eval_into(x, dx);
        let jac = system.jacobian(x);
        // Column-major V: dv[:, c] = J v[:, c]
        for c in 0..d {
            for r in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += jac[(r, k)] * v[c * d + k];
                }
                dv[c * d + r] = acc;
            }
        }
    };
    let y = dopri5(rhs, &y0, duration, &OdeOptions::new(tol, d), |_| {})?;
    Ok((
        DVector::from_column_slice(&y[..d]),
        DMatrix::from_column_slice(d, d, &y[d..]),
    ))
}

/// Interval tangent maps Φ_{t_{i+1} − t_i}(x_i) along a segment.
#[derive(Debug, Clone)]
pub struct TangentPropagation<'a> {
    pub base: &'a OrbitSegment,
    pub matrices: Vec<DMatrix<f64>>,
    /// φ_{t_{i+1} − t_i}(x_i) as re-integrated alongside the matrices.
    pub ends: Vec<DVector<f64>>,
}

impl TangentPropagation<'_> {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Φ over samples `i..j`, i.e. M_{j−1}···M_i.
    pub fn compose(&self, i: usize, j: usize) -> DMatrix<f64> {
        let d = self.base.system.dim();
        self.matrices[i..j]
            .iter()
            .fold(DMatrix::identity(d, d), |acc, m| m * acc)
    }
}

/// Tangent maps for every sampling interval of `segment`, at the segment's
/// own tolerance. Intervals are integrated independently and in parallel.
pub fn tangent_integrate(segment: &OrbitSegment) -> Result<TangentPropagation<'_>, FlowError> {
    let system = segment.system.as_ref();
    let results: Vec<(DVector<f64>, DMatrix<f64>)> = (0..segment.len().saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            let dt = segment.times[i + 1] - segment.times[i];
            flow_and_tangent(system, segment.states[i].as_slice(), dt, segment.tol)
        })
        .collect::<Result<_, _>>()?;
    let (ends, matrices) = results.into_iter().unzip();
    Ok(TangentPropagation {
        base: segment,
        matrices,
        ends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{Hopf, Lorenz};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn hopf() -> SharedSystem {
        Arc::new(Hopf)
    }

    fn lorenz() -> SharedSystem {
        Arc::new(Lorenz::default())
    }

    #[test]
    fn hopf_circle_is_periodic() {
        let seg = integrate(&hopf(), &[1.0, 0.0, 0.0], 2.0 * PI, &IntegrateOptions::default()).unwrap();
        let err = (seg.last() - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax();
        assert!(err < 1e-8, "{err:e}");
        assert_eq!(seg.times[0], 0.0);
        assert_eq!(*seg.times.last().unwrap(), 2.0 * PI);
        assert!(seg.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn speeds_match_recomputation() {
        let seg = integrate(&lorenz(), &[1.0, 1.0, 1.0], 3.0, &IntegrateOptions::default()).unwrap();
        for (x, s) in seg.states.iter().zip(&seg.speeds) {
            assert_eq!(*s, seg.system.speed(x.as_slice()));
        }
    }

    #[test]
    fn tiny_duration_returns_start() {
        let x0 = [1.0, 2.0, 3.0];
        let seg = integrate(&lorenz(), &x0, 1e-12, &IntegrateOptions::default()).unwrap();
        assert!((seg.last() - DVector::from_column_slice(&x0)).amax() < 1e-9);
        assert!(integrate(&lorenz(), &x0, 0.0, &IntegrateOptions::default()).is_err());
        assert!(integrate(&lorenz(), &[f64::NAN, 0.0, 0.0], 1.0, &IntegrateOptions::default()).is_err());
    }

    #[test]
    fn uniform_sampling_without_step_points() {
        let seg = integrate(&lorenz(), &[1.0, 1.0, 1.0], 1.0, &IntegrateOptions::uniform(1e-10, 0.01)).unwrap();
        assert_eq!(seg.len(), 101);
        for (k, t) in seg.times.iter().enumerate() {
            assert!((t - k as f64 * 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn reintegration_reproduces_endpoint() {
        let opts = IntegrateOptions::default();
        for (sys, x0, dur) in [(hopf(), [0.3, 0.2, 0.5], 10.0), (lorenz(), [1.0, 1.0, 1.0], 2.0)] {
            let seg = integrate(&sys, &x0, dur, &opts).unwrap();
            let again = integrate(&sys, seg.first().as_slice(), dur, &opts).unwrap();
            let bound = 10.0 * opts.tol * dur * seg.last().amax().max(1.0);
            assert!((again.last() - seg.last()).amax() <= bound);
        }
    }

    #[test]
    fn semigroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let opts = IntegrateOptions::default();
        for sys in [hopf(), lorenz()] {
            let relax = integrate(&sys, &[1.0, 1.0, 1.0], 5.0, &opts).unwrap();
            for _ in 0..100 {
                let jitter: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
                let x0: Vec<f64> = relax.last().iter().zip(&jitter).map(|(a, b)| a + b).collect();
                let s = rng.random_range(0.05..0.5);
                let t = rng.random_range(0.05..0.5);
                let direct = integrate(&sys, &x0, s + t, &opts).unwrap();
                let first = integrate(&sys, &x0, s, &opts).unwrap();
                let composed = integrate(&sys, first.last().as_slice(), t, &opts).unwrap();
                let scale = direct.last().amax().max(1.0);
                let diff = (direct.last() - composed.last()).amax();
                assert!(diff <= 10.0 * opts.tol * (s + t) * scale, "{}: {diff:e}", sys.name());
            }
        }
    }

    #[test]
    fn lorenz_stays_bounded_and_z_average() {
        let seg = integrate(&lorenz(), &[1.0, 1.0, 1.0], 100.0, &IntegrateOptions::uniform(1e-10, 0.01)).unwrap();
        assert!(seg.states.iter().all(|x| x.norm() < 100.0));
        let zbar = seg.states.iter().map(|x| x[2]).sum::<f64>() / seg.len() as f64;
        assert!((22.0..=25.0).contains(&zbar), "{zbar}");
    }

    #[test]
    fn hopf_monodromy_eigenvalues() {
        let seg = integrate(&hopf(), &[1.0, 0.0, 0.0], 2.0 * PI, &IntegrateOptions::uniform(1e-11, 0.02 * PI)).unwrap();
        let prop = tangent_integrate(&seg).unwrap();
        let m = prop.compose(0, prop.len());
        let mut eig: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.norm()).collect();
        eig.sort_by(f64::total_cmp);
        let expected = [(-4.0 * PI).exp(), (-2.0 * PI).exp(), 1.0];
        for (e, x) in eig.iter().zip(expected) {
            assert!(((e - x) / x).abs() < 1e-6, "{e} vs {x}");
        }
        // The flow direction is fixed by the monodromy.
        let v = seg.system.eval(&[1.0, 0.0, 0.0]);
        assert!((&m * &v - &v).norm() < 1e-6);
    }

    #[test]
    fn zero_interval_is_identity() {
        let (x, m) = flow_and_tangent(&Lorenz::default(), &[1.0, 2.0, 3.0], 0.0, 1e-10).unwrap();
        assert_eq!(m, DMatrix::identity(3, 3));
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn tangent_chain_carries_flow_direction() {
        let seg = integrate(&lorenz(), &[1.0, 1.0, 1.0], 1.0, &IntegrateOptions::default()).unwrap();
        let prop = tangent_integrate(&seg).unwrap();
        let m = prop.compose(0, prop.len());
        let x0 = seg.system.eval(seg.first().as_slice());
        let x1 = seg.system.eval(seg.last().as_slice());
        let rel = (&m * x0 - &x1).norm() / x1.norm();
        assert!(rel < 1e-4, "{rel:e}");
    }

    #[test]
    fn tangent_cocycle_property() {
        let sys = lorenz();
        let base = integrate(&sys, &[1.0, 1.0, 1.0], 3.0, &IntegrateOptions::default()).unwrap();
        for sys in [hopf(), sys] {
            let x0 = if sys.name() == "hopf" { vec![0.7, 0.1, 0.3] } else { base.last().as_slice().to_vec() };
            let (s, t) = (0.3, 0.45);
            let (xs, phi_s) = flow_and_tangent(sys.as_ref(), &x0, s, 1e-11).unwrap();
            let (_, phi_t) = flow_and_tangent(sys.as_ref(), xs.as_slice(), t, 1e-11).unwrap();
            let (_, phi_st) = flow_and_tangent(sys.as_ref(), &x0, s + t, 1e-11).unwrap();
            let rel = (&phi_t * &phi_s - &phi_st).norm() / phi_st.norm();
            assert!(rel < 1e-5, "{}: {rel:e}", sys.name());
        }
    }
}
