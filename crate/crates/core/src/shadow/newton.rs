use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ShadowError;
use crate::cocycle::build_chain;
use crate::flow::{flow_and_tangent, flow_rk4, integrate_at, FlowSystem, OrbitSegment, ALPHA_MIN};
use crate::linalg::qr_positive;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloseUpOptions {
    /// Number of shooting sections; by default one per `section_spacing`,
    /// at most `max_sections` (the Jacobian is solved densely).
    pub sections: Option<usize>,
    pub section_spacing: f64,
    pub max_sections: usize,
    /// Integration tolerance for the shooting segments.
    pub tol: f64,
    /// Newton stops once the largest junction mismatch is below
    /// `newton_tol · (1 + max |p_k|)`.
    pub newton_tol: f64,
    pub max_iterations: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking factor and smallest step fraction.
    pub backtrack: f64,
    pub min_step: f64,
    /// Periods below this fraction of the guess count as collapsed.
    pub collapse_ratio: f64,
    /// Largest move of a section point in one Newton step; longer steps
    /// are scaled down before the line search.
    pub max_point_step: f64,
    /// Largest relative change of a transit time in one Newton step.
    pub max_transit_change: f64,
    /// Sampling stride of the dense loop.
    pub loop_stride: f64,
}

impl Default for CloseUpOptions {
    fn default() -> Self {
        CloseUpOptions {
            sections: None,
            section_spacing: 0.5,
            max_sections: 400,
            tol: 1e-12,
            newton_tol: 1e-11,
            max_iterations: 50,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-6,
            collapse_ratio: 0.1,
            max_point_step: 1.0,
            max_transit_change: 0.5,
            loop_stride: 0.01,
        }
    }
}

/// A periodic orbit found by multiple shooting: p_{k+1} = φ_{h_k}(p_k)
/// cyclically, with p_0 the anchor and Θ = Σ h_k the period.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub anchor: DVector<f64>,
    pub period: f64,
    /// Section points p_k and transit times h_k.
    pub points: Vec<DVector<f64>>,
    pub transits: Vec<f64>,
    /// max_k |φ_{h_k}(p_k) − p_{k+1}|.
    pub residual: f64,
    /// Normal return matrix in the frame at the anchor.
    pub monodromy: DMatrix<f64>,
    /// log|μ_i| / Θ of the normal Floquet multipliers, ascending.
    pub floquet_lognorms: Vec<f64>,
    /// Dense samples over [0, Θ], ending back at the anchor.
    pub loop_orbit: OrbitSegment,
    pub iterations: usize,
    /// Duration of the pseudo-orbit the solve started from.
    pub guess_duration: f64,
}

/// The serializable part of a [`PeriodicOrbit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbitSummary {
    pub anchor: Vec<f64>,
    pub period: f64,
    pub residual: f64,
    pub floquet_lognorms: Vec<f64>,
    pub iterations: usize,
    pub sections: usize,
    pub guess_duration: f64,
}

impl PeriodicOrbit {
    pub fn summary(&self) -> PeriodicOrbitSummary {
        PeriodicOrbitSummary {
            anchor: self.anchor.as_slice().to_vec(),
            period: self.period,
            residual: self.residual,
            floquet_lognorms: self.floquet_lognorms.clone(),
            iterations: self.iterations,
            sections: self.points.len(),
            guess_duration: self.guess_duration,
        }
    }

    /// No Floquet exponent within `band` of zero.
    pub fn is_hyperbolic(&self, band: f64) -> bool {
        self.floquet_lognorms.iter().all(|l| l.abs() >= band)
    }
}

struct Shots {
    ends: Vec<DVector<f64>>,
    tangents: Vec<DMatrix<f64>>,
}

fn shoot(system: &dyn FlowSystem, points: &[DVector<f64>], transits: &[f64], tol: f64) -> Result<Shots, ShadowError> {
    let results: Result<Vec<_>, _> = points
        .par_iter()
        .zip(transits.par_iter())
        .map(|(p, &h)| flow_and_tangent(system, p.as_slice(), h, tol))
        .collect();
    let (ends, tangents) = results?.into_iter().unzip();
    Ok(Shots { ends, tangents })
}

/// Junction mismatches followed by section offsets.
fn residual_vector(
    points: &[DVector<f64>],
    ends: &[DVector<f64>],
    anchors: &[DVector<f64>],
    normals: &[DVector<f64>],
) -> DVector<f64> {
    let m = points.len();
    let d = points[0].len();
    let mut f = DVector::zeros(m * (d + 1));
    for k in 0..m {
        let next = &points[(k + 1) % m];
        f.rows_mut(k * d, d).copy_from(&(&ends[k] - next));
        f[m * d + k] = normals[k].dot(&(&points[k] - &anchors[k]));
    }
    f
}

fn junction_residual(points: &[DVector<f64>], ends: &[DVector<f64>]) -> f64 {
    let m = points.len();
    (0..m).map(|k| (&ends[k] - &points[(k + 1) % m]).norm()).fold(0.0, f64::max)
}

/// Closes the pseudo-orbit `guess` (whose last state should be near its
/// first) into a periodic orbit.
///
/// Unknowns are m section points p_k and m transit times h_k; equations are
/// φ_{h_k}(p_k) = p_{k+1} (indices mod m) and ⟨p_k − a_k, n_k⟩ = 0, where a_k
/// are samples of the guess and n_k the flow directions there. The sections
/// fix the phase, and the Jacobian blocks are the tangent maps Φ_{h_k}(p_k),
/// −I and the vector field at the segment ends. Steps are damped by Armijo
/// backtracking.
pub fn close_up(guess: &OrbitSegment, opts: &CloseUpOptions) -> Result<PeriodicOrbit, ShadowError> {
    let system = guess.system.as_ref();
    let length = guess.duration();
    if guess.len() < 2 || !(length > 0.0) {
        return Err(ShadowError::InvalidArgument("the guess needs at least two samples".into()));
    }
    let m = opts
        .sections
        .unwrap_or_else(|| ((length / opts.section_spacing).round() as usize).min(opts.max_sections))
        .clamp(1, guess.len() - 1);
    let t0 = guess.times[0];
    let mut idx: Vec<usize> = (0..m).map(|k| guess.index_at(t0 + length * k as f64 / m as f64)).collect();
    idx.dedup();
    let m = idx.len();
    let anchors: Vec<DVector<f64>> = idx.iter().map(|&i| guess.states[i].clone()).collect();
    let normals: Vec<DVector<f64>> = anchors
        .iter()
        .map(|a| {
            let v = system.eval(a.as_slice());
            let s = v.norm();
            if s < ALPHA_MIN {
                Err(ShadowError::InvalidArgument(format!("section anchor with speed {s:e}")))
            } else {
                Ok(v / s)
            }
        })
        .collect::<Result<_, _>>()?;
    let mut points = anchors.clone();
    let mut transits: Vec<f64> = (0..m)
        .map(|k| {
            let end = if k + 1 < m { guess.times[idx[k + 1]] } else { *guess.times.last().unwrap() };
            end - guess.times[idx[k]]
        })
        .collect();
    let d = system.dim();

    let mut shots = shoot(system, &points, &transits, opts.tol)?;
    let mut f = residual_vector(&points, &shots.ends, &anchors, &normals);
    let scale = |pts: &[DVector<f64>]| 1.0 + pts.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let mut iterations = 0;
    loop {
        let residual = junction_residual(&points, &shots.ends);
        if residual <= opts.newton_tol * scale(&points) {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(ShadowError::NoConvergence { iterations, residual });
        }
        iterations += 1;

        let size = m * (d + 1);
        let mut jac = DMatrix::zeros(size, size);
        for k in 0..m {
            let next = (k + 1) % m;
            let mut block = jac.view_mut((k * d, k * d), (d, d));
            block += &shots.tangents[k];
            let mut block = jac.view_mut((k * d, next * d), (d, d));
            block -= DMatrix::<f64>::identity(d, d);
            let field = system.eval(shots.ends[k].as_slice());
            jac.view_mut((k * d, m * d + k), (d, 1)).copy_from(&field);
            jac.view_mut((m * d + k, k * d), (1, d)).copy_from(&normals[k].transpose());
        }
        let Some(delta) = jac.lu().solve(&(-&f)) else {
            return Err(ShadowError::NoConvergence { iterations, residual });
        };

        let merit = f.norm_squared();
        let point_move = (0..m).map(|k| delta.rows(k * d, d).norm()).fold(0.0, f64::max);
        let transit_move = (0..m).map(|k| delta[m * d + k].abs() / transits[k]).fold(0.0, f64::max);
        let mut step = 1.0f64
            .min(opts.max_point_step / point_move.max(f64::MIN_POSITIVE))
            .min(opts.max_transit_change / transit_move.max(f64::MIN_POSITIVE));
        loop {
            let trial_points: Vec<DVector<f64>> =
                (0..m).map(|k| &points[k] + step * delta.rows(k * d, d)).collect();
            let trial_transits: Vec<f64> = (0..m).map(|k| transits[k] + step * delta[m * d + k]).collect();
            if trial_transits.iter().all(|&h| h > 0.0) {
                if let Ok(trial) = shoot(system, &trial_points, &trial_transits, opts.tol) {
                    let trial_f = residual_vector(&trial_points, &trial.ends, &anchors, &normals);
                    if trial_f.norm_squared() <= (1.0 - 2.0 * opts.armijo * step) * merit {
                        points = trial_points;
                        transits = trial_transits;
                        shots = trial;
                        f = trial_f;
                        break;
                    }
                }
            }
            step *= opts.backtrack;
            if step < opts.min_step {
                return Err(ShadowError::NoConvergence { iterations, residual });
            }
        }
    }

    let period: f64 = transits.iter().sum();
    if period < opts.collapse_ratio * length {
        return Err(ShadowError::Collapsed { period, expected: length });
    }
    let residual = junction_residual(&points, &shots.ends);

    let loop_orbit = dense_loop(&guess.system, &points, &transits, opts)?;
    let (monodromy, floquet) = loop_floquet(&loop_orbit, period)?;
    Ok(PeriodicOrbit {
        anchor: points[0].clone(),
        period,
        points,
        transits,
        residual,
        monodromy,
        floquet_lognorms: floquet,
        loop_orbit,
        iterations,
        guess_duration: length,
    })
}

/// Normal return matrix at the anchor and Floquet exponents, from the
/// linear Poincaré cocycle along the dense loop. Short steps keep every
/// factor well conditioned even when the multipliers over a whole section
/// differ by more than the double-precision range; the frame carried around
/// the loop is mapped back onto the anchor frame by one orthogonal step.
fn loop_floquet(loop_orbit: &OrbitSegment, period: f64) -> Result<(DMatrix<f64>, Vec<f64>), ShadowError> {
    let chain = build_chain(loop_orbit, false, ALPHA_MIN)?;
    let first = &chain.frames[0];
    let last = chain.frames.last().expect("chains have frames");
    let closure = first.basis.transpose() * &last.basis;
    let mut steps = chain.steps.clone();
    steps.push(closure);
    let n = chain.normal_dim();
    let monodromy = steps.iter().fold(DMatrix::identity(n, n), |acc, a| a * acc);
    Ok((monodromy, floquet_lognorms(&steps, period)))
}

/// Samples the loop on the uniform grid t_j = jΘ/N, N = ⌈Θ/stride⌉. Each
/// grid time is evaluated from the section point it follows, so unstable
/// loops far longer than the Lyapunov time are resolved accurately. The last
/// sample is the anchor itself at t = Θ.
fn dense_loop(
    system: &crate::flow::SharedSystem,
    points: &[DVector<f64>],
    transits: &[f64],
    opts: &CloseUpOptions,
) -> Result<OrbitSegment, ShadowError> {
    let period: f64 = transits.iter().sum();
    let n = ((period / opts.loop_stride).ceil() as usize).max(1);
    let h = period / n as f64;
    let grid: Vec<f64> = (0..n).map(|j| j as f64 * h).collect();
    let mut offsets = Vec::with_capacity(transits.len());
    let mut acc = 0.0;
    for t in transits {
        offsets.push(acc);
        acc += t;
    }
    let pieces: Result<Vec<Vec<DVector<f64>>>, ShadowError> = (0..points.len())
        .into_par_iter()
        .map(|k| {
            let lo = offsets[k];
            let hi = if k + 1 == points.len() { f64::INFINITY } else { offsets[k + 1] };
            let local: Vec<f64> = grid.iter().filter(|&&t| t >= lo && t < hi).map(|t| (t - lo).min(transits[k])).collect();
            let (states, _) = integrate_at(system, points[k].as_slice(), transits[k], &local, opts.tol)?;
            Ok(states)
        })
        .collect();
    let mut states: Vec<DVector<f64>> = pieces?.into_iter().flatten().collect();
    let mut times = grid;
    times.push(period);
    states.push(points[0].clone());
    Ok(OrbitSegment::from_samples(system.clone(), times, states, opts.tol)?)
}

/// Floquet exponents of a periodic cocycle A_{m−1}···A_0 over period Θ:
/// log moduli of the eigenvalues divided by Θ, ascending.
///
/// Periodic QR: sweeping the loop repeatedly with re-orthonormalization
/// drives the frame to the periodic Schur vectors, after which one sweep's
/// log R diagonals are the log moduli. Equal moduli (complex pairs) do not
/// converge; the average over the later sweeps is used then. Works when the
/// multipliers span far more than the double-precision range.
pub fn floquet_lognorms(steps: &[DMatrix<f64>], period: f64) -> Vec<f64> {
    const MAX_SWEEPS: usize = 60;
    let n = steps[0].nrows();
    let mut q = DMatrix::identity(n, n);
    let mut previous: Option<Vec<f64>> = None;
    let mut tail_sum = vec![0.0; n];
    let mut tail_count = 0;
    for sweep in 0..MAX_SWEEPS {
        let mut logs = vec![0.0; n];
        for a in steps {
            let (qn, r) = qr_positive(&(a * &q));
            for (l, v) in logs.iter_mut().zip(r.iter()) {
                *l += v.ln();
            }
            q = qn;
        }
        if let Some(prev) = &previous {
            if prev.iter().zip(&logs).all(|(a, b)| (a - b).abs() <= 1e-10 * (1.0 + b.abs())) {
                return sorted(logs, period);
            }
        }
        if sweep >= MAX_SWEEPS / 2 {
            for (s, l) in tail_sum.iter_mut().zip(&logs) {
                *s += l;
            }
            tail_count += 1;
        }
        previous = Some(logs);
    }
    sorted(tail_sum.into_iter().map(|s| s / tail_count as f64).collect(), period)
}

fn sorted(logs: Vec<f64>, period: f64) -> Vec<f64> {
    let mut out: Vec<f64> = logs.into_iter().map(|l| l / period).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// The junction residual recomputed with the RK4 reference integrator at a
/// tolerance `factor` times tighter.
pub fn independent_residual(orbit: &PeriodicOrbit, tol: f64, factor: f64) -> Result<f64, ShadowError> {
    let system = orbit.loop_orbit.system.as_ref();
    let m = orbit.points.len();
    let ends: Result<Vec<DVector<f64>>, _> = (0..m)
        .into_par_iter()
        .map(|k| flow_rk4(system, orbit.points[k].as_slice(), orbit.transits[k], tol / factor))
        .collect();
    Ok(junction_residual(&orbit.points, &ends?))
}
