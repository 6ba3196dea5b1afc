use serde::{Deserialize, Serialize};

use super::{DiscreteMeasure, MeasureError, TestBasis};
use crate::flow::OrbitSegment;
use crate::linalg::compensated_sum;

/// Longest trace kept in a [`BirkhoffReport`].
const TRACE_LEN: usize = 512;

/// Neumaier accumulators for several sums advanced together.
struct Accumulators {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl Accumulators {
    fn new(n: usize) -> Self {
        Accumulators { sum: vec![0.0; n], comp: vec![0.0; n] }
    }

    fn add(&mut self, i: usize, v: f64) {
        let s = self.sum[i];
        let t = s + v;
        if s.abs() >= v.abs() {
            self.comp[i] += (s - t) + v;
        } else {
            self.comp[i] += (v - t) + s;
        }
        self.sum[i] = t;
    }

    fn value(&self, i: usize) -> f64 {
        self.sum[i] + self.comp[i]
    }
}

fn check_box(basis: &TestBasis, mu: &DiscreteMeasure) -> Result<(), MeasureError> {
    match mu.points().iter().position(|x| !basis.bounds.contains(x.as_slice())) {
        Some(index) => Err(MeasureError::OutOfBox { index }),
        None => Ok(()),
    }
}

/// ∫ f_{idx+1} dμ.
pub fn integrate_basis(basis: &TestBasis, idx: usize, mu: &DiscreteMeasure) -> Result<f64, MeasureError> {
    if idx >= basis.count_available() {
        return Err(MeasureError::InvalidArgument(format!("basis has {} functions", basis.count_available())));
    }
    check_box(basis, mu)?;
    Ok(mu.integrate(|x| basis.eval(idx, x.as_slice())))
}

/// ∫ f_1 dμ, …, ∫ f_n dμ in one pass over the atoms.
pub(crate) fn basis_integrals(basis: &TestBasis, n: usize, mu: &DiscreteMeasure) -> Result<Vec<f64>, MeasureError> {
    check_box(basis, mu)?;
    let mut acc = Accumulators::new(n);
    for (x, w) in mu.points().iter().zip(mu.weights()) {
        for (i, f) in basis.eval_all(n, x.as_slice()).into_iter().enumerate() {
            acc.add(i, w * f);
        }
    }
    Ok((0..n).map(|i| acc.value(i)).collect())
}

/// Truncated weak* distance with its tail bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmReport {
    pub n: usize,
    /// Σ_{i ≤ n} |∫f_i dμ − ∫f_i dν| / (2^i ‖f_i‖).
    pub value: f64,
    /// 2^{−(n−1)} ≥ Σ_{i > n} of the same terms, since each is at most 2^{−(i−1)}.
    pub tail_bound: f64,
    pub per_i_terms: Vec<f64>,
}

impl DmReport {
    /// value + tail_bound, an upper bound for the full distance.
    pub fn upper(&self) -> f64 {
        self.value + self.tail_bound
    }
}

pub fn dm_distance(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    basis: &TestBasis,
    n: usize,
) -> Result<DmReport, MeasureError> {
    if n == 0 || n > basis.count_available() {
        return Err(MeasureError::InvalidArgument(format!(
            "n = {n} outside 1..={}",
            basis.count_available()
        )));
    }
    let a = basis_integrals(basis, n, mu)?;
    let b = basis_integrals(basis, n, nu)?;
    let per_i_terms: Vec<f64> = (0..n)
        .map(|i| (a[i] - b[i]).abs() / (2f64.powi(i as i32 + 1) * basis.sup_norms[i]))
        .collect();
    Ok(DmReport {
        n,
        value: compensated_sum(per_i_terms.iter().copied()),
        tail_bound: 2f64.powi(-(n as i32 - 1)),
        per_i_terms,
    })
}

/// The Birkhoff threshold (ε/4n) · min_{i ≤ n} 2^i ‖f_i‖.
fn birkhoff_threshold(basis: &TestBasis, n: usize, epsilon: f64) -> f64 {
    let m = (0..n).map(|i| 2f64.powi(i as i32 + 1) * basis.sup_norms[i]).fold(f64::INFINITY, f64::min);
    epsilon / (4.0 * n as f64) * m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffOptions {
    pub epsilon: f64,
    /// Evaluate the running averages only at T = c, 2c, …; every sample
    /// time is a checkpoint when unset.
    pub checkpoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffReport {
    pub n: usize,
    pub epsilon: f64,
    pub threshold: f64,
    /// |⟨f_i⟩_T − ∫f_i dμ_ref| at the full segment length.
    pub final_deviations: Vec<f64>,
    /// Smallest checkpoint T₁ such that every deviation stays below the
    /// threshold at all checkpoints T ≥ T₁; `None` if the last one fails.
    pub t1: Option<f64>,
    /// (T, max_i deviation) at up to 512 checkpoints.
    pub trace: Vec<(f64, f64)>,
}

/// Running time averages ⟨f_i⟩_T = (1/T) ∫_0^T f_i(φ_t x) dt along the segment
/// against the reference integrals ∫ f_i dμ_ref.
pub fn birkhoff_check(
    segment: &OrbitSegment,
    mu_ref: &DiscreteMeasure,
    basis: &TestBasis,
    n: usize,
    opts: &BirkhoffOptions,
) -> Result<BirkhoffReport, MeasureError> {
    if n == 0 || n > basis.count_available() || segment.len() < 2 || !(opts.epsilon > 0.0) {
        return Err(MeasureError::InvalidArgument("birkhoff_check needs n ≥ 1, ε > 0 and two samples".into()));
    }
    if let Some(c) = opts.checkpoint {
        if !(c > 0.0) {
            return Err(MeasureError::InvalidArgument("checkpoint spacing must be positive".into()));
        }
    }
    if let Some(index) = segment.states.iter().position(|x| !basis.bounds.contains(x.as_slice())) {
        return Err(MeasureError::OutOfBox { index });
    }
    let reference = basis_integrals(basis, n, mu_ref)?;
    let threshold = birkhoff_threshold(basis, n, opts.epsilon);
    let t0 = segment.times[0];
    let values: Vec<Vec<f64>> = segment.states.iter().map(|x| basis.eval_all(n, x.as_slice())).collect();

    // Cumulative trapezoid integrals at every sample.
    let m = segment.len();
    let mut acc = Accumulators::new(n);
    let mut cumulative = vec![vec![0.0; n]; m];
    for k in 0..m - 1 {
        let h = segment.times[k + 1] - segment.times[k];
        for i in 0..n {
            acc.add(i, 0.5 * h * (values[k][i] + values[k + 1][i]));
            cumulative[k + 1][i] = acc.value(i);
        }
    }
    let deviation = |integrals: &[f64], span: f64| -> Vec<f64> {
        integrals.iter().zip(&reference).map(|(a, r)| (a / span - r).abs()).collect()
    };

    let span = segment.duration();
    let checkpoints: Vec<(f64, Vec<f64>)> = match opts.checkpoint {
        None => (1..m).map(|k| (segment.times[k] - t0, cumulative[k].clone())).collect(),
        Some(c) => {
            let count = (span / c + 1e-9).floor() as usize;
            let mut k = 0;
            (1..=count)
                .map(|j| {
                    let t = (j as f64 * c).min(span);
                    while k + 2 < m && segment.times[k + 1] - t0 < t {
                        k += 1;
                    }
                    let (ta, tb) = (segment.times[k] - t0, segment.times[k + 1] - t0);
                    let s = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
                    let integrals = (0..n).map(|i| cumulative[k][i] + s * (cumulative[k + 1][i] - cumulative[k][i])).collect();
                    (t, integrals)
                })
                .collect()
        }
    };
    let maxima: Vec<(f64, f64)> = checkpoints
        .iter()
        .map(|(t, integrals)| (*t, deviation(integrals, *t).into_iter().fold(0.0, f64::max)))
        .collect();
    let t1 = match maxima.iter().rposition(|(_, d)| *d >= threshold) {
        None => maxima.first().map(|p| p.0),
        Some(last_bad) => maxima.get(last_bad + 1).map(|p| p.0),
    };
    let stride = maxima.len().div_ceil(TRACE_LEN).max(1);
    let mut trace: Vec<(f64, f64)> = maxima.iter().step_by(stride).copied().collect();
    if let Some(last) = maxima.last() {
        if trace.last() != Some(last) {
            trace.push(*last);
        }
    }
    Ok(BirkhoffReport {
        n,
        epsilon: opts.epsilon,
        threshold,
        final_deviations: deviation(&cumulative[m - 1], span),
        t1,
        trace,
    })
}

/// The smallness constants the final estimate needs, computed instead of
/// assumed: γ with (2K + 1)γ below the Birkhoff threshold, and the ξ ≤ γ
/// for which |x − y| ≤ ξ K₀ forces |f_i(x) − f_i(y)| < γ, i ≤ n, from the
/// Lipschitz constants of the cosine products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityDiagnostics {
    pub n: usize,
    pub epsilon: f64,
    pub threshold: f64,
    /// K = max_{i ≤ n} ‖f_i‖.
    pub k_norm: f64,
    /// Supremum of admissible γ: threshold / (2K + 1).
    pub gamma: f64,
    pub lipschitz_max: f64,
    /// Speed bound K₀ used for ξ (the largest measured |X| on the orbit).
    pub k0: f64,
    pub xi: f64,
}

pub fn continuity_diagnostics(basis: &TestBasis, n: usize, epsilon: f64, k0: f64) -> ContinuityDiagnostics {
    let threshold = birkhoff_threshold(basis, n, epsilon);
    let k_norm = basis.max_norm(n);
    let gamma = threshold / (2.0 * k_norm + 1.0);
    let lipschitz_max = (0..n).map(|i| basis.lipschitz(i)).fold(0.0, f64::max);
    let xi = if lipschitz_max > 0.0 && k0 > 0.0 { gamma.min(gamma / (lipschitz_max * k0)) } else { gamma };
    ContinuityDiagnostics { n, epsilon, threshold, k_norm, gamma, lipschitz_max, k0, xi }
}
