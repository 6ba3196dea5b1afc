use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::domination::{domination_certificate, DominationCertificate, DominationOptions};
use super::qr::qr_exponents;
use super::{SpectrumError, SpectrumEstimate};
use crate::cocycle::CocycleChain;
use crate::linalg::{min_angle, orthonormalize, right_singular_sorted, left_singular_sorted, subspace_angle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplittingOptions {
    /// Burn-in at each end of the chain, in units of 1/(λ⁺_min − λ⁻_max).
    pub burn_in_factor: f64,
    /// Smallest admissible min_i |λ_i|.
    pub min_gap: f64,
    pub domination: DominationOptions,
}

impl Default for SplittingOptions {
    fn default() -> Self {
        SplittingOptions {
            burn_in_factor: 30.0,
            min_gap: 0.05,
            domination: DominationOptions::default(),
        }
    }
}

/// Per-sample stable and unstable bundles of a chain, in frame coordinates.
#[derive(Debug, Clone)]
pub struct SplittingEstimate {
    /// dim E^s.
    pub index: usize,
    /// (d−1) × index orthonormal bases, one per sample.
    pub es: Vec<DMatrix<f64>>,
    /// (d−1) × (d−1−index) orthonormal bases, one per sample.
    pub eu: Vec<DMatrix<f64>>,
    /// False inside the burn-in regions at either end.
    pub converged: Vec<bool>,
    pub spectrum: SpectrumEstimate,
    pub gap: f64,
    /// Smallest angle between E^s and E^u over converged samples away from
    /// the singularities.
    pub theta_min: f64,
    /// Largest angle between A_i E(i) and E(i+1) over converged samples.
    pub invariance_defect: f64,
    pub domination: DominationCertificate,
}

impl SplittingEstimate {
    pub fn converged_range(&self) -> Option<(usize, usize)> {
        let first = self.converged.iter().position(|&c| c)?;
        let last = self.converged.iter().rposition(|&c| c)?;
        Some((first, last))
    }
}

fn inverse(a: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>, SpectrumError> {
    a.clone()
        .try_inverse()
        .ok_or(SpectrumError::IllConditioned { step, value: 0.0 })
}

/// Step inverses A_i⁻¹ for a whole chain.
pub(crate) fn step_inverses(chain: &CocycleChain) -> Result<Vec<DMatrix<f64>>, SpectrumError> {
    chain.steps.par_iter().enumerate().map(|(i, a)| inverse(a, i)).collect()
}

/// The product of `steps` (first applied first), rescaled by a positive
/// factor after every multiplication. Singular directions are unaffected.
fn scaled_product<'a, I: IntoIterator<Item = &'a DMatrix<f64>>>(n: usize, steps: I) -> DMatrix<f64> {
    steps.into_iter().fold(DMatrix::identity(n, n), |acc, a| {
        let p = a * acc;
        let s = p.amax();
        if s > 0.0 {
            p / s
        } else {
            p
        }
    })
}

/// Sample index reached after `time` from `start` moving forward.
fn index_after(times: &[f64], start: usize, time: f64) -> usize {
    let target = times[start] + time;
    times.partition_point(|&t| t < target).min(times.len() - 1)
}

/// Sample index reached after `time` from `end` moving backward.
fn index_before(times: &[f64], end: usize, time: f64) -> usize {
    let target = times[end] - time;
    times.partition_point(|&t| t <= target).saturating_sub(1).min(end)
}

/// Reconstructs E^s ⊕ E^u by subspace iteration: E^u by pushing a
/// k_u-dimensional space forward with A_i, E^s by pushing an
/// index-dimensional space backward with A_i⁻¹. Both start from finite-time
/// singular directions, so diagonal cocycles are reproduced exactly.
pub fn oseledec_splitting(
    chain: &CocycleChain,
    index: usize,
    opts: &SplittingOptions,
) -> Result<SplittingEstimate, SpectrumError> {
    let spectrum = qr_exponents(chain)?;
    let n = chain.normal_dim();
    if index >= n {
        return Err(SpectrumError::AllStable);
    }
    if index == 0 {
        return Err(SpectrumError::AllUnstable);
    }
    let gap = spectrum.gap();
    if gap < opts.min_gap {
        return Err(SpectrumError::NoGap { gap });
    }
    let negative = spectrum.count_negative();
    if negative != index {
        return Err(SpectrumError::IndexMismatch { requested: index, negative });
    }
    let k_u = n - index;
    let spacing = spectrum.exponents[index] - spectrum.exponents[index - 1];
    let burn = opts.burn_in_factor / spacing;
    let m = chain.len();
    let times = &chain.times;
    let inverses = step_inverses(chain)?;

    let front = index_after(times, 0, burn);
    let back = index_before(times, m, burn);

    let mut eu = Vec::with_capacity(m + 1);
    let forward = scaled_product(n, &chain.steps[..front.clamp(1, m)]);
    let (right, _) = right_singular_sorted(&forward);
    eu.push(right.columns(0, k_u).into_owned());
    for (i, a) in chain.steps.iter().enumerate() {
        let next = orthonormalize(&(a * &eu[i]));
        eu.push(next);
    }

    let mut es = vec![DMatrix::zeros(0, 0); m + 1];
    let start = back.min(m.saturating_sub(1));
    let backward = scaled_product(n, inverses[start..m].iter().rev());
    let (right, _) = right_singular_sorted(&backward);
    es[m] = right.columns(0, index).into_owned();
    for i in (0..m).rev() {
        es[i] = orthonormalize(&(&inverses[i] * &es[i + 1]));
    }

    let converged: Vec<bool> = (0..=m).map(|i| i >= front && i <= back).collect();
    let speed_floor = opts.domination.speed_floor;
    let theta_min = (0..=m)
        .into_par_iter()
        .filter(|&i| converged[i] && chain.speeds[i] >= speed_floor)
        .map(|i| min_angle(&es[i], &eu[i]))
        .reduce(|| std::f64::consts::FRAC_PI_2, f64::min);
    let invariance_defect = (0..m)
        .into_par_iter()
        .filter(|&i| converged[i] && converged[i + 1])
        .map(|i| {
            let a = &chain.steps[i];
            let ds = subspace_angle(&orthonormalize(&(a * &es[i])), &es[i + 1]);
            let du = subspace_angle(&orthonormalize(&(a * &eu[i])), &eu[i + 1]);
            ds.max(du)
        })
        .reduce(|| 0.0, f64::max);

    let mut split = SplittingEstimate {
        index,
        es,
        eu,
        converged,
        spectrum,
        gap,
        theta_min,
        invariance_defect,
        domination: DominationCertificate::default(),
    };
    split.domination = domination_certificate(&split, chain, &opts.domination)?;
    Ok(split)
}

/// A splitting read off finite windows of the cocycle, independent of the
/// subspace iteration: E(i) is the orthogonal complement of the top k_u
/// right singular directions of A over [t_i, t_i + L], and F(i) the top k_u
/// left singular directions of A over [t_i − L, t_i]. Samples closer than L
/// to either end get `None`.
pub fn finite_window_splitting(
    chain: &CocycleChain,
    index: usize,
    horizon: f64,
) -> Vec<Option<(DMatrix<f64>, DMatrix<f64>)>> {
    let m = chain.len();
    let n = chain.normal_dim();
    let k_u = n - index;
    let times = &chain.times;
    (0..=m)
        .into_par_iter()
        .map(|i| {
            if times[i] - times[0] < horizon || times[m] - times[i] < horizon {
                return None;
            }
            let ahead = index_after(times, i, horizon);
            let behind = index_before(times, i, horizon);
            let (right, _) = right_singular_sorted(&scaled_product(n, &chain.steps[i..ahead]));
            let e = right.columns(k_u, index).into_owned();
            let (left, _) = left_singular_sorted(&scaled_product(n, &chain.steps[behind..i]));
            let f = left.columns(0, k_u).into_owned();
            Some((e, f))
        })
        .collect()
}

/// Per-sample agreement between the subspace-iteration splitting and the
/// finite-window splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplittingAgreement {
    /// Samples compared (converged, away from singularities, both defined).
    pub compared: usize,
    /// Fraction of those with both angles ≤ `tolerance`.
    pub fraction: f64,
    pub tolerance: f64,
    pub median_angle: f64,
}

pub fn compare_splittings(
    split: &SplittingEstimate,
    chain: &CocycleChain,
    horizon: f64,
    tolerance: f64,
    speed_floor: f64,
) -> SplittingAgreement {
    let window = finite_window_splitting(chain, split.index, horizon);
    let mut angles: Vec<f64> = window
        .par_iter()
        .enumerate()
        .filter_map(|(i, w)| {
            let (e, f) = w.as_ref()?;
            if !split.converged[i] || chain.speeds[i] < speed_floor {
                return None;
            }
            Some(subspace_angle(e, &split.es[i]).max(subspace_angle(f, &split.eu[i])))
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    let compared = angles.len();
    let within = angles.iter().filter(|&&a| a <= tolerance).count();
    SplittingAgreement {
        compared,
        fraction: if compared == 0 { 0.0 } else { within as f64 / compared as f64 },
        tolerance,
        median_angle: angles.get(compared / 2).copied().unwrap_or(f64::NAN),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cocycle::NormalFrame;
    use nalgebra::DVector;

    /// A chain with the given constant step and trivial frames.
    pub(crate) fn constant_chain(a: DMatrix<f64>, steps: usize) -> CocycleChain {
        let n = a.nrows();
        let frame = NormalFrame {
            base_point: DVector::zeros(n + 1),
            flow_dir: DVector::zeros(n + 1),
            basis: DMatrix::zeros(n + 1, n),
            speed: 1.0,
        };
        let logn = crate::linalg::norm2(&a).ln();
        let logm = crate::linalg::mininorm(&a).ln();
        CocycleChain {
            frames: vec![frame; steps + 1],
            steps: vec![a; steps],
            scaled: true,
            dts: vec![1.0; steps],
            times: (0..=steps).map(|k| k as f64).collect(),
            speeds: vec![1.0; steps + 1],
            log_norms: vec![logn; steps],
            log_mininorms: vec![logm; steps],
            rebuilt: Vec::new(),
        }
    }

    #[test]
    fn diagonal_chain_bundles_are_axes() {
        let chain = constant_chain(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])), 200);
        let split = oseledec_splitting(&chain, 1, &SplittingOptions::default()).unwrap();
        for i in 0..=chain.len() {
            // Exact up to the rounding of one orthonormalization.
            assert!((split.es[i].column(0).map(f64::abs) - DVector::from_vec(vec![0.0, 1.0])).amax() < 1e-15);
            assert!((split.eu[i].column(0).map(f64::abs) - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-15);
        }
        assert!((split.theta_min - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(split.invariance_defect < 1e-12);
    }

    #[test]
    fn all_stable_is_rejected() {
        let chain = constant_chain(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])), 200);
        assert!(matches!(oseledec_splitting(&chain, 2, &SplittingOptions::default()), Err(SpectrumError::AllStable)));
        assert!(matches!(oseledec_splitting(&chain, 1, &SplittingOptions::default()), Err(SpectrumError::IndexMismatch { .. })));
    }

    #[test]
    fn small_gap_is_rejected() {
        let chain = constant_chain(DMatrix::from_diagonal(&DVector::from_vec(vec![1.01, 0.5])), 200);
        assert!(matches!(oseledec_splitting(&chain, 1, &SplittingOptions::default()), Err(SpectrumError::NoGap { .. })));
    }

    #[test]
    fn finite_window_splitting_on_diagonal() {
        let chain = constant_chain(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])), 50);
        let w = finite_window_splitting(&chain, 1, 5.0);
        assert!(w[0].is_none() && w[50].is_none());
        let (e, f) = w[25].as_ref().unwrap();
        assert!((e[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((f[(0, 0)].abs() - 1.0).abs() < 1e-14);
    }
}
