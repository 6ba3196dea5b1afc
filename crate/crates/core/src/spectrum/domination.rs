use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::splitting::{step_inverses, SplittingEstimate};
use super::SpectrumError;
use crate::cocycle::CocycleChain;
use crate::flow::ALPHA_MIN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominationOptions {
    /// Longest window t_j − t_i considered.
    pub window_cap: f64,
    /// Spacing of window endpoints, in time.
    pub anchor_stride: f64,
    /// Required domination rate.
    pub lambda_min: f64,
    /// Largest admissible fit residual (log scale).
    pub max_residual: f64,
    /// Window endpoints slower than this are excluded.
    pub speed_floor: f64,
}

impl Default for DominationOptions {
    fn default() -> Self {
        DominationOptions {
            window_cap: 50.0,
            anchor_stride: 0.5,
            lambda_min: 0.05,
            max_residual: 0.5,
            speed_floor: 10.0 * ALPHA_MIN,
        }
    }
}

/// Fitted constants of ‖ψ*_t|_E(x)‖ · ‖ψ*_{−t}|_F(φ_t x)‖ ≤ C e^{−λt}.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DominationCertificate {
    pub c: f64,
    pub lambda: f64,
    /// Root-mean-square deviation of the window data from the fitted line
    /// divided by √(mean window length), in log scale.
    pub residual: f64,
    pub windows: usize,
    pub max_window: f64,
    pub pass: bool,
}

/// log m(P|_E) for the accumulated product P applied to the subspace spanned
/// by `basis`, recorded at each requested step count. The running matrix is
/// rescaled after every step.
fn log_conorm<'a, I>(basis: &DMatrix<f64>, steps: I, record_at: &[usize]) -> Vec<f64>
where
    I: IntoIterator<Item = &'a DMatrix<f64>>,
{
    let mut out = Vec::with_capacity(record_at.len());
    let mut m = basis.clone();
    let mut log_scale = 0.0;
    let mut next = 0;
    for (k, a) in steps.into_iter().enumerate() {
        if next >= record_at.len() {
            break;
        }
        m = a * m;
        let s = m.amax();
        if s > 0.0 {
            m /= s;
            log_scale += s.ln();
        }
        while next < record_at.len() && record_at[next] == k + 1 {
            out.push(log_scale + crate::linalg::mininorm(&m).ln());
            next += 1;
        }
    }
    out
}

/// Least-squares fit of y ≈ a − λ t. Returns (a, λ).
pub(crate) fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mt, -slope)
}

/// Measures domination of E^s by E^u on windows [t_i, t_j] whose endpoints
/// lie on a grid of spacing `anchor_stride`, are converged samples and are
/// at least `speed_floor` fast.
pub fn domination_certificate(
    split: &SplittingEstimate,
    chain: &CocycleChain,
    opts: &DominationOptions,
) -> Result<DominationCertificate, SpectrumError> {
    let points = domination_windows(split, chain, opts)?;
    if points.is_empty() {
        return Ok(DominationCertificate::default());
    }
    let (a, slope_lambda) = fit_line(&points);
    let lambda = slope_lambda.max(0.0);
    let max_excess = points.iter().map(|(t, y)| y + lambda * t).fold(f64::NEG_INFINITY, f64::max);
    let c = max_excess.exp().max(1.0);
    let n = points.len() as f64;
    let mse = points.iter().map(|(t, y)| (y - (a - slope_lambda * t)).powi(2)).sum::<f64>() / n;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let residual = if mean_t > 0.0 { (mse / mean_t).sqrt() } else { mse.sqrt() };
    let max_window = points.iter().map(|p| p.0).fold(0.0, f64::max);
    Ok(DominationCertificate {
        c,
        lambda,
        residual,
        windows: points.len(),
        max_window,
        pass: lambda >= opts.lambda_min && residual <= opts.max_residual,
    })
}

/// The raw window data (t_j − t_i, log ‖A|_{E(i)}‖ + log ‖A⁻¹|_{F(j)}‖),
/// with A the cocycle from sample i to sample j.
///
/// Pushing E forward (or F backward) amplifies any rounding error along the
/// other bundle, so both norms are read off in the stable direction through
/// invariance: ‖A|_{E(i)}‖ = 1/m(A⁻¹|_{E(j)}) and ‖A⁻¹|_{F(j)}‖ = 1/m(A|_{F(i)}).
pub fn domination_windows(
    split: &SplittingEstimate,
    chain: &CocycleChain,
    opts: &DominationOptions,
) -> Result<Vec<(f64, f64)>, SpectrumError> {
    let m = chain.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mean_dt = chain.duration() / m as f64;
    let stride = ((opts.anchor_stride / mean_dt).round() as usize).max(1);
    let grid: Vec<usize> = (0..=m).step_by(stride).filter(|&i| split.converged[i]).collect();
    if grid.len() < 2 {
        return Ok(Vec::new());
    }
    let usable = |i: usize| chain.speeds[i] >= opts.speed_floor;
    let inverses = step_inverses(chain)?;
    let times = &chain.times;
    // For each grid anchor, the later grid points within the cap.
    let reach: Vec<Vec<usize>> = (0..grid.len())
        .map(|a| {
            (a + 1..grid.len())
                .take_while(|&b| times[grid[b]] - times[grid[a]] <= opts.window_cap + 1e-9)
                .collect()
        })
        .collect();
    let forward: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|a| {
            let i = grid[a];
            let record: Vec<usize> = reach[a].iter().map(|&b| grid[b] - i).collect();
            let end = record.last().map_or(i, |r| i + r);
            log_conorm(&split.eu[i], &chain.steps[i..end], &record)
        })
        .collect();
    // Backward from each anchor j to the earlier anchors i with j in reach[i].
    let behind: Vec<Vec<usize>> = {
        let mut v = vec![Vec::new(); grid.len()];
        for (a, r) in reach.iter().enumerate() {
            for &b in r {
                v[b].push(a);
            }
        }
        v.iter_mut().for_each(|list| list.reverse());
        v
    };
    let backward: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|b| {
            let j = grid[b];
            let record: Vec<usize> = behind[b].iter().map(|&a| j - grid[a]).collect();
            let start = record.last().map_or(j, |r| j - r);
            log_conorm(&split.es[j], inverses[start..j].iter().rev(), &record)
        })
        .collect();
    let mut points = Vec::new();
    for (a, r) in reach.iter().enumerate() {
        for (slot, &b) in r.iter().enumerate() {
            let (i, j) = (grid[a], grid[b]);
            if !usable(i) || !usable(j) {
                continue;
            }
            let back_slot = behind[b].iter().position(|&x| x == a).expect("symmetric reach");
            points.push((times[j] - times[i], -forward[a][slot] - backward[b][back_slot]));
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::super::splitting::{oseledec_splitting, SplittingOptions};
    use super::*;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn chain_of(a: DMatrix<f64>, steps: usize) -> CocycleChain {
        super::super::splitting::tests::constant_chain(a, steps)
    }

    #[test]
    fn diagonal_chain_certificate() {
        let chain = chain_of(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])), 300);
        let split = oseledec_splitting(&chain, 1, &SplittingOptions::default()).unwrap();
        let cert = split.domination;
        assert!((cert.lambda - 2.0 * 2f64.ln()).abs() < 1e-12, "{cert:?}");
        assert!((cert.c - 1.0).abs() < 1e-12);
        assert!(cert.residual < 1e-12);
        assert!(cert.pass);
        assert_eq!(cert.max_window, 50.0);
    }

    #[test]
    fn conjugation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = DMatrix::from_fn(2, 2, |_, _| StandardNormal.sample(&mut rng));
        let q = crate::linalg::orthonormalize(&g);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let chain = chain_of(&q * d * q.transpose(), 300);
        let split = oseledec_splitting(&chain, 1, &SplittingOptions::default()).unwrap();
        assert!((split.domination.lambda - 2.0 * 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 3.0 - 0.7 * k as f64)).collect();
        let (a, l) = fit_line(&pts);
        assert!((a - 3.0).abs() < 1e-12 && (l - 0.7).abs() < 1e-12);
    }
}
