use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LogProfile, StringsError, EPS_SLACK};
use crate::cocycle::CocycleChain;
use crate::flow::FlowSystem;
use crate::spectrum::{SpectrumEstimate, SplittingEstimate};

/// Smallest spectral gap treated as hyperbolic.
const MIN_GAP: f64 = 0.05;

/// Parameters of the block Λ^T_η(C): points whose forward E^s products over
/// blocks of length T decay like C e^{−ηJT}, whose E^u mininorm products
/// grow like C⁻¹ e^{ηJT}, and that stay 1/C away from the singularities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PesinBlockParams {
    /// Block time step.
    pub t: f64,
    /// Rate per unit time; the per-block exponent is η·T.
    pub eta: f64,
    pub c: f64,
    /// Singularity-distance floor 1/C.
    pub alpha: f64,
}

impl PesinBlockParams {
    pub fn new(t: f64, eta: f64, c: f64) -> Result<Self, StringsError> {
        if !(t > 0.0 && eta > 0.0 && c >= 1.0) {
            return Err(StringsError::InvalidArgument(format!("need T > 0, eta > 0, C >= 1 (got {t}, {eta}, {c})")));
        }
        Ok(PesinBlockParams { t, eta, c, alpha: 1.0 / c })
    }
}

/// Whether the point at the start of `profile` belongs to the block. The
/// profile must be resampled at stride T (one profile step per block) and
/// both conditions are checked for J = 1..=len.
pub fn pesin_membership(profile: &LogProfile, params: &PesinBlockParams, singularity_distance: f64) -> bool {
    if singularity_distance < params.alpha {
        return false;
    }
    let log_c = params.c.ln();
    let t0 = profile.times[0];
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for j in 0..profile.len() {
        sum_a += profile.a[j];
        sum_b += profile.b[j];
        let elapsed = profile.times[j + 1] - t0;
        if sum_a > log_c - params.eta * elapsed + EPS_SLACK || sum_b < -log_c + params.eta * elapsed - EPS_SLACK {
            return false;
        }
    }
    true
}

/// Fraction of block starts along the converged part of a splitting that
/// belong to the block, each tested over `horizon` time units ahead.
pub fn membership_fraction(
    chain: &CocycleChain,
    split: &SplittingEstimate,
    system: &dyn FlowSystem,
    params: &PesinBlockParams,
    horizon: f64,
) -> f64 {
    let Some((lo, hi)) = split.converged_range() else {
        return 0.0;
    };
    let mean_dt = chain.duration() / chain.len() as f64;
    let stride = ((params.t / mean_dt).round() as usize).max(1);
    let blocks = (hi - lo) / stride;
    let per_start = ((horizon / params.t).ceil() as usize).max(1);
    if blocks < per_start {
        return 0.0;
    }
    let profile = LogProfile::from_splitting(chain, split, lo, blocks, stride);
    let starts = blocks - per_start + 1;
    let members = (0..starts)
        .into_par_iter()
        .filter(|&j| {
            let x = chain.frames[lo + j * stride].base_point.as_slice();
            pesin_membership(&profile.slice(j, j + per_start), params, system.singularity_distance(x))
        })
        .count();
    members as f64 / starts as f64
}

/// Block membership of every chain sample, tested over `horizon` time units
/// ahead; samples outside the converged range or too close to its end are
/// false. When both bundles are lines the block logarithms are exact sums of
/// the per-step ones (the bases are carried by the cocycle), so prefix sums
/// serve every start; otherwise each block product is formed explicitly.
pub fn member_flags(
    chain: &CocycleChain,
    split: &SplittingEstimate,
    system: &dyn FlowSystem,
    params: &PesinBlockParams,
    horizon: f64,
) -> Vec<bool> {
    let m = chain.len();
    let mut flags = vec![false; m + 1];
    let Some((lo, hi)) = split.converged_range() else {
        return flags;
    };
    let mean_dt = chain.duration() / m as f64;
    let stride = ((params.t / mean_dt).round() as usize).max(1);
    let per_start = ((horizon / params.t).ceil() as usize).max(1);
    let span = stride * per_start;
    if hi < lo + span {
        return flags;
    }
    let lines = split.es[lo].ncols() == 1 && split.eu[lo].ncols() == 1;
    let steps = LogProfile::from_splitting(chain, split, lo, hi - lo, 1);
    let mut pa = vec![0.0; steps.len() + 1];
    let mut pb = vec![0.0; steps.len() + 1];
    for i in 0..steps.len() {
        pa[i + 1] = pa[i] + steps.a[i];
        pb[i + 1] = pb[i] + steps.b[i];
    }
    let computed: Vec<bool> = (lo..=hi - span)
        .into_par_iter()
        .map(|i| {
            let profile = if lines {
                let r = i - lo;
                let a = (0..per_start).map(|j| pa[r + (j + 1) * stride] - pa[r + j * stride]).collect();
                let b = (0..per_start).map(|j| pb[r + (j + 1) * stride] - pb[r + j * stride]).collect();
                let dts = (0..per_start).map(|j| chain.times[i + (j + 1) * stride] - chain.times[i + j * stride]).collect();
                LogProfile::from_values(a, b, dts)
            } else {
                LogProfile::from_splitting(chain, split, i, per_start, stride)
            };
            let x = chain.frames[i].base_point.as_slice();
            pesin_membership(&profile, params, system.singularity_distance(x))
        })
        .collect();
    flags[lo..=hi - span].copy_from_slice(&computed);
    flags
}

/// The constants of the block construction, all logged with their values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDerivation {
    /// χ = min{|λ⁻|, λ⁺} over the exponents present.
    pub chi: f64,
    pub epsilon: f64,
    pub t0: f64,
    /// η₀ = (χ − ε/4)·T₀, per block of length T₀.
    pub eta0: f64,
    pub c: f64,
    /// Smallest positive integer with C < exp(j₀T₀ε/4).
    pub j0: u32,
    /// T = j₀T₀.
    pub t: f64,
    /// η = (χ − ε/2)·j₀T₀, per block of length T.
    pub eta: f64,
    /// Measured membership fraction of Λ^{T₀}_{η₀}(C).
    pub fraction: f64,
    pub target_met: bool,
}

impl BlockDerivation {
    /// Λ^{T₀}_{η₀}(C) as parameters (rate η₀/T₀).
    pub fn base_params(&self) -> PesinBlockParams {
        PesinBlockParams {
            t: self.t0,
            eta: self.eta0 / self.t0,
            c: self.c,
            alpha: 1.0 / self.c,
        }
    }

    /// Λ^T_η(C) with T = j₀T₀ (rate η/T).
    pub fn upgraded_params(&self) -> PesinBlockParams {
        PesinBlockParams {
            t: self.t,
            eta: self.eta / self.t,
            c: self.c,
            alpha: 1.0 / self.c,
        }
    }
}

/// χ, ε and η₀ from a spectrum, before C is chosen. `epsilon` defaults to
/// χ/8 and must lie in (0, χ/2).
pub fn block_derivation(spectrum: &SpectrumEstimate, epsilon: Option<f64>, t0: f64) -> Result<BlockDerivation, StringsError> {
    let gap = spectrum.gap();
    if !(gap >= MIN_GAP) {
        return Err(StringsError::NotHyperbolic { gap });
    }
    let (neg, pos) = spectrum.extremes();
    let chi = [neg.map(f64::abs), pos].into_iter().flatten().fold(f64::INFINITY, f64::min);
    let epsilon = epsilon.unwrap_or(chi / 8.0);
    if !(epsilon > 0.0 && epsilon < chi / 2.0) {
        return Err(StringsError::InvalidArgument(format!("epsilon {epsilon} must lie in (0, chi/2) with chi = {chi}")));
    }
    if !(t0 > 0.0) {
        return Err(StringsError::InvalidArgument(format!("T0 = {t0} must be positive")));
    }
    let mut d = BlockDerivation {
        chi,
        epsilon,
        t0,
        eta0: (chi - epsilon / 4.0) * t0,
        c: 1.0,
        j0: 1,
        t: t0,
        eta: 0.0,
        fraction: 0.0,
        target_met: false,
    };
    d.set_c(1.0);
    Ok(d)
}

impl BlockDerivation {
    /// Fixes C and the constants that depend on it: j₀ = ⌊4 ln C/(T₀ε)⌋ + 1,
    /// T = j₀T₀ and η = (χ − ε/2)T. The fraction is left untouched.
    pub fn set_c(&mut self, c: f64) {
        self.c = c;
        let j = (4.0 * c.ln() / (self.t0 * self.epsilon)).floor() + 1.0;
        self.j0 = j.max(1.0) as u32;
        self.t = self.j0 as f64 * self.t0;
        self.eta = (self.chi - self.epsilon / 2.0) * self.t;
    }
}

/// Completes [`block_derivation`] by choosing C: the smallest power of two
/// up to `c_max` whose base block Λ^{T₀}_{η₀}(C) has measured `fraction` at
/// least `target`. If none reaches it, C = `c_max` and `target_met` is false.
pub fn block_constants<F>(
    spectrum: &SpectrumEstimate,
    epsilon: Option<f64>,
    t0: f64,
    target: f64,
    c_max: f64,
    fraction: F,
) -> Result<BlockDerivation, StringsError>
where
    F: Fn(&PesinBlockParams) -> f64,
{
    let mut d = block_derivation(spectrum, epsilon, t0)?;
    let mut c = 1.0;
    loop {
        d.set_c(c);
        d.fraction = fraction(&d.base_params());
        if d.fraction >= target {
            d.target_met = true;
            return Ok(d);
        }
        if c >= c_max {
            return Ok(d);
        }
        c = (2.0 * c).min(c_max);
    }
}
