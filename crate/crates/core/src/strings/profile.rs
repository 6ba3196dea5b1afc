use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::CocycleChain;
use crate::linalg::{mininorm, norm2};
use crate::spectrum::SplittingEstimate;

/// Per-step logarithms log‖ψ*|_E‖ (`a`) and log m(ψ*|_F) (`b`) along a
/// stretch of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProfile {
    /// Sample times, one more than the steps.
    pub times: Vec<f64>,
    pub dts: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Chain sample index of the first profile sample.
    pub start_sample: usize,
    /// Chain steps per profile step.
    pub stride: usize,
}

impl LogProfile {
    /// A profile from raw values, with times starting at 0.
    pub fn from_values(a: Vec<f64>, b: Vec<f64>, dts: Vec<f64>) -> Self {
        assert!(a.len() == b.len() && a.len() == dts.len(), "profile lengths differ");
        let mut times = Vec::with_capacity(dts.len() + 1);
        times.push(0.0);
        for dt in &dts {
            times.push(times.last().unwrap() + dt);
        }
        LogProfile {
            times,
            dts,
            a,
            b,
            start_sample: 0,
            stride: 1,
        }
    }

    /// Unit-step profile, convenient for synthetic data.
    pub fn uniform(a: Vec<f64>, b: Vec<f64>) -> Self {
        let dts = vec![1.0; a.len()];
        Self::from_values(a, b, dts)
    }

    /// The profile of `chain` on E = E^s, F = E^u of `split`, over the
    /// samples `start..=start + blocks·stride`, grouping `stride` chain
    /// steps into one profile step. Block quantities are computed from the
    /// block product, not from sums of step quantities.
    pub fn from_splitting(
        chain: &CocycleChain,
        split: &SplittingEstimate,
        start: usize,
        blocks: usize,
        stride: usize,
    ) -> Self {
        assert!(stride >= 1 && start + blocks * stride <= chain.len(), "profile exceeds the chain");
        let n = chain.normal_dim();
        let (a, b): (Vec<f64>, Vec<f64>) = (0..blocks)
            .into_par_iter()
            .map(|k| {
                let i = start + k * stride;
                let mut p = DMatrix::identity(n, n);
                for step in &chain.steps[i..i + stride] {
                    p = step * p;
                }
                ((norm2(&(&p * &split.es[i]))).ln(), mininorm(&(&p * &split.eu[i])).ln())
            })
            .unzip();
        let times: Vec<f64> = (0..=blocks).map(|k| chain.times[start + k * stride]).collect();
        let dts = times.windows(2).map(|w| w[1] - w[0]).collect();
        LogProfile {
            times,
            dts,
            a,
            b,
            start_sample: start,
            stride,
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// The profile of the reversed flow −X: steps in reverse order with
    /// a' = −b and b' = −a. Profile sample j of the result is sample
    /// len − j of `self`.
    pub fn reversed(&self) -> LogProfile {
        let rev_neg = |v: &[f64]| v.iter().rev().map(|x| -x).collect::<Vec<_>>();
        let mut dts = self.dts.clone();
        dts.reverse();
        let mut out = LogProfile::from_values(rev_neg(&self.b), rev_neg(&self.a), dts);
        out.stride = self.stride;
        out.start_sample = self.start_sample;
        out
    }

    /// The sub-profile over profile steps `start..end`, times rebased to 0.
    pub fn slice(&self, start: usize, end: usize) -> LogProfile {
        let mut out = LogProfile::from_values(
            self.a[start..end].to_vec(),
            self.b[start..end].to_vec(),
            self.dts[start..end].to_vec(),
        );
        out.stride = self.stride;
        out.start_sample = self.start_sample + start * self.stride;
        out
    }
}
