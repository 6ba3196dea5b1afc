use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{LogProfile, StringsError, EPS_SLACK};

/// Smallest slack of each family of inequalities over a segment. All three
/// are ≥ −EPS_SLACK for a valid segment; larger is more robust.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// min over n ∈ [1, k] of −η (t_n − t_0) − Σ_{i<n} a_i.
    pub contraction: f64,
    /// min over n ∈ [0, k−1] of Σ_{i≥n} b_i − η (t_k − t_n).
    pub expansion: f64,
    /// min over steps of b_i − a_i − η Δt_i.
    pub domination: f64,
}

/// A maximal stretch [start_index, end_index] of profile samples that is
/// (η, T)-quasi-hyperbolic with the native sample grid as partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiHyperbolicSegment {
    pub start_index: usize,
    pub end_index: usize,
    pub start_t: f64,
    pub end_t: f64,
    /// Rate (per unit time).
    pub eta: f64,
    /// Largest partition gap allowed.
    pub t_gap: f64,
    pub margins: Margins,
}

impl QuasiHyperbolicSegment {
    pub fn duration(&self) -> f64 {
        self.end_t - self.start_t
    }

    /// The partition times t_0 < … < t_k of the segment.
    pub fn partition<'a>(&self, profile: &'a LogProfile) -> &'a [f64] {
        &profile.times[self.start_index..=self.end_index]
    }
}

impl Margins {
    pub fn valid(&self) -> bool {
        self.contraction >= -EPS_SLACK && self.expansion >= -EPS_SLACK && self.domination >= -EPS_SLACK
    }
}

/// Direct O(k) evaluation of the three conditions on profile steps
/// `start..end`. Returns the margins if all hold within EPS_SLACK.
pub fn check_segment(profile: &LogProfile, start: usize, end: usize, eta: f64) -> Option<Margins> {
    if end <= start || end > profile.len() {
        return None;
    }
    Some(segment_margins(profile, start, end, eta)).filter(Margins::valid)
}

fn segment_margins(profile: &LogProfile, start: usize, end: usize, eta: f64) -> Margins {
    let t = &profile.times;
    let mut contraction = f64::INFINITY;
    let mut sum = 0.0;
    for n in start..end {
        sum += profile.a[n];
        contraction = contraction.min(-eta * (t[n + 1] - t[start]) - sum);
    }
    let mut expansion = f64::INFINITY;
    let mut sum = 0.0;
    for n in (start..end).rev() {
        sum += profile.b[n];
        expansion = expansion.min(sum - eta * (t[end] - t[n]));
    }
    let domination = (start..end)
        .map(|i| profile.b[i] - profile.a[i] - eta * profile.dts[i])
        .fold(f64::INFINITY, f64::min);
    Margins {
        contraction,
        expansion,
        domination,
    }
}

/// All inclusion-maximal quasi-hyperbolic segments of the profile, in order
/// of their start.
///
/// With P_j = Σ_{i<j} (a_i + η Δt_i) and Q_j = Σ_{i<j} (b_i − η Δt_i), the
/// steps s..e form a segment iff P_j ≤ P_s + ε for s < j ≤ e (contraction),
/// Q_n ≤ Q_e + ε for s ≤ n < e (expansion) and every step in between passes
/// the per-step domination test. The first condition bounds e from above for
/// each s, the second bounds s from below for each e; one forward and one
/// backward monotone-stack pass find both bounds, and a sweep over s with an
/// ordered set of admissible ends picks the longest segment from each s.
pub fn pliss_select(profile: &LogProfile, eta: f64, t_gap: f64) -> Result<Vec<QuasiHyperbolicSegment>, StringsError> {
    if eta <= 0.0 || t_gap <= 0.0 {
        return Err(StringsError::InvalidArgument(format!("eta = {eta} and T = {t_gap} must be positive")));
    }
    if let Some((index, &dt)) = profile.dts.iter().enumerate().find(|(_, &dt)| dt > t_gap * (1.0 + 1e-12)) {
        return Err(StringsError::GapTooLarge { index, dt, gap: t_gap });
    }
    let k = profile.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut p = vec![0.0; k + 1];
    let mut q = vec![0.0; k + 1];
    for i in 0..k {
        p[i + 1] = p[i] + profile.a[i] + eta * profile.dts[i];
        q[i + 1] = q[i] + profile.b[i] - eta * profile.dts[i];
    }

    // Largest end allowed by contraction: one before the first j > s with
    // P_j > P_s + ε. The stack holds the running maxima of P to the right.
    let mut contraction_end = vec![k; k + 1];
    let mut stack: Vec<usize> = Vec::new();
    for s in (0..k).rev() {
        let j = s + 1;
        while stack.last().is_some_and(|&top| p[top] <= p[j]) {
            stack.pop();
        }
        stack.push(j);
        let bound = p[s] + EPS_SLACK;
        let count = stack.partition_point(|&x| p[x] > bound);
        if count > 0 {
            contraction_end[s] = stack[count - 1] - 1;
        }
    }

    // Smallest start allowed by expansion: one after the last n < e with
    // Q_n > Q_e + ε. The stack holds the running maxima of Q to the left.
    let mut expansion_start = vec![0usize; k + 1];
    let mut stack: Vec<usize> = Vec::new();
    for e in 1..=k {
        let n = e - 1;
        while stack.last().is_some_and(|&top| q[top] <= q[n]) {
            stack.pop();
        }
        stack.push(n);
        let bound = q[e] + EPS_SLACK;
        let count = stack.partition_point(|&x| q[x] > bound);
        if count > 0 {
            expansion_start[e] = stack[count - 1] + 1;
        }
    }

    // End of the run of dominated steps containing s.
    let dominated: Vec<bool> =
        (0..k).map(|i| profile.a[i] - profile.b[i] + eta * profile.dts[i] <= EPS_SLACK).collect();
    let mut run_end = vec![0usize; k + 1];
    run_end[k] = k;
    for s in (0..k).rev() {
        run_end[s] = if dominated[s] { run_end[s + 1] } else { s };
    }

    let mut ends_by_start: Vec<(usize, usize)> = (1..=k).map(|e| (expansion_start[e], e)).collect();
    ends_by_start.sort_unstable();
    let mut admitted = BTreeSet::new();
    let mut next = 0;
    let mut furthest = 0;
    let mut out = Vec::new();
    for s in 0..k {
        while next < ends_by_start.len() && ends_by_start[next].0 <= s {
            admitted.insert(ends_by_start[next].1);
            next += 1;
        }
        let upper = contraction_end[s].min(run_end[s]);
        if upper <= s {
            continue;
        }
        let Some(&e) = admitted.range(s + 1..=upper).next_back() else {
            continue;
        };
        if e <= furthest {
            continue;
        }
        furthest = e;
        let margins = segment_margins(profile, s, e, eta);
        out.push(QuasiHyperbolicSegment {
            start_index: s,
            end_index: e,
            start_t: profile.times[s],
            end_t: profile.times[e],
            eta,
            t_gap,
            margins,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every index range tested against the definition, written out
    /// independently of `check_segment`, then filtered to maximal ones.
    fn brute_force(p: &LogProfile, eta: f64) -> Vec<(usize, usize)> {
        let k = p.len();
        let valid = |s: usize, e: usize| {
            for n in s + 1..=e {
                let sum: f64 = p.a[s..n].iter().sum();
                if sum > -eta * (p.times[n] - p.times[s]) + EPS_SLACK {
                    return false;
                }
            }
            for n in s..e {
                let sum: f64 = p.b[n..e].iter().sum();
                if sum < eta * (p.times[e] - p.times[n]) - EPS_SLACK {
                    return false;
                }
                if p.a[n] - p.b[n] > -eta * p.dts[n] + EPS_SLACK {
                    return false;
                }
            }
            true
        };
        let all: Vec<(usize, usize)> =
            (0..k).flat_map(|s| (s + 1..=k).map(move |e| (s, e))).filter(|&(s, e)| valid(s, e)).collect();
        all.iter()
            .copied()
            .filter(|&(s, e)| !all.iter().any(|&(s2, e2)| s2 <= s && e2 >= e && (s2, e2) != (s, e)))
            .collect()
    }

    fn ranges(segments: &[QuasiHyperbolicSegment]) -> Vec<(usize, usize)> {
        segments.iter().map(|s| (s.start_index, s.end_index)).collect()
    }

    const ALPHABET: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

    #[test]
    fn uniform_example() {
        let p = LogProfile::uniform(vec![-1.0; 3], vec![1.0; 3]);
        let segs = pliss_select(&p, 0.5, 1.0).unwrap();
        assert_eq!(ranges(&segs), vec![(0, 3)]);
        let m = segs[0].margins;
        assert!((m.contraction - 0.5).abs() < 1e-15);
        assert!((m.expansion - 0.5).abs() < 1e-15);
        assert!((m.domination - 1.5).abs() < 1e-15);
        assert_eq!(segs[0].partition(&p), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn no_domination_no_segment() {
        let v = vec![-1.0, 0.5, -0.5, 1.0];
        let p = LogProfile::uniform(v.clone(), v);
        assert!(pliss_select(&p, 0.1, 1.0).unwrap().is_empty());
    }

    #[test]
    fn long_step_is_rejected() {
        let p = LogProfile::from_values(vec![-1.0; 2], vec![1.0; 2], vec![1.0, 2.5]);
        assert!(matches!(pliss_select(&p, 0.5, 2.0), Err(StringsError::GapTooLarge { index: 1, .. })));
    }

    #[test]
    fn exhaustive_oracle_on_random_profiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..2000 {
            let k = rng.random_range(1..=14);
            let a: Vec<f64> = (0..k).map(|_| ALPHABET[rng.random_range(0..5)]).collect();
            let b: Vec<f64> = (0..k).map(|_| ALPHABET[rng.random_range(0..5)]).collect();
            let eta = [0.1, 0.25, 0.5][rng.random_range(0..3)];
            let p = LogProfile::uniform(a, b);
            assert_eq!(ranges(&pliss_select(&p, eta, 1.0).unwrap()), brute_force(&p, eta), "{p:?} eta {eta}");
        }
    }

    fn value() -> impl Strategy<Value = f64> {
        prop::sample::select(ALPHABET.to_vec())
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            ab in prop::collection::vec((value(), value()), 1..=14),
            eta in prop::sample::select(vec![0.1, 0.3, 0.5, 0.75]),
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = ab.into_iter().unzip();
            let p = LogProfile::uniform(a, b);
            prop_assert_eq!(ranges(&pliss_select(&p, eta, 1.0).unwrap()), brute_force(&p, eta));
        }

        #[test]
        fn larger_eta_shrinks_segments(
            ab in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..40),
            eta in 0.01f64..0.5,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = ab.into_iter().unzip();
            let p = LogProfile::uniform(a, b);
            let loose = pliss_select(&p, eta, 1.0).unwrap();
            let tight = pliss_select(&p, 1.5 * eta, 1.0).unwrap();
            for t in &tight {
                prop_assert!(loose.iter().any(|l| l.start_index <= t.start_index && l.end_index >= t.end_index));
            }
        }

        #[test]
        fn found_segments_pass_direct_check(
            ab in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60),
            eta in 0.01f64..0.5,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = ab.into_iter().unzip();
            let p = LogProfile::uniform(a, b);
            for s in pliss_select(&p, eta, 1.0).unwrap() {
                prop_assert!(check_segment(&p, s.start_index, s.end_index, eta).is_some());
            }
        }
    }
}
