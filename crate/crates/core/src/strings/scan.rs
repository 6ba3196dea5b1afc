use std::collections::VecDeque;

use super::{LogProfile, EPS_SLACK};

/// Relative allowance when comparing partition gaps against T.
const GAP_TOL: f64 = 1e-12;

/// Profile indices s < len at which the profile is (C, η, T, E)-contracting
/// up to its end: some partition s = j_0 < j_1 < … < j_N = len of sample
/// indices with gaps at most T satisfies
/// Σ_{i<j_n} a_i − Σ_{i<s} a_i ≤ log C − η (t_{j_n} − t_s) at every j_n.
///
/// Whether a sample may serve as a partition point depends only on s, so
/// the existence question is a bottleneck path problem: g(p) is the lowest
/// threshold on D_j = Σ_{i<j} a_i + η t_j that lets a partition continue
/// from p to the end, computed right to left with a sliding-window minimum.
/// The result is the same as the greedy rule that always closes a cell at
/// the last admissible sample within T.
pub fn contracting_scan(profile: &LogProfile, c: f64, eta: f64, t_gap: f64) -> Vec<usize> {
    let k = profile.len();
    if k == 0 || c < 1.0 || t_gap <= 0.0 {
        return Vec::new();
    }
    let log_c = c.ln();
    let times = &profile.times;
    let mut d = Vec::with_capacity(k + 1);
    let mut sum = 0.0;
    d.push(eta * times[0]);
    for (i, a) in profile.a.iter().enumerate() {
        sum += a;
        d.push(sum + eta * times[i + 1]);
    }
    let reach = t_gap * (1.0 + GAP_TOL);

    let mut g = vec![f64::INFINITY; k + 1];
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut r = k;
    let mut out = Vec::new();
    for p in (0..=k).rev() {
        if p < k {
            let q = p + 1;
            while window.front().is_some_and(|&f| g[f] >= g[q]) {
                window.pop_front();
            }
            window.push_front(q);
        }
        while times[r] - times[p] > reach {
            r -= 1;
        }
        while window.back().is_some_and(|&b| b > r) {
            window.pop_back();
        }
        let best = window.back().map_or(f64::INFINITY, |&b| g[b]);
        g[p] = if p == k { d[p] } else { d[p].max(best) };
        if p < k && best <= d[p] + log_c + EPS_SLACK {
            out.push(p);
        }
    }
    out.reverse();
    out
}

/// Expanding points: contracting points of the reversed flow −X, i.e. of
/// [`LogProfile::reversed`]. Indices refer to the reversed profile, so this
/// is exactly `contracting_scan(&profile.reversed(), …)`.
pub fn expanding_scan(profile: &LogProfile, c: f64, eta: f64, t_gap: f64) -> Vec<usize> {
    contracting_scan(&profile.reversed(), c, eta, t_gap)
}
