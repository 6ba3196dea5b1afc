use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::OrbitSegment;
use crate::strings::{check_segment, LogProfile, PesinBlockParams, QuasiHyperbolicSegment};

/// A stretch y → φ_{lT}(y) of a quasi-hyperbolic string whose endpoints are
/// block members, at least α from the singularities, and closer than D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloseReturn {
    /// Index of the string in the list searched.
    pub segment: usize,
    pub start_index: usize,
    pub end_index: usize,
    pub l: usize,
    pub start_t: f64,
    pub end_t: f64,
    pub y: Vec<f64>,
    pub ly: Vec<f64>,
    pub gap: f64,
    pub both_in_block: bool,
    pub alpha_ok: bool,
}

impl CloseReturn {
    pub fn duration(&self) -> f64 {
        self.end_t - self.start_t
    }
}

/// Everything [`find_close_returns`] looks at. Orbit, chain and profile
/// share sample indices up to `profile.start_sample`.
pub struct ReturnSearch<'a> {
    pub orbit: &'a OrbitSegment,
    /// Per-step profile (stride 1) used to confirm that each candidate
    /// stretch is itself quasi-hyperbolic.
    pub profile: &'a LogProfile,
    pub segments: &'a [QuasiHyperbolicSegment],
    /// Block membership per orbit sample.
    pub member: &'a [bool],
    pub params: PesinBlockParams,
}

/// All close returns with gap < `d`, one per run of consecutive start
/// samples with the same l (the closest of the run), sorted by gap.
///
/// Endpoints are hashed into a uniform grid of cell size `d`, separately for
/// each residue class of the sample index modulo the T-stride, so only
/// pairs whose time difference is a multiple of T are ever compared.
pub fn find_close_returns(search: &ReturnSearch<'_>, d: f64) -> Vec<CloseReturn> {
    if !(d > 0.0) {
        return Vec::new();
    }
    let orbit = search.orbit;
    let system = orbit.system.as_ref();
    let mean_dt = orbit.duration() / (orbit.len() - 1).max(1) as f64;
    let stride = ((search.params.t / mean_dt).round() as usize).max(1);
    let offset = search.profile.start_sample;
    let usable = |i: usize| {
        search.member.get(i).copied().unwrap_or(false)
            && system.singularity_distance(orbit.states[i].as_slice()) > search.params.alpha
    };

    let mut found: Vec<CloseReturn> = search
        .segments
        .par_iter()
        .enumerate()
        .flat_map_iter(|(which, seg)| {
            let lo = seg.start_index + offset;
            let hi = seg.end_index + offset;
            let points: Vec<usize> = (lo..=hi).filter(|&i| usable(i)).collect();
            let cell = |i: usize| -> Vec<i64> {
                orbit.states[i].iter().map(|v| (v / d).floor() as i64).collect()
            };
            let mut grid: HashMap<(usize, Vec<i64>), Vec<usize>> = HashMap::new();
            for &i in &points {
                grid.entry((i % stride, cell(i))).or_default().push(i);
            }
            let mut out = Vec::new();
            for &i in &points {
                let base = cell(i);
                for shift in neighbour_shifts(base.len()) {
                    let key: Vec<i64> = base.iter().zip(&shift).map(|(b, s)| b + s).collect();
                    let Some(bucket) = grid.get(&(i % stride, key)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j <= i {
                            continue;
                        }
                        let gap = (&orbit.states[j] - &orbit.states[i]).norm();
                        if gap >= d {
                            continue;
                        }
                        if check_segment(search.profile, i - offset, j - offset, seg.eta).is_none() {
                            continue;
                        }
                        out.push(CloseReturn {
                            segment: which,
                            start_index: i,
                            end_index: j,
                            l: (j - i) / stride,
                            start_t: orbit.times[i],
                            end_t: orbit.times[j],
                            y: orbit.states[i].as_slice().to_vec(),
                            ly: orbit.states[j].as_slice().to_vec(),
                            gap,
                            both_in_block: true,
                            alpha_ok: true,
                        });
                    }
                }
            }
            out
        })
        .collect();

    found.sort_by(|a, b| (a.l, a.start_index).cmp(&(b.l, b.start_index)));
    let mut kept: Vec<CloseReturn> = Vec::new();
    let mut run_end: Option<(usize, usize)> = None;
    for c in found {
        // Overlapping strings can report the same pair twice.
        if run_end == Some((c.l, c.start_index)) {
            continue;
        }
        let continues = run_end.is_some_and(|(l, last)| l == c.l && c.start_index == last + 1);
        run_end = Some((c.l, c.start_index));
        match kept.last_mut() {
            Some(best) if continues => {
                if c.gap < best.gap {
                    *best = c;
                }
            }
            _ => kept.push(c),
        }
    }
    kept.sort_by(|a, b| a.gap.total_cmp(&b.gap).then(a.start_index.cmp(&b.start_index)));
    kept
}

fn neighbour_shifts(dim: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-1..=1).map(move |s| {
                    let mut w = v.clone();
                    w.push(s);
                    w
                })
            })
            .collect();
    }
    out
}

/// The most recent near-return of the orbit's last state: walking back from
/// the end, the first local minimum of |x_k − x_end| after the distance has
/// exceeded half its largest value. Returns (sample index, gap). Used when
/// the orbit is attracted to a periodic orbit and one lap is the guess.
pub fn recent_return(orbit: &OrbitSegment) -> Option<(usize, f64)> {
    let m = orbit.len();
    if m < 3 {
        return None;
    }
    let end = &orbit.states[m - 1];
    let dist: Vec<f64> = orbit.states.iter().map(|x| (x - end).norm()).collect();
    let far = dist[..m - 1].iter().copied().fold(0.0, f64::max);
    if !(far > 0.0) {
        return None;
    }
    let left = (0..m - 1).rev().find(|&k| dist[k] > 0.5 * far)?;
    (1..left).rev().find(|&k| dist[k] <= dist[k - 1] && dist[k] <= dist[k + 1]).map(|k| (k, dist[k]))
}
