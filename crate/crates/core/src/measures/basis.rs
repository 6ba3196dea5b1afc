use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::MeasureError;

/// Axis-aligned box B = ∏ [a_j, b_j] carrying the test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, MeasureError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(MeasureError::InvalidArgument("box bounds must have equal, nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(MeasureError::InvalidArgument(format!("degenerate box {lower:?} .. {upper:?}")));
        }
        Ok(BoxBounds { lower, upper })
    }

    /// [−30, 30]² × [−5, 55], which holds the classical Lorenz attractor
    /// (|y| reaches about 27 on it).
    pub fn lorenz() -> Self {
        BoxBounds { lower: vec![-30.0, -30.0, -5.0], upper: vec![30.0, 30.0, 55.0] }
    }

    /// [−2, 2]³ around the Hopf limit cycle.
    pub fn hopf() -> Self {
        BoxBounds { lower: vec![-2.0; 3], upper: vec![2.0; 3] }
    }

    /// The cube [−r, r]^d.
    pub fn cube(dim: usize, r: f64) -> Self {
        BoxBounds { lower: vec![-r; dim], upper: vec![r; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).collect()
    }
}

/// The test-function family f_1, f_2, … on a box:
///
/// ```text
/// f(x) = ∏_j cos(π k_j (x_j − a_j) / (b_j − a_j)),   k ∈ ℕ^d
/// ```
///
/// Modes are ordered by total degree |k| = Σ k_j and, within one degree,
/// in descending lexicographic order of k, so f_1 ≡ 1 and in three
/// dimensions f_2, f_3, f_4 have k = (1,0,0), (0,1,0), (0,0,1). Every
/// product reaches ±1 at a box corner, hence ‖f_i‖ = 1 exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestBasis {
    pub bounds: BoxBounds,
    pub modes: Vec<Vec<u32>>,
    pub sup_norms: Vec<f64>,
}

/// Exponent vectors of total degree `degree` in descending lexicographic order.
fn modes_of_degree(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    fn fill(prefix: &mut Vec<u32>, dim: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == dim {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            fill(prefix, dim, left - k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    fill(&mut Vec::with_capacity(dim), dim, degree, &mut out);
    out
}

/// The first `n_max` cosine products on `bounds`. Every point of `data`
/// (typically the orbit samples) must lie inside the box.
pub fn default_basis(bounds: BoxBounds, n_max: usize, data: &[DVector<f64>]) -> Result<TestBasis, MeasureError> {
    if n_max == 0 {
        return Err(MeasureError::InvalidArgument("basis needs at least one function".into()));
    }
    if let Some((index, x)) = data.iter().enumerate().find(|(_, x)| !bounds.contains(x.as_slice())) {
        return Err(MeasureError::BoxTooSmall { index, point: x.as_slice().to_vec() });
    }
    let dim = bounds.dim();
    let mut modes = Vec::with_capacity(n_max);
    let mut degree = 0;
    while modes.len() < n_max {
        modes.extend(modes_of_degree(dim, degree).into_iter().take(n_max - modes.len()));
        degree += 1;
    }
    Ok(TestBasis { sup_norms: vec![1.0; n_max], bounds, modes })
}

impl TestBasis {
    pub fn count_available(&self) -> usize {
        self.modes.len()
    }

    /// K = max ‖f_i‖ over the first n functions.
    pub fn max_norm(&self, n: usize) -> f64 {
        self.sup_norms[..n].iter().copied().fold(0.0, f64::max)
    }

    /// Normalized coordinates u_j = (x_j − a_j)/(b_j − a_j) ∈ [0, 1].
    fn unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.bounds.lower.iter().zip(&self.bounds.upper))
            .map(|(v, (a, b))| (v - a) / (b - a))
            .collect()
    }

    /// f_{idx+1}(x); index 0 is the constant function.
    pub fn eval(&self, idx: usize, x: &[f64]) -> f64 {
        let u = self.unit(x);
        self.modes[idx].iter().zip(&u).map(|(&k, u)| (PI * k as f64 * u).cos()).product()
    }

    /// f_1(x), …, f_n(x), sharing the per-axis cosines between functions.
    pub fn eval_all(&self, n: usize, x: &[f64]) -> Vec<f64> {
        let u = self.unit(x);
        let top = self.modes[..n].iter().flat_map(|k| k.iter().copied()).max().unwrap_or(0) as usize;
        let table: Vec<Vec<f64>> = u.iter().map(|u| (0..=top).map(|k| (PI * k as f64 * u).cos()).collect()).collect();
        self.modes[..n]
            .iter()
            .map(|k| k.iter().zip(&table).map(|(&k, row)| row[k as usize]).product())
            .collect()
    }

    /// Lipschitz constant of f_{idx+1}: |∇f| ≤ π |(k_j / (b_j − a_j))_j|.
    pub fn lipschitz(&self, idx: usize) -> f64 {
        let w = self.bounds.widths();
        PI * self.modes[idx].iter().zip(&w).map(|(&k, w)| (k as f64 / w).powi(2)).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn enumeration_order() {
        let basis = default_basis(BoxBounds::hopf(), 10, &[]).unwrap();
        let expected: Vec<Vec<u32>> = vec![
            vec![0, 0, 0],
            vec![1, 0, 0],
            vec![0, 1, 0],
            vec![0, 0, 1],
            vec![2, 0, 0],
            vec![1, 1, 0],
            vec![1, 0, 1],
            vec![0, 2, 0],
            vec![0, 1, 1],
            vec![0, 0, 2],
        ];
        assert_eq!(basis.modes, expected);
        assert!(basis.sup_norms.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn degree_counts_match_binomials() {
        // Number of k ∈ ℕ^d with |k| = m is C(m + d − 1, d − 1).
        for d in 1..5usize {
            for m in 0..6u32 {
                let count = modes_of_degree(d, m).len();
                let expected = (1..d).fold(1usize, |acc, j| acc * (m as usize + j) / j);
                assert_eq!(count, expected, "d {d} m {m}");
            }
        }
    }

    #[test]
    fn box_too_small_reports_sample() {
        let data = vec![DVector::from_vec(vec![0.0, 0.0, 0.0]), DVector::from_vec(vec![0.0, 3.0, 0.0])];
        match default_basis(BoxBounds::hopf(), 4, &data) {
            Err(MeasureError::BoxTooSmall { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sup_norm_attained_at_corner() {
        let basis = default_basis(BoxBounds::lorenz(), 30, &[]).unwrap();
        for i in 0..30 {
            assert_eq!(basis.eval(i, &basis.bounds.lower).abs(), 1.0);
        }
    }

    proptest! {
        #[test]
        fn eval_all_matches_eval(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let basis = default_basis(BoxBounds::hopf(), 40, &[]).unwrap();
            let p = [x, y, z];
            let all = basis.eval_all(40, &p);
            for (i, v) in all.iter().enumerate() {
                prop_assert!((v - basis.eval(i, &p)).abs() < 1e-14);
                prop_assert!(v.abs() <= 1.0);
            }
        }

        #[test]
        fn lipschitz_bound_holds(x in -2.0f64..2.0, y in -2.0f64..2.0, dx in -0.01f64..0.01, dy in -0.01f64..0.01) {
            let basis = default_basis(BoxBounds::hopf(), 20, &[]).unwrap();
            let p = [x, y, 0.3];
            let q = [x + dx, y + dy, 0.3];
            let d = (dx * dx + dy * dy).sqrt();
            for i in 0..20 {
                prop_assert!((basis.eval(i, &p) - basis.eval(i, &q)).abs() <= basis.lipschitz(i) * d + 1e-15);
            }
        }
    }
}
