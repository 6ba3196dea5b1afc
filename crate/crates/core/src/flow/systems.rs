use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{FlowSystem, SharedSystem};

/// The Lorenz system ẋ = σ(y − x), ẏ = x(ρ − z) − y, ż = xy − βz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz {
    fn default() -> Self {
        Lorenz {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

impl FlowSystem for Lorenz {
    fn name(&self) -> &str {
        "lorenz"
    }

    fn dim(&self) -> usize {
        3
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * (x[1] - x[0]);
        out[1] = x[0] * (self.rho - x[2]) - x[1];
        out[2] = x[0] * x[1] - self.beta * x[2];
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -self.sigma,
                self.sigma,
                0.0,
                self.rho - x[2],
                -1.0,
                -x[0],
                x[1],
                x[0],
                -self.beta,
            ],
        )
    }

    fn singularities(&self) -> Vec<DVector<f64>> {
        let mut out = vec![DVector::zeros(3)];
        if self.rho > 1.0 {
            let r = (self.beta * (self.rho - 1.0)).sqrt();
            let z = self.rho - 1.0;
            out.push(DVector::from_vec(vec![r, r, z]));
            out.push(DVector::from_vec(vec![-r, -r, z]));
        }
        out
    }
}

/// Planar Hopf normal form with a transverse contracting direction.
///
/// The unit circle in z = 0 is an attracting periodic orbit of period 2π with
/// normal Floquet exponents −2 (radial) and −1 (vertical).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Hopf;

impl FlowSystem for Hopf {
    fn name(&self) -> &str {
        "hopf"
    }

    fn dim(&self) -> usize {
        3
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let r2 = x[0] * x[0] + x[1] * x[1];
        out[0] = x[0] * (1.0 - r2) - x[1];
        out[1] = x[1] * (1.0 - r2) + x[0];
        out[2] = -x[2];
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (a, b) = (x[0], x[1]);
        let r2 = a * a + b * b;
        DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0 - r2 - 2.0 * a * a,
                -2.0 * a * b - 1.0,
                0.0,
                -2.0 * a * b + 1.0,
                1.0 - r2 - 2.0 * b * b,
                0.0,
                0.0,
                0.0,
                -1.0,
            ],
        )
    }

    fn singularities(&self) -> Vec<DVector<f64>> {
        vec![DVector::zeros(3)]
    }
}

/// Lorenz at the classical parameters and the Hopf oracle. User systems are
/// loaded separately through [`super::UserSystem`].
pub fn built_in_systems() -> Vec<SharedSystem> {
    vec![Arc::new(Lorenz::default()), Arc::new(Hopf)]
}

/// Looks a built-in system up by name.
pub fn built_in(name: &str) -> Option<SharedSystem> {
    built_in_systems().into_iter().find(|s| s.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::fd_jacobian;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lorenz_singularities_are_zeros() {
        let l = Lorenz::default();
        let sing = l.singularities();
        assert_eq!(sing.len(), 3);
        let r72 = 72f64.sqrt();
        assert_relative_eq!(sing[1][0], r72, epsilon = 1e-12);
        assert_relative_eq!(sing[1][2], 27.0, epsilon = 1e-12);
        assert_relative_eq!(sing[2][1], -r72, epsilon = 1e-12);
        assert!((r72 - 8.48528).abs() < 1e-5);
        for s in &sing {
            assert!(l.eval(s.as_slice()).amax() < 1e-12);
        }
    }

    #[test]
    fn hopf_singularity_and_jacobian() {
        let h = Hopf;
        assert_eq!(h.singularities(), vec![DVector::zeros(3)]);
        let j = h.jacobian(&[1.0, 0.0, 0.0]);
        let expected = DMatrix::from_row_slice(3, 3, &[-2.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
        assert_eq!(j, expected);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for sys in built_in_systems() {
            for _ in 0..200 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-20.0..20.0)).collect();
                let exact = sys.jacobian(&x);
                let fd = fd_jacobian(sys.as_ref(), &x);
                let rel = (&exact - &fd).norm() / exact.norm().max(1.0);
                assert!(rel <= 1e-5, "{}: relative error {rel:e} at {x:?}", sys.name());
            }
        }
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(built_in("lorenz").unwrap().name(), "lorenz");
        assert!(built_in("nope").is_none());
    }
}
