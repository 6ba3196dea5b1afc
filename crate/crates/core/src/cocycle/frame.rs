use nalgebra::{DMatrix, DVector};

use super::CocycleError;
use crate::flow::FlowSystem;

/// Projected vectors shorter than this are treated as lost.
pub const DEGENERATE_NORM: f64 = 1e-8;

/// An orthonormal basis of the normal space N_x = X(x)^⊥ at a regular point.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFrame {
    pub base_point: DVector<f64>,
    pub flow_dir: DVector<f64>,
    /// d × (d−1) matrix whose columns span N_x.
    pub basis: DMatrix<f64>,
    pub speed: f64,
}

impl NormalFrame {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// The d × d orthogonal matrix [flow_dir | basis].
    pub fn full(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.flow_dir.len(), self.dim() + 1);
        m.set_column(0, &self.flow_dir);
        m.view_mut((0, 1), (self.flow_dir.len(), self.dim())).copy_from(&self.basis);
        m
    }

    /// Frame coordinates of an ambient vector (its normal component).
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * v
    }

    /// Ambient vector with the given frame coordinates.
    pub fn ambient(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c
    }
}

fn flow_direction(system: &dyn FlowSystem, x: &[f64], alpha_min: f64) -> Result<(DVector<f64>, f64), CocycleError> {
    let fx = system.eval(x);
    let speed = fx.norm();
    if !(speed >= alpha_min) {
        return Err(CocycleError::NearSingularity { x: x.to_vec(), speed });
    }
    Ok((fx / speed, speed))
}

/// Subtracts the components along `against` (orthonormal vectors) twice,
/// which keeps classical Gram–Schmidt orthogonal to rounding level.
fn orthogonalize(mut v: DVector<f64>, against: &[DVector<f64>]) -> DVector<f64> {
    for _ in 0..2 {
        for q in against {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
    }
    v
}

/// The deterministic frame at `x`: Gram–Schmidt on the standard basis after
/// dropping the axis most aligned with the flow (lowest index on ties).
pub fn normal_frame(system: &dyn FlowSystem, x: &[f64], alpha_min: f64) -> Result<NormalFrame, CocycleError> {
    let (n, speed) = flow_direction(system, x, alpha_min)?;
    let d = n.len();
    let mut drop = 0;
    for k in 1..d {
        if n[k].abs() > n[drop].abs() {
            drop = k;
        }
    }
    let mut done = vec![n.clone()];
    for k in (0..d).filter(|&k| k != drop) {
        let v = orthogonalize(DVector::from_fn(d, |i, _| if i == k { 1.0 } else { 0.0 }), &done);
        let norm = v.norm();
        done.push(v / norm);
    }
    Ok(NormalFrame {
        base_point: DVector::from_column_slice(x),
        flow_dir: n,
        basis: DMatrix::from_columns(&done[1..]),
        speed,
    })
}

/// Moves `prev` to the normal space at `next_point`: each basis vector is
/// projected onto N_next, the results are re-orthonormalized in order, and a
/// vector is flipped if it points against its predecessor.
///
/// Fails with [`CocycleError::DegenerateProjection`] if a projection nearly
/// vanishes or the flow direction has turned by a right angle or more, in
/// which case the caller should rebuild the frame from scratch.
pub fn transport_frame(
    prev: &NormalFrame,
    system: &dyn FlowSystem,
    next_point: &[f64],
    alpha_min: f64,
) -> Result<NormalFrame, CocycleError> {
    let (n, speed) = flow_direction(system, next_point, alpha_min)?;
    let turn = prev.flow_dir.dot(&n);
    if turn <= 0.0 {
        return Err(CocycleError::DegenerateProjection { norm: turn.max(0.0) });
    }
    let mut done = vec![n.clone()];
    for k in 0..prev.dim() {
        let old = prev.basis.column(k).into_owned();
        let projected = orthogonalize(old.clone(), &done[..1]);
        if projected.norm() < DEGENERATE_NORM {
            return Err(CocycleError::DegenerateProjection { norm: projected.norm() });
        }
        let mut v = orthogonalize(projected, &done);
        let norm = v.norm();
        if norm < DEGENERATE_NORM {
            return Err(CocycleError::DegenerateProjection { norm });
        }
        v /= norm;
        if v.dot(&old) < 0.0 {
            v.neg_mut();
        }
        done.push(v);
    }
    Ok(NormalFrame {
        base_point: DVector::from_column_slice(next_point),
        flow_dir: n,
        basis: DMatrix::from_columns(&done[1..]),
        speed,
    })
}
