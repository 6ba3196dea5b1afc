//! Explicit Runge–Kutta integrators for autonomous systems.
//!
//! [`dopri5`] is the production integrator: the Dormand–Prince 5(4) pair with
//! PI step control and the standard 4th-order continuous extension. [`rk4_doubling`]
//! is a structurally unrelated method (classical RK4 with step doubling and
//! Richardson extrapolation) used to cross-check results.

use super::FlowError;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Used as both absolute and relative tolerance.
    pub tol: f64,
    pub h_max: f64,
    /// Step-size floor; dropping below it is a [`FlowError::StepFailure`].
    pub h_min: f64,
    pub escape_radius: f64,
    /// Number of leading components whose Euclidean norm is checked against
    /// the escape radius (the state part of an augmented system).
    pub escape_dims: usize,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn new(tol: f64, state_dim: usize) -> Self {
        OdeOptions {
            tol,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            escape_radius: super::ESCAPE_RADIUS,
            escape_dims: state_dim,
            max_steps: 50_000_000,
        }
    }
}

/// The continuous extension of one accepted step over `[t0, t0 + h]`.
pub struct DenseStep<'a> {
    pub t0: f64,
    pub h: f64,
    rcont: &'a [Vec<f64>; 5],
}

impl DenseStep<'_> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// State at time `t`, which should lie in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }
}

fn escape_norm(y: &[f64], dims: usize) -> f64 {
    y[..dims].iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn initial_step<F>(rhs: &mut F, y0: &[f64], f0: &[f64], opts: &OdeOptions, span: f64) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = y0.len() as f64;
    let sk: Vec<f64> = y0.iter().map(|y| opts.tol + opts.tol * y.abs()).collect();
    let dnf = (f0.iter().zip(&sk).map(|(f, s)| (f / s).powi(2)).sum::<f64>() / n).sqrt();
    let dny = (y0.iter().zip(&sk).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n).sqrt();
    let mut h = if dnf <= 1e-5 || dny <= 1e-5 { 1e-6 } else { 0.01 * dny / dnf };
    h = h.min(opts.h_max).min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    rhs(&y1, &mut f1);
    let der2 = (f1
        .iter()
        .zip(f0)
        .zip(&sk)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h;
    let der12 = der2.abs().max(dnf);
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(opts.h_max).min(span)
}

/// Integrates `y' = rhs(y)` from `y0` over `duration` time units.
///
/// `on_step` sees the dense interpolant of every accepted step, in order. The
/// returned vector is the state at `duration`.
pub fn dopri5<F, O>(
    mut rhs: F,
    y0: &[f64],
    duration: f64,
    opts: &OdeOptions,
    mut on_step: O,
) -> Result<Vec<f64>, FlowError>
where
    F: FnMut(&[f64], &mut [f64]),
    O: FnMut(&DenseStep<'_>),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if duration <= 0.0 {
        return Ok(y);
    }
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut rcont: [Vec<f64>; 5] = Default::default();
    for r in rcont.iter_mut() {
        *r = vec![0.0; n];
    }

    rhs(&y, &mut k1);
    let mut t = 0.0;
    let mut h = initial_step(&mut rhs, &y, &k1, opts, duration);
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let mut steps = 0usize;

    loop {
        if steps >= opts.max_steps {
            return Err(FlowError::StepFailure { t, h });
        }
        let remaining = duration - t;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < opts.h_min && !last {
            return Err(FlowError::StepFailure { t, h });
        }
        steps += 1;

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(&ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(&ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(&ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(&ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(&ytmp, &mut k6);
        for i in 0..n {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(&y1, &mut k7);

        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = opts.tol + opts.tol * y[i].abs().max(y1[i].abs());
            err = err.max(e.abs() / sk);
        }
        if !err.is_finite() {
            err = 1e10;
        }

        let fac11 = err.powf(0.2 - BETA * 0.75);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut hnew = h / fac;
            facold = err.max(1e-4);

            for i in 0..n {
                let ydiff = y1[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                rcont[0][i] = y[i];
                rcont[1][i] = ydiff;
                rcont[2][i] = bspl;
                rcont[3][i] = ydiff - h * k7[i] - bspl;
                rcont[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            on_step(&DenseStep {
                t0: t,
                h,
                rcont: &rcont,
            });

            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            t = if last { duration } else { t + h };

            let r = escape_norm(&y, opts.escape_dims);
            if !r.is_finite() || r > opts.escape_radius {
                return Err(FlowError::Blowup {
                    t,
                    radius: opts.escape_radius,
                });
            }
            if last {
                return Ok(y);
            }
            if last_rejected {
                hnew = hnew.min(h);
            }
            last_rejected = false;
            h = hnew.min(opts.h_max);
        } else {
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }
}

fn rk4_step<F>(rhs: &mut F, y: &[f64], h: f64, work: &mut [Vec<f64>; 5], out: &mut [f64])
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = y.len();
    let [k1, k2, k3, k4, tmp] = work;
    rhs(y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    rhs(tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    rhs(tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    rhs(tmp, k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Classical RK4 with step doubling. Independent of [`dopri5`] by
/// construction; intended for verification.
pub fn rk4_doubling<F>(mut rhs: F, y0: &[f64], duration: f64, opts: &OdeOptions) -> Result<Vec<f64>, FlowError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if duration <= 0.0 {
        return Ok(y);
    }
    let mut work: [Vec<f64>; 5] = Default::default();
    for w in work.iter_mut() {
        *w = vec![0.0; n];
    }
    let mut big = vec![0.0; n];
    let mut half = vec![0.0; n];
    let mut fine = vec![0.0; n];
    let mut t = 0.0;
    let mut h = (duration / 100.0).min(1e-3).min(opts.h_max);
    let mut steps = 0usize;
    while t < duration {
        steps += 1;
        if steps > opts.max_steps {
            return Err(FlowError::StepFailure { t, h });
        }
        let last = t + h >= duration;
        if last {
            h = duration - t;
        }
        if h < opts.h_min && !last {
            return Err(FlowError::StepFailure { t, h });
        }
        rk4_step(&mut rhs, &y, h, &mut work, &mut big);
        rk4_step(&mut rhs, &y, 0.5 * h, &mut work, &mut half);
        rk4_step(&mut rhs, &half, 0.5 * h, &mut work, &mut fine);
        let mut err: f64 = 0.0;
        for i in 0..n {
            let sk = opts.tol + opts.tol * y[i].abs().max(fine[i].abs());
            err = err.max((fine[i] - big[i]).abs() / 15.0 / sk);
        }
        if err <= 1.0 || h <= opts.h_min {
            for i in 0..n {
                y[i] = fine[i] + (fine[i] - big[i]) / 15.0;
            }
            t = if last { duration } else { t + h };
            if escape_norm(&y, opts.escape_dims) > opts.escape_radius {
                return Err(FlowError::Blowup {
                    t,
                    radius: opts.escape_radius,
                });
            }
        }
        let grow = if err == 0.0 { 4.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 4.0) };
        h = (h * grow).min(opts.h_max);
        if last && err <= 1.0 {
            break;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(y: &[f64], out: &mut [f64]) {
        out[0] = y[1];
        out[1] = -y[0];
    }

    #[test]
    fn harmonic_oscillator_one_period() {
        let opts = OdeOptions::new(1e-11, 2);
        let y = dopri5(harmonic, &[1.0, 0.0], 2.0 * std::f64::consts::PI, &opts, |_| {}).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9, "{y:?}");
        let z = rk4_doubling(harmonic, &[1.0, 0.0], 2.0 * std::f64::consts::PI, &opts).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-9 && z[1].abs() < 1e-9, "{z:?}");
    }

    #[test]
    fn dense_output_is_accurate_inside_steps() {
        let opts = OdeOptions::new(1e-10, 2);
        let mut worst: f64 = 0.0;
        dopri5(harmonic, &[1.0, 0.0], 10.0, &opts, |step| {
            let mut out = [0.0; 2];
            for k in 0..=4 {
                let t = step.t0 + step.h * k as f64 / 4.0;
                step.eval(t, &mut out);
                worst = worst.max((out[0] - t.cos()).abs()).max((out[1] + t.sin()).abs());
            }
        })
        .unwrap();
        assert!(worst < 1e-8, "dense output error {worst:e}");
    }

    #[test]
    fn zero_duration_is_identity() {
        let opts = OdeOptions::new(1e-10, 2);
        let y = dopri5(harmonic, &[0.3, -0.2], 0.0, &opts, |_| panic!("no steps expected")).unwrap();
        assert_eq!(y, vec![0.3, -0.2]);
    }

    #[test]
    fn blowup_is_reported() {
        let opts = OdeOptions {
            escape_radius: 100.0,
            ..OdeOptions::new(1e-8, 1)
        };
        // y' = y^2 blows up at t = 1 from y0 = 1.
        let res = dopri5(|y, o| o[0] = y[0] * y[0], &[1.0], 2.0, &opts, |_| {});
        assert!(matches!(res, Err(FlowError::Blowup { .. })), "{res:?}");
    }

    #[test]
    fn step_underflow_is_reported() {
        let opts = OdeOptions {
            escape_radius: f64::INFINITY,
            ..OdeOptions::new(1e-8, 1)
        };
        let res = dopri5(|y, o| o[0] = y[0] * y[0], &[1.0], 2.0, &opts, |_| {});
        assert!(matches!(res, Err(FlowError::StepFailure { .. }) | Err(FlowError::Blowup { .. })));
    }
}
